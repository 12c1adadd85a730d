//! Sampling-strategy comparison at a matched ray budget.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::sorted_sum;
use crate::sampling::Strategy;
use crate::scenes::SceneDef;
use crate::training::pretrain::{pretrain, sample_buffer_bytes};

/// Grid for the sampling comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub seeds: Vec<u64>,
    /// Training steps per run.
    pub steps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            steps: 150,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRun {
    pub strategy: Strategy,
    pub seed: u64,
    pub depth_l1: f64,
    pub rgb_l1: f64,
    pub rays_per_step: usize,
    pub peak_ray_buffer_bytes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchSummary {
    pub strategy: Strategy,
    pub median_depth_l1: f64,
    pub median_rgb_l1: f64,
    pub peak_ray_buffer_bytes: usize,
    pub runs: usize,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Per-view rays of the dilation grid, used as the shared budget `K`.
pub fn matched_rays_per_view(height: usize, width: usize, interval: usize) -> usize {
    (height / interval).max(1) * (width / interval).max(1)
}

/// Trains one short run per (strategy, seed). Random and depth-aware
/// sampling draw as many rays per view as the dilation grid holds.
pub fn sampling_benchmark(base: &RunConfig, scenes: &[SceneDef]) -> Result<Vec<BenchRun>> {
    if base.bench.seeds.is_empty() {
        return Err(Error::InvalidConfig("bench needs at least one seed".into()));
    }
    let first = scenes.first().ok_or_else(|| Error::InvalidConfig("empty scene suite".into()))?;
    let k = matched_rays_per_view(first.rig.height(), first.rig.width(), base.rays.interval);
    let mut runs = Vec::new();
    for &seed in &base.bench.seeds {
        for strategy in Strategy::ALL {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.rays.strategy = strategy;
            cfg.rays.rays_per_view = k;
            cfg.train.steps = base.bench.steps;
            cfg.train.eval_every = 0;
            let report = pretrain(&cfg, scenes, None)?;
            let last = report.evals.last().expect("final evaluation");
            let peak_rays = report.metrics.iter().map(|m| m.rays).max().unwrap_or(0);
            runs.push(BenchRun {
                strategy,
                seed,
                depth_l1: last.depth_l1,
                rgb_l1: last.rgb_l1,
                rays_per_step: peak_rays,
                peak_ray_buffer_bytes: peak_rays * cfg.rays.points_per_ray * sample_buffer_bytes(cfg.model.projection_channels),
            });
        }
    }
    Ok(runs)
}

pub fn summarize(runs: &[BenchRun]) -> Vec<BenchSummary> {
    Strategy::ALL
        .iter()
        .map(|&strategy| {
            let mine: Vec<&BenchRun> = runs.iter().filter(|r| r.strategy == strategy).collect();
            let depth: Vec<f64> = mine.iter().map(|r| r.depth_l1).collect();
            let rgb: Vec<f64> = mine.iter().map(|r| r.rgb_l1).collect();
            BenchSummary {
                strategy,
                median_depth_l1: median(&depth),
                median_rgb_l1: median(&rgb),
                peak_ray_buffer_bytes: mine.iter().map(|r| r.peak_ray_buffer_bytes).max().unwrap_or(0),
                runs: mine.len(),
            }
        })
        .collect()
}

/// Mean of a slice with order-independent summation.
pub fn mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    sorted_sum(&mut v) / values.len().max(1) as f64
}
