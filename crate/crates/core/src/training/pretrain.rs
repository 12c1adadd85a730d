//! The pre-training loop and held-out evaluation.

use std::path::Path;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::{build_depth_map, ray_aabb_clip, ray_from_pixel, z_depth_to_ray_distance, DepthMap, LidarPoint, Ray};
use crate::masking::{block_grid, generate_block_mask, mask_image, mask_points, upsample_mask};
use crate::nn::sorted_sum;
use crate::rng::{stream, tag};
use crate::sampling::{
    sample_depth_aware_view, sample_dilation_view, sample_random_view, sample_ray_points, PointSampling, RayPixel,
    Strategy,
};
use crate::scenes::{oracle_render_view, simulate_lidar, OracleView, SceneDef};
use crate::training::loss::{LossWeights, RenderTargets};
use crate::training::optim::{optimizer_step, OptimizerState};
use crate::training::params::ModelParams;
use crate::training::pipeline::{build_feature_volume, forward_backward, render_rays, CameraInputs, LidarInputs, StepBatch};
use crate::voxelgrid::{ImageFeatureMap, LiftPlan};

/// Where depth targets for dilation / random rays come from. Depth-aware
/// rays are always supervised by the LiDAR depth map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthSource {
    Lidar,
    Oracle,
}

/// A scene with its oracle renders, LiDAR sweep and per-view depth maps.
#[derive(Debug, Clone)]
pub struct SceneData {
    pub scene: SceneDef,
    pub oracle: Vec<OracleView>,
    pub lidar: Vec<LidarPoint>,
    pub depth_maps: Vec<DepthMap>,
    pub plan: Option<LiftPlan>,
}

impl SceneData {
    pub fn prepare(scene: &SceneDef, cfg: &RunConfig, params: &ModelParams) -> Result<Self> {
        scene.validate()?;
        let oracle = (0..scene.rig.view_count())
            .into_par_iter()
            .map(|v| oracle_render_view(scene, v))
            .collect::<Result<Vec<_>>>()?;
        let lidar = simulate_lidar(scene, scene.lidar_origin, cfg.lidar.azimuth_count, cfg.lidar.elevation_rows);
        let tau = cfg.rays.tau.unwrap_or(0.9 * scene.bounds.diagonal());
        let depth_maps = build_depth_map(&lidar, &scene.rig, tau)?;
        let plan = match &params.depth_head {
            Some(head) => {
                let shape = ImageFeatureMap {
                    views: scene.rig.view_count(),
                    height: scene.rig.height(),
                    width: scene.rig.width(),
                    channels: 0,
                    stride: 1,
                    data: Vec::new(),
                };
                Some(LiftPlan::new(&scene.rig, &params.spec, &shape, head)?)
            }
            None => None,
        };
        Ok(Self {
            scene: scene.clone(),
            oracle,
            lidar,
            depth_maps,
            plan,
        })
    }
}

/// Masks the sensor inputs of a scene with the given streams.
pub fn masked_inputs(
    data: &SceneData,
    cfg: &RunConfig,
    params: &ModelParams,
    image_rng: &mut impl Rng,
    point_rng: &mut impl Rng,
) -> Result<(Option<CameraInputs>, Option<LidarInputs>)> {
    let rig = &data.scene.rig;
    let camera = match &data.plan {
        Some(plan) if params.modality.uses_camera() => {
            let b = cfg.mask.image.block;
            let (rows, cols) = (block_grid(rig.height(), b)?, block_grid(rig.width(), b)?);
            let mut images = Vec::with_capacity(rig.view_count());
            let mut masks = Vec::with_capacity(rig.view_count());
            for view in &data.oracle {
                let mask = upsample_mask(&generate_block_mask(rows, cols, b, cfg.mask.image.ratio, image_rng)?, b);
                images.push(mask_image(&view.rgb, &mask)?);
                masks.push(mask);
            }
            Some(CameraInputs {
                rig: rig.clone(),
                images,
                masks,
                plan: plan.clone(),
            })
        }
        _ => None,
    };
    let lidar = if params.modality.uses_lidar() {
        let b = cfg.mask.points.block;
        let [rx, ry, _] = params.spec.resolution;
        let bev = generate_block_mask(block_grid(rx, b)?, block_grid(ry, b)?, b, cfg.mask.points.ratio, point_rng)?;
        Some(LidarInputs {
            points: mask_points(&data.lidar, &bev, &params.spec),
            bev_mask: bev,
        })
    } else {
        None
    };
    Ok((camera, lidar))
}

/// Selected pixels for one view with their depth targets (ray distance).
fn select_view_rays(
    data: &SceneData,
    cfg: &RunConfig,
    view: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(RayPixel, Option<f64>)>> {
    let rig = &data.scene.rig;
    let budget = &cfg.rays;
    let lidar_depth = |p: &RayPixel| {
        let (c, r) = p.col_row();
        data.depth_maps[view]
            .get(&(c, r))
            .map(|&z| z_depth_to_ray_distance(rig, view, p.pixel, z))
    };
    let oracle_depth = |p: &RayPixel| {
        let (c, r) = p.col_row();
        data.oracle[view].depth_at(c, r)
    };
    let supervise = |p: RayPixel| match cfg.train.depth_source {
        DepthSource::Lidar => (p, lidar_depth(&p)),
        DepthSource::Oracle => (p, oracle_depth(&p)),
    };
    Ok(match budget.strategy {
        Strategy::Dilation => sample_dilation_view(rig, view, budget.interval).into_iter().map(supervise).collect(),
        Strategy::Random => sample_random_view(rig, view, budget.rays_per_view, rng)?
            .into_iter()
            .map(supervise)
            .collect(),
        Strategy::DepthAware => sample_depth_aware_view(rig, view, &data.depth_maps[view], budget.rays_per_view, rng)?
            .into_iter()
            .map(|s| (s.ray, s.depth.map(|z| z_depth_to_ray_distance(rig, view, s.ray.pixel, z))))
            .collect(),
    })
}

/// Turns pixels into clipped rays with depth samples and targets.
pub(crate) fn assemble_rays(
    data: &SceneData,
    pixels: &[(RayPixel, Option<f64>)],
    d: usize,
    mode: PointSampling,
    rng: &mut impl Rng,
) -> Result<(Vec<Ray>, Vec<Vec<f64>>, RenderTargets)> {
    let mut rays = Vec::with_capacity(pixels.len());
    let mut ts = Vec::with_capacity(pixels.len());
    let mut targets = RenderTargets::default();
    for (p, depth) in pixels {
        let ray = ray_from_pixel(&data.scene.rig, p.view, p.pixel)?;
        let Some((near, far)) = ray_aabb_clip(&ray, &data.scene.bounds) else {
            continue;
        };
        if !(far > near) {
            continue;
        }
        ts.push(sample_ray_points(near, far, d, mode, rng)?);
        rays.push(ray);
        let (c, r) = p.col_row();
        let px = data.oracle[p.view].rgb.pixel(r, c);
        targets.rgb.push([px[0], px[1], px[2]]);
        targets.depth.push(*depth);
    }
    Ok((rays, ts, targets))
}

/// Scene index, masks and rays for one training step, all drawn from
/// streams keyed by `(seed, step)`.
pub fn training_batch(
    scenes: &[SceneData],
    cfg: &RunConfig,
    params: &ModelParams,
    step: u64,
) -> Result<(usize, StepBatch)> {
    let seed = cfg.seed;
    let si = stream(seed, &[tag::SCENE_PICK, step]).random_range(0..scenes.len());
    let data = &scenes[si];
    let (camera, lidar) = masked_inputs(
        data,
        cfg,
        params,
        &mut stream(seed, &[tag::IMAGE_MASK, step]),
        &mut stream(seed, &[tag::POINT_MASK, step]),
    )?;
    let views = data.scene.rig.view_count();
    let per_step = cfg.train.views_per_step.min(views);
    let mut chosen: Vec<usize> = index::sample(&mut stream(seed, &[tag::VIEW_PICK, step]), views, per_step).into_vec();
    chosen.sort_unstable();
    let mut pixels = Vec::new();
    for &v in &chosen {
        pixels.extend(select_view_rays(data, cfg, v, &mut stream(seed, &[tag::RAYS, step, v as u64]))?);
    }
    let (rays, t_samples, targets) = assemble_rays(
        data,
        &pixels,
        cfg.rays.points_per_ray,
        PointSampling::Stratified,
        &mut stream(seed, &[tag::RAY_POINTS, step]),
    )?;
    Ok((
        si,
        StepBatch {
            camera,
            lidar,
            rays,
            t_samples,
            targets,
            frozen_normals: None,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub step: usize,
    /// Mean absolute depth error over held-out surface pixels.
    pub depth_l1: f64,
    /// Mean channel-summed absolute color error over the same pixels.
    pub rgb_l1: f64,
}

/// Fixed held-out pixels per scene (surface hits only) with their own masks.
pub struct EvalSet {
    batches: Vec<StepBatch>,
    depth: Vec<Vec<f64>>,
}

impl EvalSet {
    pub fn new(scenes: &[SceneData], cfg: &RunConfig, params: &ModelParams) -> Result<Self> {
        let mut batches = Vec::new();
        let mut depth = Vec::new();
        for (si, data) in scenes.iter().enumerate() {
            let s = si as u64;
            let (camera, lidar) = masked_inputs(
                data,
                cfg,
                params,
                &mut stream(cfg.seed, &[tag::EVAL, s, tag::IMAGE_MASK]),
                &mut stream(cfg.seed, &[tag::EVAL, s, tag::POINT_MASK]),
            )?;
            let rig = &data.scene.rig;
            let mut hits = Vec::new();
            for v in 0..rig.view_count() {
                for row in 0..rig.height() {
                    for col in 0..rig.width() {
                        if let Some(d) = data.oracle[v].depth_at(col, row) {
                            hits.push((RayPixel::at(v, col, row), Some(d)));
                        }
                    }
                }
            }
            let n = cfg.train.eval_pixels.min(hits.len());
            let mut pick = index::sample(&mut stream(cfg.seed, &[tag::EVAL, s, tag::RAYS]), hits.len(), n).into_vec();
            pick.sort_unstable();
            let pixels: Vec<_> = pick.iter().map(|&i| hits[i]).collect();
            let (rays, t_samples, targets) = assemble_rays(
                data,
                &pixels,
                cfg.rays.points_per_ray,
                PointSampling::Midpoint,
                &mut stream(cfg.seed, &[tag::EVAL, s, tag::RAY_POINTS]),
            )?;
            depth.push(targets.depth.iter().map(|d| d.unwrap_or(0.0)).collect());
            batches.push(StepBatch {
                camera,
                lidar,
                rays,
                t_samples,
                targets,
                frozen_normals: None,
            });
        }
        Ok(Self { batches, depth })
    }

    pub fn evaluate(&self, params: &ModelParams, step: usize) -> Result<EvalMetrics> {
        let mut depth_terms = Vec::new();
        let mut rgb_terms = Vec::new();
        for (batch, gt_depth) in self.batches.iter().zip(&self.depth) {
            let vol = build_feature_volume(params, batch)?;
            let rendered = render_rays(&batch.rays, &batch.t_samples, &vol, params, None)?;
            for ((r, gt_rgb), gt_d) in rendered.iter().zip(&batch.targets.rgb).zip(gt_depth) {
                depth_terms.push((r.depth - gt_d).abs());
                rgb_terms.push((0..3).map(|c| (r.rgb[c] - gt_rgb[c]).abs()).sum::<f64>());
            }
        }
        let n = depth_terms.len().max(1) as f64;
        Ok(EvalMetrics {
            step,
            depth_l1: sorted_sum(&mut depth_terms) / n,
            rgb_l1: sorted_sum(&mut rgb_terms) / n,
        })
    }
}

/// One row of the per-step metrics history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub loss: f64,
    pub rgb_l1: f64,
    pub depth_l1: f64,
    pub rays: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub params: ModelParams,
    pub metrics: Vec<MetricRow>,
    pub evals: Vec<EvalMetrics>,
}

/// Runs the full loop: pick scene, mask, encode, build volume, project,
/// sample rays and points, render, loss, backward, AdamW.
///
/// With `out` set, writes `metrics.csv`, `eval.csv`, periodic
/// `checkpoint_<step>.upad` files and the final `checkpoint.upad`.
pub fn pretrain(cfg: &RunConfig, scenes: &[SceneDef], out: Option<&Path>) -> Result<PretrainReport> {
    cfg.validate()?;
    let first = scenes.first().ok_or_else(|| Error::InvalidConfig("empty scene suite".into()))?;
    let mut params = ModelParams::init(&cfg.model, first.bounds, cfg.seed)?;
    let data = scenes
        .iter()
        .map(|s| {
            if s.bounds != first.bounds {
                return Err(Error::InvalidConfig("all scenes must share the volume bounds".into()));
            }
            SceneData::prepare(s, cfg, &params)
        })
        .collect::<Result<Vec<_>>>()?;
    let eval_set = EvalSet::new(&data, cfg, &params)?;
    let weights: LossWeights = cfg.loss;
    let mut opt = OptimizerState::new(cfg.optimizer, params.parameter_count());
    let mut metrics = Vec::with_capacity(cfg.train.steps);
    let mut evals = vec![eval_set.evaluate(&params, 0)?];
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }

    for step in 0..cfg.train.steps {
        let start = Instant::now();
        let (_, batch) = training_batch(&data, cfg, &params, step as u64)?;
        let (pass, grads) = forward_backward(&params, &batch, &weights)?;
        if !pass.loss.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("rgb_l1={} depth_l1={}", pass.loss.rgb_l1, pass.loss.depth_l1),
            });
        }
        optimizer_step(&mut opt, &mut params, &grads)?;
        metrics.push(MetricRow {
            step,
            loss: pass.loss.loss,
            rgb_l1: pass.loss.rgb_l1,
            depth_l1: pass.loss.depth_l1,
            rays: pass.loss.rays,
            seconds: if cfg.train.record_wall_time { start.elapsed().as_secs_f64() } else { 0.0 },
        });
        let done = step + 1;
        if cfg.train.eval_every > 0 && (done % cfg.train.eval_every == 0 || done == cfg.train.steps) {
            evals.push(eval_set.evaluate(&params, done)?);
        }
        if let Some(dir) = out {
            if cfg.train.checkpoint_every > 0 && done % cfg.train.checkpoint_every == 0 {
                crate::io::write_checkpoint(&dir.join(format!("checkpoint_{done:06}.upad")), &params)?;
            }
        }
    }
    if cfg.train.eval_every == 0 && cfg.train.steps > 0 {
        evals.push(eval_set.evaluate(&params, cfg.train.steps)?);
    }
    if let Some(dir) = out {
        crate::io::write_checkpoint(&dir.join("checkpoint.upad"), &params)?;
        crate::io::write_metrics_csv(&dir.join("metrics.csv"), &metrics)?;
        crate::io::write_eval_csv(&dir.join("eval.csv"), &evals)?;
    }
    Ok(PretrainReport { params, metrics, evals })
}

/// Bytes held per rendered sample by [`crate::renderer::RaySampleBatch`]
/// for a decoder consuming `feature_dim` channels.
pub fn sample_buffer_bytes(feature_dim: usize) -> usize {
    // t, point, features, sdf, geometry feature, color, normal, alpha, weight, transmittance
    let scalars = 1 + 3 + feature_dim + 1 + crate::renderer::GEO_FEATURE_DIM + 3 + 3 + 1 + 1 + 1;
    scalars * std::mem::size_of::<f64>()
}

/// A rendered full view: RGB plus expected depth per pixel.
pub struct RenderedView {
    pub rgb: crate::image::Image,
    pub depth: Vec<f64>,
}

/// Renders every pixel center of `view` from the learned volume, with
/// midpoint depth samples.
pub fn render_view(
    params: &ModelParams,
    data: &SceneData,
    camera: Option<CameraInputs>,
    lidar: Option<LidarInputs>,
    view: usize,
    points_per_ray: usize,
) -> Result<RenderedView> {
    let rig = &data.scene.rig;
    if view >= rig.view_count() {
        return Err(Error::InvalidConfig(format!("view {view} out of range for {} views", rig.view_count())));
    }
    let (h, w) = (rig.height(), rig.width());
    let probe = StepBatch {
        camera,
        lidar,
        rays: Vec::new(),
        t_samples: Vec::new(),
        targets: RenderTargets::default(),
        frozen_normals: None,
    };
    probe.validate(params)?;
    let vol = build_feature_volume(params, &probe)?;
    let mut rgb = crate::image::Image::zeros(h, w, 3);
    let mut depth = vec![0.0; h * w];
    for row in 0..h {
        let mut rays = Vec::with_capacity(w);
        let mut ts = Vec::with_capacity(w);
        let mut cols = Vec::with_capacity(w);
        for col in 0..w {
            let p = RayPixel::at(view, col, row);
            let ray = ray_from_pixel(rig, view, p.pixel)?;
            if let Some((near, far)) = ray_aabb_clip(&ray, &data.scene.bounds).filter(|(n, f)| f > n) {
                ts.push(sample_ray_points(near, far, points_per_ray, PointSampling::Midpoint, &mut stream(0, &[]))?);
                rays.push(ray);
                cols.push(col);
            }
        }
        let out = render_rays(&rays, &ts, &vol, params, None)?;
        for (r, &col) in out.iter().zip(&cols) {
            rgb.pixel_mut(row, col).copy_from_slice(&r.rgb);
            depth[row * w + col] = r.depth;
        }
    }
    Ok(RenderedView { rgb, depth })
}
