//! Ray selection (dilation, random, depth-aware) and depth sampling along a
//! ray. Pixels are emitted at their centers.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraRig, DepthMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Dilation,
    Random,
    DepthAware,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Dilation, Strategy::Random, Strategy::DepthAware];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Dilation => "dilation",
            Strategy::Random => "random",
            Strategy::DepthAware => "depth_aware",
        }
    }
}

/// Ray budget for one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RayBudget {
    pub strategy: Strategy,
    /// Pixel interval for dilation sampling.
    pub interval: usize,
    /// Rays per view for random and depth-aware sampling.
    pub rays_per_view: usize,
    /// Depth threshold (scene units) for depth-aware candidates; `None`
    /// selects the default of 0.9 x the volume diagonal.
    pub tau: Option<f64>,
    pub points_per_ray: usize,
}

impl Default for RayBudget {
    fn default() -> Self {
        Self {
            strategy: Strategy::DepthAware,
            interval: 8,
            rays_per_view: 512,
            tau: None,
            points_per_ray: 96,
        }
    }
}

impl RayBudget {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.interval < 1 {
            return bad("sampling interval must be at least 1");
        }
        if self.rays_per_view < 1 {
            return bad("rays_per_view must be at least 1");
        }
        if self.points_per_ray < 2 {
            return bad("points_per_ray must be at least 2");
        }
        if let Some(t) = self.tau {
            if !(t > 0.0) {
                return bad("tau must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayPixel {
    pub view: usize,
    /// Continuous pixel coordinate of the pixel center.
    pub pixel: [f64; 2],
}

impl RayPixel {
    pub fn at(view: usize, col: usize, row: usize) -> Self {
        Self {
            view,
            pixel: [col as f64 + 0.5, row as f64 + 0.5],
        }
    }

    pub fn col_row(&self) -> (usize, usize) {
        (self.pixel[0] as usize, self.pixel[1] as usize)
    }
}

pub fn sample_dilation_view(rig: &CameraRig, view: usize, interval: usize) -> Vec<RayPixel> {
    let (rows, cols) = (rig.height() / interval, rig.width() / interval);
    let mut out = Vec::with_capacity(rows.max(1) * cols.max(1));
    for b in 0..rows.max(1) {
        for a in 0..cols.max(1) {
            out.push(RayPixel::at(view, a * interval, b * interval));
        }
    }
    out
}

/// Regular grid of pixels every `interval` pixels, anchored at the top-left
/// pixel; `floor(H / I) * floor(W / I)` rays per view (at least one).
pub fn sample_dilation(rig: &CameraRig, interval: usize) -> Result<Vec<RayPixel>> {
    if interval < 1 {
        return Err(Error::InvalidConfig("sampling interval must be at least 1".into()));
    }
    Ok((0..rig.view_count())
        .flat_map(|v| sample_dilation_view(rig, v, interval))
        .collect())
}

pub fn sample_random_view(rig: &CameraRig, view: usize, k: usize, rng: &mut impl Rng) -> Result<Vec<RayPixel>> {
    let total = rig.height() * rig.width();
    if k > total {
        return Err(Error::BudgetTooLarge {
            requested: k,
            available: total,
        });
    }
    Ok(index::sample(rng, total, k)
        .into_iter()
        .map(|i| RayPixel::at(view, i % rig.width(), i / rig.width()))
        .collect())
}

/// `k` distinct pixels per view drawn uniformly; `rngs` holds one stream per view.
pub fn sample_random<R: Rng>(rig: &CameraRig, k: usize, rngs: &mut [R]) -> Result<Vec<RayPixel>> {
    if rngs.len() != rig.view_count() {
        return Err(Error::shape("one random stream per view is required"));
    }
    let mut out = Vec::with_capacity(k * rig.view_count());
    for (v, rng) in rngs.iter_mut().enumerate() {
        out.extend(sample_random_view(rig, v, k, rng)?);
    }
    Ok(out)
}

/// A sampled ray with its LiDAR depth (camera z), when supervised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisedPixel {
    pub ray: RayPixel,
    pub depth: Option<f64>,
}

/// Depth-aware sampling for one view. Candidates are the depth-map pixels;
/// a thin candidate set is topped up with random non-candidate pixels that
/// carry no depth.
pub fn sample_depth_aware_view(
    rig: &CameraRig,
    view: usize,
    depth_map: &DepthMap,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<SupervisedPixel>> {
    let total = rig.height() * rig.width();
    if k > total {
        return Err(Error::BudgetTooLarge {
            requested: k,
            available: total,
        });
    }
    let candidates: Vec<(&(usize, usize), &f64)> = depth_map.iter().collect();
    let mut out: Vec<SupervisedPixel> = if candidates.len() <= k {
        candidates
            .iter()
            .map(|(&(c, r), &d)| SupervisedPixel {
                ray: RayPixel::at(view, c, r),
                depth: Some(d),
            })
            .collect()
    } else {
        index::sample(rng, candidates.len(), k)
            .into_iter()
            .map(|i| {
                let (&(c, r), &d) = candidates[i];
                SupervisedPixel {
                    ray: RayPixel::at(view, c, r),
                    depth: Some(d),
                }
            })
            .collect()
    };
    let missing = k - out.len();
    if missing > 0 {
        let mut others: Vec<usize> = (0..total)
            .filter(|i| !depth_map.contains_key(&(i % rig.width(), i / rig.width())))
            .collect();
        others.shuffle(rng);
        out.extend(others[..missing].iter().map(|&i| SupervisedPixel {
            ray: RayPixel::at(view, i % rig.width(), i / rig.width()),
            depth: None,
        }));
    }
    Ok(out)
}

pub fn sample_depth_aware<R: Rng>(
    rig: &CameraRig,
    depth_maps: &[DepthMap],
    k: usize,
    rngs: &mut [R],
) -> Result<Vec<SupervisedPixel>> {
    if depth_maps.len() != rig.view_count() || rngs.len() != rig.view_count() {
        return Err(Error::shape("one depth map and one random stream per view are required"));
    }
    let mut out = Vec::with_capacity(k * rig.view_count());
    for (v, (map, rng)) in depth_maps.iter().zip(rngs.iter_mut()).enumerate() {
        out.extend(sample_depth_aware_view(rig, v, map, k, rng)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointSampling {
    /// Bin midpoints.
    Midpoint,
    /// One uniform draw per bin.
    Stratified,
}

/// `d` sorted depths partitioning `[t_near, t_far]` into equal bins.
pub fn sample_ray_points(
    t_near: f64,
    t_far: f64,
    d: usize,
    mode: PointSampling,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if !(t_near < t_far) || !t_near.is_finite() || !t_far.is_finite() || d == 0 {
        return Err(Error::DegenerateInterval { near: t_near, far: t_far });
    }
    let width = (t_far - t_near) / d as f64;
    let t: Vec<f64> = (0..d)
        .map(|i| {
            let u = match mode {
                PointSampling::Midpoint => 0.5,
                PointSampling::Stratified => rng.random::<f64>(),
            };
            t_near + (i as f64 + u) * width
        })
        .collect();
    if t.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::DegenerateInterval { near: t_near, far: t_far });
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pinhole, CameraView};
    use crate::rng::{stream, StreamRng};
    use nalgebra::Matrix4;

    fn rig(views: usize, h: usize, w: usize) -> CameraRig {
        CameraRig::new(
            vec![
                CameraView {
                    intrinsics: pinhole(10.0, 10.0, w as f64 / 2.0, h as f64 / 2.0),
                    extrinsics_l2c: Matrix4::identity()
                };
                views
            ],
            h,
            w,
        )
        .unwrap()
    }

    fn rngs(n: usize, seed: u64) -> Vec<StreamRng> {
        (0..n).map(|v| stream(seed, &[v as u64])).collect()
    }

    #[test]
    fn dilation_counts() {
        assert_eq!(sample_dilation(&rig(2, 4, 6), 1).unwrap().len(), 48);
        assert_eq!(sample_dilation(&rig(6, 64, 64), 16).unwrap().len(), 96);
        assert_eq!(sample_dilation(&rig(3, 8, 8), 20).unwrap().len(), 3);
        assert_eq!(sample_dilation(&rig(1, 10, 7), 3).unwrap().len(), 3 * 2);
    }

    #[test]
    fn random_full_budget_and_determinism() {
        let r = rig(2, 4, 4);
        let mut all = sample_random(&r, 16, &mut rngs(2, 1)).unwrap();
        all.sort_by(|a, b| (a.view, a.col_row()).cmp(&(b.view, b.col_row())));
        assert_eq!(all.len(), 32);
        all.dedup();
        assert_eq!(all.len(), 32);
        assert_eq!(
            sample_random(&r, 5, &mut rngs(2, 9)).unwrap(),
            sample_random(&r, 5, &mut rngs(2, 9)).unwrap()
        );
        assert!(matches!(sample_random(&r, 17, &mut rngs(2, 1)), Err(Error::BudgetTooLarge { .. })));
    }

    #[test]
    fn random_is_uniform_chi_squared() {
        let r = rig(1, 8, 8);
        let mut counts = [0usize; 64];
        let mut rng = vec![stream(77, &[])];
        let draws = 100_000;
        for _ in 0..draws {
            let px = sample_random(&r, 1, &mut rng).unwrap()[0];
            let (c, row) = px.col_row();
            counts[row * 8 + c] += 1;
        }
        let expect = draws as f64 / 64.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        // 63 degrees of freedom, p = 0.01 critical value
        assert!(chi2 < 92.01, "chi2 = {chi2}");
    }

    #[test]
    fn depth_aware_exact_and_fallback() {
        let r = rig(1, 4, 4);
        let mut map = DepthMap::new();
        map.insert((1, 1), 2.0);
        map.insert((2, 3), 5.0);
        map.insert((0, 0), 1.0);
        let got = sample_depth_aware_view(&r, 0, &map, 3, &mut stream(1, &[])).unwrap();
        let mut keys: Vec<_> = got.iter().map(|s| (s.ray.col_row(), s.depth.unwrap())).collect();
        keys.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(keys, vec![((0, 0), 1.0), ((1, 1), 2.0), ((2, 3), 5.0)]);

        let got = sample_depth_aware_view(&r, 0, &DepthMap::new(), 5, &mut stream(1, &[])).unwrap();
        assert_eq!(got.len(), 5);
        assert!(got.iter().all(|s| s.depth.is_none()));

        let got = sample_depth_aware_view(&r, 0, &map, 6, &mut stream(2, &[])).unwrap();
        assert_eq!(got.iter().filter(|s| s.depth.is_some()).count(), 3);
        let mut px: Vec<_> = got.iter().map(|s| s.ray.col_row()).collect();
        px.sort();
        px.dedup();
        assert_eq!(px.len(), 6);
    }

    #[test]
    fn ray_point_sampling() {
        let mut rng = stream(3, &[]);
        assert_eq!(
            sample_ray_points(0.0, 4.0, 4, PointSampling::Midpoint, &mut rng).unwrap(),
            vec![0.5, 1.5, 2.5, 3.5]
        );
        let t = sample_ray_points(1.0, 3.0, 8, PointSampling::Stratified, &mut rng).unwrap();
        for (i, v) in t.iter().enumerate() {
            let lo = 1.0 + i as f64 * 0.25;
            assert!(*v >= lo && *v < lo + 0.25);
        }
        assert!(matches!(
            sample_ray_points(2.0, 2.0, 4, PointSampling::Midpoint, &mut rng),
            Err(Error::DegenerateInterval { .. })
        ));
    }

    #[test]
    fn stratified_mean_is_centered() {
        let mut rng = stream(4, &[]);
        let trials = 10_000;
        let d = 8;
        let means: Vec<f64> = (0..trials)
            .map(|_| sample_ray_points(0.0, 2.0, d, PointSampling::Stratified, &mut rng).unwrap().iter().sum::<f64>() / d as f64)
            .collect();
        let mean = means.iter().sum::<f64>() / trials as f64;
        // each bin draw has variance w^2/12 with w = 0.25
        let sigma = ((0.25f64.powi(2) / 12.0) / d as f64 / trials as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma, "{mean} vs 1.0 (sigma {sigma})");
    }
}
