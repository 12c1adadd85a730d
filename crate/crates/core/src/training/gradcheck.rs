//! Central finite-difference verification of the full reverse pass.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;
use crate::geometry::{look_extrinsics, pinhole, Aabb, CameraRig, CameraView, Vec3};
use crate::rng::{stream, tag};
use crate::sampling::{PointSampling, RayPixel};
use crate::scenes::{SceneDef, SdfPrimitive, Shape};
use crate::training::loss::LossWeights;
use crate::training::params::{Modality, ModelParams};
use crate::training::pipeline::{backward, forward, loss_only, StepBatch};
use crate::training::pretrain::{assemble_rays, masked_inputs, SceneData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub resolution: [usize; 3],
    pub rays: usize,
    pub points_per_ray: usize,
    pub eps: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub modality: Modality,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            resolution: [8, 8, 4],
            rays: 4,
            points_per_ray: 8,
            eps: 1e-6,
            rel_tol: 1e-4,
            abs_tol: 1e-8,
            modality: Modality::Fused,
        }
    }
}

/// Multiplies the analytic gradient of one tensor, simulating a wrong adjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Fault {
    pub path: String,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupError {
    pub path: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// `|a - fd| / max(|a|, |fd|, abs_tol / rel_tol)`, maximised over scalars;
    /// a scalar passes when this is at most `rel_tol`.
    pub max_rel_err: f64,
    pub worst_path: Option<String>,
    pub checked: usize,
    pub passed: bool,
    pub groups: Vec<GroupError>,
}

/// Compares `analytic` against central differences of `f` at `x`, naming
/// each scalar through `layout`.
pub fn finite_difference_check<F>(
    x: &[f64],
    analytic: &[f64],
    layout: &[(String, std::ops::Range<usize>)],
    cfg: &GradCheckConfig,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let floor = cfg.abs_tol / cfg.rel_tol;
    let errs = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut p = x.to_vec();
            p[i] = x[i] + cfg.eps;
            let up = f(&p)?;
            p[i] = x[i] - cfg.eps;
            let down = f(&p)?;
            let fd = (up - down) / (2.0 * cfg.eps);
            let a = analytic[i];
            Ok((a - fd).abs() / a.abs().max(fd.abs()).max(floor))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut groups = Vec::with_capacity(layout.len());
    let mut worst = (0.0f64, None);
    for (name, range) in layout {
        let m = errs[range.clone()].iter().copied().fold(0.0, f64::max);
        if m > worst.0 || (worst.1.is_none() && !range.is_empty()) {
            worst = (m.max(worst.0), Some(name.clone()));
        }
        groups.push(GroupError {
            path: name.clone(),
            max_rel_err: m,
            checked: range.len(),
        });
    }
    let max_rel_err = errs.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_err,
        worst_path: worst.1,
        checked: errs.len(),
        passed: max_rel_err <= cfg.rel_tol,
        groups,
    })
}

/// Two 16x16 views inside a 4 x 4 x 2 box: ground, a sphere and a box.
pub fn grad_check_scene() -> Result<SceneDef> {
    let cam = |forward: Vec3, right: Vec3| CameraView {
        intrinsics: pinhole(12.0, 12.0, 8.0, 8.0),
        extrinsics_l2c: look_extrinsics(Vec3::new(0.0, 0.0, 1.0), forward, right),
    };
    let rig = CameraRig::new(
        vec![cam(Vec3::x(), -Vec3::y()), cam(-Vec3::x(), Vec3::y())],
        16,
        16,
    )?;
    Ok(SceneDef {
        primitives: vec![
            SdfPrimitive {
                shape: Shape::Halfspace { normal: Vec3::z(), offset: 0.0 },
                albedo: [0.5, 0.5, 0.45],
            },
            SdfPrimitive {
                shape: Shape::Sphere { center: Vec3::new(1.2, 0.3, 0.6), radius: 0.5 },
                albedo: [0.8, 0.3, 0.2],
            },
            SdfPrimitive {
                shape: Shape::Box { center: Vec3::new(-1.1, -0.4, 0.5), half_extents: Vec3::new(0.3, 0.4, 0.5) },
                albedo: [0.2, 0.6, 0.8],
            },
        ],
        background_rgb: [0.55, 0.7, 0.9],
        bounds: Aabb::new(Vec3::new(-2.0, -2.0, 0.0), Vec3::new(2.0, 2.0, 2.0))?,
        rig,
        lidar_origin: Vec3::new(0.0, 0.0, 1.1),
        seed: 0,
    })
}

/// Small model and masking settings used by the check.
pub fn grad_check_run_config(cfg: &GradCheckConfig) -> RunConfig {
    let mut run = RunConfig::default();
    run.seed = cfg.seed;
    run.model.modality = cfg.modality;
    run.model.channels = 4;
    run.model.projection_channels = 8;
    run.model.depth_bins = 8;
    run.model.decoder_width = 8;
    run.model.resolution = cfg.resolution;
    run.mask.image.block = 8;
    run.mask.points.block = 4;
    run.mask.points.ratio = 0.5;
    run.lidar.azimuth_count = 48;
    run.lidar.elevation_rows = 8;
    run.rays.points_per_ray = cfg.points_per_ray;
    run
}

/// Prepared parameters and batch with normals frozen at their recorded values.
pub fn grad_check_problem(cfg: &GradCheckConfig) -> Result<(ModelParams, StepBatch, LossWeights)> {
    let run = grad_check_run_config(cfg);
    let scene = grad_check_scene()?;
    let params = ModelParams::init(&run.model, scene.bounds, cfg.seed)?;
    let data = SceneData::prepare(&scene, &run, &params)?;
    let (camera, lidar) = masked_inputs(
        &data,
        &run,
        &params,
        &mut stream(cfg.seed, &[tag::IMAGE_MASK]),
        &mut stream(cfg.seed, &[tag::POINT_MASK]),
    )?;
    let rig = &scene.rig;
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
    let mut rng = stream(cfg.seed, &[tag::RAYS]);
    let pixels: Vec<_> = index::sample(&mut rng, hits.len(), cfg.rays.min(hits.len()))
        .into_iter()
        .enumerate()
        // every other ray unsupervised in depth, so both loss branches are hit
        .map(|(k, i)| (hits[i].0, if k % 2 == 0 { hits[i].1 } else { None }))
        .collect();
    let (rays, t_samples, targets) =
        assemble_rays(&data, &pixels, cfg.points_per_ray, PointSampling::Stratified, &mut rng)?;
    let mut batch = StepBatch {
        camera,
        lidar,
        rays,
        t_samples,
        targets,
        frozen_normals: None,
    };
    let w = LossWeights::default();
    let normals = forward(&params, &batch, &w, false)?.normals();
    batch.frozen_normals = Some(normals);
    Ok((params, batch, w))
}

/// Checks every parameter scalar of the small fused pipeline.
pub fn grad_check(cfg: &GradCheckConfig, fault: Option<&Fault>) -> Result<GradCheckReport> {
    let (params, batch, w) = grad_check_problem(cfg)?;
    let pass = forward(&params, &batch, &w, true)?;
    let mut grads = backward(&params, &batch, &pass, &w)?;
    if let Some(fault) = fault {
        for t in grads.tensors_mut() {
            if t.name == fault.path {
                t.data.iter_mut().for_each(|g| *g *= fault.scale);
            }
        }
    }
    let layout = params.layout();
    let x = params.flatten();
    finite_difference_check(&x, &grads.flatten(), &layout, cfg, |p| {
        let mut q = params.clone();
        q.assign_flat(p)?;
        loss_only(&q, &batch, &w)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_chain_matches_symbolic_derivative() {
        let x = [0.7f64];
        let analytic = [2.0 * x[0].sin() * x[0].cos()];
        let layout = vec![("x".to_string(), 0..1)];
        let r = finite_difference_check(&x, &analytic, &layout, &GradCheckConfig::default(), |p| Ok(p[0].sin().powi(2))).unwrap();
        assert!(r.passed, "{r:?}");
        let wrong = [analytic[0] * 1.01];
        let r = finite_difference_check(&x, &wrong, &layout, &GradCheckConfig::default(), |p| Ok(p[0].sin().powi(2))).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_path.as_deref(), Some("x"));
    }

    #[test]
    fn zero_parameters_pass_vacuously() {
        let r = finite_difference_check(&[], &[], &[], &GradCheckConfig::default(), |_| Ok(1.0)).unwrap();
        assert!(r.passed);
        assert_eq!(r.checked, 0);
        assert_eq!(r.max_rel_err, 0.0);
    }
}

#[cfg(test)]
mod pipeline_checks {
    use super::*;

    #[test]
    fn full_pipeline_matches_finite_differences() {
        let r = grad_check(&GradCheckConfig::default(), None).unwrap();
        eprintln!("checked {} max_rel {:e} worst {:?}", r.checked, r.max_rel_err, r.worst_path);
        for g in &r.groups {
            eprintln!("  {:32} {:e}", g.path, g.max_rel_err);
        }
        assert!(r.passed);
        assert!(r.checked > 1000);
    }
}
