//! Color + depth L1 objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::sorted_sum;

/// Per-ray supervision. `depth` is a distance along the unit ray.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderTargets {
    pub rgb: Vec<[f64; 3]>,
    pub depth: Vec<Option<f64>>,
}

impl RenderTargets {
    pub fn len(&self) -> usize {
        self.rgb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rgb.is_empty()
    }

    pub fn depth_count(&self) -> usize {
        self.depth.iter().flatten().count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rgb.len() != self.depth.len() {
            return Err(Error::shape("rgb and depth targets differ in length"));
        }
        if self.depth.iter().flatten().any(|&d| !(d > 0.0)) {
            return Err(Error::InvalidConfig("target depths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_rgb: f64,
    pub lambda_depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_rgb: 10.0,
            lambda_depth: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_rgb >= 0.0 && self.lambda_depth >= 0.0) {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayResidual {
    pub rgb: [f64; 3],
    pub depth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    /// Mean over rays of the channel-summed absolute color error.
    pub rgb_l1: f64,
    /// Mean absolute depth error over supervised rays (0 when there are none).
    pub depth_l1: f64,
    pub rays: usize,
    pub depth_rays: usize,
    /// Signed residuals `prediction - target`.
    pub residuals: Vec<RayResidual>,
}

/// L1 subgradient with `sign(0) = 0`.
pub fn l1_grad(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `lambda_rgb / K * sum |rgb - gt|_1 + lambda_depth / K+ * sum |d - gt|`.
/// Channel errors are summed inside the norm. Both sums are order
/// independent.
pub fn pretrain_loss(rgb: &[[f64; 3]], depth: &[f64], targets: &RenderTargets, w: &LossWeights) -> Result<LossValue> {
    targets.validate()?;
    if rgb.len() != targets.len() || depth.len() != targets.len() {
        return Err(Error::shape(format!(
            "{} rgb / {} depth predictions for {} targets",
            rgb.len(),
            depth.len(),
            targets.len()
        )));
    }
    let k = targets.len();
    let mut rgb_terms = Vec::with_capacity(k);
    let mut depth_terms = Vec::new();
    let mut residuals = Vec::with_capacity(k);
    for i in 0..k {
        let res = ray_residual(rgb[i], depth[i], targets.rgb[i], targets.depth[i]);
        let r = res.rgb;
        rgb_terms.push(r[0].abs() + r[1].abs() + r[2].abs());
        if let Some(d) = res.depth {
            depth_terms.push(d.abs());
        }
        residuals.push(res);
    }
    let kp = depth_terms.len();
    let rgb_l1 = if k > 0 { sorted_sum(&mut rgb_terms) / k as f64 } else { 0.0 };
    let depth_l1 = if kp > 0 { sorted_sum(&mut depth_terms) / kp as f64 } else { 0.0 };
    let mut loss = w.lambda_rgb * rgb_l1;
    if kp > 0 {
        loss += w.lambda_depth * depth_l1;
    }
    Ok(LossValue {
        loss,
        rgb_l1,
        depth_l1,
        rays: k,
        depth_rays: kp,
        residuals,
    })
}

/// Gradient of the loss with respect to each ray's rendered color and depth.
pub fn loss_grad(value: &LossValue, w: &LossWeights) -> Vec<([f64; 3], f64)> {
    value
        .residuals
        .iter()
        .map(|r| ray_loss_grad(r, value.rays, value.depth_rays, w))
        .collect()
}

/// One ray's share of [`loss_grad`] given the batch's ray counts.
pub fn ray_loss_grad(r: &RayResidual, rays: usize, depth_rays: usize, w: &LossWeights) -> ([f64; 3], f64) {
    let k = rays.max(1) as f64;
    let kp = depth_rays.max(1) as f64;
    let drgb = r.rgb.map(|x| w.lambda_rgb / k * l1_grad(x));
    let dd = r.depth.map_or(0.0, |x| w.lambda_depth / kp * l1_grad(x));
    (drgb, dd)
}

/// Signed residual of one prediction against its targets.
pub fn ray_residual(rgb: [f64; 3], depth: f64, target_rgb: [f64; 3], target_depth: Option<f64>) -> RayResidual {
    RayResidual {
        rgb: [0, 1, 2].map(|c| rgb[c] - target_rgb[c]),
        depth: target_depth.map(|gt| depth - gt),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn targets(n: usize) -> RenderTargets {
        RenderTargets {
            rgb: (0..n).map(|i| [0.1 * (i % 7) as f64, 0.5, 0.2]).collect(),
            depth: (0..n).map(|i| (i % 3 != 0).then_some(1.0 + i as f64 * 0.1)).collect(),
        }
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let t = targets(9);
        let depth: Vec<f64> = t.depth.iter().map(|d| d.unwrap_or(7.0)).collect();
        let v = pretrain_loss(&t.rgb, &depth, &t, &LossWeights::default()).unwrap();
        assert_eq!(v.loss, 0.0);
        assert!(loss_grad(&v, &LossWeights::default()).iter().all(|(g, d)| *g == [0.0; 3] && *d == 0.0));
    }

    #[test]
    fn red_offset_without_depth() {
        let t = RenderTargets {
            rgb: vec![[0.2, 0.3, 0.4]; 5],
            depth: vec![None; 5],
        };
        let pred = vec![[0.3, 0.3, 0.4]; 5];
        let v = pretrain_loss(&pred, &[0.0; 5], &t, &LossWeights::default()).unwrap();
        assert!((v.loss - 1.0).abs() < 1e-12);
        assert_eq!(v.depth_rays, 0);
        assert_eq!(v.loss, LossWeights::default().lambda_rgb * v.rgb_l1);
    }

    #[test]
    fn hand_evaluated_mix() {
        let t = RenderTargets {
            rgb: vec![[0.0; 3], [1.0; 3]],
            depth: vec![Some(2.0), None],
        };
        let v = pretrain_loss(&[[0.1, 0.2, 0.0], [1.0; 3]], &[2.5, 9.0], &t, &LossWeights { lambda_rgb: 2.0, lambda_depth: 3.0 }).unwrap();
        assert!((v.loss - (2.0 / 2.0 * 0.3 + 3.0 / 1.0 * 0.5)).abs() < 1e-15);
        let g = loss_grad(&v, &LossWeights { lambda_rgb: 2.0, lambda_depth: 3.0 });
        assert_eq!(g[0], ([1.0, 1.0, 0.0], 3.0));
        assert_eq!(g[1], ([0.0; 3], 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let t = targets(3);
        assert!(matches!(
            pretrain_loss(&t.rgb[..2], &[1.0; 3], &t, &LossWeights::default()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn permutation_invariant_bitwise() {
        let mut rng = crate::rng::stream(12, &[]);
        let n = 500;
        let t = RenderTargets {
            rgb: (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect(),
            depth: (0..n).map(|_| rng.random_bool(0.6).then(|| 0.5 + 5.0 * rng.random::<f64>())).collect(),
        };
        let pred: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let depth: Vec<f64> = (0..n).map(|_| 6.0 * rng.random::<f64>()).collect();
        let base = pretrain_loss(&pred, &depth, &t, &LossWeights::default()).unwrap();
        for _ in 0..5 {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let t2 = RenderTargets {
                rgb: order.iter().map(|&i| t.rgb[i]).collect(),
                depth: order.iter().map(|&i| t.depth[i]).collect(),
            };
            let p2: Vec<_> = order.iter().map(|&i| pred[i]).collect();
            let d2: Vec<_> = order.iter().map(|&i| depth[i]).collect();
            let v = pretrain_loss(&p2, &d2, &t2, &LossWeights::default()).unwrap();
            assert_eq!(v.loss.to_bits(), base.loss.to_bits());
        }
    }
}
