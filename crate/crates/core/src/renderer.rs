//! SDF and color decoders plus NeuS-style differentiable volume rendering.
//!
//! Per ray sample `j`: the feature `f_j` is trilinearly interpolated from the
//! projected volume, the SDF head maps `(p_j, f_j)` to `(s_j, h_j)`, the
//! normal `n_j` is the normalised spatial gradient of `s`, and the color head
//! maps `(p_j, f_j, d, n_j, h_j)` to `c_j`. Opacities come from consecutive
//! sigmoid-transformed SDF values and are alpha-composited into color and
//! depth.
//!
//! Normals are treated as constants by the backward pass.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Ray, Vec3};
use crate::nn::{gemm, ln_sigmoid, sigmoid, softplus_with_grad, Linear};
use crate::voxelgrid::{FeatureVolume, TrilinearStencil};

/// Width of the geometry feature passed from the SDF head to the color head.
pub const GEO_FEATURE_DIM: usize = 15;

/// Largest representable opacity below one.
pub const ALPHA_MAX: f64 = 1.0 - f64::EPSILON;

const NORMAL_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

/// Fully connected network with softplus hidden activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub output: OutputActivation,
}

/// Per-layer activations of a batched forward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    rows: usize,
    /// Input of every layer (`acts[0]` is the network input).
    acts: Vec<Vec<f64>>,
    /// Activation slope of every hidden layer.
    slope: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Mlp {
    /// `dims` lists every layer width including input and output.
    pub fn init(dims: &[usize], output: OutputActivation, final_gain: f64, rng: &mut impl Rng) -> Self {
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let gain = if l + 1 == n { final_gain } else { 6f64.sqrt() };
                Linear::init(dims[l], dims[l + 1], gain, rng)
            })
            .collect();
        Self { layers, output }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Linear::zeros(l.in_dim, l.out_dim)).collect(),
            output: self.output,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward_batch(&self, x: &[f64], rows: usize) -> Result<MlpTape> {
        if x.len() != rows * self.in_dim() {
            return Err(Error::shape(format!(
                "MLP expects {} inputs per row, got {} values for {rows} rows",
                self.in_dim(),
                x.len()
            )));
        }
        let n = self.layers.len();
        let mut acts = Vec::with_capacity(n);
        let mut slope = Vec::with_capacity(n.saturating_sub(1));
        acts.push(x.to_vec());
        let mut output = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(rows * layer.out_dim);
            for _ in 0..rows {
                z.extend_from_slice(&layer.bias);
            }
            gemm(rows, layer.in_dim, layer.out_dim, &acts[l], false, &layer.weight, true, 1.0, &mut z);
            if l + 1 < n {
                let (a, s): (Vec<f64>, Vec<f64>) = z.iter().map(|&v| softplus_with_grad(v)).unzip();
                acts.push(a);
                slope.push(s);
            } else {
                if self.output == OutputActivation::Sigmoid {
                    z.iter_mut().for_each(|v| *v = sigmoid(*v));
                }
                output = z;
            }
        }
        Ok(MlpTape { rows, acts, slope, output })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(x, 1)?.output)
    }

    /// Reverse pass. Returns the input gradient; accumulates parameter
    /// gradients into `grad` when given.
    pub fn backward_batch(&self, tape: &MlpTape, dout: &[f64], mut grad: Option<&mut Mlp>) -> Vec<f64> {
        let rows = tape.rows;
        let mut d = dout.to_vec();
        if self.output == OutputActivation::Sigmoid {
            for (g, y) in d.iter_mut().zip(&tape.output) {
                *g *= y * (1.0 - y);
            }
        }
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if let Some(g) = grad.as_deref_mut() {
                layer.accumulate_param_grad(&tape.acts[l], &d, rows, &mut g.layers[l]);
            }
            let mut dx = vec![0.0; rows * layer.in_dim];
            layer.backward_input(&d, rows, &mut dx);
            if l > 0 {
                for (g, s) in dx.iter_mut().zip(&tape.slope[l - 1]) {
                    *g *= s;
                }
            }
            d = dx;
        }
        d
    }
}

/// Learnable inverse bandwidth of the opacity sigmoid, stored as a log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sharpness {
    pub raw: f64,
}

impl Sharpness {
    pub fn from_value(s: f64) -> Self {
        Self { raw: s.ln() }
    }

    pub fn value(&self) -> f64 {
        self.raw.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub feature_dim: usize,
    pub width: usize,
    pub sdf_layers: usize,
    pub rgb_layers: usize,
    /// SDF value the untrained field starts near (positive = empty space).
    pub initial_sdf: f64,
    pub initial_sharpness: f64,
}

impl DecoderConfig {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            width: 32,
            sdf_layers: 6,
            rgb_layers: 4,
            initial_sdf: 0.3,
            initial_sharpness: 10.0,
        }
    }

    pub fn sdf_in(&self) -> usize {
        3 + self.feature_dim
    }

    pub fn rgb_in(&self) -> usize {
        3 + self.feature_dim + 3 + 3 + GEO_FEATURE_DIM
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub sdf: Mlp,
    pub rgb: Mlp,
    pub sharpness: Sharpness,
}

fn layer_dims(input: usize, width: usize, layers: usize, output: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend(std::iter::repeat_n(width, layers.saturating_sub(1)));
    dims.push(output);
    dims
}

impl DecoderParams {
    pub fn init(cfg: &DecoderConfig, rng: &mut impl Rng) -> Self {
        let mut sdf = Mlp::init(
            &layer_dims(cfg.sdf_in(), cfg.width, cfg.sdf_layers, 1 + GEO_FEATURE_DIM),
            OutputActivation::Identity,
            0.1,
            rng,
        );
        if let Some(last) = sdf.layers.last_mut() {
            last.bias[0] = cfg.initial_sdf;
        }
        let rgb = Mlp::init(
            &layer_dims(cfg.rgb_in(), cfg.width, cfg.rgb_layers, 3),
            OutputActivation::Sigmoid,
            1.0,
            rng,
        );
        Self {
            sdf,
            rgb,
            sharpness: Sharpness::from_value(cfg.initial_sharpness),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            sdf: self.sdf.zeros_like(),
            rgb: self.rgb.zeros_like(),
            sharpness: Sharpness { raw: 0.0 },
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.sdf.in_dim() - 3
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdfOutput {
    pub sdf: f64,
    pub geo_feature: Vec<f64>,
}

fn check_feature(params: &DecoderParams, f: &[f64]) -> Result<()> {
    if f.len() != params.feature_dim() {
        return Err(Error::shape(format!(
            "decoder expects {}-d features, got {}",
            params.feature_dim(),
            f.len()
        )));
    }
    Ok(())
}

pub fn sdf_decode(params: &DecoderParams, p: &Vec3, f: &[f64]) -> Result<SdfOutput> {
    check_feature(params, f)?;
    let x: Vec<f64> = p.iter().copied().chain(f.iter().copied()).collect();
    let out = params.sdf.forward(&x)?;
    Ok(SdfOutput {
        sdf: out[0],
        geo_feature: out[1..].to_vec(),
    })
}

fn normalise_or_zero(g: Vec3) -> Vec3 {
    let n = g.norm();
    if n < NORMAL_EPS {
        Vec3::zeros()
    } else {
        g / n
    }
}

/// Unit spatial gradient of the decoded SDF at `p`, through both the direct
/// position input and the interpolated feature.
pub fn sdf_normal(params: &DecoderParams, vol: &FeatureVolume, p: &Vec3) -> Result<Vec3> {
    let st = TrilinearStencil::new(&vol.spec, p)?;
    let mut f = vec![0.0; vol.channels()];
    st.gather_into(vol, &mut f);
    check_feature(params, &f)?;
    let x: Vec<f64> = p.iter().copied().chain(f).collect();
    let tape = params.sdf.forward_batch(&x, 1)?;
    let mut seed = vec![0.0; params.sdf.out_dim()];
    seed[0] = 1.0;
    let dx = params.sdf.backward_batch(&tape, &seed, None);
    let g = Vec3::new(dx[0], dx[1], dx[2]) + st.jacobian_t_mul(vol, &dx[3..]);
    Ok(normalise_or_zero(g))
}

pub fn rgb_decode(params: &DecoderParams, p: &Vec3, f: &[f64], d: &Vec3, n: &Vec3, h: &[f64]) -> Result<[f64; 3]> {
    check_feature(params, f)?;
    if h.len() != GEO_FEATURE_DIM {
        return Err(Error::shape(format!("geometry feature must be {GEO_FEATURE_DIM}-d, got {}", h.len())));
    }
    let x: Vec<f64> = p
        .iter()
        .chain(f)
        .chain(d.iter())
        .chain(n.iter())
        .chain(h)
        .copied()
        .collect();
    let out = params.rgb.forward(&x)?;
    Ok([out[0], out[1], out[2]])
}

/// Discrete opacity between consecutive samples from their SDF values.
pub fn alpha_from_sdf(s_j: f64, s_next: f64, sharpness: f64) -> f64 {
    alpha_with_grad(s_j, s_next, sharpness).0
}

/// Opacity and its partials w.r.t. `(s_j, s_next, sharpness)`.
pub fn alpha_with_grad(s_j: f64, s_next: f64, sharpness: f64) -> (f64, f64, f64, f64) {
    let (a, b) = (sharpness * s_j, sharpness * s_next);
    let delta = ln_sigmoid(b) - ln_sigmoid(a);
    if !(delta < 0.0) {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let alpha = -delta.exp_m1();
    if alpha > ALPHA_MAX {
        return (ALPHA_MAX, 0.0, 0.0, 0.0);
    }
    let dalpha = alpha - 1.0;
    let (ga, gb) = (sigmoid(-a), sigmoid(-b));
    (
        alpha,
        dalpha * (-sharpness * ga),
        dalpha * (sharpness * gb),
        dalpha * (s_next * gb - s_j * ga),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub rgb: [f64; 3],
    pub depth: f64,
    pub weights: Vec<f64>,
    pub transmittance: Vec<f64>,
}

/// Alpha compositing: `T_j = prod_{k<j} (1 - alpha_k)`, `w_j = T_j alpha_j`.
pub fn composite(alphas: &[f64], colors: &[[f64; 3]], depths: &[f64]) -> Composite {
    let n = alphas.len();
    let mut weights = Vec::with_capacity(n);
    let mut transmittance = Vec::with_capacity(n);
    let mut rgb = [0.0; 3];
    let mut depth = 0.0;
    let mut t = 1.0;
    for j in 0..n {
        transmittance.push(t);
        let w = t * alphas[j];
        weights.push(w);
        for k in 0..3 {
            rgb[k] += w * colors[j][k];
        }
        depth += w * depths[j];
        t *= 1.0 - alphas[j];
    }
    Composite {
        rgb,
        depth,
        weights,
        transmittance,
    }
}

/// Adjoint of [`composite`] w.r.t. the opacities, given `dL/dw_j`.
pub fn composite_alpha_grad(alphas: &[f64], transmittance: &[f64], dweights: &[f64]) -> Vec<f64> {
    // tail_j = sum_{m>j} g_m alpha_m prod_{j<k<m} (1 - alpha_k)
    let n = alphas.len();
    let mut dalpha = vec![0.0; n];
    let mut tail = 0.0;
    for j in (0..n).rev() {
        dalpha[j] = transmittance[j] * (dweights[j] - tail);
        tail = dweights[j] * alphas[j] + (1.0 - alphas[j]) * tail;
    }
    dalpha
}

/// Everything computed along one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySampleBatch {
    pub t: Vec<f64>,
    pub points: Vec<Vec3>,
    /// `D x C`.
    pub features: Vec<f64>,
    pub sdf: Vec<f64>,
    /// `D x GEO_FEATURE_DIM`.
    pub geo: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
    pub normals: Vec<Vec3>,
    pub alphas: Vec<f64>,
    pub weights: Vec<f64>,
    pub transmittance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedRay {
    pub rgb: [f64; 3],
    pub depth: f64,
    pub samples: RaySampleBatch,
}

struct SampleEval {
    stencils: Vec<TrilinearStencil>,
    points: Vec<Vec3>,
    features: Vec<f64>,
    sdf_tape: MlpTape,
    normals: Vec<Vec3>,
    rgb_tape: MlpTape,
}

fn check_samples(t: &[f64]) -> Result<()> {
    if t.len() < 2 || t.windows(2).any(|w| !(w[0] < w[1])) || !t.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateRay);
    }
    Ok(())
}

fn evaluate_samples(
    ray: &Ray,
    t: &[f64],
    vol: &FeatureVolume,
    params: &DecoderParams,
    frozen_normals: Option<&[Vec3]>,
) -> Result<SampleEval> {
    check_feature(params, &vec![0.0; vol.channels()])?;
    let d = t.len();
    let c = vol.channels();
    let points: Vec<Vec3> = t.iter().map(|&tj| ray.at(tj)).collect();
    let stencils = points
        .iter()
        .map(|p| TrilinearStencil::new(&vol.spec, p))
        .collect::<Result<Vec<_>>>()?;
    let mut features = vec![0.0; d * c];
    for (st, f) in stencils.iter().zip(features.chunks_exact_mut(c)) {
        st.gather_into(vol, f);
    }
    let sdf_in = 3 + c;
    let mut x = vec![0.0; d * sdf_in];
    for j in 0..d {
        let row = &mut x[j * sdf_in..(j + 1) * sdf_in];
        row[..3].copy_from_slice(points[j].as_slice());
        row[3..].copy_from_slice(&features[j * c..(j + 1) * c]);
    }
    let sdf_tape = params.sdf.forward_batch(&x, d)?;
    let sdf_out = params.sdf.out_dim();

    let normals = match frozen_normals {
        Some(n) if n.len() == d => n.to_vec(),
        Some(n) => return Err(Error::shape(format!("{} frozen normals for {d} samples", n.len()))),
        None => {
            let mut seed = vec![0.0; d * sdf_out];
            for j in 0..d {
                seed[j * sdf_out] = 1.0;
            }
            let dx = params.sdf.backward_batch(&sdf_tape, &seed, None);
            (0..d)
                .map(|j| {
                    let row = &dx[j * sdf_in..(j + 1) * sdf_in];
                    let g = Vec3::new(row[0], row[1], row[2]) + stencils[j].jacobian_t_mul(vol, &row[3..]);
                    normalise_or_zero(g)
                })
                .collect()
        }
    };

    let rgb_in = params.rgb.in_dim();
    let mut xr = vec![0.0; d * rgb_in];
    for j in 0..d {
        let row = &mut xr[j * rgb_in..(j + 1) * rgb_in];
        row[..3].copy_from_slice(points[j].as_slice());
        row[3..3 + c].copy_from_slice(&features[j * c..(j + 1) * c]);
        row[3 + c..6 + c].copy_from_slice(ray.direction.as_slice());
        row[6 + c..9 + c].copy_from_slice(normals[j].as_slice());
        row[9 + c..].copy_from_slice(&sdf_tape.output[j * sdf_out + 1..(j + 1) * sdf_out]);
    }
    let rgb_tape = params.rgb.forward_batch(&xr, d)?;
    Ok(SampleEval {
        stencils,
        points,
        features,
        sdf_tape,
        normals,
        rgb_tape,
    })
}

fn alphas_for(sdf: &[f64], sharpness: f64) -> Vec<f64> {
    let d = sdf.len();
    (0..d)
        .map(|j| if j + 1 < d { alpha_from_sdf(sdf[j], sdf[j + 1], sharpness) } else { 0.0 })
        .collect()
}

/// Renders one ray at the given sorted depths. The final sample carries zero
/// opacity (it has no successor), so `D - 1` intervals contribute.
pub fn render_ray(ray: &Ray, t_samples: &[f64], vol: &FeatureVolume, params: &DecoderParams) -> Result<RenderedRay> {
    render_ray_with_normals(ray, t_samples, vol, params, None)
}

/// As [`render_ray`], optionally substituting precomputed normals.
pub fn render_ray_with_normals(
    ray: &Ray,
    t_samples: &[f64],
    vol: &FeatureVolume,
    params: &DecoderParams,
    frozen_normals: Option<&[Vec3]>,
) -> Result<RenderedRay> {
    check_samples(t_samples)?;
    let mut ev = evaluate_samples(ray, t_samples, vol, params, frozen_normals)?;
    Ok(finish_ray(&mut ev, t_samples, params))
}

/// Composites evaluated samples. Moves the per-sample buffers out of `ev`,
/// leaving the stencils and tapes for a reverse pass.
fn finish_ray(ev: &mut SampleEval, t_samples: &[f64], params: &DecoderParams) -> RenderedRay {
    let d = t_samples.len();
    let sdf_out = params.sdf.out_dim();
    let sdf: Vec<f64> = (0..d).map(|j| ev.sdf_tape.output[j * sdf_out]).collect();
    let mut geo = Vec::with_capacity(d * GEO_FEATURE_DIM);
    for j in 0..d {
        geo.extend_from_slice(&ev.sdf_tape.output[j * sdf_out + 1..(j + 1) * sdf_out]);
    }
    let colors: Vec<[f64; 3]> = ev.rgb_tape.output.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let alphas = alphas_for(&sdf, params.sharpness.value());
    let comp = composite(&alphas, &colors, t_samples);
    RenderedRay {
        rgb: comp.rgb,
        depth: comp.depth,
        samples: RaySampleBatch {
            t: t_samples.to_vec(),
            points: std::mem::take(&mut ev.points),
            features: std::mem::take(&mut ev.features),
            sdf,
            geo,
            colors,
            normals: std::mem::take(&mut ev.normals),
            alphas,
            weights: comp.weights,
            transmittance: comp.transmittance,
        },
    }
}

/// Renders one ray and immediately runs its reverse pass, reusing the
/// forward activations. `seed` maps the rendered ray to `(dL/drgb, dL/ddepth)`;
/// the result is bit-identical to [`render_ray_with_normals`] followed by
/// [`render_ray_backward`].
#[allow(clippy::too_many_arguments)]
pub fn render_ray_with_grad(
    ray: &Ray,
    t_samples: &[f64],
    vol: &FeatureVolume,
    params: &DecoderParams,
    frozen_normals: Option<&[Vec3]>,
    seed: impl FnOnce(&RenderedRay) -> ([f64; 3], f64),
    grad: &mut DecoderParams,
    dvol: &mut [f64],
) -> Result<RenderedRay> {
    check_samples(t_samples)?;
    let mut ev = evaluate_samples(ray, t_samples, vol, params, frozen_normals)?;
    let rendered = finish_ray(&mut ev, t_samples, params);
    let (d_rgb, d_depth) = seed(&rendered);
    if d_rgb != [0.0; 3] || d_depth != 0.0 {
        backward_from_eval(&ev, &rendered.samples, vol, params, d_rgb, d_depth, grad, dvol);
    }
    Ok(rendered)
}

/// Renders many rays; result `i` is bit-identical to `render_ray` on ray `i`.
pub fn render_batch(
    rays: &[Ray],
    t_samples: &[Vec<f64>],
    vol: &FeatureVolume,
    params: &DecoderParams,
) -> Result<Vec<RenderedRay>> {
    if rays.len() != t_samples.len() {
        return Err(Error::shape("one depth vector per ray is required"));
    }
    rays.par_iter()
        .zip(t_samples.par_iter())
        .map(|(r, t)| render_ray(r, t, vol, params))
        .collect()
}

/// Reverse pass for one rendered ray. Recomputes the decoder activations
/// from the recorded depths and normals, then accumulates decoder gradients
/// into `grad` and feature-volume gradients into `dvol`.
#[allow(clippy::too_many_arguments)]
pub fn render_ray_backward(
    ray: &Ray,
    samples: &RaySampleBatch,
    vol: &FeatureVolume,
    params: &DecoderParams,
    d_rgb: [f64; 3],
    d_depth: f64,
    grad: &mut DecoderParams,
    dvol: &mut [f64],
) -> Result<()> {
    let ev = evaluate_samples(ray, &samples.t, vol, params, Some(&samples.normals))?;
    backward_from_eval(&ev, samples, vol, params, d_rgb, d_depth, grad, dvol);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn backward_from_eval(
    ev: &SampleEval,
    samples: &RaySampleBatch,
    vol: &FeatureVolume,
    params: &DecoderParams,
    d_rgb: [f64; 3],
    d_depth: f64,
    grad: &mut DecoderParams,
    dvol: &mut [f64],
) {
    let d = samples.t.len();
    let c = vol.channels();
    let sh = params.sharpness.value();

    let dweights: Vec<f64> = (0..d)
        .map(|j| {
            let col = &samples.colors[j];
            d_rgb[0] * col[0] + d_rgb[1] * col[1] + d_rgb[2] * col[2] + d_depth * samples.t[j]
        })
        .collect();
    let dalpha = composite_alpha_grad(&samples.alphas, &samples.transmittance, &dweights);

    let mut dsdf = vec![0.0; d];
    let mut dsharp = 0.0;
    for j in 0..d.saturating_sub(1) {
        let (_, da, db, ds) = alpha_with_grad(samples.sdf[j], samples.sdf[j + 1], sh);
        dsdf[j] += dalpha[j] * da;
        dsdf[j + 1] += dalpha[j] * db;
        dsharp += dalpha[j] * ds;
    }
    grad.sharpness.raw += dsharp * sh;

    let mut dcolor = vec![0.0; d * 3];
    for j in 0..d {
        for k in 0..3 {
            dcolor[j * 3 + k] = samples.weights[j] * d_rgb[k];
        }
    }
    let dx_rgb = params.rgb.backward_batch(&ev.rgb_tape, &dcolor, Some(&mut grad.rgb));
    let rgb_in = params.rgb.in_dim();
    let sdf_out = params.sdf.out_dim();
    let sdf_in = params.sdf.in_dim();

    let mut dsdf_out = vec![0.0; d * sdf_out];
    for j in 0..d {
        dsdf_out[j * sdf_out] = dsdf[j];
        dsdf_out[j * sdf_out + 1..(j + 1) * sdf_out].copy_from_slice(&dx_rgb[j * rgb_in + 9 + c..(j + 1) * rgb_in]);
    }
    let dx_sdf = params.sdf.backward_batch(&ev.sdf_tape, &dsdf_out, Some(&mut grad.sdf));

    let mut dfeat = vec![0.0; c];
    for j in 0..d {
        for (k, g) in dfeat.iter_mut().enumerate() {
            *g = dx_rgb[j * rgb_in + 3 + k] + dx_sdf[j * sdf_in + 3 + k];
        }
        ev.stencils[j].scatter_grad(&dfeat, dvol);
    }
}
