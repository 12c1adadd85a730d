//! Dense voxel feature volumes and the operations that fill or read them:
//! trilinear / bilinear interpolation, lifting of image features through a
//! predicted depth distribution, point voxelization and the 3x3x3 projection
//! layer.
//!
//! Features live at voxel centers. A volume is stored X-major with channels
//! innermost: `((x * Y + y) * Z + z) * C + c`.

use crate::error::{Error, Result};
use crate::geometry::{project_point, Aabb, CameraRig, Vec3};
use crate::nn::{conv_forward, sorted_sum, ConvWeights, Grid, Linear};

const BOUNDS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelSpec {
    pub resolution: [usize; 3],
    pub bounds: Aabb,
    pub feature_dim: usize,
}

impl VoxelSpec {
    pub fn new(resolution: [usize; 3], bounds: Aabb, feature_dim: usize) -> Result<Self> {
        if resolution.iter().any(|&n| n < 2) {
            return Err(Error::InvalidConfig(format!(
                "voxel resolution {resolution:?} must be at least 2 along every axis"
            )));
        }
        if feature_dim == 0 {
            return Err(Error::InvalidConfig("feature dimension must be positive".into()));
        }
        Ok(Self {
            resolution,
            bounds,
            feature_dim,
        })
    }

    pub fn with_feature_dim(&self, feature_dim: usize) -> Self {
        Self { feature_dim, ..*self }
    }

    pub fn voxel_size(&self) -> Vec3 {
        let e = self.bounds.extent();
        Vec3::new(
            e.x / self.resolution[0] as f64,
            e.y / self.resolution[1] as f64,
            e.z / self.resolution[2] as f64,
        )
    }

    pub fn voxel_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn grid(&self) -> Grid<3> {
        Grid { dims: self.resolution }
    }

    pub fn flat(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.resolution[1] + idx[1]) * self.resolution[2] + idx[2]
    }

    pub fn unflat(&self, flat: usize) -> [usize; 3] {
        let z = flat % self.resolution[2];
        let y = (flat / self.resolution[2]) % self.resolution[1];
        let x = flat / (self.resolution[1] * self.resolution[2]);
        [x, y, z]
    }

    pub fn center(&self, idx: [usize; 3]) -> Vec3 {
        let s = self.voxel_size();
        Vec3::new(
            self.bounds.min.x + (idx[0] as f64 + 0.5) * s.x,
            self.bounds.min.y + (idx[1] as f64 + 0.5) * s.y,
            self.bounds.min.z + (idx[2] as f64 + 0.5) * s.z,
        )
    }

    /// Voxel containing `p`; the upper faces belong to the last voxel.
    pub fn locate(&self, p: &Vec3) -> Option<[usize; 3]> {
        if !self.bounds.contains(p, 0.0) {
            return None;
        }
        let s = self.voxel_size();
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.bounds.min[a]) / s[a]).floor() as usize;
            idx[a] = f.min(self.resolution[a] - 1);
        }
        Some(idx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    pub spec: VoxelSpec,
    pub data: Vec<f64>,
}

impl FeatureVolume {
    pub fn zeros(spec: VoxelSpec) -> Self {
        Self {
            data: vec![0.0; spec.voxel_count() * spec.feature_dim],
            spec,
        }
    }

    pub fn from_fn(spec: VoxelSpec, mut f: impl FnMut(Vec3) -> Vec<f64>) -> Self {
        let mut vol = Self::zeros(spec);
        for flat in 0..spec.voxel_count() {
            let v = f(spec.center(spec.unflat(flat)));
            vol.voxel_mut(flat).copy_from_slice(&v);
        }
        vol
    }

    pub fn channels(&self) -> usize {
        self.spec.feature_dim
    }

    pub fn voxel(&self, flat: usize) -> &[f64] {
        let c = self.spec.feature_dim;
        &self.data[flat * c..(flat + 1) * c]
    }

    pub fn voxel_mut(&mut self, flat: usize) -> &mut [f64] {
        let c = self.spec.feature_dim;
        &mut self.data[flat * c..(flat + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Interpolation weights of the 8 voxel centers around a point, plus their
/// derivatives with respect to the point.
///
/// Outside the hull of voxel centers (the outer half voxel) the nearest face
/// value is extended, so the weights are constant along the clamped axis.
#[derive(Debug, Clone, Copy)]
pub struct TrilinearStencil {
    pub voxels: [usize; 8],
    pub weights: [f64; 8],
    pub dweights: [[f64; 3]; 8],
}

impl TrilinearStencil {
    pub fn new(spec: &VoxelSpec, p: &Vec3) -> Result<Self> {
        if !p.iter().all(|v| v.is_finite()) || !spec.bounds.contains(p, BOUNDS_TOL) {
            return Err(Error::OutOfBounds([p.x, p.y, p.z]));
        }
        let size = spec.voxel_size();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [0f64; 3];
        let mut dfrac = [0f64; 3];
        for a in 0..3 {
            let n = spec.resolution[a];
            let g = (p[a] - spec.bounds.min[a]) / size[a] - 0.5;
            let max = (n - 1) as f64;
            let (g, slope) = if g < 0.0 {
                (0.0, 0.0)
            } else if g > max {
                (max, 0.0)
            } else {
                (g, 1.0 / size[a])
            };
            let i0 = (g.floor() as usize).min(n.saturating_sub(2));
            lo[a] = i0;
            hi[a] = (i0 + 1).min(n - 1);
            frac[a] = g - i0 as f64;
            dfrac[a] = slope;
        }
        let mut voxels = [0usize; 8];
        let mut weights = [0f64; 8];
        let mut dweights = [[0f64; 3]; 8];
        for corner in 0..8 {
            let bit = |a: usize| (corner >> (2 - a)) & 1 == 1;
            let idx = [0, 1, 2].map(|a| if bit(a) { hi[a] } else { lo[a] });
            let f = [0, 1, 2].map(|a| if bit(a) { frac[a] } else { 1.0 - frac[a] });
            let df = [0, 1, 2].map(|a| if bit(a) { dfrac[a] } else { -dfrac[a] });
            voxels[corner] = spec.flat(idx);
            weights[corner] = f[0] * f[1] * f[2];
            dweights[corner] = [df[0] * f[1] * f[2], f[0] * df[1] * f[2], f[0] * f[1] * df[2]];
        }
        Ok(Self {
            voxels,
            weights,
            dweights,
        })
    }

    /// Adds the interpolated feature into `out`.
    pub fn gather_into(&self, vol: &FeatureVolume, out: &mut [f64]) {
        for (v, w) in self.voxels.iter().zip(&self.weights) {
            for (o, x) in out.iter_mut().zip(vol.voxel(*v)) {
                *o += w * x;
            }
        }
    }

    /// Scatters a feature-space gradient back onto the volume.
    pub fn scatter_grad(&self, grad: &[f64], dvol: &mut [f64]) {
        let c = grad.len();
        for (v, w) in self.voxels.iter().zip(&self.weights) {
            for (d, g) in dvol[v * c..(v + 1) * c].iter_mut().zip(grad) {
                *d += w * g;
            }
        }
    }

    /// `J^T g` where `J` is the C x 3 Jacobian of the sample w.r.t. position.
    pub fn jacobian_t_mul(&self, vol: &FeatureVolume, g: &[f64]) -> Vec3 {
        let mut out = Vec3::zeros();
        for (v, dw) in self.voxels.iter().zip(&self.dweights) {
            let dot: f64 = vol.voxel(*v).iter().zip(g).map(|(a, b)| a * b).sum();
            out += Vec3::new(dw[0], dw[1], dw[2]) * dot;
        }
        out
    }
}

pub fn trilinear_sample(vol: &FeatureVolume, p: &Vec3) -> Result<Vec<f64>> {
    let st = TrilinearStencil::new(&vol.spec, p)?;
    let mut out = vec![0.0; vol.channels()];
    st.gather_into(vol, &mut out);
    Ok(out)
}

/// Sample and its Jacobian, one `[d/dx, d/dy, d/dz]` row per channel.
pub fn trilinear_sample_grad(vol: &FeatureVolume, p: &Vec3) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
    let st = TrilinearStencil::new(&vol.spec, p)?;
    let mut value = vec![0.0; vol.channels()];
    st.gather_into(vol, &mut value);
    let mut jac = vec![[0.0; 3]; vol.channels()];
    for (v, dw) in st.voxels.iter().zip(&st.dweights) {
        for (row, x) in jac.iter_mut().zip(vol.voxel(*v)) {
            for a in 0..3 {
                row[a] += dw[a] * x;
            }
        }
    }
    Ok((value, jac))
}

/// Per-view image-space feature maps (`views x H_f x W_f x C`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatureMap {
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Input pixels per feature pixel.
    pub stride: usize,
    pub data: Vec<f64>,
}

impl ImageFeatureMap {
    pub fn zeros(views: usize, height: usize, width: usize, channels: usize, stride: usize) -> Self {
        Self {
            views,
            height,
            width,
            channels,
            stride,
            data: vec![0.0; views * height * width * channels],
        }
    }

    pub fn pixels_per_view(&self) -> usize {
        self.height * self.width
    }

    /// Flat pixel index (over all views).
    pub fn pixel_index(&self, view: usize, row: usize, col: usize) -> usize {
        (view * self.height + row) * self.width + col
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn view_data(&self, view: usize) -> &[f64] {
        let n = self.pixels_per_view() * self.channels;
        &self.data[view * n..(view + 1) * n]
    }

    pub fn view_data_mut(&mut self, view: usize) -> &mut [f64] {
        let n = self.pixels_per_view() * self.channels;
        &mut self.data[view * n..(view + 1) * n]
    }
}

/// Bilinear weights of the 4 feature pixels around an image coordinate.
#[derive(Debug, Clone, Copy)]
pub struct BilinearStencil {
    pub pixels: [usize; 4],
    pub weights: [f64; 4],
}

impl BilinearStencil {
    pub fn new(map: &ImageFeatureMap, view: usize, uv: [f64; 2]) -> Result<Self> {
        let (w_img, h_img) = ((map.width * map.stride) as f64, (map.height * map.stride) as f64);
        if view >= map.views || !(uv[0] >= 0.0 && uv[1] >= 0.0 && uv[0] < w_img && uv[1] < h_img) {
            return Err(Error::OutOfImage {
                u: uv[0],
                v: uv[1],
                width: w_img as usize,
                height: h_img as usize,
            });
        }
        let axis = |coord: f64, n: usize| {
            let g = (coord / map.stride as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = (g.floor() as usize).min(n.saturating_sub(2));
            (i0, (i0 + 1).min(n - 1), g - i0 as f64)
        };
        let (c0, c1, fx) = axis(uv[0], map.width);
        let (r0, r1, fy) = axis(uv[1], map.height);
        Ok(Self {
            pixels: [
                map.pixel_index(view, r0, c0),
                map.pixel_index(view, r0, c1),
                map.pixel_index(view, r1, c0),
                map.pixel_index(view, r1, c1),
            ],
            weights: [(1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx, fy * (1.0 - fx), fy * fx],
        })
    }

    pub fn gather(&self, data: &[f64], channels: usize, out: &mut [f64]) {
        for (p, w) in self.pixels.iter().zip(&self.weights) {
            for (o, x) in out.iter_mut().zip(&data[p * channels..(p + 1) * channels]) {
                *o += w * x;
            }
        }
    }
}

pub fn bilinear_sample(map: &ImageFeatureMap, view: usize, uv: [f64; 2]) -> Result<Vec<f64>> {
    let st = BilinearStencil::new(map, view, uv)?;
    let mut out = vec![0.0; map.channels];
    st.gather(&map.data, map.channels, &mut out);
    Ok(out)
}

/// Per-pixel categorical distribution over depth bins: a 1x1 convolution of
/// the image features followed by a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthDistributionParams {
    pub head: Linear,
    /// Depth of the first bin center, scene units.
    pub d_min: f64,
    /// Depth of the last bin center, scene units.
    pub d_max: f64,
}

impl DepthDistributionParams {
    pub fn bins(&self) -> usize {
        self.head.out_dim
    }

    /// Continuous bin coordinate of a depth, clamped to the bin range.
    pub fn bin_position(&self, depth: f64) -> f64 {
        let last = (self.bins() - 1) as f64;
        ((depth - self.d_min) / (self.d_max - self.d_min) * last).clamp(0.0, last)
    }

    pub fn bin_center(&self, bin: usize) -> f64 {
        self.d_min + (self.d_max - self.d_min) * bin as f64 / (self.bins() - 1) as f64
    }
}

/// Depth probabilities for every feature pixel (`pixels x bins`).
pub fn depth_distribution(map: &ImageFeatureMap, head: &DepthDistributionParams) -> Result<Vec<f64>> {
    if head.head.in_dim != map.channels {
        return Err(Error::shape(format!(
            "depth head expects {} channels, feature map has {}",
            head.head.in_dim, map.channels
        )));
    }
    let pixels = map.views * map.pixels_per_view();
    let bins = head.bins();
    let mut probs = vec![0.0; pixels * bins];
    head.head.forward_batch_into(&map.data, pixels, &mut probs);
    for row in probs.chunks_exact_mut(bins) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Ok(probs)
}

/// Softmax + 1x1 convolution backward. Accumulates head gradients and adds
/// the feature gradient into `dfeat`.
pub fn depth_distribution_backward(
    map: &ImageFeatureMap,
    head: &DepthDistributionParams,
    probs: &[f64],
    dprobs: &[f64],
    head_grad: &mut Linear,
    dfeat: &mut [f64],
) {
    let bins = head.bins();
    let pixels = map.views * map.pixels_per_view();
    let mut dlogits = vec![0.0; pixels * bins];
    for ((dl, p), dp) in dlogits
        .chunks_exact_mut(bins)
        .zip(probs.chunks_exact(bins))
        .zip(dprobs.chunks_exact(bins))
    {
        let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for j in 0..bins {
            dl[j] = p[j] * (dp[j] - dot);
        }
    }
    head.head.accumulate_param_grad(&map.data, &dlogits, pixels, head_grad);
    let mut dx = vec![0.0; pixels * map.channels];
    head.head.backward_input(&dlogits, pixels, &mut dx);
    for (d, x) in dfeat.iter_mut().zip(&dx) {
        *d += x;
    }
}

#[derive(Debug, Clone, Copy)]
struct LiftEntry {
    stencil: BilinearStencil,
    bin_lo: usize,
    bin_hi: usize,
    bin_frac: f64,
}

/// Precomputed voxel-to-pixel correspondences for lifting. Depends only on
/// the rig, the voxel grid and the depth bins, so it is reused across steps.
#[derive(Debug, Clone)]
pub struct LiftPlan {
    spec: VoxelSpec,
    offsets: Vec<usize>,
    entries: Vec<LiftEntry>,
}

impl LiftPlan {
    pub fn new(
        rig: &CameraRig,
        spec: &VoxelSpec,
        map_shape: &ImageFeatureMap,
        head: &DepthDistributionParams,
    ) -> Result<Self> {
        if map_shape.views != rig.view_count()
            || map_shape.height * map_shape.stride != rig.height()
            || map_shape.width * map_shape.stride != rig.width()
        {
            return Err(Error::shape("feature map does not match the camera rig"));
        }
        let bins = head.bins();
        let mut offsets = Vec::with_capacity(spec.voxel_count() + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for flat in 0..spec.voxel_count() {
            let center = spec.center(spec.unflat(flat));
            for view in 0..rig.view_count() {
                let Ok(proj) = project_point(&center, rig, view) else {
                    continue;
                };
                if !proj.in_image {
                    continue;
                }
                let stencil = BilinearStencil::new(map_shape, view, proj.pixel)?;
                let b = head.bin_position(proj.depth);
                let bin_lo = (b.floor() as usize).min(bins.saturating_sub(2));
                entries.push(LiftEntry {
                    stencil,
                    bin_lo,
                    bin_hi: (bin_lo + 1).min(bins - 1),
                    bin_frac: b - bin_lo as f64,
                });
            }
            offsets.push(entries.len());
        }
        Ok(Self {
            spec: *spec,
            offsets,
            entries,
        })
    }

    pub fn visible_views(&self, flat: usize) -> usize {
        self.offsets[flat + 1] - self.offsets[flat]
    }

    fn entries(&self, flat: usize) -> &[LiftEntry] {
        &self.entries[self.offsets[flat]..self.offsets[flat + 1]]
    }

    fn entry_prob(e: &LiftEntry, probs: &[f64], bins: usize) -> f64 {
        e.stencil
            .pixels
            .iter()
            .zip(&e.stencil.weights)
            .map(|(p, w)| w * ((1.0 - e.bin_frac) * probs[p * bins + e.bin_lo] + e.bin_frac * probs[p * bins + e.bin_hi]))
            .sum()
    }

    /// Feature of every voxel: mean over visible views of the bilinear image
    /// feature scaled by the interpolated depth probability.
    pub fn forward(&self, map: &ImageFeatureMap, probs: &[f64], bins: usize) -> FeatureVolume {
        let c = map.channels;
        let mut vol = FeatureVolume::zeros(self.spec.with_feature_dim(c));
        let mut feat = vec![0.0; c];
        for flat in 0..self.spec.voxel_count() {
            let entries = self.entries(flat);
            if entries.is_empty() {
                continue;
            }
            let inv = 1.0 / entries.len() as f64;
            let out = vol.voxel_mut(flat);
            for e in entries {
                feat.iter_mut().for_each(|v| *v = 0.0);
                e.stencil.gather(&map.data, c, &mut feat);
                let prob = Self::entry_prob(e, probs, bins);
                for (o, f) in out.iter_mut().zip(&feat) {
                    *o += prob * f * inv;
                }
            }
        }
        vol
    }

    /// Adjoint of [`LiftPlan::forward`]; adds into `dfeat` and `dprobs`.
    pub fn backward(
        &self,
        map: &ImageFeatureMap,
        probs: &[f64],
        bins: usize,
        dvol: &[f64],
        dfeat: &mut [f64],
        dprobs: &mut [f64],
    ) {
        let c = map.channels;
        let mut feat = vec![0.0; c];
        for flat in 0..self.spec.voxel_count() {
            let entries = self.entries(flat);
            if entries.is_empty() {
                continue;
            }
            let inv = 1.0 / entries.len() as f64;
            let g = &dvol[flat * c..(flat + 1) * c];
            for e in entries {
                feat.iter_mut().for_each(|v| *v = 0.0);
                e.stencil.gather(&map.data, c, &mut feat);
                let prob = Self::entry_prob(e, probs, bins);
                let dprob: f64 = feat.iter().zip(g).map(|(f, g)| f * g).sum::<f64>() * inv;
                for (p, w) in e.stencil.pixels.iter().zip(&e.stencil.weights) {
                    for (d, gg) in dfeat[p * c..(p + 1) * c].iter_mut().zip(g) {
                        *d += w * prob * inv * gg;
                    }
                    dprobs[p * bins + e.bin_lo] += w * (1.0 - e.bin_frac) * dprob;
                    dprobs[p * bins + e.bin_hi] += w * e.bin_frac * dprob;
                }
            }
        }
    }
}

/// Lifts per-view image features into the voxel grid.
pub fn lift_image_features(
    maps: &ImageFeatureMap,
    rig: &CameraRig,
    spec: &VoxelSpec,
    depth_head: &DepthDistributionParams,
) -> Result<FeatureVolume> {
    let plan = LiftPlan::new(rig, spec, maps, depth_head)?;
    let probs = depth_distribution(maps, depth_head)?;
    Ok(plan.forward(maps, &probs, depth_head.bins()))
}

/// Voxel membership of each point (`None` outside the bounds).
pub fn assign_points(positions: &[Vec3], spec: &VoxelSpec) -> Vec<Option<usize>> {
    positions.iter().map(|p| spec.locate(p).map(|i| spec.flat(i))).collect()
}

/// Per-voxel mean of point features (`features` is `N x C`). Summation is
/// order independent so the result does not depend on point order.
pub fn voxelize_points(positions: &[Vec3], features: &[f64], spec: &VoxelSpec) -> Result<FeatureVolume> {
    let c = spec.feature_dim;
    if features.len() != positions.len() * c {
        return Err(Error::shape(format!(
            "{} points need {} feature values, got {}",
            positions.len(),
            positions.len() * c,
            features.len()
        )));
    }
    let assignment = assign_points(positions, spec);
    Ok(voxelize_assigned(&assignment, features, spec))
}

pub(crate) fn group_by_voxel(assignment: &[Option<usize>], voxels: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); voxels];
    for (i, a) in assignment.iter().enumerate() {
        if let Some(v) = a {
            groups[*v].push(i);
        }
    }
    groups
}

pub(crate) fn voxelize_assigned(assignment: &[Option<usize>], features: &[f64], spec: &VoxelSpec) -> FeatureVolume {
    let c = spec.feature_dim;
    let mut vol = FeatureVolume::zeros(*spec);
    let mut terms = Vec::new();
    for (flat, members) in group_by_voxel(assignment, spec.voxel_count()).iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let inv = members.len() as f64;
        let out = vol.voxel_mut(flat);
        for (ch, o) in out.iter_mut().enumerate() {
            terms.clear();
            terms.extend(members.iter().map(|&i| features[i * c + ch]));
            *o = sorted_sum(&mut terms) / inv;
        }
    }
    vol
}

/// 3x3x3 zero-padded convolution over the whole volume.
pub fn projection_layer(vol: &FeatureVolume, conv: &ConvWeights) -> Result<FeatureVolume> {
    if conv.c_in != vol.channels() || conv.taps != 27 {
        return Err(Error::shape(format!(
            "projection kernel {}x{} taps does not accept {} channels",
            conv.c_in,
            conv.taps,
            vol.channels()
        )));
    }
    let data = conv_forward(vol.spec.grid(), &vol.data, conv)?;
    Ok(FeatureVolume {
        spec: vol.spec.with_feature_dim(conv.c_out),
        data,
    })
}
