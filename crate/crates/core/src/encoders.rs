//! Toy modality-specific encoders with a sparse-visible contract: masked
//! inputs never influence any output and masked outputs are exactly zero.
//!
//! Sparse convolution is realised as zero-masked-inputs, dense convolution,
//! re-zero-masked-outputs, per layer.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::LidarPoint;
use crate::image::Image;
use crate::masking::{voxel_column_masked, BlockMask, PixelMask};
use crate::nn::{conv_backward, conv_forward, ConvWeights, Grid, Linear};
use crate::voxelgrid::{assign_points, group_by_voxel, voxelize_assigned, FeatureVolume, ImageFeatureMap, VoxelSpec};

/// Two 3x3 convolutions (3 -> C -> C) with a rectifier in between.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoderParams {
    pub conv1: ConvWeights,
    pub conv2: ConvWeights,
}

impl ImageEncoderParams {
    pub fn init(channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv1: ConvWeights::init(3, channels, 9, 3f64.sqrt(), rng),
            conv2: ConvWeights::init(channels, channels, 9, 3f64.sqrt(), rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv1: ConvWeights::zeros(self.conv1.c_in, self.conv1.c_out, 9),
            conv2: ConvWeights::zeros(self.conv2.c_in, self.conv2.c_out, 9),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv2.c_out
    }
}

fn zero_masked(data: &mut [f64], channels: usize, mask: &PixelMask) {
    for (px, &m) in data.chunks_exact_mut(channels).zip(&mask.masked) {
        if m {
            px.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Activations kept for the backward pass of one view.
#[derive(Debug, Clone)]
pub struct ImageViewCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
    mask: PixelMask,
}

#[derive(Debug, Clone)]
pub struct ImageEncoderCache {
    views: Vec<ImageViewCache>,
    height: usize,
    width: usize,
}

fn encode_view(img: &Image, mask: &PixelMask, params: &ImageEncoderParams) -> Result<(Vec<f64>, ImageViewCache)> {
    if img.channels != 3 || img.height != mask.height || img.width != mask.width {
        return Err(Error::shape(format!(
            "image {}x{}x{} does not match mask {}x{}",
            img.height, img.width, img.channels, mask.height, mask.width
        )));
    }
    let grid = Grid { dims: [img.height, img.width] };
    let mut input = img.data.clone();
    zero_masked(&mut input, 3, mask);
    let mut hidden = conv_forward(grid, &input, &params.conv1)?;
    zero_masked(&mut hidden, params.conv1.c_out, mask);
    hidden.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut out = conv_forward(grid, &hidden, &params.conv2)?;
    zero_masked(&mut out, params.conv2.c_out, mask);
    Ok((
        out,
        ImageViewCache {
            input,
            hidden,
            mask: mask.clone(),
        },
    ))
}

/// Encodes one view (stride 1).
pub fn encode_image_sparse(img: &Image, mask: &PixelMask, params: &ImageEncoderParams) -> Result<ImageFeatureMap> {
    encode_images(std::slice::from_ref(img), std::slice::from_ref(mask), params).map(|(m, _)| m)
}

pub fn encode_images(
    imgs: &[Image],
    masks: &[PixelMask],
    params: &ImageEncoderParams,
) -> Result<(ImageFeatureMap, ImageEncoderCache)> {
    let first = imgs.first().ok_or_else(|| Error::shape("no images to encode"))?;
    if masks.len() != imgs.len() {
        return Err(Error::shape(format!("{} images but {} masks", imgs.len(), masks.len())));
    }
    let (h, w, c) = (first.height, first.width, params.channels());
    let mut map = ImageFeatureMap::zeros(imgs.len(), h, w, c, 1);
    let mut views = Vec::with_capacity(imgs.len());
    for (v, (img, mask)) in imgs.iter().zip(masks).enumerate() {
        if img.height != h || img.width != w {
            return Err(Error::shape("all views must share one image size"));
        }
        let (out, cache) = encode_view(img, mask, params)?;
        map.view_data_mut(v).copy_from_slice(&out);
        views.push(cache);
    }
    Ok((map, ImageEncoderCache { views, height: h, width: w }))
}

/// Accumulates parameter gradients given the gradient of the feature map.
pub fn image_encoder_backward(
    cache: &ImageEncoderCache,
    params: &ImageEncoderParams,
    dmap: &ImageFeatureMap,
    grad: &mut ImageEncoderParams,
) {
    let grid = Grid { dims: [cache.height, cache.width] };
    let c = params.channels();
    for (v, view) in cache.views.iter().enumerate() {
        let mut dout = dmap.view_data(v).to_vec();
        zero_masked(&mut dout, c, &view.mask);
        let mut dhidden = conv_backward(grid, &view.hidden, &params.conv2, &dout, &mut grad.conv2, true)
            .expect("input gradient requested");
        for (d, h) in dhidden.iter_mut().zip(&view.hidden) {
            if *h <= 0.0 {
                *d = 0.0;
            }
        }
        zero_masked(&mut dhidden, params.conv1.c_out, &view.mask);
        conv_backward(grid, &view.input, &params.conv1, &dhidden, &mut grad.conv1, false);
    }
}

/// Per-point linear embedding of (intensity, height) followed by voxel mean
/// pooling and one 3x3x3 convolution evaluated at occupied voxels only.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEncoderParams {
    pub embed: Linear,
    pub conv: ConvWeights,
}

impl PointEncoderParams {
    pub fn init(channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            embed: Linear::init(2, channels, 1.0, rng),
            conv: ConvWeights::init(channels, channels, 27, 3f64.sqrt(), rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embed: Linear::zeros(self.embed.in_dim, self.embed.out_dim),
            conv: ConvWeights::zeros(self.conv.c_in, self.conv.c_out, 27),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv.c_out
    }
}

#[derive(Debug, Clone)]
pub struct PointEncoderCache {
    inputs: Vec<f64>,
    assignment: Vec<Option<usize>>,
    counts: Vec<usize>,
    pooled: FeatureVolume,
    keep: Vec<bool>,
}

pub fn point_inputs(points: &[LidarPoint]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.intensity, p.position.z]).collect()
}

pub fn encode_points_cached(
    points: &[LidarPoint],
    spec: &VoxelSpec,
    params: &PointEncoderParams,
    bev_mask: Option<&BlockMask>,
) -> Result<(FeatureVolume, PointEncoderCache)> {
    let c = params.channels();
    let spec = spec.with_feature_dim(c);
    let inputs = point_inputs(points);
    let mut embedded = vec![0.0; points.len() * c];
    params.embed.forward_batch_into(&inputs, points.len(), &mut embedded);
    let positions: Vec<_> = points.iter().map(|p| p.position).collect();
    let mut assignment = assign_points(&positions, &spec);
    if let Some(m) = bev_mask {
        for a in assignment.iter_mut() {
            if a.is_some_and(|flat| {
                let [ix, iy, _] = spec.unflat(flat);
                voxel_column_masked(m, ix, iy)
            }) {
                *a = None;
            }
        }
    }
    let pooled = voxelize_assigned(&assignment, &embedded, &spec);
    let counts: Vec<usize> = group_by_voxel(&assignment, spec.voxel_count()).iter().map(Vec::len).collect();
    let keep: Vec<bool> = (0..spec.voxel_count())
        .map(|flat| {
            let [ix, iy, _] = spec.unflat(flat);
            counts[flat] > 0 && !bev_mask.is_some_and(|m| voxel_column_masked(m, ix, iy))
        })
        .collect();
    let mut data = conv_forward(spec.grid(), &pooled.data, &params.conv)?;
    for (v, k) in data.chunks_exact_mut(c).zip(&keep) {
        if !k {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    Ok((
        FeatureVolume { spec, data },
        PointEncoderCache {
            inputs,
            assignment,
            counts,
            pooled,
            keep,
        },
    ))
}

pub fn encode_points(
    points: &[LidarPoint],
    spec: &VoxelSpec,
    params: &PointEncoderParams,
    bev_mask: Option<&BlockMask>,
) -> Result<FeatureVolume> {
    encode_points_cached(points, spec, params, bev_mask).map(|(v, _)| v)
}

pub fn point_encoder_backward(
    cache: &PointEncoderCache,
    params: &PointEncoderParams,
    dvol: &[f64],
    grad: &mut PointEncoderParams,
) {
    let c = params.channels();
    let mut dout = dvol.to_vec();
    for (v, k) in dout.chunks_exact_mut(c).zip(&cache.keep) {
        if !k {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let dpooled = conv_backward(cache.pooled.spec.grid(), &cache.pooled.data, &params.conv, &dout, &mut grad.conv, true)
        .expect("input gradient requested");
    let n = cache.assignment.len();
    let mut dembed = vec![0.0; n * c];
    for (i, a) in cache.assignment.iter().enumerate() {
        if let Some(v) = a {
            let inv = 1.0 / cache.counts[*v] as f64;
            for (d, g) in dembed[i * c..(i + 1) * c].iter_mut().zip(&dpooled[v * c..(v + 1) * c]) {
                *d = g * inv;
            }
        }
    }
    params.embed.accumulate_param_grad(&cache.inputs, &dembed, n, &mut grad.embed);
}
