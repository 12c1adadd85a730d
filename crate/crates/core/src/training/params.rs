//! The full set of learnable parameters and a named view over them.

use serde::{Deserialize, Serialize};

use crate::encoders::{ImageEncoderParams, PointEncoderParams};
use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::nn::{ConvWeights, Linear};
use crate::renderer::{DecoderConfig, DecoderParams, Mlp};
use crate::rng::{stream, tag};
use crate::voxelgrid::{DepthDistributionParams, VoxelSpec};

/// Which sensors feed the unified volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Camera,
    Lidar,
    Fused,
}

impl Modality {
    pub fn uses_camera(self) -> bool {
        matches!(self, Modality::Camera | Modality::Fused)
    }

    pub fn uses_lidar(self) -> bool {
        matches!(self, Modality::Lidar | Modality::Fused)
    }

    pub fn code(self) -> u8 {
        match self {
            Modality::Camera => 0,
            Modality::Lidar => 1,
            Modality::Fused => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        [Modality::Camera, Modality::Lidar, Modality::Fused].get(code as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub modality: Modality,
    /// Encoder / volume channels `C`.
    pub channels: usize,
    /// Output channels of the projection layer, consumed by the decoders.
    pub projection_channels: usize,
    pub resolution: [usize; 3],
    pub depth_bins: usize,
    /// First and last depth-bin centers; defaults to `[0.5, 1.5 x diagonal]`.
    pub depth_range: Option<[f64; 2]>,
    pub decoder_width: usize,
    pub sdf_layers: usize,
    pub rgb_layers: usize,
    pub initial_sdf: f64,
    pub initial_sharpness: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            modality: Modality::Camera,
            channels: 16,
            projection_channels: 32,
            resolution: [32, 32, 8],
            depth_bins: 32,
            depth_range: None,
            decoder_width: 32,
            sdf_layers: 6,
            rgb_layers: 4,
            initial_sdf: 0.3,
            initial_sharpness: 10.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.channels == 0 || self.projection_channels == 0 || self.decoder_width == 0 {
            return bad("channel counts and decoder width must be positive".into());
        }
        if self.resolution.iter().any(|&r| r < 2) {
            return bad(format!("voxel resolution {:?} must be at least 2 per axis", self.resolution));
        }
        if self.depth_bins < 2 {
            return bad("at least two depth bins are required".into());
        }
        if self.sdf_layers < 1 || self.rgb_layers < 1 {
            return bad("decoders need at least one layer".into());
        }
        if !(self.initial_sharpness > 0.0) || !self.initial_sdf.is_finite() {
            return bad("initial sharpness must be positive and initial sdf finite".into());
        }
        if let Some([lo, hi]) = self.depth_range {
            if !(0.0 < lo && lo < hi) {
                return bad(format!("depth range [{lo}, {hi}] must be increasing and positive"));
            }
        }
        Ok(())
    }

    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            feature_dim: self.projection_channels,
            width: self.decoder_width,
            sdf_layers: self.sdf_layers,
            rgb_layers: self.rgb_layers,
            initial_sdf: self.initial_sdf,
            initial_sharpness: self.initial_sharpness,
        }
    }

    pub fn voxel_spec(&self, bounds: Aabb) -> Result<VoxelSpec> {
        VoxelSpec::new(self.resolution, bounds, self.channels)
    }

    pub fn depth_range_for(&self, bounds: &Aabb) -> [f64; 2] {
        self.depth_range.unwrap_or([0.5, 1.5 * bounds.diagonal()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub modality: Modality,
    pub spec: VoxelSpec,
    pub image_encoder: Option<ImageEncoderParams>,
    pub depth_head: Option<DepthDistributionParams>,
    pub point_encoder: Option<PointEncoderParams>,
    pub projection: ConvWeights,
    pub decoder: DecoderParams,
}

/// Borrowed tensor with its dotted parameter path.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

mod group {
    pub const IMAGE: u64 = 1;
    pub const DEPTH_HEAD: u64 = 2;
    pub const POINT: u64 = 3;
    pub const PROJECTION: u64 = 4;
    pub const DECODER: u64 = 5;
}

fn linear_ref<'a>(out: &mut Vec<TensorRef<'a>>, prefix: &str, l: &'a Linear) {
    out.push(TensorRef { name: format!("{prefix}.weight"), shape: vec![l.out_dim, l.in_dim], data: &l.weight });
    out.push(TensorRef { name: format!("{prefix}.bias"), shape: vec![l.out_dim], data: &l.bias });
}

fn conv_ref<'a>(out: &mut Vec<TensorRef<'a>>, prefix: &str, c: &'a ConvWeights) {
    out.push(TensorRef { name: format!("{prefix}.weight"), shape: vec![c.c_out, c.c_in, c.taps], data: &c.weight });
    out.push(TensorRef { name: format!("{prefix}.bias"), shape: vec![c.c_out], data: &c.bias });
}

fn linear_mut<'a>(out: &mut Vec<TensorMut<'a>>, prefix: &str, l: &'a mut Linear) {
    let shape = vec![l.out_dim, l.in_dim];
    out.push(TensorMut { name: format!("{prefix}.weight"), shape, data: &mut l.weight });
    out.push(TensorMut { name: format!("{prefix}.bias"), shape: vec![l.out_dim], data: &mut l.bias });
}

fn conv_mut<'a>(out: &mut Vec<TensorMut<'a>>, prefix: &str, c: &'a mut ConvWeights) {
    let shape = vec![c.c_out, c.c_in, c.taps];
    out.push(TensorMut { name: format!("{prefix}.weight"), shape, data: &mut c.weight });
    out.push(TensorMut { name: format!("{prefix}.bias"), shape: vec![c.c_out], data: &mut c.bias });
}

pub const SHARPNESS_PATH: &str = "decoder.sharpness.raw";

impl ModelParams {
    pub fn init(cfg: &ModelConfig, bounds: Aabb, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.voxel_spec(bounds)?;
        let c = cfg.channels;
        let camera = cfg.modality.uses_camera();
        let lidar = cfg.modality.uses_lidar();
        let image_encoder = camera.then(|| ImageEncoderParams::init(c, &mut stream(seed, &[tag::INIT, group::IMAGE])));
        let depth_head = camera.then(|| {
            let [d_min, d_max] = cfg.depth_range_for(&bounds);
            DepthDistributionParams {
                head: Linear::init(c, cfg.depth_bins, 1.0, &mut stream(seed, &[tag::INIT, group::DEPTH_HEAD])),
                d_min,
                d_max,
            }
        });
        let point_encoder = lidar.then(|| PointEncoderParams::init(c, &mut stream(seed, &[tag::INIT, group::POINT])));
        let projection = ConvWeights::init(
            c,
            cfg.projection_channels,
            27,
            3f64.sqrt(),
            &mut stream(seed, &[tag::INIT, group::PROJECTION]),
        );
        let decoder = DecoderParams::init(&cfg.decoder(), &mut stream(seed, &[tag::INIT, group::DECODER]));
        Ok(Self {
            modality: cfg.modality,
            spec,
            image_encoder,
            depth_head,
            point_encoder,
            projection,
            decoder,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// Every learnable tensor in a fixed order.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        if let Some(e) = &self.image_encoder {
            conv_ref(&mut out, "image_encoder.conv1", &e.conv1);
            conv_ref(&mut out, "image_encoder.conv2", &e.conv2);
        }
        if let Some(h) = &self.depth_head {
            linear_ref(&mut out, "depth_head", &h.head);
        }
        if let Some(p) = &self.point_encoder {
            linear_ref(&mut out, "point_encoder.embed", &p.embed);
            conv_ref(&mut out, "point_encoder.conv", &p.conv);
        }
        conv_ref(&mut out, "projection", &self.projection);
        for (i, l) in self.decoder.sdf.layers.iter().enumerate() {
            linear_ref(&mut out, &format!("decoder.sdf.{i}"), l);
        }
        for (i, l) in self.decoder.rgb.layers.iter().enumerate() {
            linear_ref(&mut out, &format!("decoder.rgb.{i}"), l);
        }
        out.push(TensorRef {
            name: SHARPNESS_PATH.into(),
            shape: vec![],
            data: std::slice::from_ref(&self.decoder.sharpness.raw),
        });
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        if let Some(e) = &mut self.image_encoder {
            conv_mut(&mut out, "image_encoder.conv1", &mut e.conv1);
            conv_mut(&mut out, "image_encoder.conv2", &mut e.conv2);
        }
        if let Some(h) = &mut self.depth_head {
            linear_mut(&mut out, "depth_head", &mut h.head);
        }
        if let Some(p) = &mut self.point_encoder {
            linear_mut(&mut out, "point_encoder.embed", &mut p.embed);
            conv_mut(&mut out, "point_encoder.conv", &mut p.conv);
        }
        conv_mut(&mut out, "projection", &mut self.projection);
        for (i, l) in self.decoder.sdf.layers.iter_mut().enumerate() {
            linear_mut(&mut out, &format!("decoder.sdf.{i}"), l);
        }
        for (i, l) in self.decoder.rgb.layers.iter_mut().enumerate() {
            linear_mut(&mut out, &format!("decoder.rgb.{i}"), l);
        }
        out.push(TensorMut {
            name: SHARPNESS_PATH.into(),
            shape: vec![],
            data: std::slice::from_mut(&mut self.decoder.sharpness.raw),
        });
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.parameter_count()
            )));
        }
        let mut at = 0;
        for t in self.tensors_mut() {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) -> Result<()> {
        let src = other.flatten();
        let mut dst = self.flatten();
        if src.len() != dst.len() {
            return Err(Error::shape("parameter sets have different layouts"));
        }
        for (d, s) in dst.iter_mut().zip(&src) {
            *d += scale * s;
        }
        self.assign_flat(&dst)
    }

    /// Names of the tensors that own each flat index range.
    pub fn layout(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut at = 0;
        self.tensors()
            .iter()
            .map(|t| {
                let r = at..at + t.data.len();
                at = r.end;
                (t.name.clone(), r)
            })
            .collect()
    }

    pub fn decoder_mlps(&self) -> [&Mlp; 2] {
        [&self.decoder.sdf, &self.decoder.rgb]
    }
}
