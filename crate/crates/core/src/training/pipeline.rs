//! One training step end to end: encoders, volume construction, projection
//! layer, rendering and loss, plus the matching reverse pass.

use rayon::prelude::*;

use crate::encoders::{
    encode_images, encode_points_cached, image_encoder_backward, point_encoder_backward, ImageEncoderCache,
    PointEncoderCache,
};
use crate::error::{Error, Result};
use crate::geometry::{CameraRig, LidarPoint, Ray, Vec3};
use crate::image::Image;
use crate::masking::{BlockMask, PixelMask};
use crate::nn::conv_backward;
use crate::renderer::{render_ray_backward, render_ray_with_grad, render_ray_with_normals, RenderedRay};
use crate::training::loss::{loss_grad, pretrain_loss, ray_loss_grad, ray_residual, LossValue, LossWeights, RenderTargets};
use crate::training::params::ModelParams;
use crate::voxelgrid::{
    depth_distribution, depth_distribution_backward, projection_layer, FeatureVolume, ImageFeatureMap, LiftPlan,
};

/// Rays per gradient accumulation chunk. Fixed so that the reduction order
/// never depends on the thread count.
pub const RAY_CHUNK: usize = 64;

/// Camera inputs: images already masked plus the masks themselves.
#[derive(Debug, Clone)]
pub struct CameraInputs {
    pub rig: CameraRig,
    pub images: Vec<Image>,
    pub masks: Vec<PixelMask>,
    pub plan: LiftPlan,
}

#[derive(Debug, Clone)]
pub struct LidarInputs {
    /// Visible points only.
    pub points: Vec<LidarPoint>,
    pub bev_mask: BlockMask,
}

/// Everything one step consumes, prepared ahead of the forward pass.
#[derive(Debug, Clone)]
pub struct StepBatch {
    pub camera: Option<CameraInputs>,
    pub lidar: Option<LidarInputs>,
    pub rays: Vec<Ray>,
    pub t_samples: Vec<Vec<f64>>,
    pub targets: RenderTargets,
    /// Normals to substitute during rendering (finite-difference checks).
    pub frozen_normals: Option<Vec<Vec<Vec3>>>,
}

impl StepBatch {
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if self.rays.len() != self.t_samples.len() || self.rays.len() != self.targets.len() {
            return Err(Error::shape("rays, depth samples and targets must have equal counts"));
        }
        if params.modality.uses_camera() != self.camera.is_some() || params.modality.uses_lidar() != self.lidar.is_some() {
            return Err(Error::shape(format!("inputs do not match the {:?} modality", params.modality)));
        }
        if let Some(n) = &self.frozen_normals {
            if n.len() != self.rays.len() {
                return Err(Error::shape("one normal list per ray is required"));
            }
        }
        self.targets.validate()
    }
}

struct CameraGraph {
    map: ImageFeatureMap,
    cache: ImageEncoderCache,
    probs: Vec<f64>,
}

/// Intermediate state recorded for the reverse pass.
pub struct StepGraph {
    camera: Option<CameraGraph>,
    lidar: Option<PointEncoderCache>,
    volume: FeatureVolume,
    projected: FeatureVolume,
}

pub struct ForwardPass {
    pub loss: LossValue,
    pub rendered: Vec<RenderedRay>,
    pub graph: Option<StepGraph>,
}

impl ForwardPass {
    pub fn normals(&self) -> Vec<Vec<Vec3>> {
        self.rendered.iter().map(|r| r.samples.normals.clone()).collect()
    }
}

/// Builds the unified (pre-projection) volume. Camera and LiDAR volumes are
/// summed when both are present.
fn build_volume(params: &ModelParams, batch: &StepBatch) -> Result<(FeatureVolume, Option<CameraGraph>, Option<PointEncoderCache>)> {
    let mut volume = FeatureVolume::zeros(params.spec);
    let mut camera_graph = None;
    let mut lidar_graph = None;
    if let (Some(cam), Some(enc), Some(head)) = (&batch.camera, &params.image_encoder, &params.depth_head) {
        let (map, cache) = encode_images(&cam.images, &cam.masks, enc)?;
        let probs = depth_distribution(&map, head)?;
        let lifted = cam.plan.forward(&map, &probs, head.bins());
        for (v, l) in volume.data.iter_mut().zip(&lifted.data) {
            *v += l;
        }
        camera_graph = Some(CameraGraph { map, cache, probs });
    }
    if let (Some(lid), Some(enc)) = (&batch.lidar, &params.point_encoder) {
        let (vol, cache) = encode_points_cached(&lid.points, &params.spec, enc, Some(&lid.bev_mask))?;
        for (v, l) in volume.data.iter_mut().zip(&vol.data) {
            *v += l;
        }
        lidar_graph = Some(cache);
    }
    Ok((volume, camera_graph, lidar_graph))
}

/// Encodes the inputs and applies the projection layer.
pub fn build_feature_volume(params: &ModelParams, batch: &StepBatch) -> Result<FeatureVolume> {
    let (volume, _, _) = build_volume(params, batch)?;
    projection_layer(&volume, &params.projection)
}

pub fn render_rays(
    rays: &[Ray],
    t_samples: &[Vec<f64>],
    projected: &FeatureVolume,
    params: &ModelParams,
    frozen: Option<&[Vec<Vec3>]>,
) -> Result<Vec<RenderedRay>> {
    (0..rays.len())
        .into_par_iter()
        .map(|i| {
            render_ray_with_normals(
                &rays[i],
                &t_samples[i],
                projected,
                &params.decoder,
                frozen.map(|f| f[i].as_slice()),
            )
        })
        .collect()
}

pub fn forward(params: &ModelParams, batch: &StepBatch, w: &LossWeights, record: bool) -> Result<ForwardPass> {
    batch.validate(params)?;
    let (volume, camera, lidar) = build_volume(params, batch)?;
    let projected = projection_layer(&volume, &params.projection)?;
    let rendered = render_rays(&batch.rays, &batch.t_samples, &projected, params, batch.frozen_normals.as_deref())?;
    let rgb: Vec<[f64; 3]> = rendered.iter().map(|r| r.rgb).collect();
    let depth: Vec<f64> = rendered.iter().map(|r| r.depth).collect();
    let loss = pretrain_loss(&rgb, &depth, &batch.targets, w)?;
    let graph = record.then_some(StepGraph {
        camera,
        lidar,
        volume,
        projected,
    });
    Ok(ForwardPass { loss, rendered, graph })
}

/// Exact reverse pass of [`forward`] (normals detached). Per-ray work is
/// split into fixed chunks whose partial gradients are reduced in chunk
/// order, so the result is identical for any thread count.
pub fn backward(params: &ModelParams, batch: &StepBatch, pass: &ForwardPass, w: &LossWeights) -> Result<ModelParams> {
    let graph = pass.graph.as_ref().ok_or(Error::GraphNotRecorded)?;
    let dout = loss_grad(&pass.loss, w);
    let proj_len = graph.projected.data.len();

    let partials: Vec<(crate::renderer::DecoderParams, Vec<f64>)> = (0..batch.rays.len())
        .collect::<Vec<_>>()
        .par_chunks(RAY_CHUNK)
        .map(|chunk| {
            let mut dec = params.decoder.zeros_like();
            let mut dproj = vec![0.0; proj_len];
            for &i in chunk {
                let (drgb, ddepth) = dout[i];
                if drgb == [0.0; 3] && ddepth == 0.0 {
                    continue;
                }
                render_ray_backward(
                    &batch.rays[i],
                    &pass.rendered[i].samples,
                    &graph.projected,
                    &params.decoder,
                    drgb,
                    ddepth,
                    &mut dec,
                    &mut dproj,
                )?;
            }
            Ok((dec, dproj))
        })
        .collect::<Result<_>>()?;
    reduce_and_backpropagate(params, batch, graph, &partials)
}

/// Renders and differentiates in one pass per ray instead of recomputing the
/// decoder activations. Loss and gradients are bit-identical to [`forward`]
/// followed by [`backward`].
pub fn forward_backward(params: &ModelParams, batch: &StepBatch, w: &LossWeights) -> Result<(ForwardPass, ModelParams)> {
    batch.validate(params)?;
    let (volume, camera, lidar) = build_volume(params, batch)?;
    let projected = projection_layer(&volume, &params.projection)?;
    let (rays, depth_rays) = (batch.targets.len(), batch.targets.depth_count());
    let frozen = batch.frozen_normals.as_deref();
    let proj_len = projected.data.len();

    type Chunk = (Vec<RenderedRay>, crate::renderer::DecoderParams, Vec<f64>);
    let chunks: Vec<Chunk> = (0..batch.rays.len())
        .collect::<Vec<_>>()
        .par_chunks(RAY_CHUNK)
        .map(|chunk| {
            let mut dec = params.decoder.zeros_like();
            let mut dproj = vec![0.0; proj_len];
            let mut rendered = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let seed = |r: &RenderedRay| {
                    let res = ray_residual(r.rgb, r.depth, batch.targets.rgb[i], batch.targets.depth[i]);
                    ray_loss_grad(&res, rays, depth_rays, w)
                };
                rendered.push(render_ray_with_grad(
                    &batch.rays[i],
                    &batch.t_samples[i],
                    &projected,
                    &params.decoder,
                    frozen.map(|f| f[i].as_slice()),
                    seed,
                    &mut dec,
                    &mut dproj,
                )?);
            }
            Ok((rendered, dec, dproj))
        })
        .collect::<Result<_>>()?;

    let mut rendered = Vec::with_capacity(batch.rays.len());
    let mut partials = Vec::with_capacity(chunks.len());
    for (r, dec, dproj) in chunks {
        rendered.extend(r);
        partials.push((dec, dproj));
    }
    let rgb: Vec<[f64; 3]> = rendered.iter().map(|r| r.rgb).collect();
    let depth: Vec<f64> = rendered.iter().map(|r| r.depth).collect();
    let loss = pretrain_loss(&rgb, &depth, &batch.targets, w)?;
    let graph = StepGraph {
        camera,
        lidar,
        volume,
        projected,
    };
    let grad = reduce_and_backpropagate(params, batch, &graph, &partials)?;
    Ok((
        ForwardPass {
            loss,
            rendered,
            graph: Some(graph),
        },
        grad,
    ))
}

/// Sums per-chunk decoder and projected-volume gradients in chunk order,
/// then runs the projection, lifting and encoder reverse passes.
fn reduce_and_backpropagate(
    params: &ModelParams,
    batch: &StepBatch,
    graph: &StepGraph,
    partials: &[(crate::renderer::DecoderParams, Vec<f64>)],
) -> Result<ModelParams> {
    let proj_len = graph.projected.data.len();
    let mut grad = params.zeros_like();
    let mut dproj = vec![0.0; proj_len];
    {
        let mut dec_flat = vec![0.0; 0];
        for (dec, dp) in partials {
            let f = flatten_decoder(dec);
            if dec_flat.is_empty() {
                dec_flat = vec![0.0; f.len()];
            }
            for (a, b) in dec_flat.iter_mut().zip(&f) {
                *a += b;
            }
            for (a, b) in dproj.iter_mut().zip(dp) {
                *a += b;
            }
        }
        if !dec_flat.is_empty() {
            assign_decoder(&mut grad.decoder, &dec_flat);
        }
    }

    let dvol = conv_backward(
        params.spec.grid(),
        &graph.volume.data,
        &params.projection,
        &dproj,
        &mut grad.projection,
        true,
    )
    .expect("input gradient requested");

    if let (Some(cg), Some(cam), Some(enc), Some(head)) =
        (&graph.camera, &batch.camera, &params.image_encoder, &params.depth_head)
    {
        let bins = head.bins();
        let mut dfeat = vec![0.0; cg.map.data.len()];
        let mut dprobs = vec![0.0; cg.probs.len()];
        cam.plan.backward(&cg.map, &cg.probs, bins, &dvol, &mut dfeat, &mut dprobs);
        let gh = grad.depth_head.as_mut().expect("camera gradient group");
        depth_distribution_backward(&cg.map, head, &cg.probs, &dprobs, &mut gh.head, &mut dfeat);
        let mut dmap = cg.map.clone();
        dmap.data = dfeat;
        image_encoder_backward(&cg.cache, enc, &dmap, grad.image_encoder.as_mut().expect("camera gradient group"));
    }
    if let (Some(cache), Some(enc)) = (&graph.lidar, &params.point_encoder) {
        point_encoder_backward(cache, enc, &dvol, grad.point_encoder.as_mut().expect("lidar gradient group"));
    }
    Ok(grad)
}

fn flatten_decoder(d: &crate::renderer::DecoderParams) -> Vec<f64> {
    let mut out = Vec::new();
    for l in d.sdf.layers.iter().chain(&d.rgb.layers) {
        out.extend_from_slice(&l.weight);
        out.extend_from_slice(&l.bias);
    }
    out.push(d.sharpness.raw);
    out
}

fn assign_decoder(d: &mut crate::renderer::DecoderParams, flat: &[f64]) {
    let mut at = 0;
    for l in d.sdf.layers.iter_mut().chain(d.rgb.layers.iter_mut()) {
        let n = l.weight.len();
        l.weight.copy_from_slice(&flat[at..at + n]);
        at += n;
        let n = l.bias.len();
        l.bias.copy_from_slice(&flat[at..at + n]);
        at += n;
    }
    d.sharpness.raw = flat[at];
}

/// Scalar loss with everything but `params` held fixed.
pub fn loss_only(params: &ModelParams, batch: &StepBatch, w: &LossWeights) -> Result<f64> {
    forward(params, batch, w, false).map(|p| p.loss.loss)
}
