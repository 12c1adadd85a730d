//! Rendering-based self-supervised pre-training at desk scale.
//!
//! Masked camera images and LiDAR sweeps are encoded by small modality
//! specific encoders, lifted or voxelized into a shared dense feature volume,
//! and decoded by an SDF field plus color field that are volume rendered along
//! sampled rays. Ground truth comes from analytic synthetic scenes.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: pinhole rigs, rays, box clipping, LiDAR depth maps.
//! * [`voxelgrid`]: feature volumes, interpolation, lifting, voxelization,
//!   and the projection layer.
//! * [`masking`], [`encoders`]: block masks and the sparse toy encoders.
//! * [`renderer`]: SDF/RGB decoders and NeuS-style compositing.
//! * [`sampling`]: ray selection strategies and depth sampling.
//! * [`training`]: loss, reverse-mode gradients, AdamW, gradient checking and
//!   the pre-training loop.
//! * [`scenes`]: the analytic scene oracle.
//! * [`io`], [`config`]: checkpoint, image, scene and config formats.

pub mod config;
pub mod encoders;
pub mod error;
pub mod geometry;
pub mod image;
pub mod io;
pub mod masking;
pub mod nn;
pub mod renderer;
pub mod rng;
pub mod sampling;
pub mod scenes;
pub mod training;
pub mod voxelgrid;

pub use error::{Error, Result};
pub use geometry::{Aabb, CameraRig, CameraView, LidarPoint, Ray, Vec3};
pub use image::Image;
pub use voxelgrid::{FeatureVolume, ImageFeatureMap, VoxelSpec};
