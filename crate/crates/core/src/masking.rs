//! Block-wise masking of images and point clouds.
//!
//! Masks are drawn on a coarse block grid with an exact masked-cell count and
//! then expanded to pixel (or voxel) resolution by nearest-neighbour
//! upsampling.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::LidarPoint;
use crate::image::Image;
use crate::voxelgrid::VoxelSpec;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMask {
    pub rows: usize,
    pub cols: usize,
    pub block_size: usize,
    /// Row-major, `true` = masked.
    pub cells: Vec<bool>,
}

impl BlockMask {
    pub fn is_masked(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.cols + col]
    }

    pub fn masked_count(&self) -> usize {
        self.cells.iter().filter(|&&m| m).count()
    }

    pub fn masked_fraction(&self) -> f64 {
        self.masked_count() as f64 / self.cells.len() as f64
    }

    pub fn none(rows: usize, cols: usize, block_size: usize) -> Self {
        Self {
            rows,
            cols,
            block_size,
            cells: vec![false; rows * cols],
        }
    }
}

/// Number of blocks along an axis of `len` cells; the length must divide.
pub fn block_grid(len: usize, block: usize) -> Result<usize> {
    if block == 0 || len % block != 0 {
        return Err(Error::shape(format!("extent {len} is not divisible by block size {block}")));
    }
    Ok(len / block)
}

/// Masks exactly `round(ratio * rows * cols)` cells chosen uniformly without
/// replacement.
pub fn generate_block_mask(
    rows: usize,
    cols: usize,
    block_size: usize,
    ratio: f64,
    rng: &mut impl Rng,
) -> Result<BlockMask> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidConfig(format!("mask ratio {ratio} outside [0, 1]")));
    }
    let n = rows * cols;
    let count = (ratio * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut cells = vec![false; n];
    for &i in &order[..count] {
        cells[i] = true;
    }
    Ok(BlockMask {
        rows,
        cols,
        block_size,
        cells,
    })
}

/// Pixel-resolution mask, `true` = masked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    pub height: usize,
    pub width: usize,
    pub masked: Vec<bool>,
}

impl PixelMask {
    pub fn visible(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            masked: vec![false; height * width],
        }
    }

    pub fn is_masked(&self, row: usize, col: usize) -> bool {
        self.masked[row * self.width + col]
    }

    pub fn masked_fraction(&self) -> f64 {
        self.masked.iter().filter(|&&m| m).count() as f64 / self.masked.len() as f64
    }
}

pub fn upsample_mask(mask: &BlockMask, factor: usize) -> PixelMask {
    let (height, width) = (mask.rows * factor, mask.cols * factor);
    let masked = (0..height * width)
        .map(|i| mask.is_masked(i / width / factor, i % width / factor))
        .collect();
    PixelMask { height, width, masked }
}

/// Zeroes masked pixels.
pub fn mask_image(img: &Image, mask: &PixelMask) -> Result<Image> {
    if img.height != mask.height || img.width != mask.width {
        return Err(Error::shape(format!(
            "mask {}x{} does not match image {}x{}",
            mask.height, mask.width, img.height, img.width
        )));
    }
    let mut out = img.clone();
    for (px, &m) in out.data.chunks_exact_mut(img.channels).zip(&mask.masked) {
        if m {
            px.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok(out)
}

/// Whether a BEV block mask hides a given voxel column.
pub fn voxel_column_masked(bev: &BlockMask, ix: usize, iy: usize) -> bool {
    let (r, c) = (ix / bev.block_size, iy / bev.block_size);
    r < bev.rows && c < bev.cols && bev.is_masked(r, c)
}

/// Drops points whose voxel column falls in a masked BEV block. Rows of the
/// block grid follow the volume's x axis, columns its y axis. Points outside
/// the volume are not covered by any block and are kept.
pub fn mask_points(points: &[LidarPoint], bev: &BlockMask, spec: &VoxelSpec) -> Vec<LidarPoint> {
    points
        .iter()
        .filter(|p| match spec.locate(&p.position) {
            Some([ix, iy, _]) => !voxel_column_masked(bev, ix, iy),
            None => true,
        })
        .copied()
        .collect()
}
