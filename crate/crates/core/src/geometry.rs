//! Pinhole camera rigs, rays and LiDAR projection.
//!
//! The LiDAR frame doubles as the world frame. Extrinsics are stored as
//! LiDAR-to-camera rigid transforms; the camera looks down its +z axis with
//! +x to the right and +y down the image. Pixel `(u, v)` addresses column
//! `floor(u)`, row `floor(v)`; pixel centers sit at integer + 0.5.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// A LiDAR return: position in the LiDAR frame plus reflectance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub position: Vec3,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub intrinsics: Matrix3<f64>,
    pub extrinsics_l2c: Matrix4<f64>,
}

impl CameraView {
    pub fn rotation(&self) -> Matrix3<f64> {
        self.extrinsics_l2c.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vec3 {
        self.extrinsics_l2c.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center expressed in the LiDAR frame.
    pub fn center(&self) -> Vec3 {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.translation()
    }

    fn validate(&self, index: usize) -> Result<()> {
        let k = &self.intrinsics;
        let bad = |what: &str| Err(Error::InvalidConfig(format!("camera view {index}: {what}")));
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return bad("focal lengths must be positive");
        }
        if k[(0, 1)] != 0.0 || k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return bad("intrinsics must be a zero-skew pinhole matrix");
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(err <= 1e-9) || r.determinant() <= 0.0 {
            return bad("extrinsic rotation is not orthonormal");
        }
        let last = self.extrinsics_l2c.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return bad("extrinsics must be a homogeneous rigid transform");
        }
        if !self.extrinsics_l2c.iter().all(|v| v.is_finite()) {
            return bad("non-finite extrinsics");
        }
        Ok(())
    }
}

/// Multi-view camera rig sharing one image size.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    views: Vec<CameraView>,
    height: usize,
    width: usize,
}

impl CameraRig {
    pub fn new(views: Vec<CameraView>, height: usize, width: usize) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::InvalidConfig("camera rig needs at least one view".into()));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidConfig("image size must be positive".into()));
        }
        for (i, v) in views.iter().enumerate() {
            v.validate(i)?;
        }
        Ok(Self { views, height, width })
    }

    pub fn views(&self) -> &[CameraView] {
        &self.views
    }

    pub fn view(&self, index: usize) -> &CameraView {
        &self.views[index]
    }

    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn contains_pixel(&self, pixel: [f64; 2]) -> bool {
        pixel[0] >= 0.0 && pixel[1] >= 0.0 && pixel[0] < self.width as f64 && pixel[1] < self.height as f64
    }

    fn check_view(&self, view: usize) -> Result<&CameraView> {
        self.views
            .get(view)
            .ok_or_else(|| Error::InvalidConfig(format!("view {view} out of range ({} views)", self.views.len())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: [f64; 2],
    /// Camera-frame z.
    pub depth: f64,
    pub in_image: bool,
}

/// Pinhole projection of a LiDAR-frame point into one view.
pub fn project_point(p: &Vec3, rig: &CameraRig, view: usize) -> Result<Projection> {
    let cam = rig.check_view(view)?;
    let pc = cam.to_camera(p);
    project_camera_point(&pc, &cam.intrinsics, rig)
}

pub(crate) fn project_camera_point(pc: &Vec3, k: &Matrix3<f64>, rig: &CameraRig) -> Result<Projection> {
    let z = pc.z;
    if !(z > 0.0) {
        return Err(Error::BehindCamera { depth: z });
    }
    let u = k[(0, 0)] * pc.x / z + k[(0, 2)];
    let v = k[(1, 1)] * pc.y / z + k[(1, 2)];
    let pixel = [u, v];
    Ok(Projection {
        pixel,
        depth: z,
        in_image: rig.contains_pixel(pixel),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub view: usize,
    pub pixel: [f64; 2],
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Unit viewing direction of a pixel, in the camera frame.
pub fn camera_direction(k: &Matrix3<f64>, pixel: [f64; 2]) -> Vec3 {
    Vec3::new(
        (pixel[0] - k[(0, 2)]) / k[(0, 0)],
        (pixel[1] - k[(1, 2)]) / k[(1, 1)],
        1.0,
    )
    .normalize()
}

pub fn ray_from_pixel(rig: &CameraRig, view: usize, pixel: [f64; 2]) -> Result<Ray> {
    let cam = rig.check_view(view)?;
    if !rig.contains_pixel(pixel) {
        return Err(Error::OutOfImage {
            u: pixel[0],
            v: pixel[1],
            width: rig.width(),
            height: rig.height(),
        });
    }
    let d_cam = camera_direction(&cam.intrinsics, pixel);
    let direction = (cam.rotation().transpose() * d_cam).normalize();
    Ok(Ray {
        origin: cam.center(),
        direction,
        view,
        pixel,
    })
}

/// Converts a camera-frame depth (z) at a pixel into distance along that
/// pixel's unit ray.
pub fn z_depth_to_ray_distance(rig: &CameraRig, view: usize, pixel: [f64; 2], z: f64) -> f64 {
    let d_cam = camera_direction(&rig.view(view).intrinsics, pixel);
    z / d_cam.z
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if (0..3).all(|i| min[i] < max[i]) && min.iter().chain(max.iter()).all(|v| v.is_finite()) {
            Ok(Self { min, max })
        } else {
            Err(Error::InvalidConfig(format!("degenerate box {min:?} .. {max:?}")))
        }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol)
    }
}

/// Slab test. Returns the parametric interval inside the box with the near
/// end clamped to zero, or `None` when the ray misses or the box is behind.
pub fn ray_aabb_clip(ray: &Ray, bounds: &Aabb) -> Option<(f64, f64)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for axis in 0..3 {
        let o = ray.origin[axis];
        let d = ray.direction[axis];
        let (lo, hi) = (bounds.min[axis], bounds.max[axis]);
        if d == 0.0 {
            if o < lo || o > hi {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let (mut t0, mut t1) = ((lo - o) * inv, (hi - o) * inv);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_near = t_near.max(t0);
        t_far = t_far.min(t1);
    }
    let t_near = t_near.max(0.0);
    (t_far > t_near).then_some((t_near, t_far))
}

/// Sparse per-view depth image keyed by integer pixel `(column, row)`.
pub type DepthMap = BTreeMap<(usize, usize), f64>;

/// Z-buffers LiDAR points into every view, keeping returns closer than `tau`.
///
/// Projected coordinates are assigned to the pixel that contains them, i.e.
/// the nearest pixel center.
pub fn build_depth_map(points: &[LidarPoint], rig: &CameraRig, tau: f64) -> Result<Vec<DepthMap>> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("depth threshold must be positive, got {tau}")));
    }
    let mut maps = vec![DepthMap::new(); rig.view_count()];
    for (view, map) in maps.iter_mut().enumerate() {
        for pt in points {
            let Ok(proj) = project_point(&pt.position, rig, view) else {
                continue;
            };
            if !proj.in_image || proj.depth >= tau {
                continue;
            }
            let key = (proj.pixel[0].floor() as usize, proj.pixel[1].floor() as usize);
            map.entry(key)
                .and_modify(|d| *d = d.min(proj.depth))
                .or_insert(proj.depth);
        }
    }
    Ok(maps)
}

/// Builds a LiDAR-to-camera transform for a camera at `center` whose optical
/// axis is `forward` and whose image x axis is `right` (both unit, orthogonal).
pub fn look_extrinsics(center: Vec3, forward: Vec3, right: Vec3) -> Matrix4<f64> {
    let down = forward.cross(&right);
    let r_l2c = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let t = -(r_l2c * center);
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_l2c);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    m
}

pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Matrix3<f64> {
    Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0)
}
