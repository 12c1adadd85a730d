//! Analytic synthetic scenes: the ground-truth oracle for RGB, depth and
//! LiDAR returns.
//!
//! A scene is a union (pointwise minimum) of SDF primitives inside an
//! axis-aligned volume, observed by a ring of six outward-looking cameras
//! around a central LiDAR. Everything outside the volume counts as sky.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{look_extrinsics, pinhole, ray_aabb_clip, ray_from_pixel, Aabb, CameraRig, CameraView, LidarPoint, Ray, Vec3};
use crate::image::Image;
use crate::rng::{stream, tag};

pub const HIT_EPS: f64 = 1e-6;
pub const MAX_TRACE_STEPS: usize = 512;
pub const AMBIENT: f64 = 0.1;

/// Desk-scale defaults.
pub const DEFAULT_HEIGHT: usize = 64;
pub const DEFAULT_WIDTH: usize = 96;
pub const DEFAULT_VIEWS: usize = 6;

pub fn light_direction() -> Vec3 {
    Vec3::new(0.4, 0.3, 0.8).normalize()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Box { center: Vec3, half_extents: Vec3 },
    /// Solid where `normal . p <= offset`.
    Halfspace { normal: Vec3, offset: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfPrimitive {
    pub shape: Shape,
    pub albedo: [f64; 3],
}

impl SdfPrimitive {
    pub fn sdf(&self, p: &Vec3) -> f64 {
        match self.shape {
            Shape::Sphere { center, radius } => (p - center).norm() - radius,
            Shape::Box { center, half_extents } => {
                let q = (p - center).abs() - half_extents;
                q.sup(&Vec3::zeros()).norm() + q.max().min(0.0)
            }
            Shape::Halfspace { normal, offset } => normal.dot(p) - offset,
        }
    }

    /// Outward unit normal (gradient of the SDF) at `p`.
    pub fn normal(&self, p: &Vec3) -> Vec3 {
        match self.shape {
            Shape::Sphere { center, .. } => (p - center).normalize(),
            Shape::Box { center, half_extents } => {
                let local = p - center;
                let q = local.abs() - half_extents;
                let sign = local.map(|v| if v < 0.0 { -1.0 } else { 1.0 });
                if q.max() > 0.0 {
                    q.sup(&Vec3::zeros()).component_mul(&sign).normalize()
                } else {
                    let axis = q.imax();
                    let mut n = Vec3::zeros();
                    n[axis] = sign[axis];
                    n
                }
            }
            Shape::Halfspace { normal, .. } => normal,
        }
    }

    pub fn mean_albedo(&self) -> f64 {
        self.albedo.iter().sum::<f64>() / 3.0
    }

    fn validate(&self) -> Result<()> {
        let ok = match self.shape {
            Shape::Sphere { radius, .. } => radius > 0.0,
            Shape::Box { half_extents, .. } => half_extents.iter().all(|&h| h > 0.0),
            Shape::Halfspace { normal, .. } => (normal.norm() - 1.0).abs() < 1e-9,
        };
        if ok && self.albedo.iter().all(|a| (0.0..=1.0).contains(a)) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid primitive {self:?}")))
        }
    }

    fn anchor(&self) -> Option<Vec3> {
        match self.shape {
            Shape::Sphere { center, .. } | Shape::Box { center, .. } => Some(center),
            Shape::Halfspace { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDef {
    pub primitives: Vec<SdfPrimitive>,
    pub background_rgb: [f64; 3],
    pub bounds: Aabb,
    pub rig: CameraRig,
    pub lidar_origin: Vec3,
    pub seed: u64,
}

impl SceneDef {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::InvalidConfig("scene has no primitives".into()));
        }
        for p in &self.primitives {
            p.validate()?;
        }
        let inside = self.primitives.iter().any(|p| match p.anchor() {
            Some(c) => self.bounds.contains(&c, 0.0),
            None => true,
        });
        if !inside {
            return Err(Error::InvalidConfig("no primitive lies inside the scene bounds".into()));
        }
        Ok(())
    }
}

/// Distance to the union of primitives, the albedo of the nearest one and
/// its index.
pub fn scene_sdf_nearest(scene: &SceneDef, p: &Vec3) -> (f64, usize) {
    scene
        .primitives
        .iter()
        .enumerate()
        .map(|(i, prim)| (prim.sdf(p), i))
        .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
}

pub fn scene_sdf(scene: &SceneDef, p: &Vec3) -> (f64, [f64; 3]) {
    let (d, i) = scene_sdf_nearest(scene, p);
    let albedo = scene.primitives.get(i).map_or([0.0; 3], |pr| pr.albedo);
    (d, albedo)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    /// Distance along the (unit) ray.
    pub t: f64,
    pub point: Vec3,
    pub normal: Vec3,
    pub primitive: usize,
}

/// Sphere-traces the union SDF within the scene volume.
pub fn trace(scene: &SceneDef, ray: &Ray) -> Option<SurfaceHit> {
    let (t_near, t_far) = ray_aabb_clip(ray, &scene.bounds)?;
    let mut t = t_near;
    for _ in 0..MAX_TRACE_STEPS {
        let p = ray.at(t);
        let (d, i) = scene_sdf_nearest(scene, &p);
        if d.abs() < HIT_EPS {
            return Some(SurfaceHit {
                t,
                point: p,
                normal: scene.primitives[i].normal(&p),
                primitive: i,
            });
        }
        t += d;
        if t > t_far {
            return None;
        }
    }
    None
}

pub fn shade(albedo: &[f64; 3], normal: &Vec3) -> [f64; 3] {
    let diffuse = normal.dot(&light_direction()).max(0.0);
    albedo.map(|a| (a * (diffuse + AMBIENT)).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OraclePixel {
    pub rgb: [f64; 3],
    /// Distance along the pixel ray.
    pub depth: Option<f64>,
}

pub fn oracle_render_pixel(scene: &SceneDef, view: usize, pixel: [f64; 2]) -> Result<OraclePixel> {
    let ray = ray_from_pixel(&scene.rig, view, pixel)?;
    Ok(oracle_render_ray(scene, &ray))
}

pub fn oracle_render_ray(scene: &SceneDef, ray: &Ray) -> OraclePixel {
    match trace(scene, ray) {
        Some(hit) => OraclePixel {
            rgb: shade(&scene.primitives[hit.primitive].albedo, &hit.normal),
            depth: Some(hit.t),
        },
        None => OraclePixel {
            rgb: scene.background_rgb,
            depth: None,
        },
    }
}

/// Ground truth for a full view at pixel centers.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleView {
    pub rgb: Image,
    /// Row-major ray distances.
    pub depth: Vec<Option<f64>>,
}

impl OracleView {
    pub fn depth_at(&self, col: usize, row: usize) -> Option<f64> {
        self.depth[row * self.rgb.width + col]
    }
}

pub fn oracle_render_view(scene: &SceneDef, view: usize) -> Result<OracleView> {
    let (h, w) = (scene.rig.height(), scene.rig.width());
    let mut rgb = Image::zeros(h, w, 3);
    let mut depth = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let px = oracle_render_pixel(scene, view, [col as f64 + 0.5, row as f64 + 0.5])?;
            rgb.pixel_mut(row, col).copy_from_slice(&px.rgb);
            depth.push(px.depth);
        }
    }
    Ok(OracleView { rgb, depth })
}

/// Lowest and highest beam elevation of the simulated sensor, degrees.
pub const LIDAR_ELEVATION_DEG: (f64, f64) = (-30.0, 10.0);

/// Spinning LiDAR on a regular azimuth x elevation grid. Returns only hits
/// inside the scene volume; intensity is the mean albedo of the surface.
pub fn simulate_lidar(scene: &SceneDef, origin: Vec3, azimuth_count: usize, elevation_rows: usize) -> Vec<LidarPoint> {
    let (lo, hi) = LIDAR_ELEVATION_DEG;
    let mut points = Vec::new();
    for row in 0..elevation_rows {
        let frac = if elevation_rows > 1 { row as f64 / (elevation_rows - 1) as f64 } else { 0.5 };
        let elev = (lo + (hi - lo) * frac).to_radians();
        for a in 0..azimuth_count {
            let az = std::f64::consts::TAU * a as f64 / azimuth_count as f64;
            let direction = Vec3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin());
            let ray = Ray {
                origin,
                direction,
                view: 0,
                pixel: [0.0; 2],
            };
            if let Some(hit) = trace(scene, &ray) {
                points.push(LidarPoint {
                    position: hit.point,
                    intensity: scene.primitives[hit.primitive].mean_albedo(),
                });
            }
        }
    }
    points
}

pub fn default_bounds() -> Aabb {
    Aabb {
        min: Vec3::new(-4.0, -4.0, 0.0),
        max: Vec3::new(4.0, 4.0, 2.0),
    }
}

pub const CAMERA_HEIGHT: f64 = 1.0;
pub const CAMERA_RING_RADIUS: f64 = 0.1;
pub const FOCAL_PX: f64 = 60.0;

/// Six outward-looking cameras at 60 degree spacing. Angles are tabulated
/// so that the rig is bit-identical on every platform.
pub fn surround_rig(height: usize, width: usize) -> Result<CameraRig> {
    let s3 = 3f64.sqrt() / 2.0;
    let dirs = [(1.0, 0.0), (0.5, s3), (-0.5, s3), (-1.0, 0.0), (-0.5, -s3), (0.5, -s3)];
    let views = dirs
        .iter()
        .map(|&(c, s)| {
            let forward = Vec3::new(c, s, 0.0);
            let right = Vec3::new(s, -c, 0.0);
            let center = Vec3::new(CAMERA_RING_RADIUS * c, CAMERA_RING_RADIUS * s, CAMERA_HEIGHT);
            CameraView {
                intrinsics: pinhole(FOCAL_PX, FOCAL_PX, width as f64 / 2.0, height as f64 / 2.0),
                extrinsics_l2c: look_extrinsics(center, forward, right),
            }
        })
        .collect();
    CameraRig::new(views, height, width)
}

fn random_albedo(rng: &mut impl Rng) -> [f64; 3] {
    [0.2 + 0.7 * rng.random::<f64>(), 0.2 + 0.7 * rng.random::<f64>(), 0.2 + 0.7 * rng.random::<f64>()]
}

fn random_scene(seed: u64, index: u64) -> Result<SceneDef> {
    let mut rng = stream(seed, &[tag::SUITE, index]);
    let bounds = default_bounds();
    let gray = 0.35 + 0.3 * rng.random::<f64>();
    let mut primitives = vec![SdfPrimitive {
        shape: Shape::Halfspace {
            normal: Vec3::z(),
            offset: 0.0,
        },
        albedo: [gray, gray, gray * 0.9],
    }];
    let objects = rng.random_range(1..=5usize);
    // centers stay in the inner 80% of the volume and clear of the camera ring
    let reach = 0.8 * 4.0;
    for _ in 0..objects {
        let (center_xy, size) = loop {
            let x = (rng.random::<f64>() * 2.0 - 1.0) * reach;
            let y = (rng.random::<f64>() * 2.0 - 1.0) * reach;
            let size = 0.3 + 0.4 * rng.random::<f64>();
            if (x * x + y * y).sqrt() > 1.2 + size {
                break ((x, y), size);
            }
        };
        let shape = if rng.random::<bool>() {
            let z = (size * (0.6 + 0.8 * rng.random::<f64>())).clamp(0.2, 1.8);
            Shape::Sphere {
                center: Vec3::new(center_xy.0, center_xy.1, z),
                radius: size,
            }
        } else {
            let hz = 0.2 + 0.6 * rng.random::<f64>();
            Shape::Box {
                center: Vec3::new(center_xy.0, center_xy.1, hz.max(0.2)),
                half_extents: Vec3::new(size, 0.3 + 0.4 * rng.random::<f64>(), hz),
            }
        };
        primitives.push(SdfPrimitive {
            shape,
            albedo: random_albedo(&mut rng),
        });
    }
    let scene = SceneDef {
        primitives,
        background_rgb: [0.55, 0.7, 0.9],
        bounds,
        rig: surround_rig(DEFAULT_HEIGHT, DEFAULT_WIDTH)?,
        lidar_origin: Vec3::new(0.0, 0.0, 1.1),
        seed: crate::rng::derive_seed(seed, &[tag::SUITE, index]),
    };
    scene.validate()?;
    Ok(scene)
}

/// Deterministic suite of `n` scenes with 2-6 primitives each (a ground
/// plane plus 1-5 objects).
pub fn gen_suite(seed: u64, n: usize) -> Result<Vec<SceneDef>> {
    (0..n as u64).map(|i| random_scene(seed, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_scene(center: Vec3, radius: f64) -> SceneDef {
        SceneDef {
            primitives: vec![SdfPrimitive {
                shape: Shape::Sphere { center, radius },
                albedo: [0.8, 0.4, 0.2],
            }],
            background_rgb: [0.1, 0.2, 0.3],
            bounds: Aabb::new(Vec3::repeat(-10.0), Vec3::repeat(10.0)).unwrap(),
            rig: surround_rig(64, 96).unwrap(),
            lidar_origin: Vec3::zeros(),
            seed: 0,
        }
    }

    #[test]
    fn sphere_sdf_values() {
        let s = sphere_scene(Vec3::zeros(), 1.0);
        assert_eq!(scene_sdf(&s, &Vec3::zeros()).0, -1.0);
        assert_eq!(scene_sdf(&s, &Vec3::new(1.0, 0.0, 0.0)).0, 0.0);
    }

    #[test]
    fn union_takes_minimum() {
        let mut s = sphere_scene(Vec3::new(-2.0, 0.0, 0.0), 0.5);
        s.primitives.push(SdfPrimitive {
            shape: Shape::Sphere { center: Vec3::new(3.0, 0.0, 0.0), radius: 1.0 },
            albedo: [0.1, 0.9, 0.1],
        });
        let probe = Vec3::new(0.5, 0.0, 0.0);
        let (d, albedo) = scene_sdf(&s, &probe);
        assert_eq!(d, (2.5f64 - 0.5).min(2.5 - 1.0));
        assert_eq!(albedo, [0.1, 0.9, 0.1]);
    }

    #[test]
    fn box_sdf_and_normal() {
        let b = SdfPrimitive {
            shape: Shape::Box { center: Vec3::zeros(), half_extents: Vec3::new(1.0, 2.0, 3.0) },
            albedo: [0.5; 3],
        };
        assert_eq!(b.sdf(&Vec3::new(2.0, 0.0, 0.0)), 1.0);
        assert_eq!(b.sdf(&Vec3::zeros()), -1.0);
        assert!((b.sdf(&Vec3::new(2.0, 3.0, 0.0)) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(b.normal(&Vec3::new(0.5, 0.0, 2.9)), Vec3::z());
    }

    #[test]
    fn oracle_hits_sphere_head_on() {
        let s = sphere_scene(Vec3::new(5.0, 0.0, 1.0), 1.0);
        let ray = Ray { origin: Vec3::new(0.0, 0.0, 1.0), direction: Vec3::x(), view: 0, pixel: [0.0; 2] };
        let px = oracle_render_ray(&s, &ray);
        assert!((px.depth.unwrap() - 4.0).abs() < 1e-4);
        let hit = trace(&s, &ray).unwrap();
        assert!((hit.normal - (hit.point - Vec3::new(5.0, 0.0, 1.0)).normalize()).norm() < 1e-6);
        assert!((hit.normal + Vec3::x()).norm() < 1e-6);
    }

    #[test]
    fn sky_is_background() {
        let s = sphere_scene(Vec3::new(5.0, 0.0, 1.0), 1.0);
        let ray = Ray { origin: Vec3::zeros(), direction: Vec3::z(), view: 0, pixel: [0.0; 2] };
        let px = oracle_render_ray(&s, &ray);
        assert_eq!(px.depth, None);
        assert_eq!(px.rgb, [0.1, 0.2, 0.3]);
    }

    #[test]
    fn lidar_points_lie_on_sphere() {
        let s = sphere_scene(Vec3::new(3.0, 0.0, 0.0), 1.5);
        let pts = simulate_lidar(&s, Vec3::zeros(), 90, 16);
        assert!(!pts.is_empty());
        assert!(pts.len() <= 90 * 16);
        for p in &pts {
            assert!(((p.position - Vec3::new(3.0, 0.0, 0.0)).norm() - 1.5).abs() < 1e-4);
            assert!((p.intensity - (0.8 + 0.4 + 0.2) / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_space_gives_no_returns() {
        let mut s = sphere_scene(Vec3::new(30.0, 0.0, 0.0), 1.0);
        s.bounds = Aabb::new(Vec3::repeat(-5.0), Vec3::repeat(5.0)).unwrap();
        assert!(simulate_lidar(&s, Vec3::zeros(), 36, 8).is_empty());
    }

    #[test]
    fn suite_is_deterministic_and_well_formed() {
        let a = gen_suite(42, 5).unwrap();
        let b = gen_suite(42, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_suite(43, 5).unwrap());
        for seed in 0..100 {
            for s in gen_suite(seed, 1).unwrap() {
                assert!((2..=6).contains(&s.primitives.len()));
                assert_eq!(s.rig.view_count(), 6);
                assert_eq!(s.rig.height() % 32, 0);
                assert_eq!(s.rig.width() % 32, 0);
                for p in &s.primitives {
                    if let Some(c) = p.anchor() {
                        for a in 0..3 {
                            let (lo, hi) = (s.bounds.min[a], s.bounds.max[a]);
                            let margin = 0.1 * (hi - lo);
                            assert!(c[a] >= lo + margin - 1e-12 && c[a] <= hi - margin + 1e-12, "{c:?}");
                        }
                    }
                }
            }
        }
    }

    fn random_unit(rng: &mut impl rand::Rng) -> Vec3 {
        loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                return v / n;
            }
        }
    }

    fn closed_form_sphere(o: &Vec3, d: &Vec3, c: &Vec3, r: f64) -> Option<f64> {
        let oc = o - c;
        let b = oc.dot(d);
        let disc = b * b - (oc.norm_squared() - r * r);
        if disc < 0.0 {
            return None;
        }
        let t = -b - disc.sqrt();
        (t > 0.0).then_some(t)
    }

    #[test]
    fn oracle_depth_matches_closed_form_intersections() {
        use rand::Rng;
        let mut rng = crate::rng::stream(11, &[]);
        let bounds = Aabb::new(Vec3::repeat(-10.0), Vec3::repeat(10.0)).unwrap();
        let mut hits = [0usize; 2];
        for i in 0..200 {
            let origin = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let mut direction = random_unit(&mut rng);
            let (prim, expected) = if i % 2 == 0 {
                let center = Vec3::new(rng.random_range(3.0..5.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let radius = rng.random_range(0.5..2.0);
                // aim near the sphere so most rays hit
                direction = (center + 1.2 * radius * random_unit(&mut rng) - origin).normalize();
                let t = closed_form_sphere(&origin, &direction, &center, radius);
                (Shape::Sphere { center, radius }, t)
            } else {
                let normal = random_unit(&mut rng);
                let offset = rng.random_range(-4.0..-2.0);
                let denom = normal.dot(&direction);
                let t = (denom.abs() > 1e-9).then(|| (offset - normal.dot(&origin)) / denom).filter(|&t| t > 0.0);
                (Shape::Halfspace { normal, offset }, t)
            };
            let scene = SceneDef {
                primitives: vec![SdfPrimitive { shape: prim, albedo: [0.5; 3] }],
                bounds,
                ..sphere_scene(Vec3::zeros(), 1.0)
            };
            let ray = Ray { origin, direction, view: 0, pixel: [0.0; 2] };
            let got = oracle_render_ray(&scene, &ray).depth;
            // the oracle clips to bounds, so only compare in-range hits
            let expected = expected.filter(|&t| bounds.contains(&(origin + t * direction), 0.0));
            match (got, expected) {
                (Some(g), Some(e)) => {
                    assert!((g - e).abs() < 1e-4, "ray {i}: {g} vs {e}");
                    hits[i % 2] += 1;
                }
                (None, None) => {}
                other => panic!("ray {i}: hit disagreement {other:?}"),
            }
        }
        assert!(hits[0] > 40 && hits[1] > 20, "{hits:?}");
    }

    #[test]
    fn lidar_returns_lie_on_suite_surfaces() {
        for scene in gen_suite(5, 4).unwrap() {
            let pts = simulate_lidar(&scene, scene.lidar_origin, 180, 16);
            assert!(!pts.is_empty());
            for p in &pts {
                assert!(scene_sdf(&scene, &p.position).0.abs() < 1e-4);
            }
        }
    }
}
