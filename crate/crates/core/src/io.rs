//! On-disk formats: checkpoints, PPM / PGM images, scene documents, CSV
//! metrics and LiDAR dumps.

use std::path::Path;

use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, CameraRig, CameraView, LidarPoint, Vec3};
use crate::image::Image;
use crate::scenes::{SceneDef, SdfPrimitive, Shape};
use crate::training::params::{Modality, ModelConfig, ModelParams};
use crate::training::bench::{BenchRun, BenchSummary};
use crate::training::pretrain::{EvalMetrics, MetricRow};

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

// ---------------------------------------------------------------- checkpoints

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UPAD";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered directory of named f64 tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(DTYPE_F64);
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(format_err("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format_err(format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| format_err("tensor name is not UTF-8"))?;
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F64 {
                return Err(format_err(format!("tensor {name}: unsupported dtype {dtype}")));
            }
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| format_err("shape overflow"))?;
            let raw = r.take(count.checked_mul(8).ok_or_else(|| format_err("shape overflow"))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            entries.push(TensorEntry { name, shape, data });
        }
        if r.at != bytes.len() {
            return Err(format_err("trailing bytes after checkpoint"));
        }
        Ok(Self { entries })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err("truncated checkpoint"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn meta(name: &str, data: Vec<f64>) -> TensorEntry {
    TensorEntry {
        name: format!("meta.{name}"),
        shape: vec![data.len()],
        data,
    }
}

/// Architecture metadata followed by every parameter tensor.
pub fn checkpoint_from_params(p: &ModelParams) -> Checkpoint {
    let b = &p.spec.bounds;
    let mut entries = vec![
        meta("modality", vec![p.modality.code() as f64]),
        meta("resolution", p.spec.resolution.iter().map(|&r| r as f64).collect()),
        meta("bounds", vec![b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z]),
        meta("channels", vec![p.spec.feature_dim as f64]),
        meta("projection_channels", vec![p.projection.c_out as f64]),
        meta(
            "decoder",
            vec![
                p.decoder.sdf.layers[0].out_dim as f64,
                p.decoder.sdf.layers.len() as f64,
                p.decoder.rgb.layers.len() as f64,
            ],
        ),
    ];
    if let Some(h) = &p.depth_head {
        entries.push(meta("depth_bins", vec![h.bins() as f64, h.d_min, h.d_max]));
    }
    entries.extend(p.tensors().into_iter().map(|t| TensorEntry {
        name: t.name,
        shape: t.shape,
        data: t.data.to_vec(),
    }));
    Checkpoint { entries }
}

fn meta_values<'a>(ck: &'a Checkpoint, name: &str, len: usize) -> Result<&'a [f64]> {
    let e = ck
        .get(&format!("meta.{name}"))
        .ok_or_else(|| format_err(format!("checkpoint lacks meta.{name}")))?;
    if e.data.len() != len {
        return Err(format_err(format!("meta.{name} has {} values, expected {len}", e.data.len())));
    }
    Ok(&e.data)
}

fn as_count(v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
        Ok(v as usize)
    } else {
        Err(format_err(format!("bad count {v} in checkpoint metadata")))
    }
}

pub fn params_from_checkpoint(ck: &Checkpoint) -> Result<ModelParams> {
    let modality = Modality::from_code(as_count(meta_values(ck, "modality", 1)?[0])? as u8)
        .ok_or_else(|| format_err("unknown modality code"))?;
    let res = meta_values(ck, "resolution", 3)?;
    let b = meta_values(ck, "bounds", 6)?;
    let dec = meta_values(ck, "decoder", 3)?;
    let mut cfg = ModelConfig {
        modality,
        channels: as_count(meta_values(ck, "channels", 1)?[0])?,
        projection_channels: as_count(meta_values(ck, "projection_channels", 1)?[0])?,
        resolution: [as_count(res[0])?, as_count(res[1])?, as_count(res[2])?],
        decoder_width: as_count(dec[0])?,
        sdf_layers: as_count(dec[1])?,
        rgb_layers: as_count(dec[2])?,
        ..ModelConfig::default()
    };
    if modality.uses_camera() {
        let d = meta_values(ck, "depth_bins", 3)?;
        cfg.depth_bins = as_count(d[0])?;
        cfg.depth_range = Some([d[1], d[2]]);
    }
    let bounds = Aabb::new(Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5]))?;
    let mut params = ModelParams::init(&cfg, bounds, 0)?;
    for t in params.tensors_mut() {
        let e = ck
            .get(&t.name)
            .ok_or_else(|| format_err(format!("checkpoint lacks tensor {}", t.name)))?;
        if e.shape != t.shape {
            return Err(format_err(format!("tensor {} has shape {:?}, expected {:?}", t.name, e.shape, t.shape)));
        }
        t.data.copy_from_slice(&e.data);
    }
    let expected = params.tensors().len() + ck.entries.iter().filter(|e| e.name.starts_with("meta.")).count();
    if expected != ck.entries.len() {
        return Err(format_err("checkpoint holds tensors the model does not use"));
    }
    Ok(params)
}

pub fn write_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    std::fs::write(path, checkpoint_from_params(params).encode())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    params_from_checkpoint(&Checkpoint::decode(&std::fs::read(path)?)?)
}

// --------------------------------------------------------------------- images

fn quantize(v: f64, max: f64) -> u32 {
    (max * v.clamp(0.0, 1.0)).round() as u32
}

/// Binary PPM (P6, maxval 255); channel values `round(255 * clamp(c, 0, 1))`.
pub fn encode_ppm(img: &Image) -> Result<Vec<u8>> {
    if img.channels != 3 {
        return Err(Error::shape(format!("PPM needs 3 channels, image has {}", img.channels)));
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| quantize(v, 255.0) as u8));
    Ok(out)
}

/// Parses the fixed header layout written by the encoders here: magic,
/// width, height and maxval separated by single whitespace runs.
fn parse_header<'a>(bytes: &'a [u8], magic: &str) -> Result<(usize, usize, u32, &'a [u8])> {
    let mut fields = Vec::with_capacity(4);
    let mut at = 0;
    while fields.len() < 4 {
        while at < bytes.len() && bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        let start = at;
        while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if start == at {
            return Err(format_err("truncated image header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..at]).map_err(|_| format_err("bad image header"))?);
    }
    if fields[0] != magic {
        return Err(format_err(format!("expected {magic} image, found {}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format_err(format!("bad header number {s}")));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    // exactly one whitespace byte separates the header from the raster
    Ok((w, h, maxval as u32, &bytes[(at + 1).min(bytes.len())..]))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let (w, h, maxval, raster) = parse_header(bytes, "P6")?;
    if maxval != 255 || raster.len() != w * h * 3 {
        return Err(format_err("unsupported or truncated PPM raster"));
    }
    Ok(Image {
        height: h,
        width: w,
        channels: 3,
        data: raster.iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

/// 16-bit depth image: `round(65535 * depth / depth_max)`; misses are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub height: usize,
    pub width: usize,
    pub values: Vec<u16>,
    pub depth_max: f64,
}

impl DepthImage {
    pub fn from_depths(height: usize, width: usize, depths: &[Option<f64>], depth_max: f64) -> Result<Self> {
        if depths.len() != height * width {
            return Err(Error::shape("depth buffer does not match the image size"));
        }
        if !(depth_max > 0.0) {
            return Err(Error::InvalidConfig("depth_max must be positive".into()));
        }
        Ok(Self {
            height,
            width,
            values: depths
                .iter()
                .map(|d| d.map_or(0, |d| quantize(d / depth_max, 65535.0) as u16))
                .collect(),
            depth_max,
        })
    }

    pub fn depth(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col] as f64 / 65535.0 * self.depth_max
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        for v in &self.values {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }

    pub fn decode_pgm(bytes: &[u8], depth_max: f64) -> Result<Self> {
        let (w, h, maxval, raster) = parse_header(bytes, "P5")?;
        if maxval != 65535 || raster.len() != w * h * 2 {
            return Err(format_err("unsupported or truncated PGM raster"));
        }
        Ok(Self {
            height: h,
            width: w,
            values: raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect(),
            depth_max,
        })
    }
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode_ppm(img)?)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    decode_ppm(&std::fs::read(path)?)
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".depth_max");
    s.into()
}

/// Writes `<path>` (PGM) and `<path>.depth_max` (decimal text).
pub fn write_depth_pgm(path: &Path, depth: &DepthImage) -> Result<()> {
    std::fs::write(path, depth.encode_pgm())?;
    std::fs::write(sidecar(path), format!("{}\n", depth.depth_max))?;
    Ok(())
}

pub fn read_depth_pgm(path: &Path) -> Result<DepthImage> {
    let text = std::fs::read_to_string(sidecar(path))?;
    let depth_max: f64 = text.trim().parse().map_err(|_| format_err("bad depth_max sidecar"))?;
    DepthImage::decode_pgm(&std::fs::read(path)?, depth_max)
}

// --------------------------------------------------------------------- scenes

pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsDoc {
    min: [f64; 3],
    max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewDoc {
    /// 3x3, row-major.
    intrinsics: [f64; 9],
    /// 4x4 LiDAR-to-camera, row-major.
    extrinsics_l2c: [f64; 16],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigDoc {
    height: usize,
    width: usize,
    views: Vec<ViewDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum PrimitiveDoc {
    Sphere { center: [f64; 3], radius: f64, albedo: [f64; 3] },
    Box { center: [f64; 3], half_extents: [f64; 3], albedo: [f64; 3] },
    Halfspace { normal: [f64; 3], offset: f64, albedo: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    version: u32,
    seed: u64,
    bounds: BoundsDoc,
    background_rgb: [f64; 3],
    lidar_origin: [f64; 3],
    rig: RigDoc,
    primitives: Vec<PrimitiveDoc>,
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl From<&SceneDef> for SceneDoc {
    fn from(s: &SceneDef) -> Self {
        let views = s
            .rig
            .views()
            .iter()
            .map(|v| ViewDoc {
                intrinsics: std::array::from_fn(|i| v.intrinsics[(i / 3, i % 3)]),
                extrinsics_l2c: std::array::from_fn(|i| v.extrinsics_l2c[(i / 4, i % 4)]),
            })
            .collect();
        let primitives = s
            .primitives
            .iter()
            .map(|p| match p.shape {
                Shape::Sphere { center, radius } => PrimitiveDoc::Sphere { center: arr(&center), radius, albedo: p.albedo },
                Shape::Box { center, half_extents } => PrimitiveDoc::Box {
                    center: arr(&center),
                    half_extents: arr(&half_extents),
                    albedo: p.albedo,
                },
                Shape::Halfspace { normal, offset } => PrimitiveDoc::Halfspace { normal: arr(&normal), offset, albedo: p.albedo },
            })
            .collect();
        SceneDoc {
            version: SCENE_VERSION,
            seed: s.seed,
            bounds: BoundsDoc { min: arr(&s.bounds.min), max: arr(&s.bounds.max) },
            background_rgb: s.background_rgb,
            lidar_origin: arr(&s.lidar_origin),
            rig: RigDoc {
                height: s.rig.height(),
                width: s.rig.width(),
                views,
            },
            primitives,
        }
    }
}

impl TryFrom<SceneDoc> for SceneDef {
    type Error = Error;

    fn try_from(d: SceneDoc) -> Result<Self> {
        if d.version != SCENE_VERSION {
            return Err(format_err(format!("unsupported scene version {}", d.version)));
        }
        let views = d
            .rig
            .views
            .iter()
            .map(|v| CameraView {
                intrinsics: Matrix3::from_row_slice(&v.intrinsics),
                extrinsics_l2c: Matrix4::from_row_slice(&v.extrinsics_l2c),
            })
            .collect();
        let primitives = d
            .primitives
            .into_iter()
            .map(|p| match p {
                PrimitiveDoc::Sphere { center, radius, albedo } => SdfPrimitive {
                    shape: Shape::Sphere { center: vec3(center), radius },
                    albedo,
                },
                PrimitiveDoc::Box { center, half_extents, albedo } => SdfPrimitive {
                    shape: Shape::Box { center: vec3(center), half_extents: vec3(half_extents) },
                    albedo,
                },
                PrimitiveDoc::Halfspace { normal, offset, albedo } => SdfPrimitive {
                    shape: Shape::Halfspace { normal: vec3(normal), offset },
                    albedo,
                },
            })
            .collect();
        let scene = SceneDef {
            primitives,
            background_rgb: d.background_rgb,
            bounds: Aabb::new(vec3(d.bounds.min), vec3(d.bounds.max))?,
            rig: CameraRig::new(views, d.rig.height, d.rig.width)?,
            lidar_origin: vec3(d.lidar_origin),
            seed: d.seed,
        };
        scene.validate()?;
        Ok(scene)
    }
}

pub fn scene_to_json(scene: &SceneDef) -> Result<String> {
    serde_json::to_string_pretty(&SceneDoc::from(scene)).map_err(|e| format_err(e.to_string()))
}

pub fn scene_from_json(text: &str) -> Result<SceneDef> {
    let doc: SceneDoc = serde_json::from_str(text).map_err(|e| format_err(e.to_string()))?;
    doc.try_into()
}

pub fn write_scene(path: &Path, scene: &SceneDef) -> Result<()> {
    std::fs::write(path, scene_to_json(scene)? + "\n")?;
    Ok(())
}

pub fn read_scene(path: &Path) -> Result<SceneDef> {
    scene_from_json(&std::fs::read_to_string(path)?)
}

// ------------------------------------------------------------------------ csv

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => format_err(format!("{other:?}")),
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub const METRICS_HEADER: [&str; 6] = ["step", "loss", "rgb_l1", "depth_l1", "rays", "seconds"];

/// `step,loss,rgb_l1,depth_l1,rays,seconds`.
pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_rows(path, rows, &METRICS_HEADER)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(format_err(format!("unexpected metrics header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub fn write_eval_csv(path: &Path, rows: &[EvalMetrics]) -> Result<()> {
    write_rows(path, rows, &["step", "depth_l1", "rgb_l1"])
}

pub const BENCH_RUNS_HEADER: [&str; 6] = ["strategy", "seed", "depth_l1", "rgb_l1", "rays_per_step", "peak_ray_buffer_bytes"];
pub const BENCH_SUMMARY_HEADER: [&str; 5] = ["strategy", "median_depth_l1", "median_rgb_l1", "peak_ray_buffer_bytes", "runs"];

pub fn write_bench_runs_csv(path: &Path, rows: &[BenchRun]) -> Result<()> {
    write_rows(path, rows, &BENCH_RUNS_HEADER)
}

/// One row per strategy.
pub fn write_bench_summary_csv(path: &Path, rows: &[BenchSummary]) -> Result<()> {
    write_rows(path, rows, &BENCH_SUMMARY_HEADER)
}

#[derive(Serialize)]
struct PointRow {
    x: f64,
    y: f64,
    z: f64,
    intensity: f64,
}

/// `x,y,z,intensity` per point.
pub fn write_lidar_csv(path: &Path, points: &[LidarPoint]) -> Result<()> {
    let rows: Vec<PointRow> = points
        .iter()
        .map(|p| PointRow {
            x: p.position.x,
            y: p.position.y,
            z: p.position.z,
            intensity: p.intensity,
        })
        .collect();
    write_rows(path, &rows, &["x", "y", "z", "intensity"])
}
