//! Run configuration: a TOML document with a fixed schema. Unknown keys are
//! rejected. Any key can be overridden from the environment with
//! `MASKRENDER_<SECTION>__<KEY>=<toml value>`, e.g. `MASKRENDER_TRAIN__STEPS=50`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::RayBudget;
use crate::training::loss::LossWeights;
use crate::training::bench::BenchConfig;
use crate::training::optim::OptimizerConfig;
use crate::training::params::ModelConfig;
use crate::training::pretrain::DepthSource;

pub const ENV_PREFIX: &str = "MASKRENDER_";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    /// Block edge in input cells (pixels for images, voxels for BEV).
    pub block: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub image: MaskSpec,
    pub points: MaskSpec,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            image: MaskSpec { block: 32, ratio: 0.3 },
            points: MaskSpec { block: 8, ratio: 0.8 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LidarConfig {
    pub azimuth_count: usize,
    pub elevation_rows: usize,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            azimuth_count: 360,
            elevation_rows: 32,
        }
    }
}

/// Generated suite used when no scene files are given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub seed: u64,
    pub scenes: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { seed: 0, scenes: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Views whose pixels are sampled per step (all views are encoded).
    pub views_per_step: usize,
    pub depth_source: DepthSource,
    /// Held-out evaluation period in steps; 0 evaluates only at the ends.
    pub eval_every: usize,
    /// Held-out pixels per scene.
    pub eval_pixels: usize,
    /// Periodic checkpoint interval; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Off writes 0 into the `seconds` column so that metric files are
    /// reproducible bit for bit.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            views_per_step: 1,
            depth_source: DepthSource::Lidar,
            eval_every: 100,
            eval_pixels: 256,
            checkpoint_every: 0,
            record_wall_time: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Scene documents; empty selects the generated suite.
    pub scene_files: Vec<PathBuf>,
    pub suite: SuiteConfig,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub mask: MaskConfig,
    pub rays: RayBudget,
    pub loss: LossWeights,
    pub optimizer: OptimizerConfig,
    pub lidar: LidarConfig,
    pub train: TrainConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene_files: Vec::new(),
            suite: SuiteConfig::default(),
            output_dir: PathBuf::from("out"),
            model: ModelConfig::default(),
            mask: MaskConfig::default(),
            rays: RayBudget::default(),
            loss: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            lidar: LidarConfig::default(),
            train: TrainConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidConfig(msg.into()))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.rays.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        for (name, m) in [("image", self.mask.image), ("points", self.mask.points)] {
            if m.block == 0 || !(0.0..=1.0).contains(&m.ratio) {
                return invalid(format!("{name} mask needs a positive block and a ratio in [0, 1]"));
            }
        }
        if self.lidar.azimuth_count == 0 || self.lidar.elevation_rows == 0 {
            return invalid("lidar grid must be non-empty");
        }
        if self.train.views_per_step == 0 {
            return invalid("views_per_step must be at least 1");
        }
        if self.scene_files.is_empty() && self.suite.scenes == 0 {
            return invalid("no scene files and an empty generated suite");
        }
        for f in &self.scene_files {
            if !f.is_file() {
                return invalid(format!("scene file {} does not exist", f.display()));
            }
        }
        Ok(())
    }

    /// Parses a document, applies `MASKRENDER_*` overrides from `env`, and
    /// validates the result.
    pub fn from_toml_str<I>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        apply_env_overrides(&mut table, env)?;
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file with overrides from the process environment.
    /// Relative scene paths resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        apply_env_overrides(&mut table, std::env::vars())?;
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for f in &mut cfg.scene_files {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Writes `MASKRENDER_A__B=v` into `table[a][b]`. Values are parsed as TOML
/// and fall back to plain strings.
pub fn apply_env_overrides<I>(table: &mut toml::Table, env: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(str::to_lowercase).collect();
        if path.iter().any(String::is_empty) {
            return invalid(format!("malformed override variable {key}"));
        }
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or(toml::Value::String(raw.clone()));
        let (last, parents) = path.split_last().expect("non-empty path");
        let mut node = &mut *table;
        for p in parents {
            let entry = node
                .entry(p.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = match entry {
                toml::Value::Table(t) => t,
                _ => return invalid(format!("override {key} descends into a non-table key")),
            };
        }
        node.insert(last.clone(), value);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::Strategy;
    use crate::training::params::Modality;

    fn no_env() -> Vec<(String, String)> {
        Vec::new()
    }

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_toml_str("", no_env()).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.rays.points_per_ray, 96);
        assert_eq!(cfg.rays.rays_per_view, 512);
        assert_eq!(cfg.mask.image, MaskSpec { block: 32, ratio: 0.3 });
        assert_eq!(cfg.mask.points, MaskSpec { block: 8, ratio: 0.8 });
        assert_eq!(cfg.loss.lambda_rgb, 10.0);
        assert_eq!(cfg.loss.lambda_depth, 10.0);
    }

    #[test]
    fn partial_sections() {
        let cfg = RunConfig::from_toml_str(
            "seed = 7\n[model]\nmodality = \"fused\"\n[rays]\nstrategy = \"random\"\n",
            no_env(),
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.modality, Modality::Fused);
        assert_eq!(cfg.rays.strategy, Strategy::Random);
        assert_eq!(cfg.model.channels, 16);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(RunConfig::from_toml_str("sed = 1", no_env()).is_err());
        assert!(RunConfig::from_toml_str("[rays]\npoint_per_ray = 3", no_env()).is_err());
        assert!(RunConfig::from_toml_str("[mask.image]\nblock = 32\nratio = 0.3\nextra = 1", no_env()).is_err());
    }

    #[test]
    fn range_checks() {
        assert!(RunConfig::from_toml_str("[mask.image]\nblock = 32\nratio = 1.5", no_env()).is_err());
        assert!(RunConfig::from_toml_str("[optimizer]\nlr = -1.0", no_env()).is_err());
        assert!(RunConfig::from_toml_str("scene_files = [\"/no/such/file.json\"]", no_env()).is_err());
    }

    #[test]
    fn env_overrides() {
        let env = vec![
            ("MASKRENDER_TRAIN__STEPS".to_string(), "12".to_string()),
            ("MASKRENDER_RAYS__STRATEGY".to_string(), "dilation".to_string()),
            ("MASKRENDER_SEED".to_string(), "99".to_string()),
            ("OTHER_VAR".to_string(), "x".to_string()),
        ];
        let cfg = RunConfig::from_toml_str("[train]\nsteps = 3\n", env).unwrap();
        assert_eq!(cfg.train.steps, 12);
        assert_eq!(cfg.rays.strategy, Strategy::Dilation);
        assert_eq!(cfg.seed, 99);
        let bad = vec![("MASKRENDER_TRAIN__STEPZ".to_string(), "1".to_string())];
        assert!(RunConfig::from_toml_str("", bad).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.rays.tau = Some(5.0);
        cfg.model.depth_range = Some([0.5, 9.0]);
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text, no_env()).unwrap(), cfg);
    }
}
