use std::path::{Path, PathBuf};

use icuau_core::analytics::Attribution;
use icuau_core::au::DatasetTag;
use icuau_core::model::ModelConfig;
use icuau_core::synth::SynthOptions;
use icuau_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// Everything a run needs. Missing sections fall back to defaults; unknown
/// keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Defaults to the toy model sized for `data.tag`.
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub paths: PathsConfig,
    pub server: ServerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// AU head: `pain-icu`, `pain-icu-full`, `bp4d` or `disfa-plus`.
    pub tag: String,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub init_seed: u64,
    /// Counting of frames near several pain reports.
    pub attribution: Attribution,
    /// Train on generated frames instead of annotated crops.
    pub synthetic: Option<SyntheticConfig>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            tag: DatasetTag::PainIcu.name().into(),
            split_ratio: 0.7,
            split_seed: 0,
            init_seed: 0,
            attribution: Attribution::PerReport,
            synthetic: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub train_frames: usize,
    pub test_frames: usize,
    pub train_seed: u64,
    pub test_seed: u64,
    pub presence_probability: f64,
    pub noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let o = SynthOptions::default();
        Self {
            train_frames: 60,
            test_frames: 60,
            train_seed: 1,
            test_seed: 2,
            presence_probability: o.presence_probability,
            noise: o.noise,
        }
    }
}

impl SyntheticConfig {
    pub fn options(&self, size: usize) -> SynthOptions {
        SynthOptions {
            size,
            presence_probability: self.presence_probability,
            noise: self.noise,
        }
    }
}

/// File locations; relative entries are resolved against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    pub landmarks: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    /// Annotation journal (JSON lines).
    pub annotations: Option<PathBuf>,
    /// Root for relative `image_path`s in the manifest.
    pub images: Option<PathBuf>,
    /// Aligned crops, one `{frame_id}.png` per frame.
    pub crops: Option<PathBuf>,
    /// Persisted alignment transform cache.
    pub cache: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
    /// Latest evaluation report (JSON).
    pub metrics: Option<PathBuf>,
}

impl PathsConfig {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.manifest,
            &mut self.landmarks,
            &mut self.reports,
            &mut self.annotations,
            &mut self.images,
            &mut self.crops,
            &mut self.cache,
            &mut self.checkpoints,
            &mut self.metrics,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
    pub static_dir: Option<PathBuf>,
    pub cors: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            static_dir: None,
            cors: true,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, UsageError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| UsageError(format!("config: {e}")))?;
        cfg.paths.resolve(base);
        if let Some(dir) = cfg.server.static_dir.as_mut() {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(cfg)
    }

    /// Reads `path`, or returns defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self, UsageError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn tag(&self) -> Result<DatasetTag, UsageError> {
        DatasetTag::from_name(&self.data.tag)
            .ok_or_else(|| UsageError(format!("unknown dataset tag {:?}", self.data.tag)))
    }

    pub fn model(&self) -> Result<ModelConfig, UsageError> {
        let tag = self.tag()?;
        let cfg = self.model.clone().unwrap_or_else(|| ModelConfig::toy(tag.num_aus()));
        if cfg.num_aus != tag.num_aus() {
            return Err(UsageError(format!(
                "model.num_aus = {} but tag {} has {} AUs",
                cfg.num_aus,
                tag.name(),
                tag.num_aus()
            )));
        }
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }
}

/// Returns the configured path or a usage error naming the missing setting.
pub fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, UsageError> {
    value.as_deref().ok_or_else(|| {
        UsageError(format!(
            "missing {what}: pass the flag or set paths.{what} in the config"
        ))
    })
}

/// Fails before any work when an input file is absent.
pub fn existing(path: &Path) -> anyhow::Result<&Path> {
    if !path.exists() {
        anyhow::bail!("{} does not exist", path.display());
    }
    Ok(path)
}
