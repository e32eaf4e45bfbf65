//! Run configuration and per-artifact metadata sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::DatasetConfig;
use super::image::PreprocessConfig;
use crate::error::{Error, Result};
use crate::experiments::BlurConfig;
use crate::network::TrainConfig;
use crate::sanity::RandomizationMode;
use crate::saliency::SaliencyConfig;

pub const CONFIG_SCHEMA: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SanityConfig {
    pub mode: RandomizationMode,
    /// Randomization seeds `seed .. seed + seeds`.
    pub seeds: usize,
}

impl Default for SanityConfig {
    fn default() -> Self {
        SanityConfig {
            mode: RandomizationMode::Cascading,
            seeds: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Network spec; the bundled mini-VGG when absent.
    pub spec: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema: u32,
    /// Seed for corpus generation and weight randomization.
    pub seed: u64,
    pub paths: PathsConfig,
    pub dataset: DatasetConfig,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    pub saliency: SaliencyConfig,
    pub blur: BlurConfig,
    pub sanity: SanityConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: CONFIG_SCHEMA,
            seed: 7,
            paths: PathsConfig::default(),
            dataset: DatasetConfig::default(),
            preprocess: PreprocessConfig::default(),
            train: TrainConfig::default(),
            saliency: SaliencyConfig::default(),
            blur: BlurConfig::default(),
            sanity: SanityConfig::default(),
        }
    }
}

impl RunConfig {
    /// The bundled reference configuration.
    pub fn reference() -> Self {
        Self::parse(include_str!("../../configs/reference.toml")).expect("bundled reference config is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "config schema {} is not supported (expected {CONFIG_SCHEMA})",
                self.schema
            )));
        }
        self.dataset.validate()?;
        self.preprocess.validate()?;
        self.saliency.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.blur.validate()?;
        if self.sanity.seeds == 0 {
            return Err(Error::Config("sanity.seeds must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything needed to repeat the run that produced an artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub tool_version: String,
    pub config_schema: u32,
    pub command: String,
    pub seed: u64,
    pub spec_name: String,
    pub weights_sha256: Option<String>,
    pub config: RunConfig,
}

impl RunMeta {
    pub fn new(command: &str, seed: u64, spec_name: &str, weights_sha256: Option<String>, config: &RunConfig) -> Self {
        RunMeta {
            tool_version: TOOL_VERSION.to_string(),
            config_schema: CONFIG_SCHEMA,
            command: command.to_string(),
            seed,
            spec_name: spec_name.to_string(),
            weights_sha256,
            config: config.clone(),
        }
    }
}

/// `<artifact>.meta.toml`.
pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.toml");
    artifact.with_file_name(name)
}

pub fn write_sidecar(artifact: impl AsRef<Path>, meta: &RunMeta) -> Result<PathBuf> {
    let path = sidecar_path(artifact.as_ref());
    let text = toml::to_string(meta).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<RunMeta> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Tap;

    #[test]
    fn defaults_roundtrip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn reference_differs_from_defaults_only_in_tap() {
        let mut r = RunConfig::reference();
        assert_eq!(r.saliency.tap, Tap::BeforeSoftmax);
        r.saliency.tap = Tap::AfterSoftmax;
        assert_eq!(r, RunConfig::default());
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = RunConfig::parse("[saliency]\ntap = \"before\"\nk = 3\n").unwrap();
        assert_eq!(cfg.saliency.tap, Tap::BeforeSoftmax);
        assert_eq!(cfg.saliency.k, 3);
        assert_eq!(cfg.blur, BlurConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::parse("sed = 3\n").is_err());
        assert!(RunConfig::parse("[saliency]\nkk = 3\n").is_err());
        assert!(RunConfig::parse("[saliency]\nk = 4\n").is_err());
        assert!(RunConfig::parse("schema = 2\n").is_err());
        assert!(RunConfig::parse("[blur]\nthreshold = 1.5\n").is_err());
    }

    #[test]
    fn sidecar_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let artifact = dir.path().join("map.csv");
        let meta = RunMeta::new("saliency", 3, "mini_vgg", Some("ab".into()), &RunConfig::default());
        let path = write_sidecar(&artifact, &meta).unwrap();
        assert_eq!(path.file_name().unwrap(), "map.csv.meta.toml");
        assert_eq!(read_sidecar(&path).unwrap(), meta);
    }
}
