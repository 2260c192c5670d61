//! Run configuration: command-line flags override the config file, which overrides defaults.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use candle_core::DType;
use corgi_core::augment::AugmentOptions;
use corgi_core::backbone::{BackboneKind, GenerationConfig};
use corgi_core::encoder::EncoderConfig;
use corgi_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SNAPSHOT_ENV: &str = "CORGI_SNAPSHOT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParaphraseConfig {
    /// Chat-completions style endpoint.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
}

impl Default for ParaphraseConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            temperature: 0.7,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub store: PathBuf,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { addr: SocketAddr::from(([127, 0, 0, 1], 8080)), store: PathBuf::from("coach-data") }
    }
}

/// Everything a config file may set. Section seeds are replaced by the run seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub snapshot: Option<PathBuf>,
    pub backbone: Option<BackboneKind>,
    pub dtype: Option<String>,
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
    pub generation: GenerationConfig,
    pub augment: AugmentOptions,
    pub paraphrase: ParaphraseConfig,
    /// Steering simulator config; the bundled one when absent.
    pub steering: Option<PathBuf>,
    pub serve: ServeConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))
    }
}

/// Flags shared by every command.
#[derive(Debug, Clone, Default)]
pub struct GlobalFlags {
    pub seed: Option<u64>,
    pub config: Option<PathBuf>,
}

/// The merged configuration a command runs with.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub file: FileConfig,
}

impl RunConfig {
    pub fn resolve(flags: &GlobalFlags) -> Result<Self> {
        let mut file = match &flags.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let seed = flags.seed.or(file.seed).unwrap_or(0);
        file.train.seed = seed;
        file.encoder.seed = seed;
        file.generation.seed = seed;
        Ok(Self { seed, file })
    }

    /// `--snapshot`, else the config file, else the environment.
    pub fn snapshot(&self, flag: Option<&Path>) -> Result<PathBuf> {
        let path = flag
            .map(Path::to_path_buf)
            .or_else(|| self.file.snapshot.clone())
            .or_else(|| std::env::var_os(SNAPSHOT_ENV).map(PathBuf::from))
            .ok_or_else(|| {
                CliError::validation(format!(
                    "no snapshot: pass --snapshot, set it in the config, or set {SNAPSHOT_ENV}"
                ))
            })?;
        existing(&path)
    }

    pub fn backbone(&self, flag: Option<BackboneKind>) -> BackboneKind {
        flag.or(self.file.backbone).unwrap_or(BackboneKind::PretrainedCausal)
    }

    pub fn dtype(&self) -> Result<DType> {
        match self.file.dtype.as_deref().unwrap_or("f32") {
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            other => Err(CliError::validation(format!("dtype must be f32 or f64, got {other:?}"))),
        }
    }
}

pub fn existing(path: &Path) -> Result<PathBuf> {
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(CliError::validation(format!("{} does not exist", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 7\n[train]\nepochs = 3\nseed = 99\n").unwrap();
        let file_only = RunConfig::resolve(&GlobalFlags { seed: None, config: Some(path.clone()) }).unwrap();
        assert_eq!((file_only.seed, file_only.file.train.seed, file_only.file.train.epochs), (7, 7, 3));
        assert_eq!(file_only.file.train.batch_size, TrainConfig::default().batch_size);
        let flagged = RunConfig::resolve(&GlobalFlags { seed: Some(1), config: Some(path) }).unwrap();
        assert_eq!((flagged.seed, flagged.file.generation.seed), (1, 1));
        assert_eq!(RunConfig::resolve(&GlobalFlags::default()).unwrap().seed, 0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "sed = 7\n").unwrap();
        let err = RunConfig::resolve(&GlobalFlags { seed: None, config: Some(path) }).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
