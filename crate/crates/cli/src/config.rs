use std::fs;
use std::path::{Path, PathBuf};

use dance_core::corpus::{Split, SyntheticConfig, TokenizerConfig};
use dance_core::diagnostics::DEFAULT_SAMPLE_BUDGET;
use dance_core::eval::{Direction, DEFAULT_CUTOFF};
use dance_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Settings shared by all subcommands; every field may come from `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Ingested corpus directory read by train, eval and diagnose.
    pub corpus: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
    pub tokenizer: TokenizerConfig,
    pub train: TrainConfig,
    /// Checkpoint a training run continues from.
    pub init: Option<PathBuf>,
    pub eval: EvalSettings,
    pub diagnostics: DiagnosticsSettings,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub direction: Direction,
    pub cutoff: usize,
    pub split: Split,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { direction: Direction::Doc, cutoff: DEFAULT_CUTOFF, split: Split::Dev }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSettings {
    pub sample_budget: usize,
    pub cutoff: usize,
    pub split: Split,
}

impl Default for DiagnosticsSettings {
    fn default() -> Self {
        Self { sample_budget: DEFAULT_SAMPLE_BUDGET, cutoff: DEFAULT_CUTOFF, split: Split::Dev }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).map_err(|e| CliError::missing(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}:{}: {e}", path.display(), e.line())))
    }

    /// The output directory, created if needed and checked for writability.
    pub fn out_dir(&self) -> Result<&Path, CliError> {
        let dir = self.out.as_deref().ok_or_else(|| CliError::data("no output directory: pass --out".into()))?;
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
        let probe = dir.join(".write-probe");
        fs::write(&probe, b"").and_then(|()| fs::remove_file(&probe)).map_err(|e| CliError::io(format!("{} is not writable: {e}", dir.display())))?;
        Ok(dir)
    }

    /// The corpus directory; `missing` builds the error for an absent one.
    pub fn corpus_dir(&self, missing: fn(String) -> CliError) -> Result<&Path, CliError> {
        let dir = self.corpus.as_deref().ok_or_else(|| CliError::data("no corpus: pass --corpus".into()))?;
        if !dir.is_dir() {
            return Err(missing(format!("corpus directory {} does not exist", dir.display())));
        }
        Ok(dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"train":{"max_steps":5},"eval":{"direction":"query"}}"#).unwrap();
        assert_eq!(cfg.train.max_steps, 5);
        assert_eq!(cfg.train.temperature, 0.01);
        assert_eq!(cfg.eval.direction, Direction::Query);
        assert_eq!(cfg.eval.cutoff, 100);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"trian":{}}"#).is_err());
    }

    #[test]
    fn missing_config_file_is_a_missing_artifact() {
        let err = ExperimentConfig::load(Some(Path::new("/nonexistent/config.json"))).unwrap_err();
        assert_eq!(err.code, crate::exit::MISSING_ARTIFACT);
    }
}
