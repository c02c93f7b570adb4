use std::fs;
use std::path::{Path, PathBuf};

use limbnet_core::evaluation::LoocvPreset;
use limbnet_core::experiment::PrepareSpec;
use limbnet_core::explain::DEFAULT_EPSILON;
use limbnet_core::model::ModelSpec;
use limbnet_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    PersonId,
    SoftBiometric,
    Loocv,
    Ioa,
    Explain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSettings {
    /// Index into the test windows.
    pub window: usize,
    /// Explained class; the window's own subject when absent.
    pub class: Option<usize>,
    pub epsilon: f64,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        ExplainSettings {
            window: 0,
            class: None,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Dataset manifest; relative paths start at the config file.
    pub dataset: PathBuf,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repeat")]
    pub repeat: usize,
    #[serde(default)]
    pub deterministic: bool,
    /// Attribute schema preset or JSON file (soft_biometric, loocv).
    #[serde(default)]
    pub schema: Option<String>,
    /// Replaces `train` with one of the published LOOCV settings.
    #[serde(default)]
    pub loocv_preset: Option<LoocvPreset>,
    /// Checkpoint read by eval and explain; `<out>/model.ckpt` by default.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub prepare: PrepareSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub explain: ExplainSettings,
}

fn default_repeat() -> usize {
    5
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))
    }

    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        cfg.dataset = resolve(&cfg.dataset);
        cfg.checkpoint = cfg.checkpoint.as_deref().map(resolve);
        if let Some(s) = &cfg.schema {
            if s.ends_with(".json") {
                cfg.schema = Some(resolve(Path::new(s)).display().to_string());
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if !self.dataset.is_file() {
            return Err(CliError::Config(format!("dataset manifest {} does not exist", self.dataset.display())));
        }
        if self.repeat == 0 {
            return Err(CliError::Config("repeat must be >= 1".into()));
        }
        if matches!(self.task, Task::SoftBiometric | Task::Loocv) && self.schema.is_none() {
            return Err(CliError::Config(format!("task {:?} needs `schema`", self.task)));
        }
        self.prepare.split.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Training settings after applying the LOOCV preset and the seed.
    pub fn train_config(&self) -> TrainConfig {
        let base = match self.loocv_preset {
            Some(p) => TrainConfig {
                seed: self.train.seed,
                ..p.train_config()
            },
            None => self.train.clone(),
        };
        TrainConfig { seed: self.seed, ..base }
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ExperimentConfig::parse("task = \"person_id\"\ndataset = \"m.json\"\n", "t").unwrap();
        assert_eq!(c.repeat, 5);
        assert_eq!(c.prepare.window_len, 100);
        assert!(c.prepare.normalize);
        assert_eq!(c.train.lr, 1e-4);
    }

    #[test]
    fn unknown_keys_are_located() {
        let e = ExperimentConfig::parse("task = \"person_id\"\ndataset = \"m.json\"\n[train]\nlearning_rate = 1\n", "x.toml")
            .unwrap_err()
            .to_string();
        assert!(e.contains("x.toml") && e.contains("learning_rate") && e.contains("line 4"), "{e}");
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = ExperimentConfig::parse("task = \"loocv\"\ndataset = \"m.json\"\nschema = \"lara_a1\"\nloocv_preset = \"caption\"\n", "t").unwrap();
        c.prepare.normalize = false;
        let back = ExperimentConfig::parse(&c.to_toml().unwrap(), "echo").unwrap();
        assert_eq!(back, c);
        assert_eq!(c.train_config().epochs, 50);
    }
}
