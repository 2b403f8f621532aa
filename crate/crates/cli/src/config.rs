use std::path::{Path, PathBuf};

use attnseg::imaging::SynthConfig;
use attnseg::pipeline::ExperimentConfig;
use attnseg::trainer::{TrainConfig, TrainMode};
use attnseg::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Everything a command needs besides its own flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data_root: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Label table; `<data_root>/labels.csv` when unset.
    pub labels: Option<PathBuf>,
    pub seed: u64,
    /// Seed of the study-level fold split; the run seed when unset.
    pub split_seed: Option<u64>,
    /// Held-out fold; the last fold when unset.
    pub test_fold: Option<usize>,
    pub synth: SynthConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut experiment = ExperimentConfig::desk();
        experiment.multilabel = Some(TrainConfig::desk(TrainMode::MultiLabel));
        Self {
            data_root: None,
            out: None,
            labels: None,
            seed: 0,
            split_seed: None,
            test_fold: None,
            synth: SynthConfig::default(),
            experiment,
        }
    }
}

fn merge(base: &mut Value, overlay: Value, at: &str) -> Result<()> {
    match (base, overlay) {
        (Value::Object(base), Value::Object(overlay)) => {
            for (key, value) in overlay {
                let path = if at.is_empty() { key.clone() } else { format!("{at}.{key}") };
                let slot = base
                    .get_mut(&key)
                    .ok_or_else(|| Error::Config(format!("unknown configuration key '{path}'")))?;
                merge(slot, value, &path)?;
            }
            Ok(())
        }
        (slot, value) => {
            *slot = value;
            Ok(())
        }
    }
}

impl RunConfig {
    /// Defaults with the tables of `text` laid over them.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
        let mut value = serde_json::to_value(Self::default())?;
        merge(&mut value, serde_json::to_value(table)?, "")?;
        serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        if !path.is_file() {
            return Err(Error::Dependency { path: path.to_path_buf() });
        }
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn data_root(&self) -> Result<&Path> {
        self.data_root
            .as_deref()
            .ok_or_else(|| Error::Usage("no data root: pass --data-root or set ATTNSEG_DATA_ROOT".into()))
    }

    pub fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Usage("no output directory: pass --out".into()))
    }

    pub fn labels(&self) -> Result<PathBuf> {
        match &self.labels {
            Some(path) => Ok(path.clone()),
            None => Ok(self.data_root()?.join("labels.csv")),
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.seed)
    }

    pub fn test_fold(&self) -> usize {
        self.test_fold.unwrap_or(self.experiment.folds - 1)
    }

    /// Experiment settings with every training seed derived from the run seed.
    pub fn experiment(&self) -> ExperimentConfig {
        self.experiment.clone().with_seed(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.experiment.validate()?;
        if self.test_fold() >= self.experiment.folds {
            return Err(Error::Usage(format!(
                "test fold {} outside 0..{}",
                self.test_fold(),
                self.experiment.folds
            )));
        }
        Ok(())
    }

    /// SHA-256 of the settings, locations excluded.
    pub fn hash(&self) -> Result<String> {
        let mut bare = self.clone();
        bare.data_root = None;
        bare.out = None;
        bare.labels = None;
        Ok(hex(&Sha256::digest(serde_json::to_vec(&bare)?)))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_tables_keep_other_defaults() {
        let text = "seed = 5\n[synth]\nn_slices = 40\n[experiment.classifier]\nmax_epochs = 2\n";
        let cfg = RunConfig::from_toml(text, Path::new("x.toml")).unwrap();
        let base = RunConfig::default();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.synth.n_slices, 40);
        assert_eq!(cfg.synth.noise_sigma, base.synth.noise_sigma);
        assert_eq!(cfg.experiment.classifier.max_epochs, 2);
        assert_eq!(cfg.experiment.classifier.learning_rate, base.experiment.classifier.learning_rate);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[synth]\nslices = 3\n", Path::new("x.toml")).unwrap_err();
        assert!(err.to_string().contains("synth.slices"), "{err}");
        assert!(RunConfig::from_toml("seed = \"a\"", Path::new("x.toml")).is_err());
    }

    #[test]
    fn hash_ignores_locations() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = Some("elsewhere".into());
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }
}
