use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::classify::Fusion;
use crate::corpus::{SplitSpec, SyntheticConfig};
use crate::encoder::EncoderConfig;
use crate::textprep::PrepConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Thread corpus used for training (and as the default input elsewhere).
    pub data: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data: None,
            vocab: None,
            lexicon: None,
            output_dir: PathBuf::from("run"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: Vec<PathBuf>,
    pub fusion: Fusion,
}

/// Everything one experiment needs, as read from a TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub prep: PrepConfig,
    pub synth: SyntheticConfig,
    pub split: SplitSpec,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
}

impl RunConfig {
    /// Reads `path` (if any), applies `key=value` overrides in order, then
    /// the seed override, which sets every seed field.
    pub fn resolve(path: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<Self, CliError> {
        let mut table = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for set in sets {
            apply_set(&mut table, set)?;
        }
        if let Some(seed) = seed {
            let seed = i64::try_from(seed)
                .map_err(|_| CliError::Validation(format!("--seed {seed} exceeds {}", i64::MAX)))?;
            for section in ["synth", "split", "encoder", "train"] {
                set_path(&mut table, &[section, "seed"], toml::Value::Integer(seed))?;
            }
        }
        let where_ = path.map_or("configuration".to_string(), |p| p.display().to_string());
        table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Validation(format!("{where_}: {e}")))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Validation(format!("config cannot be written: {e}")))
    }

    /// Writes the resolved configuration to `path`.
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_toml()?).map_err(|e| CliError::io(path, e))
    }
}

/// `a.b.c=value`; the value is parsed as a TOML value, falling back to a
/// bare string.
fn apply_set(table: &mut toml::Table, set: &str) -> Result<(), CliError> {
    let (key, raw) = set
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("--set {set:?}: expected key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Validation(format!("--set {set:?}: bad key")));
    }
    set_path(table, &parts, value)
}

fn set_path(table: &mut toml::Table, parts: &[&str], value: toml::Value) -> Result<(), CliError> {
    let (last, parents) = parts.split_last().expect("non-empty key");
    let mut cursor = table;
    for part in parents {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(format!("{}: {part} is not a table", parts.join("."))))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let mut config = RunConfig::default();
        config.paths.data = Some("threads.jsonl".into());
        config.encoder.vocab_size = 321;
        config.train.learning_rate = 3.3e-4;
        config.ensemble.members = vec!["a.ckpt".into(), "b.ckpt".into()];
        let text = config.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn overrides_and_seed() {
        let sets = [
            "train.max_epochs=2".to_string(),
            "paths.data = corpus.jsonl".to_string(),
            "train.architecture=\"single\"".to_string(),
            "encoder.share_layers=true".to_string(),
        ];
        let config = RunConfig::resolve(None, &sets, Some(9)).unwrap();
        assert_eq!(config.train.max_epochs, 2);
        assert_eq!(config.paths.data, Some(PathBuf::from("corpus.jsonl")));
        assert_eq!(config.train.architecture, crate::classify::Architecture::Single);
        assert!(config.encoder.share_layers);
        assert_eq!((config.train.seed, config.encoder.seed, config.split.seed, config.synth.seed), (9, 9, 9, 9));
    }

    #[test]
    fn bad_keys_are_validation_errors() {
        for set in ["nonsense", "train.bogus=1", "train.max_epochs.x=1"] {
            let err = RunConfig::resolve(None, &[set.to_string()], None).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{set}");
        }
    }
}
