//! Experiment configuration: one TOML file with sections, overridable per
//! key from the command line.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use naq_core::Error;
use naq_core::synthworld::WorldConfig;
use naq_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Overrides `paths.output_dir` when set.
pub const OUTPUT_ROOT_ENV: &str = "NAQ_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub output_dir: PathBuf,
    /// Corpus location; defaults to `<output_dir>/corpus`.
    pub corpus_dir: Option<PathBuf>,
    /// NaQ file; defaults to `<output_dir>/naq/naq.jsonl`.
    pub naq_file: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig { output_dir: PathBuf::from("out"), corpus_dir: None, naq_file: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrjSection {
    /// Expansion bound `S`.
    pub scale_max: f64,
    /// When false, NaQ windows are the clamped seed windows.
    pub jitter: bool,
    pub seed: u64,
}

impl Default for TrjSection {
    fn default() -> Self {
        TrjSection { scale_max: 5.0, jitter: true, seed: 0 }
    }
}

impl TrjSection {
    pub fn effective_scale(&self) -> f64 {
        if self.jitter {
            self.scale_max
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub naq_fractions: Vec<f64>,
    pub nlq_fractions: Vec<f64>,
    pub seeds: usize,
    /// Run the arms of a study concurrently. Output is identical either way.
    pub parallel_arms: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            naq_fractions: vec![0.0, 0.10, 0.25, 0.50, 1.0],
            nlq_fractions: vec![0.0, 0.10, 0.25, 0.35],
            seeds: 3,
            parallel_arms: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Data-parallel execution inside each command.
    pub parallel: bool,
    pub paths: PathsConfig,
    pub world: WorldConfig,
    pub trj: TrjSection,
    /// Training settings of NaQ arms.
    pub train: TrainConfig,
    /// Training settings of the NLQ-only control arm.
    pub baseline: TrainConfig,
    pub study: StudyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            parallel: true,
            paths: PathsConfig::default(),
            world: WorldConfig::default(),
            trj: TrjSection::default(),
            train: TrainConfig::default(),
            baseline: TrainConfig::small_data(),
            study: StudyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).context("invalid configuration")
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `section.key=value` overrides. Values are parsed as TOML and
    /// fall back to plain strings.
    pub fn with_overrides<S: AsRef<str>>(self, overrides: &[S]) -> anyhow::Result<Self> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut root = toml::Value::try_from(&self)?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw.split_once('=').ok_or_else(|| invalid(&format!("override {raw:?} is not key=value")))?;
            let value = parse_value(value.trim());
            let path: Vec<&str> = key.trim().split('.').collect();
            set_path(&mut root, &path, value).map_err(|e| invalid(&format!("override {raw:?}: {e}")))?;
        }
        root.try_into().context("invalid configuration after overrides")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.world.validate()?;
        self.train.validate()?;
        self.baseline.validate()?;
        if !(self.trj.scale_max.is_finite() && self.trj.scale_max >= 1.0) {
            return Err(invalid("trj.scale_max must be >= 1"));
        }
        for (name, list) in [("naq_fractions", &self.study.naq_fractions), ("nlq_fractions", &self.study.nlq_fractions)] {
            if list.iter().any(|f| !(0.0..=1.0).contains(f)) {
                return Err(invalid(&format!("study.{name} must lie in [0, 1]")));
            }
        }
        if self.study.seeds == 0 {
            return Err(invalid("study.seeds must be >= 1"));
        }
        Ok(())
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.paths.corpus_dir.clone().unwrap_or_else(|| self.paths.output_dir.join("corpus"))
    }

    pub fn naq_file(&self) -> PathBuf {
        self.paths.naq_file.clone().unwrap_or_else(|| self.paths.output_dir.join("naq").join("naq.jsonl"))
    }
}

fn invalid(message: &str) -> anyhow::Error {
    Error::InvalidConfig(message.to_string()).into()
}

fn parse_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

fn set_path(node: &mut toml::Value, path: &[&str], value: toml::Value) -> anyhow::Result<()> {
    let (first, rest) = path.split_first().context("empty key")?;
    let table = node.as_table_mut().context("key does not name a section")?;
    if rest.is_empty() {
        // Optional keys are absent from the serialized table.
        table.insert(first.to_string(), value);
        return Ok(());
    }
    let child = table.get_mut(*first).with_context(|| format!("unknown section {first:?}"))?;
    set_path(child, rest, value)
}

/// Hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of a serializable config section in its TOML form.
pub fn digest_of<T: Serialize>(section: &T) -> String {
    sha256_hex(toml::to_string(section).expect("config serializes").as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn overrides() {
        let c = ExperimentConfig::default()
            .with_overrides(&[
                "world.n_videos=12",
                "train.stage1.learning_rate=0.25",
                "paths.output_dir=/tmp/x",
                "paths.corpus_dir=/tmp/c",
                "study.naq_fractions=[0.0, 1.0]",
            ])
            .unwrap();
        assert_eq!(c.world.n_videos, 12);
        assert_eq!(c.train.stage1.learning_rate, 0.25);
        assert_eq!(c.paths.output_dir, PathBuf::from("/tmp/x"));
        assert_eq!(c.corpus_dir(), PathBuf::from("/tmp/c"));
        assert_eq!(c.study.naq_fractions, vec![0.0, 1.0]);
        assert!(ExperimentConfig::default().with_overrides(&["world.nope=1"]).is_err());
        assert!(ExperimentConfig::default().with_overrides(&["nokey"]).is_err());
    }

    #[test]
    fn validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let c = ExperimentConfig::default().with_overrides(&["world.split_fractions=[0.7, 0.3, 0.2]"]).unwrap();
        assert!(c.validate().is_err());
        let c = ExperimentConfig::default().with_overrides(&["study.nlq_fractions=[1.5]"]).unwrap();
        assert!(c.validate().is_err());
    }
}
