use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineError, Stage};
use crate::corpus::Vocabulary;
use crate::humaneval::QcConfig;
use crate::leaning::LeaningConfig;
use crate::modes::ModesConfig;
use crate::proximity::ProximityConfig;

/// Input files of a run. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub manifest: PathBuf,
    /// Embedding file id -> path.
    #[serde(default)]
    pub embeddings: BTreeMap<String, PathBuf>,
    pub scores: Option<PathBuf>,
    pub answers: Option<PathBuf>,
    pub ratings: Option<PathBuf>,
    pub gold_items: Option<PathBuf>,
    pub gold_responses: Option<PathBuf>,
    pub demographics: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide. Never affects results.
    #[serde(default)]
    pub jobs: usize,
    pub inputs: InputPaths,
    /// Overrides the default category schema.
    pub vocabulary: Option<Vocabulary>,
    /// Occupations that must appear in the demographic audit.
    #[serde(default)]
    pub occupations: Vec<String>,
    #[serde(default)]
    pub modes: ModesConfig,
    #[serde(default)]
    pub proximity: ProximityConfig,
    #[serde(default)]
    pub leaning: LeaningConfig,
    #[serde(default)]
    pub qc: QcConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<RunConfig, PipelineError> {
        let mut c: RunConfig = toml::from_str(text).map_err(|e| PipelineError::invalid(Stage::Config, e.message()))?;
        c.base_dir = base_dir.to_path_buf();
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<RunConfig, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::missing(Stage::Config, format!("{}: {e}", path.display())))?;
        RunConfig::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.base_dir.join(p) }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// SHA-256 of the effective configuration (after overrides), hex encoded.
    /// `jobs` is left out: it never changes results.
    pub fn digest(&self) -> String {
        let effective = RunConfig { jobs: 0, ..self.clone() };
        hex::encode(Sha256::digest(effective.to_toml().as_bytes()))
    }

    pub fn vocabulary(&self) -> Vocabulary {
        self.vocabulary.clone().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::KSelection;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::parse("[inputs]\nmanifest = \"m.jsonl\"\n", Path::new("/base")).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.modes, ModesConfig::default());
        assert_eq!(c.leaning.n_perm, 999);
        assert_eq!(c.resolve(Path::new("m.jsonl")), PathBuf::from("/base/m.jsonl"));
    }

    #[test]
    fn round_trip_and_digest() {
        let text = r#"
seed = 7
[inputs]
manifest = "m.jsonl"
ratings = "r.jsonl"
[inputs.embeddings]
clip = "e.bin"
[modes]
variance_target = 0.9
[modes.k_selection]
mode = "fixed"
k = 3
[qc]
speed_floor_ms = 4000
"#;
        let c = RunConfig::parse(text, Path::new(".")).unwrap();
        assert_eq!(c.modes.k_selection, KSelection::Fixed { k: 3 });
        let back = RunConfig::parse(&c.to_toml(), Path::new(".")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
        let mut other = c.clone();
        other.seed = 8;
        assert_ne!(other.digest(), c.digest());
        let threads = RunConfig { jobs: 16, ..c.clone() };
        assert_eq!(threads.digest(), c.digest());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("[inputs]\nmanifest = \"m\"\nbogus = 1\n", Path::new(".")).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
