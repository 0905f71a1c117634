use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use conssent_core::probes::{ProbeConfig, ProbeSuite};
use conssent_core::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::UsageError;

/// Everything a run depends on. Every field has a default, so `{}` is a
/// valid configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub probes: ProbeSuite,
    /// Training corpus, one sentence per line; the toy grammar when absent.
    pub corpus: Option<PathBuf>,
    /// Probe sentences; further toy sentences when absent.
    pub probe_corpus: Option<PathBuf>,
    pub toy_sentences: usize,
    pub probe_sentences: usize,
    pub valid_fraction: f64,
    pub min_freq: usize,
    pub max_vocab: Option<usize>,
    /// Also run the MLP probe grid (slower than logistic regression).
    pub mlp: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            probes: ProbeSuite::default(),
            corpus: None,
            probe_corpus: None,
            toy_sentences: 2000,
            probe_sentences: 2000,
            valid_fraction: 0.2,
            min_freq: 1,
            max_vocab: None,
            mlp: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    pub fn validate(&self) -> Result<()> {
        self.train
            .validate()
            .map_err(|e| UsageError(e.to_string()))?;
        self.probe
            .validate()
            .map_err(|e| UsageError(e.to_string()))?;
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            return Err(UsageError("valid_fraction must lie in (0, 1)".into()).into());
        }
        if self.toy_sentences == 0 || self.probe_sentences == 0 {
            return Err(
                UsageError("toy_sentences and probe_sentences must be positive".into()).into(),
            );
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default_and_unknown_keys_fail() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert!(serde_json::from_str::<RunConfig>(r#"{"trian": {}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"lr": 1}}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
