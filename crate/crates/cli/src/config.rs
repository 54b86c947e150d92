//! Per-command config files. Unknown keys are rejected everywhere.
//!
//! Every command except `gen` takes a top-level `seed` (default 42, the
//! `--seed` flag wins). Training commands copy it into `train.seed`, so a
//! `seed` inside `[train]` is ignored; the resolved value is echoed in
//! `run.toml`.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use ratnet_core::datagen::BenchmarkConfig;
use ratnet_core::federated::FederationConfig;
use ratnet_core::metrics::BootstrapConfig;
use ratnet_core::model::ModelConfig;
use ratnet_core::training::{ProbeConfig, TrainConfig, DEFAULT_FRACTIONS};

use crate::{CliError, CliResult};

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, toml::de::Error> {
    toml::from_str(text)
}

pub fn require<T>(value: Option<T>, key: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
}

pub type GenConfig = BenchmarkConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapOptions {
    pub resamples: Option<usize>,
    pub level: Option<f64>,
}

impl BootstrapOptions {
    pub fn resolve(&self, seed: u64) -> BootstrapConfig {
        let d = BootstrapConfig::default();
        BootstrapConfig {
            resamples: self.resamples.unwrap_or(d.resamples),
            level: self.level.unwrap_or(d.level),
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Benchmark directory written by `gen`.
    pub data: Option<PathBuf>,
    /// Pretraining task ids; defaults to every pretraining task of the benchmark.
    pub tasks: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub task: Option<String>,
    pub seed: Option<u64>,
    pub train: TrainConfig,
    pub bootstrap: BootstrapOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeCmdConfig {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub task: Option<String>,
    pub seed: Option<u64>,
    pub probe: ProbeConfig,
    pub bootstrap: BootstrapOptions,
    /// When set, runs the reduced-data protocol over these training fractions.
    pub fractions: Option<Vec<f64>>,
    pub repeats: usize,
}

impl Default for ProbeCmdConfig {
    fn default() -> Self {
        Self {
            data: None,
            checkpoint: None,
            task: None,
            seed: None,
            probe: ProbeConfig::default(),
            bootstrap: BootstrapOptions::default(),
            fractions: None,
            repeats: 10,
        }
    }
}

impl ProbeCmdConfig {
    pub fn default_fractions() -> Vec<f64> {
        DEFAULT_FRACTIONS.to_vec()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FewshotConfig {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub task: Option<String>,
    pub seed: Option<u64>,
    pub shots: Vec<usize>,
    pub runs: usize,
    pub probe: ProbeConfig,
}

impl Default for FewshotConfig {
    fn default() -> Self {
        Self {
            data: None,
            checkpoint: None,
            task: None,
            seed: None,
            shots: vec![1, 3, 5],
            runs: 100,
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZeroshotConfig {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Target task; defaults to the benchmark's zero-shot domain.
    pub task: Option<String>,
    /// Category map file; derived from shared concepts when absent.
    pub category_map: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Inference temperature; defaults to the checkpoint's.
    pub tau: Option<f64>,
    pub bootstrap: BootstrapOptions,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IncrementConfig {
    pub data: Option<PathBuf>,
    pub student: Option<PathBuf>,
    pub teacher: Option<PathBuf>,
    /// New task; defaults to the benchmark's incremental task.
    pub task: Option<String>,
    pub seed: Option<u64>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSpec {
    pub id: String,
    pub tasks: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederateConfig {
    pub data: Option<PathBuf>,
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub federation: FederationConfig,
    /// Sites and the tasks they own; defaults to one site per pretraining task.
    pub sites: Vec<SiteSpec>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    #[default]
    Test,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportConfig {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Tasks to export; defaults to every task in the benchmark.
    pub tasks: Option<Vec<String>>,
    pub split: SplitName,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_name_the_key() {
        let e = parse::<PretrainConfig>("data = \"x\"\nbogus_key = 1").unwrap_err();
        assert!(e.to_string().contains("bogus_key"), "{e}");
        let e = parse::<PretrainConfig>("[train]\nepochz = 3").unwrap_err();
        assert!(e.to_string().contains("epochz"), "{e}");
    }

    #[test]
    fn nested_sections_parse() {
        let c: FederateConfig = parse(
            "data = \"b\"\nseed = 7\n[federation]\nrounds = 2\n[[sites]]\nid = \"a\"\ntasks = [\"t0\"]",
        )
        .unwrap();
        assert_eq!(c.federation.rounds, 2);
        assert_eq!(c.sites[0].tasks, vec!["t0".to_string()]);
        let f: FewshotConfig = parse("runs = 5").unwrap();
        assert_eq!(f.shots, vec![1, 3, 5]);
    }
}
