use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use syllogism_circuits::circuits::Margins;
use syllogism_circuits::datasets::{Intervention, Perturbation, Role};
use syllogism_circuits::model::Direction;
use syllogism_circuits::HeadId;

/// Everything one command needs. Loaded from a TOML file, then patched by
/// command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Mandatory; there is no implicit randomness.
    pub seed: Option<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// `0` uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub model: ModelPaths,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub path: PathSpec,
    #[serde(default)]
    pub lens: LensSpec,
    /// Circuit JSON; the built-in head set when absent.
    #[serde(default)]
    pub circuit: Option<PathBuf>,
    #[serde(default)]
    pub margins: Margins,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPaths {
    pub checkpoint: Option<PathBuf>,
    /// GPT-2 `vocab.json` / `merges.txt`; the bundled tokenizer when absent.
    pub vocab: Option<PathBuf>,
    pub merges: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default = "default_samples")]
    pub n: usize,
    /// JSON-lines instances to use instead of sampling.
    #[serde(default)]
    pub file: Option<PathBuf>,
    /// Word-level CSV for subject-bias runs; the bundled set when absent.
    #[serde(default)]
    pub nonsymbolic: Option<PathBuf>,
    #[serde(default = "default_intervention")]
    pub intervention: Intervention,
    #[serde(default)]
    pub perturbations: Vec<Perturbation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Residual,
    HeadOut,
    HeadValue,
    HeadPattern,
    Attention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_kinds")]
    pub kinds: Vec<SweepKind>,
    #[serde(default)]
    pub direction: Direction,
    /// Query slot for attention profiles.
    #[serde(default = "default_query")]
    pub query: Role,
    /// Restrict attention profiles to these heads.
    #[serde(default)]
    pub heads: Vec<HeadId>,
    /// Also write a PPM heatmap per score grid.
    #[serde(default)]
    pub heatmap: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub receiver: Option<HeadId>,
    /// Score one sender; every earlier head when absent.
    pub sender: Option<HeadId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LensSpec {
    pub heads: Vec<HeadId>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_scheme() -> String {
    "AAA-1".into()
}
fn default_samples() -> usize {
    syllogism_circuits::datasets::DEFAULT_SAMPLES
}
fn default_intervention() -> Intervention {
    Intervention::MiddleTerm
}
fn default_kinds() -> Vec<SweepKind> {
    vec![SweepKind::Residual, SweepKind::HeadOut, SweepKind::HeadValue]
}
fn default_query() -> Role {
    Role::P
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            scheme: default_scheme(),
            n: default_samples(),
            file: None,
            nonsymbolic: None,
            intervention: default_intervention(),
            perturbations: Vec::new(),
        }
    }
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            kinds: default_kinds(),
            direction: Direction::default(),
            query: default_query(),
            heads: Vec::new(),
            heatmap: false,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: None,
            output: default_output(),
            workers: 0,
            model: ModelPaths::default(),
            dataset: DatasetSpec::default(),
            sweep: SweepSpec::default(),
            path: PathSpec::default(),
            lens: LensSpec::default(),
            circuit: None,
            margins: Margins::default(),
        }
    }
}

/// Raised for problems the user fixes by editing the config or flags.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| usage("no seed: set `seed = <n>` in the config or pass --seed"))
    }

    pub fn checkpoint(&self) -> Result<&Path> {
        self.model.checkpoint.as_deref().ok_or_else(|| {
            usage("no model checkpoint: set [model] checkpoint or pass --checkpoint with a GPT-2 safetensors file")
        })
    }

    /// Every referenced file must exist before any work starts.
    pub fn check_files(&self) -> Result<()> {
        let files = [
            ("model checkpoint", &self.model.checkpoint),
            ("tokenizer vocab", &self.model.vocab),
            ("tokenizer merges", &self.model.merges),
            ("dataset file", &self.dataset.file),
            ("non-symbolic word list", &self.dataset.nonsymbolic),
            ("circuit file", &self.circuit),
        ];
        for (what, path) in files {
            if let Some(p) = path {
                if !p.is_file() {
                    bail!(usage(format!("{what} {} does not exist", p.display())));
                }
            }
        }
        if self.model.vocab.is_some() != self.model.merges.is_some() {
            bail!(usage("set both [model] vocab and merges, or neither"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_document_parses() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            seed = 7
            output = "runs/a"
            workers = 2
            circuit = "c.json"
            [model]
            checkpoint = "m.safetensors"
            [dataset]
            scheme = "OAO-3"
            n = 12
            intervention = "all_term"
            perturbations = ["numeric", "quantifier"]
            [sweep]
            kinds = ["head_pattern", "attention"]
            direction = "noise"
            query = "last"
            heads = ["11.10", "h19.1"]
            heatmap = true
            [path]
            receiver = "3.1"
            [lens]
            heads = ["0.0"]
            [margins]
            necessity_drop = 0.4
            sufficiency_slack = 0.2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.dataset.intervention, Intervention::AllTerm);
        assert_eq!(cfg.sweep.heads[1], HeadId::new(19, 1));
        assert_eq!(cfg.sweep.query, Role::Last);
        assert_eq!(cfg.margins.necessity_drop, 0.4);
    }

    #[test]
    fn defaults_and_unknown_keys() {
        let cfg: ExperimentConfig = toml::from_str("seed = 1").unwrap();
        assert_eq!(cfg.dataset.n, 90);
        assert_eq!(cfg.sweep.direction, Direction::Denoise);
        assert!(toml::from_str::<ExperimentConfig>("seed = 1\nsed = 2").is_err());
        assert!(ExperimentConfig::default().seed().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig { seed: Some(1), ..Default::default() };
        let b = ExperimentConfig { seed: Some(2), ..Default::default() };
        assert_eq!(a.hash().unwrap(), a.clone().hash().unwrap());
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }
}
