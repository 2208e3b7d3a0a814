use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HeadId, ModelConfig};

/// Named, ordered set of attention heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub name: String,
    pub heads: Vec<HeadId>,
}

/// Induction (5.8, 6.1, 6.15, 7.2), previous-token (8.1), middle-term
/// suppression (11.10) and mover heads in GPT-2 medium.
const DEFAULT_HEADS: [(usize, usize); 15] = [
    (5, 8),
    (6, 1),
    (6, 15),
    (7, 2),
    (8, 1),
    (11, 10),
    (9, 9),
    (11, 1),
    (12, 1),
    (14, 14),
    (15, 14),
    (17, 2),
    (18, 12),
    (19, 1),
    (23, 10),
];

impl Default for CircuitSpec {
    fn default() -> Self {
        CircuitSpec {
            name: "syllogism-gpt2-medium".into(),
            heads: DEFAULT_HEADS.iter().map(|&(l, h)| HeadId::new(l, h)).collect(),
        }
    }
}

impl CircuitSpec {
    pub fn new(name: impl Into<String>, heads: Vec<HeadId>) -> Result<Self> {
        let spec = CircuitSpec { name: name.into(), heads };
        spec.check_unique()?;
        Ok(spec)
    }

    /// Every head of a model.
    pub fn all_heads(config: &ModelConfig) -> Self {
        CircuitSpec {
            name: "all-heads".into(),
            heads: (0..config.n_layers)
                .flat_map(|l| (0..config.n_heads).map(move |h| HeadId::new(l, h)))
                .collect(),
        }
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        if let Some(h) = self.heads.iter().find(|h| !seen.insert(**h)) {
            return Err(Error::Config(format!("head {h} listed twice in circuit `{}`", self.name)));
        }
        Ok(())
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        self.check_unique()?;
        for h in &self.heads {
            if h.layer >= config.n_layers || h.head >= config.n_heads {
                return Err(Error::InvalidHead { layer: h.layer, head: h.head });
            }
        }
        Ok(())
    }

    /// Layer descending, head ascending within a layer.
    pub fn downstream_first(&self) -> Vec<HeadId> {
        let mut heads = self.heads.clone();
        heads.sort_by(|a, b| b.layer.cmp(&a.layer).then(a.head.cmp(&b.head)));
        heads
    }

    /// Layer ascending, head ascending.
    pub fn upstream_first(&self) -> Vec<HeadId> {
        let mut heads = self.heads.clone();
        heads.sort();
        heads
    }

    pub fn contains(&self, head: HeadId) -> bool {
        self.heads.contains(&head)
    }

    /// JSON `{"name": ..., "heads": ["5.8", ...]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: CircuitSpec = serde_json::from_str(text)?;
        spec.check_unique()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
