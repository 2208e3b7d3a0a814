use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::cache::ActivationCache;
use crate::error::{Error, Result};

/// An attention head addressed as `layer.head`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub const fn new(layer: usize, head: usize) -> Self {
        HeadId { layer, head }
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.layer, self.head)
    }
}

impl FromStr for HeadId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidTarget(format!("`{s}` is not a head id (expected `layer.head`)"));
        let s = s.trim().trim_start_matches('h').trim_start_matches('_');
        let (l, h) = s.split_once('.').ok_or_else(bad)?;
        Ok(HeadId {
            layer: l.parse().map_err(|_| bad())?,
            head: h.parse().map_err(|_| bad())?,
        })
    }
}

impl TryFrom<String> for HeadId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<HeadId> for String {
    fn from(h: HeadId) -> String {
        h.to_string()
    }
}

/// Hook points in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    /// Residual stream entering a block.
    ResidPre,
    /// One head's contribution to the residual stream (its slice through `W_O`).
    HeadOut,
    /// One head's value vectors.
    HeadValue,
    /// One head's post-softmax attention rows (positions are query positions).
    HeadPattern,
    MlpOut,
}

impl Site {
    pub fn is_head_scoped(self) -> bool {
        matches!(self, Site::HeadOut | Site::HeadValue | Site::HeadPattern)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Corrupted run, clean activations spliced in.
    #[default]
    Denoise,
    /// Clean run, corrupted activations spliced in.
    Noise,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchTarget {
    pub site: Site,
    pub layer: usize,
    pub head: Option<usize>,
    pub positions: Vec<usize>,
}

impl PatchTarget {
    pub fn resid_pre(layer: usize, positions: Vec<usize>) -> Self {
        PatchTarget { site: Site::ResidPre, layer, head: None, positions }
    }

    pub fn mlp_out(layer: usize, positions: Vec<usize>) -> Self {
        PatchTarget { site: Site::MlpOut, layer, head: None, positions }
    }

    pub fn head(site: Site, head: HeadId, positions: Vec<usize>) -> Self {
        PatchTarget { site, layer: head.layer, head: Some(head.head), positions }
    }

    pub(crate) fn validate(&self, n_layers: usize, n_heads: usize, n_tokens: usize) -> Result<()> {
        if self.layer >= n_layers {
            return Err(Error::InvalidTarget(format!(
                "layer {} out of range (model has {n_layers})",
                self.layer
            )));
        }
        match (self.site.is_head_scoped(), self.head) {
            (true, None) => {
                return Err(Error::InvalidTarget(format!("{:?} requires a head index", self.site)))
            }
            (true, Some(h)) if h >= n_heads => {
                return Err(Error::InvalidTarget(format!(
                    "head {h} out of range (model has {n_heads})"
                )))
            }
            (false, Some(_)) => {
                return Err(Error::InvalidTarget(format!("{:?} is not head-scoped", self.site)))
            }
            _ => {}
        }
        if let Some(&p) = self.positions.iter().find(|&&p| p >= n_tokens) {
            return Err(Error::InvalidTarget(format!(
                "position {p} out of range for {n_tokens} tokens"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct PatchSpec {
    pub direction: Direction,
    pub targets: Vec<PatchTarget>,
}

impl PatchSpec {
    pub fn new(direction: Direction, targets: Vec<PatchTarget>) -> Self {
        PatchSpec { direction, targets }
    }
}

/// Position-wise batch mean of every head's output, `L × (H × N × D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanTable {
    pub head_out: Vec<Array3<f32>>,
    pub batch_size: usize,
}

impl MeanTable {
    pub fn n_positions(&self) -> usize {
        self.head_out.first().map_or(0, |a| a.shape()[1])
    }
}

/// Heads to replace by their batch mean at every position.
#[derive(Debug, Clone, Copy)]
pub struct MeanAblation<'a> {
    pub table: &'a MeanTable,
    pub heads: &'a [HeadId],
}

/// Where a hooked site takes its replacement value from.
#[derive(Debug, Clone, Copy)]
pub enum HookSource<'a> {
    Cache(&'a ActivationCache),
    Mean(&'a MeanTable),
    /// Explicit replacement rows shaped like the site (`N × width`).
    Rows(&'a Array2<f32>),
}

#[derive(Debug, Clone)]
pub struct Hook<'a> {
    pub target: PatchTarget,
    pub source: HookSource<'a>,
}

impl<'a> Hook<'a> {
    pub fn from_cache(target: PatchTarget, cache: &'a ActivationCache) -> Self {
        Hook { target, source: HookSource::Cache(cache) }
    }

    pub fn rows(target: PatchTarget, rows: &'a Array2<f32>) -> Self {
        Hook { target, source: HookSource::Rows(rows) }
    }

    pub fn mean(head: HeadId, table: &'a MeanTable) -> Self {
        let positions = (0..table.n_positions()).collect();
        Hook {
            target: PatchTarget::head(Site::HeadOut, head, positions),
            source: HookSource::Mean(table),
        }
    }
}

/// Expand a patch spec + donor and an optional mean ablation into hooks.
pub fn build_hooks<'a>(
    patch: Option<&PatchSpec>,
    donor: Option<&'a ActivationCache>,
    ablation: Option<MeanAblation<'a>>,
) -> Result<Vec<Hook<'a>>> {
    let mut hooks = Vec::new();
    if let Some(spec) = patch.filter(|p| !p.targets.is_empty()) {
        let donor = donor.ok_or_else(|| {
            Error::DonorMismatch("patch targets given without a donor cache".into())
        })?;
        hooks.extend(spec.targets.iter().cloned().map(|t| Hook::from_cache(t, donor)));
    }
    if let Some(ab) = ablation {
        hooks.extend(ab.heads.iter().map(|&h| Hook::mean(h, ab.table)));
    }
    Ok(hooks)
}
