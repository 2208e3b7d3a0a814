//! Logit-difference scoring, patching scores and batch statistics.

use serde::{Deserialize, Serialize};

use crate::datasets::SyllogismInstance;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{forward_final, ActivationCache, Direction, FinalState, ModelBundle};

/// Denominators smaller than this leave a patching score undefined.
pub const DEGENERATE_EPS: f64 = 1e-9;

/// Outcome of one prompt: `δ = logit(answer) − logit(distractor)` at the
/// last position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub delta: f64,
    pub correct: bool,
}

impl RunScore {
    pub fn from_delta(delta: f64) -> Self {
        RunScore { delta, correct: delta > 0.0 }
    }
}

pub fn logit_difference(cache: &ActivationCache, instance: &SyllogismInstance) -> Result<RunScore> {
    let last = instance.role_positions.last;
    if last >= cache.n_tokens() {
        return Err(Error::Misaligned(format!(
            "last position {last} outside a {}-token run",
            cache.n_tokens()
        )));
    }
    let a = cache.logit(last, instance.answer_token)?;
    let d = cache.logit(last, instance.distractor_token)?;
    Ok(RunScore::from_delta(a as f64 - d as f64))
}

/// Same as [`logit_difference`] for a final-state-only run.
pub fn final_difference(
    bundle: &ModelBundle,
    state: &FinalState,
    instance: &SyllogismInstance,
) -> Result<RunScore> {
    let last = instance.role_positions.last;
    let a = state.logit(bundle, last, instance.answer_token)?;
    let d = state.logit(bundle, last, instance.distractor_token)?;
    Ok(RunScore::from_delta(a as f64 - d as f64))
}

/// Unpatched score of every instance.
pub fn score_instances(
    bundle: &ModelBundle,
    instances: &[SyllogismInstance],
    exec: &Exec,
) -> Result<Vec<RunScore>> {
    exec.try_map(instances, |inst| {
        let state = forward_final(bundle, &inst.tokens, &[], None)?;
        final_difference(bundle, &state, inst)
    })
}

/// Restoration score `(δp − δ−)/(δ+ − δ−)` clamped to `[−1, 1]`:
/// 1 means the patch fully restores clean behaviour, 0 means no effect.
pub fn patching_score(clean: f64, corrupted: f64, patched: f64) -> Option<f64> {
    let denom = clean - corrupted;
    if !(denom.abs() >= DEGENERATE_EPS) || !patched.is_finite() {
        return None;
    }
    Some(((patched - corrupted) / denom).clamp(-1.0, 1.0))
}

/// Damage score for patches into the clean run, `(δp − δ+)/(δ+ − δ−)`
/// clamped to `[−1, 1]`: 0 means no effect and −1 means the patch drives the
/// clean run all the way to corrupted behaviour. `1 + score` is the retained
/// fraction of the clean effect.
pub fn noise_score(clean: f64, corrupted: f64, patched: f64) -> Option<f64> {
    let denom = clean - corrupted;
    if !(denom.abs() >= DEGENERATE_EPS) || !patched.is_finite() {
        return None;
    }
    Some(((patched - clean) / denom).clamp(-1.0, 1.0))
}

pub fn directed_score(direction: Direction, clean: f64, corrupted: f64, patched: f64) -> Option<f64> {
    match direction {
        Direction::Denoise => patching_score(clean, corrupted, patched),
        Direction::Noise => noise_score(clean, corrupted, patched),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

pub fn batch_stats(scores: &[f64]) -> Result<BatchStats> {
    if scores.is_empty() {
        return Err(Error::Empty("score batch"));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok(BatchStats { mean, std: var.sqrt(), count: scores.len() })
}

/// Stats over the defined entries; also returns how many were missing.
pub fn batch_stats_defined(scores: &[Option<f64>]) -> (Option<BatchStats>, usize) {
    let defined: Vec<f64> = scores.iter().flatten().copied().collect();
    let missing = scores.len() - defined.len();
    (batch_stats(&defined).ok(), missing)
}

/// Fraction of runs with `δ > 0`.
pub fn accuracy(scores: &[RunScore]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("score batch"));
    }
    Ok(scores.iter().filter(|s| s.correct).count() as f64 / scores.len() as f64)
}
