use serde::{Deserialize, Serialize};

use crate::datasets::PromptPair;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics::{accuracy, batch_stats, final_difference, BatchStats, RunScore};
use crate::model::{forward_final, ModelBundle};

/// How much the logit difference drops from clean to corrupted prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    /// Stats of `δ+ − δ−` per pair.
    pub stats: BatchStats,
    pub per_pair: Vec<f64>,
    pub clean_accuracy: f64,
    pub corrupted_accuracy: f64,
}

pub fn logit_degradation(bundle: &ModelBundle, pairs: &[PromptPair], exec: &Exec) -> Result<Degradation> {
    if pairs.is_empty() {
        return Err(Error::Empty("prompt pairs"));
    }
    let runs = exec.try_map(pairs, |pair| -> Result<(RunScore, RunScore)> {
        let clean = forward_final(bundle, &pair.clean.tokens, &[], None)?;
        let corrupted = forward_final(bundle, &pair.corrupted.tokens, &[], None)?;
        Ok((
            final_difference(bundle, &clean, &pair.clean)?,
            final_difference(bundle, &corrupted, &pair.corrupted)?,
        ))
    })?;
    let per_pair: Vec<f64> = runs.iter().map(|(c, k)| c.delta - k.delta).collect();
    let clean: Vec<RunScore> = runs.iter().map(|r| r.0).collect();
    let corrupted: Vec<RunScore> = runs.iter().map(|r| r.1).collect();
    Ok(Degradation {
        stats: batch_stats(&per_pair)?,
        per_pair,
        clean_accuracy: accuracy(&clean)?,
        corrupted_accuracy: accuracy(&corrupted)?,
    })
}
