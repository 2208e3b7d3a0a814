use serde::{Deserialize, Serialize};

use super::result::{Cell, SweepAxis, SweepResult};
use super::sweep::{evaluate_sites, prepare_pair, PreparedPair};
use crate::datasets::PromptPair;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics::{batch_stats_defined, final_difference, noise_score, BatchStats};
use crate::model::{
    forward_final, forward_head_out, Direction, HeadId, Hook, ModelBundle, PatchTarget, Site,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPatchResult {
    pub sender: HeadId,
    pub receiver: HeadId,
    /// Damage-scale score: 0 is no effect, negative means the sender's clean
    /// output, routed through the receiver, supports the answer.
    pub stats: Option<BatchStats>,
    pub scores: Vec<Option<f64>>,
    pub missing: usize,
}

fn check_pair(bundle: &ModelBundle, sender: HeadId, receiver: HeadId) -> Result<()> {
    bundle.check_head(sender.layer, sender.head)?;
    bundle.check_head(receiver.layer, receiver.head)?;
    if sender.layer >= receiver.layer {
        return Err(Error::LayerOrder { sender: sender.layer, receiver: receiver.layer });
    }
    Ok(())
}

/// Effect of the sender → receiver path for one prepared pair.
///
/// First a clean run where the sender emits its corrupted output and every
/// other head between the two layers is pinned to its clean output (MLPs are
/// recomputed); the receiver's output there is recorded. Then a clean run
/// with only the receiver's output replaced by that recording is scored.
pub(crate) fn path_score(
    bundle: &ModelBundle,
    prep: &PreparedPair,
    pair: &PromptPair,
    sender: HeadId,
    receiver: HeadId,
) -> Result<Option<f64>> {
    let (clean, corrupted) = (&prep.clean, &prep.corrupted);
    let all: Vec<usize> = (0..clean.n_tokens()).collect();
    let mut hooks = vec![Hook::from_cache(PatchTarget::head(Site::HeadOut, sender, all.clone()), corrupted)];
    for layer in sender.layer..receiver.layer {
        for h in 0..bundle.config.n_heads {
            let head = HeadId::new(layer, h);
            if head != sender {
                hooks.push(Hook::from_cache(PatchTarget::head(Site::HeadOut, head, all.clone()), clean));
            }
        }
    }
    let received = forward_head_out(bundle, &clean.tokens, &hooks, Some((clean, sender.layer)), receiver)?;
    let splice = [Hook::rows(PatchTarget::head(Site::HeadOut, receiver, all), &received)];
    let state = forward_final(bundle, &clean.tokens, &splice, Some((clean, receiver.layer)))?;
    let patched = final_difference(bundle, &state, &pair.clean)?.delta;
    Ok(noise_score(prep.clean_delta, prep.corrupted_delta, patched))
}

pub fn path_patch(
    bundle: &ModelBundle,
    pairs: &[PromptPair],
    sender: HeadId,
    receiver: HeadId,
    exec: &Exec,
) -> Result<PathPatchResult> {
    check_pair(bundle, sender, receiver)?;
    if pairs.is_empty() {
        return Err(Error::Empty("prompt pairs"));
    }
    let scores = exec.try_map(pairs, |pair| {
        let prep = prepare_pair(bundle, pair)?;
        path_score(bundle, &prep, pair, sender, receiver)
    })?;
    let (stats, missing) = batch_stats_defined(&scores);
    Ok(PathPatchResult { sender, receiver, stats, scores, missing })
}

/// Path-patch every head in layers before the receiver; later cells stay empty.
pub fn path_patch_senders(
    bundle: &ModelBundle,
    pairs: &[PromptPair],
    receiver: HeadId,
    exec: &Exec,
) -> Result<SweepResult> {
    bundle.check_head(receiver.layer, receiver.head)?;
    let first = pairs.first().ok_or(Error::Empty("prompt pairs"))?;
    let (l, h) = (bundle.config.n_layers, bundle.config.n_heads);
    let senders: Vec<HeadId> =
        (0..receiver.layer).flat_map(|layer| (0..h).map(move |j| HeadId::new(layer, j))).collect();
    let scores = evaluate_sites(bundle, pairs, exec, &senders, |prep, _, pair, &sender| {
        path_score(bundle, prep, pair, sender, receiver)
    })?;
    let mut cells = vec![vec![Cell::EMPTY; h]; l];
    for (sender, s) in senders.iter().zip(&scores) {
        cells[sender.layer][sender.head] = Cell::from_scores(s);
    }
    Ok(SweepResult::new(
        SweepAxis::LayerHead,
        Site::HeadOut,
        Direction::Noise,
        Some(first.intervention),
        (0..h).map(|j| j.to_string()).collect(),
        &first.clean.role_positions,
        pairs.len(),
        cells,
    ))
}
