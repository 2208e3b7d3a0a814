use super::result::{position_labels, Cell, SweepAxis, SweepResult};
use crate::datasets::{check_same_layout, PromptPair, Role};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics::{directed_score, final_difference, logit_difference};
use crate::model::{
    forward_final, forward_hooked, ActivationCache, Direction, HeadId, Hook, ModelBundle,
    PatchTarget, Site,
};

/// Which token positions a head-scoped patch covers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum PositionSel {
    #[default]
    All,
    /// The positions of one role in each pair.
    Role(Role),
    Explicit(Vec<usize>),
}

impl PositionSel {
    pub fn resolve(&self, pair: &PromptPair) -> Result<Vec<usize>> {
        let n = pair.n_tokens();
        let positions = match self {
            PositionSel::All => (0..n).collect(),
            PositionSel::Role(r) => pair.clean.role_positions.of(*r),
            PositionSel::Explicit(p) => p.clone(),
        };
        if let Some(p) = positions.iter().find(|&&p| p >= n) {
            return Err(Error::InvalidTarget(format!("position {p} outside a {n}-token prompt")));
        }
        Ok(positions)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub direction: Direction,
    /// Head sweeps only; residual sweeps always visit every position.
    pub positions: PositionSel,
    pub exec: Exec,
}

impl SweepOptions {
    pub fn new(direction: Direction) -> Self {
        SweepOptions { direction, ..Default::default() }
    }
}

/// Clean and corrupted runs of one pair with their logit differences.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub clean: ActivationCache,
    pub corrupted: ActivationCache,
    pub clean_delta: f64,
    pub corrupted_delta: f64,
}

impl PreparedPair {
    /// `(receiving run, donor run)` for a patch direction.
    pub fn runs(&self, direction: Direction) -> (&ActivationCache, &ActivationCache) {
        match direction {
            Direction::Denoise => (&self.corrupted, &self.clean),
            Direction::Noise => (&self.clean, &self.corrupted),
        }
    }

    /// Score of a run in which `targets` were patched from the donor.
    pub fn score_patch(
        &self,
        bundle: &ModelBundle,
        pair: &PromptPair,
        direction: Direction,
        targets: &[PatchTarget],
    ) -> Result<Option<f64>> {
        let (base, donor) = self.runs(direction);
        let start = targets.iter().map(|t| t.layer).min().unwrap_or(bundle.config.n_layers);
        let hooks: Vec<Hook<'_>> = targets.iter().map(|t| Hook::from_cache(t.clone(), donor)).collect();
        let state = forward_final(bundle, &base.tokens, &hooks, Some((base, start)))?;
        let patched = final_difference(bundle, &state, &pair.clean)?.delta;
        Ok(directed_score(direction, self.clean_delta, self.corrupted_delta, patched))
    }
}

pub fn prepare_pair(bundle: &ModelBundle, pair: &PromptPair) -> Result<PreparedPair> {
    if pair.clean.tokens.len() != pair.corrupted.tokens.len() {
        return Err(Error::Misaligned(format!(
            "{} vs {} tokens",
            pair.clean.tokens.len(),
            pair.corrupted.tokens.len()
        )));
    }
    let clean = forward_hooked(bundle, &pair.clean.tokens, &[])?;
    let corrupted = forward_hooked(bundle, &pair.corrupted.tokens, &[])?;
    let clean_delta = logit_difference(&clean, &pair.clean)?.delta;
    let corrupted_delta = logit_difference(&corrupted, &pair.corrupted)?.delta;
    Ok(PreparedPair { clean, corrupted, clean_delta, corrupted_delta })
}

/// Evaluate every site on every pair, one pair at a time so only two caches
/// are alive; sites fan out through `exec`. Returns `[site][pair]`.
pub(crate) fn evaluate_sites<S, F>(
    bundle: &ModelBundle,
    pairs: &[PromptPair],
    exec: &Exec,
    sites: &[S],
    eval: F,
) -> Result<Vec<Vec<Option<f64>>>>
where
    S: Sync,
    F: Fn(&PreparedPair, usize, &PromptPair, &S) -> Result<Option<f64>> + Sync + Send,
{
    let mut out = vec![Vec::with_capacity(pairs.len()); sites.len()];
    for (i, pair) in pairs.iter().enumerate() {
        let prepared = prepare_pair(bundle, pair)?;
        let scores = exec.try_map(sites, |site| eval(&prepared, i, pair, site))?;
        for (slot, s) in out.iter_mut().zip(scores) {
            slot.push(s);
        }
    }
    Ok(out)
}

/// Patch `resid_pre[layer]` at one position at a time.
pub fn residual_sweep(
    bundle: &ModelBundle,
    pairs: &[PromptPair],
    opts: &SweepOptions,
) -> Result<SweepResult> {
    let first = pairs.first().ok_or(Error::Empty("prompt pairs"))?;
    let cleans: Vec<_> = pairs.iter().map(|p| p.clean.clone()).collect();
    check_same_layout(&cleans)?;
    let (l, n) = (bundle.config.n_layers, first.n_tokens());
    let sites: Vec<(usize, usize)> = (0..l).flat_map(|layer| (0..n).map(move |i| (layer, i))).collect();
    let scores = evaluate_sites(bundle, pairs, &opts.exec, &sites, |prep, _, pair, &(layer, i)| {
        prep.score_patch(bundle, pair, opts.direction, &[PatchTarget::resid_pre(layer, vec![i])])
    })?;
    let cells = grid(l, n, &scores);
    Ok(SweepResult::new(
        SweepAxis::LayerPosition,
        Site::ResidPre,
        opts.direction,
        Some(first.intervention),
        position_labels(n, &first.clean.role_positions),
        &first.clean.role_positions,
        pairs.len(),
        cells,
    ))
}

/// Patch one head's `site` (output, values or pattern) at the selected
/// positions, for every head.
pub fn head_sweep(
    bundle: &ModelBundle,
    pairs: &[PromptPair],
    site: Site,
    opts: &SweepOptions,
) -> Result<SweepResult> {
    if !site.is_head_scoped() {
        return Err(Error::InvalidTarget(format!("{site:?} is not a head site")));
    }
    let first = pairs.first().ok_or(Error::Empty("prompt pairs"))?;
    let (l, h) = (bundle.config.n_layers, bundle.config.n_heads);
    let heads: Vec<HeadId> = (0..l).flat_map(|layer| (0..h).map(move |j| HeadId::new(layer, j))).collect();
    let positions: Vec<Vec<usize>> = pairs.iter().map(|p| opts.positions.resolve(p)).collect::<Result<_>>()?;
    let scores = evaluate_sites(bundle, pairs, &opts.exec, &heads, |prep, at, pair, &head| {
        let target = PatchTarget::head(site, head, positions[at].clone());
        prep.score_patch(bundle, pair, opts.direction, &[target])
    })?;
    Ok(SweepResult::new(
        SweepAxis::LayerHead,
        site,
        opts.direction,
        Some(first.intervention),
        (0..h).map(|j| j.to_string()).collect(),
        &first.clean.role_positions,
        pairs.len(),
        grid(l, h, &scores),
    ))
}

pub fn head_output_sweep(bundle: &ModelBundle, pairs: &[PromptPair], opts: &SweepOptions) -> Result<SweepResult> {
    head_sweep(bundle, pairs, Site::HeadOut, opts)
}

pub fn head_value_sweep(bundle: &ModelBundle, pairs: &[PromptPair], opts: &SweepOptions) -> Result<SweepResult> {
    head_sweep(bundle, pairs, Site::HeadValue, opts)
}

pub fn head_pattern_sweep(bundle: &ModelBundle, pairs: &[PromptPair], opts: &SweepOptions) -> Result<SweepResult> {
    head_sweep(bundle, pairs, Site::HeadPattern, opts)
}

pub(crate) fn grid(rows: usize, cols: usize, scores: &[Vec<Option<f64>>]) -> Vec<Vec<Cell>> {
    (0..rows)
        .map(|r| (0..cols).map(|c| Cell::from_scores(&scores[r * cols + c])).collect())
        .collect()
}
