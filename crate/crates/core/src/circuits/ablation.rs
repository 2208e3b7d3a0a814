use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::spec::CircuitSpec;
use crate::datasets::SyllogismInstance;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics::{accuracy, batch_stats, final_difference, logit_difference, BatchStats, RunScore};
use crate::model::{forward_final, forward_hooked, HeadId, Hook, MeanTable, ModelBundle};

/// Instances per parallel chunk when accumulating means.
const MEAN_CHUNK: usize = 8;

fn check_lengths(instances: &[SyllogismInstance]) -> Result<usize> {
    let first = instances.first().ok_or(Error::Empty("instance batch"))?;
    let n = first.n_tokens();
    if let Some(bad) = instances.iter().find(|i| i.n_tokens() != n) {
        return Err(Error::Misaligned(format!(
            "mean ablation needs equal lengths; `{}` has {} tokens, `{}` has {n}",
            bad.prompt,
            bad.n_tokens(),
            first.prompt
        )));
    }
    Ok(n)
}

/// Position-wise batch mean of every head's output, accumulated in f64.
pub fn mean_table(bundle: &ModelBundle, instances: &[SyllogismInstance], exec: &Exec) -> Result<MeanTable> {
    let n = check_lengths(instances)?;
    let c = &bundle.config;
    let mut sums: Vec<Array3<f64>> = vec![Array3::zeros((c.n_heads, n, c.d_model)); c.n_layers];
    for chunk in instances.chunks(MEAN_CHUNK) {
        let outs = exec.try_map(chunk, |inst| forward_hooked(bundle, &inst.tokens, &[]).map(|c| c.head_out))?;
        for run in outs {
            for (sum, layer) in sums.iter_mut().zip(run) {
                sum.zip_mut_with(&layer, |s, &x| *s += x as f64);
            }
        }
    }
    let count = instances.len() as f64;
    Ok(MeanTable {
        head_out: sums.into_iter().map(|s| s.mapv(|x| (x / count) as f32)).collect(),
        batch_size: instances.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Knock out circuit heads one by one, downstream first.
    Necessity,
    /// Knock out every head, then restore circuit heads upstream first.
    Sufficiency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveStep {
    /// Circuit heads ablated (necessity) or restored (sufficiency) so far.
    pub heads: Vec<HeadId>,
    pub mean: f64,
    pub std: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCurve {
    pub mode: AblationMode,
    pub circuit: String,
    pub baseline: BatchStats,
    pub baseline_accuracy: f64,
    pub steps: Vec<CurveStep>,
}

impl AblationCurve {
    pub fn final_mean(&self) -> f64 {
        self.steps.last().map_or(self.baseline.mean, |s| s.mean)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Heads ablated at each step, and the heads reported for that step.
fn schedule(bundle: &ModelBundle, circuit: &CircuitSpec, mode: AblationMode) -> Vec<(Vec<HeadId>, Vec<HeadId>)> {
    match mode {
        AblationMode::Necessity => {
            let order = circuit.downstream_first();
            (0..=order.len()).map(|k| (order[..k].to_vec(), order[..k].to_vec())).collect()
        }
        AblationMode::Sufficiency => {
            let order = circuit.upstream_first();
            let all = CircuitSpec::all_heads(&bundle.config).heads;
            (0..=order.len())
                .map(|j| {
                    let kept = &order[..j];
                    let ablated = all.iter().copied().filter(|h| !kept.contains(h)).collect();
                    (ablated, kept.to_vec())
                })
                .collect()
        }
    }
}

fn curve(
    bundle: &ModelBundle,
    circuit: &CircuitSpec,
    instances: &[SyllogismInstance],
    table: &MeanTable,
    mode: AblationMode,
    exec: &Exec,
) -> Result<AblationCurve> {
    check_lengths(instances)?;
    circuit.validate(&bundle.config)?;
    let steps = schedule(bundle, circuit, mode);
    let l = bundle.config.n_layers;
    // [sample] -> (baseline, [step])
    let runs = exec.try_map(instances, |inst| -> Result<(RunScore, Vec<RunScore>)> {
        let cache = forward_hooked(bundle, &inst.tokens, &[])?;
        let base = logit_difference(&cache, inst)?;
        let mut per_step = Vec::with_capacity(steps.len());
        for (ablated, _) in &steps {
            let hooks: Vec<Hook<'_>> = ablated.iter().map(|&h| Hook::mean(h, table)).collect();
            let start = ablated.iter().map(|h| h.layer).min().unwrap_or(l);
            let state = forward_final(bundle, &inst.tokens, &hooks, Some((&cache, start)))?;
            per_step.push(final_difference(bundle, &state, inst)?);
        }
        Ok((base, per_step))
    })?;
    let base: Vec<RunScore> = runs.iter().map(|r| r.0).collect();
    let deltas = |v: &[RunScore]| v.iter().map(|s| s.delta).collect::<Vec<f64>>();
    let mut out = Vec::with_capacity(steps.len());
    for (k, (_, reported)) in steps.iter().enumerate() {
        let scores: Vec<RunScore> = runs.iter().map(|r| r.1[k]).collect();
        let stats = batch_stats(&deltas(&scores))?;
        out.push(CurveStep { heads: reported.clone(), mean: stats.mean, std: stats.std, accuracy: accuracy(&scores)? });
    }
    Ok(AblationCurve {
        mode,
        circuit: circuit.name.clone(),
        baseline: batch_stats(&deltas(&base))?,
        baseline_accuracy: accuracy(&base)?,
        steps: out,
    })
}

/// Step `k` mean-ablates the first `k` circuit heads in downstream-first order.
pub fn necessity_curve(
    bundle: &ModelBundle,
    circuit: &CircuitSpec,
    instances: &[SyllogismInstance],
    table: &MeanTable,
    exec: &Exec,
) -> Result<AblationCurve> {
    curve(bundle, circuit, instances, table, AblationMode::Necessity, exec)
}

/// Step `j` mean-ablates every head except the first `j` circuit heads in
/// upstream-first order.
pub fn sufficiency_curve(
    bundle: &ModelBundle,
    circuit: &CircuitSpec,
    instances: &[SyllogismInstance],
    table: &MeanTable,
    exec: &Exec,
) -> Result<AblationCurve> {
    curve(bundle, circuit, instances, table, AblationMode::Sufficiency, exec)
}

/// Relative margins for the necessity and sufficiency verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    /// Necessity holds when the fully ablated mean falls below
    /// `baseline − necessity_drop · |baseline|`.
    pub necessity_drop: f64,
    /// Sufficiency holds when the circuit-only mean reaches
    /// `baseline − sufficiency_slack · |baseline|`.
    pub sufficiency_slack: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Margins { necessity_drop: 0.5, sufficiency_slack: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub necessity: bool,
    pub sufficiency: bool,
    pub positive_baseline: bool,
    pub accuracy: f64,
    pub baseline_mean: f64,
    pub necessity_final: f64,
    pub sufficiency_final: f64,
}

pub fn evaluate_conditions(
    necessity: &AblationCurve,
    sufficiency: &AblationCurve,
    baseline_scores: &[RunScore],
    margins: Margins,
) -> Result<ConditionReport> {
    let deltas: Vec<f64> = baseline_scores.iter().map(|s| s.delta).collect();
    let b = batch_stats(&deltas)?.mean;
    let (nf, sf) = (necessity.final_mean(), sufficiency.final_mean());
    Ok(ConditionReport {
        necessity: nf < b - margins.necessity_drop * b.abs(),
        sufficiency: sf >= b - margins.sufficiency_slack * b.abs(),
        positive_baseline: b > 0.0,
        accuracy: accuracy(baseline_scores)?,
        baseline_mean: b,
        necessity_final: nf,
        sufficiency_final: sf,
    })
}
