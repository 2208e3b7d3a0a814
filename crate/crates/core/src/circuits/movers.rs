use serde::{Deserialize, Serialize};

use crate::datasets::{PromptPair, Role};
use crate::error::{Error, Result};
use crate::interventions::{PositionSel, SweepOptions};
use crate::metrics::batch_stats_defined;
use crate::model::{HeadId, ModelBundle, PatchTarget, Site};

/// Value-patching scores of one head: all positions, and one role at a time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadScores {
    pub head: HeadId,
    pub s_all: f64,
    pub s_p: f64,
    pub s_m1: f64,
    pub s_m2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrant {
    PositiveCopy,
    PositiveSuppression,
    NegativeCopy,
    NegativeSuppression,
}

impl Quadrant {
    /// Zero counts as positive on both axes.
    pub fn of(s_all: f64, ppd: f64) -> Quadrant {
        match (s_all >= 0.0, ppd >= 0.0) {
            (true, true) => Quadrant::PositiveCopy,
            (true, false) => Quadrant::PositiveSuppression,
            (false, false) => Quadrant::NegativeCopy,
            (false, true) => Quadrant::NegativeSuppression,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoverClassification {
    pub head: HeadId,
    pub s_all: f64,
    pub s_p: f64,
    pub s_m1: f64,
    pub s_m2: f64,
    /// `|S[p]| − |S[m1] + S[m2]|`.
    pub ppd: f64,
    pub quadrant: Quadrant,
    /// `|S_all|` above `μ + 2σ` of `|S_all|` over all heads.
    pub outlier: bool,
}

/// Outlier threshold `μ + 2σ` over `values` (population σ); `None` when the
/// values do not vary, in which case nothing is an outlier.
pub(crate) fn outlier_threshold(values: &[f64]) -> Option<f64> {
    let n = values.len() as f64;
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let spread = values.iter().fold(0.0f64, |m, v| m.max((v - values[0]).abs()));
    (spread > 0.0).then(|| mean + 2.0 * var.sqrt())
}

pub fn classify_movers(scores: &[HeadScores]) -> Vec<MoverClassification> {
    let abs: Vec<f64> = scores.iter().map(|s| s.s_all.abs()).collect();
    let tau = outlier_threshold(&abs);
    scores
        .iter()
        .map(|s| {
            let ppd = s.s_p.abs() - (s.s_m1 + s.s_m2).abs();
            MoverClassification {
                head: s.head,
                s_all: s.s_all,
                s_p: s.s_p,
                s_m1: s.s_m1,
                s_m2: s.s_m2,
                ppd,
                quadrant: Quadrant::of(s.s_all, ppd),
                outlier: tau.is_some_and(|t| s.s_all.abs() > t),
            }
        })
        .collect()
}

/// Value-patch every head at all positions and at `[p]`, `[m1]`, `[m2]`
/// separately, averaging each over the batch.
pub fn mover_scores(bundle: &ModelBundle, pairs: &[PromptPair], opts: &SweepOptions) -> Result<Vec<HeadScores>> {
    if pairs.is_empty() {
        return Err(Error::Empty("prompt pairs"));
    }
    let (l, h) = (bundle.config.n_layers, bundle.config.n_heads);
    let selections = [
        PositionSel::All,
        PositionSel::Role(Role::P),
        PositionSel::Role(Role::M1),
        PositionSel::Role(Role::M2),
    ];
    let sites: Vec<(HeadId, usize)> = (0..l)
        .flat_map(|layer| (0..h).map(move |j| HeadId::new(layer, j)))
        .flat_map(|head| (0..selections.len()).map(move |s| (head, s)))
        .collect();
    let scores = crate::interventions::evaluate_sites(bundle, pairs, &opts.exec, &sites, |prep, _, pair, &(head, s)| {
        let positions = selections[s].resolve(pair)?;
        prep.score_patch(bundle, pair, opts.direction, &[PatchTarget::head(Site::HeadValue, head, positions)])
    })?;
    let mean = |i: usize| -> Result<f64> {
        batch_stats_defined(&scores[i]).0.map(|s| s.mean).ok_or_else(|| {
            Error::Dataset("every pair has a degenerate clean/corrupted logit gap".into())
        })
    };
    sites
        .chunks(selections.len())
        .enumerate()
        .map(|(k, chunk)| {
            let base = k * selections.len();
            Ok(HeadScores {
                head: chunk[0].0,
                s_all: mean(base)?,
                s_p: mean(base + 1)?,
                s_m1: mean(base + 2)?,
                s_m2: mean(base + 3)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hs(s_all: f64, s_p: f64, s_m1: f64, s_m2: f64) -> HeadScores {
        HeadScores { head: HeadId::new(0, 0), s_all, s_p, s_m1, s_m2 }
    }

    #[test]
    fn ppd_and_quadrants() {
        let c = classify_movers(&[hs(0.5, 0.6, -0.2, -0.1)]);
        assert!((c[0].ppd - 0.3).abs() < 1e-12);
        assert_eq!(c[0].quadrant, Quadrant::PositiveCopy);
        assert_eq!(Quadrant::of(0.2, -0.1), Quadrant::PositiveSuppression);
        assert_eq!(Quadrant::of(-0.2, -0.1), Quadrant::NegativeCopy);
        assert_eq!(Quadrant::of(-0.2, 0.1), Quadrant::NegativeSuppression);
    }

    #[test]
    fn equal_scores_flag_nothing() {
        let c = classify_movers(&vec![hs(0.1, 0.0, 0.0, 0.0); 10]);
        assert!(c.iter().all(|m| !m.outlier));
    }

    #[test]
    fn single_spike_is_flagged() {
        let mut scores = vec![hs(0.01, 0.0, 0.0, 0.0); 30];
        scores[7].s_all = -0.9;
        let c = classify_movers(&scores);
        let flagged: Vec<usize> = c.iter().enumerate().filter(|(_, m)| m.outlier).map(|(i, _)| i).collect();
        assert_eq!(flagged, vec![7]);
    }
}
