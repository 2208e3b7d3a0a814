//! Candidate circuits: mean ablation curves, necessity/sufficiency verdicts
//! and mover-head classification.

mod ablation;
mod movers;
mod spec;

pub use ablation::{
    evaluate_conditions, mean_table, necessity_curve, sufficiency_curve, AblationCurve, AblationMode,
    ConditionReport, CurveStep, Margins,
};
pub use movers::{classify_movers, mover_scores, HeadScores, MoverClassification, Quadrant};
pub use spec::CircuitSpec;
