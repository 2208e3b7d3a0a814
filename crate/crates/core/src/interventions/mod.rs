//! Patching sweeps, path patching and attention-weight profiles.

mod attention;
mod degradation;
mod path;
mod result;
mod sweep;

pub(crate) use sweep::evaluate_sites;

pub use attention::{attention_profile, AttentionProfile, HeadAttention, ProfileColumn};
pub use degradation::{logit_degradation, Degradation};
pub use path::{path_patch, path_patch_senders, PathPatchResult};
pub use result::{Cell, SweepAxis, SweepResult};
pub use sweep::{
    head_output_sweep, head_pattern_sweep, head_sweep, head_value_sweep, prepare_pair,
    residual_sweep, PositionSel, PreparedPair, SweepOptions,
};
