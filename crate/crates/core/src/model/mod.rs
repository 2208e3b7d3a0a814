//! GPT-2-family model: checkpoint loading, tokenizer and the hooked forward pass.

mod bundle;
mod cache;
mod config;
mod forward;
mod patch;
mod tokenizer;

pub use bundle::{
    bundle_from_bytes, checkpoint_bytes, load_bundle, load_bundle_with_tokenizer, save_checkpoint,
    LayerNormWeights, LayerWeights, ModelBundle,
};
pub use cache::ActivationCache;
pub use config::{Activation, ModelConfig};
pub use forward::{forward, forward_final, forward_head_out, forward_hooked, FinalState};
pub use patch::{
    build_hooks, Direction, HeadId, Hook, HookSource, MeanAblation, MeanTable, PatchSpec,
    PatchTarget, Site,
};
pub use tokenizer::Tokenizer;

pub(crate) use forward::dot;
