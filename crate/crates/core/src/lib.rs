//! Circuit-discovery toolkit for syllogistic completion in GPT-2-family models.
//!
//! The crate is organised around a hooked CPU forward pass ([`model`]) that can
//! splice activations from a donor run or from a batch-mean table. On top of it
//! sit prompt construction ([`datasets`]), scoring ([`metrics`]), patching sweeps
//! ([`interventions`]), the OV-circuit logit lens ([`lens`]) and circuit
//! ablation / mover-head classification ([`circuits`]).
//!
//! Batch work fans out through [`Exec`], which uses rayon when the `parallel`
//! feature is enabled and falls back to a plain loop otherwise. Results are
//! assembled in input order either way, so both paths produce bit-identical
//! reports.

pub mod circuits;
pub mod datasets;
mod error;
mod exec;
pub mod interventions;
pub mod lens;
pub mod metrics;
pub mod model;

pub use error::{Error, Result};
pub use exec::Exec;
pub use model::{
    forward, load_bundle, ActivationCache, HeadId, ModelBundle, ModelConfig, PatchSpec,
    PatchTarget, Site, Tokenizer,
};
