//! Syllogism prompts: scheme table, rendering, sampling, corruption and
//! perturbation, plus word-level ingestion.

mod generate;
mod instance;
mod nonsymbolic;
mod scheme;

use std::path::Path;

use serde::Serialize;

pub use generate::{
    corrupt, corrupt_batch, corrupt_with_pool, differing_positions, digits, generate_from_pool,
    generate_symbolic, letters, perturb, perturb_batch, Intervention, Perturbation, PromptPair, DEFAULT_SAMPLES,
};
pub use instance::{Belief, QuantifierForm, Role, RolePositions, SyllogismInstance, Terms};
pub use nonsymbolic::{
    ingest_nonsymbolic, parse_nonsymbolic, IngestReport, RejectedRow, BUNDLED_NONSYMBOLIC,
};
pub use scheme::{
    Proposition, Quantifier, SyllogisticScheme, Term, ANSWER_ROLE, DISTRACTOR_ROLE, SCHEMES,
};

use crate::error::{Error, Result};
use crate::model::Tokenizer;

/// One JSON object per line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parse instances from JSON lines, re-checking each against `tokenizer`.
pub fn instances_from_jsonl(text: &str, tokenizer: &Tokenizer) -> Result<Vec<SyllogismInstance>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let inst: SyllogismInstance = serde_json::from_str(line)
                .map_err(|e| Error::Dataset(format!("record {}: {e}", i + 1)))?;
            inst.verify(tokenizer)?;
            Ok(inst)
        })
        .collect()
}

pub fn read_instances(path: impl AsRef<Path>, tokenizer: &Tokenizer) -> Result<Vec<SyllogismInstance>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    instances_from_jsonl(&text, tokenizer)
}

/// Require that all instances share one prompt layout.
pub fn check_same_layout(instances: &[SyllogismInstance]) -> Result<()> {
    let first = instances.first().ok_or(Error::Empty("instance batch"))?;
    for inst in instances {
        if inst.tokens.len() != first.tokens.len() || inst.role_positions != first.role_positions {
            return Err(Error::Misaligned(format!(
                "`{}` and `{}` have different layouts",
                first.prompt, inst.prompt
            )));
        }
    }
    Ok(())
}
