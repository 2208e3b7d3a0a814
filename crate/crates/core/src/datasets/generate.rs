use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::instance::{QuantifierForm, Role, SyllogismInstance, Terms};
use super::scheme::SyllogisticScheme;
use crate::error::{Error, Result};
use crate::model::Tokenizer;

/// Batch size used when none is given.
pub const DEFAULT_SAMPLES: usize = 90;

/// Space-prefixed uppercase letters `" A"` … `" Z"`.
pub fn letters() -> Vec<String> {
    ('A'..='Z').map(|c| format!(" {c}")).collect()
}

/// Space-prefixed digits in assignment order `" 1"` … `" 9"`, `" 0"`.
pub fn digits() -> Vec<String> {
    ('1'..='9').chain(['0']).map(|c| format!(" {c}")).collect()
}

const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Sample `n_samples` letter instances of `scheme`.
///
/// Distinct letter sets are drawn without repetition; each set yields its six
/// role assignments `(s, m, p)` in turn (the last set may be cut short).
pub fn generate_symbolic(
    scheme: SyllogisticScheme,
    n_samples: usize,
    seed: u64,
    tokenizer: &Tokenizer,
) -> Result<Vec<SyllogismInstance>> {
    generate_from_pool(scheme, &letters(), n_samples, seed, tokenizer)
}

pub fn generate_from_pool(
    scheme: SyllogisticScheme,
    pool: &[String],
    n_samples: usize,
    seed: u64,
    tokenizer: &Tokenizer,
) -> Result<Vec<SyllogismInstance>> {
    if n_samples == 0 {
        return Err(Error::Dataset("n_samples must be at least 1".into()));
    }
    let k = pool.len();
    let capacity = k * k.saturating_sub(1) * k.saturating_sub(2);
    if n_samples > capacity {
        return Err(Error::AlphabetExhausted);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n_samples);
    while out.len() < n_samples {
        let mut triple: Vec<usize> = rand::seq::index::sample(&mut rng, k, 3).into_vec();
        triple.sort_unstable();
        if !seen.insert(triple.clone()) {
            continue;
        }
        for perm in PERMUTATIONS {
            if out.len() == n_samples {
                break;
            }
            let [s, m, p] = perm.map(|i| pool[triple[i]].as_str());
            let terms = Terms::triple(s, m, p);
            out.push(SyllogismInstance::render(scheme, terms, QuantifierForm::Plural, tokenizer)?);
        }
    }
    Ok(out)
}

/// How the corrupted prompt of a pair is derived from the clean one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intervention {
    /// Replace the second middle term, breaking the middle-term link.
    MiddleTerm,
    /// Replace every term with fresh, distinct terms.
    AllTerm,
    /// Replace the subject term at all of its positions.
    SubjectTerm,
}

impl Intervention {
    pub fn edited_roles(self) -> &'static [Role] {
        match self {
            Intervention::MiddleTerm => &[Role::M2],
            Intervention::AllTerm => &[Role::S, Role::M1, Role::M2, Role::P],
            Intervention::SubjectTerm => &[Role::S],
        }
    }
}

impl std::str::FromStr for Intervention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('-', "_").to_ascii_lowercase().as_str() {
            "middle_term" | "middle" => Ok(Intervention::MiddleTerm),
            "all_term" | "all" => Ok(Intervention::AllTerm),
            "subject_term" | "subject" => Ok(Intervention::SubjectTerm),
            other => Err(Error::Dataset(format!("unknown intervention `{other}`"))),
        }
    }
}

/// A clean prompt and its corrupted counterpart.
///
/// The corrupted instance is scored with the clean answer and distractor
/// tokens, so both runs compare the same two logits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub clean: SyllogismInstance,
    pub corrupted: SyllogismInstance,
    pub intervention: Intervention,
}

impl PromptPair {
    /// Build a pair, enforcing position alignment.
    pub fn new(
        clean: SyllogismInstance,
        mut corrupted: SyllogismInstance,
        intervention: Intervention,
    ) -> Result<Self> {
        if clean.tokens.len() != corrupted.tokens.len() {
            return Err(Error::Misaligned(format!(
                "{} vs {} tokens",
                clean.tokens.len(),
                corrupted.tokens.len()
            )));
        }
        if clean.role_positions != corrupted.role_positions {
            return Err(Error::Misaligned("role positions differ".into()));
        }
        let allowed: Vec<usize> = intervention
            .edited_roles()
            .iter()
            .flat_map(|&r| clean.role_positions.of(r))
            .collect();
        if let Some(i) = differing_positions(&clean.tokens, &corrupted.tokens)
            .into_iter()
            .find(|i| !allowed.contains(i))
        {
            return Err(Error::Misaligned(format!("position {i} differs outside the edited roles")));
        }
        corrupted.answer_token = clean.answer_token;
        corrupted.distractor_token = clean.distractor_token;
        Ok(PromptPair { clean, corrupted, intervention })
    }

    pub fn n_tokens(&self) -> usize {
        self.clean.tokens.len()
    }

    /// Positions where the two token sequences differ.
    pub fn differing_positions(&self) -> Vec<usize> {
        differing_positions(&self.clean.tokens, &self.corrupted.tokens)
    }

    /// Apply a perturbation to both prompts with one shared term mapping.
    pub fn perturb(&self, kind: Perturbation, tokenizer: &Tokenizer) -> Result<PromptPair> {
        let (clean, corrupted) = match kind {
            Perturbation::Quantifier => (
                perturb(&self.clean, kind, tokenizer)?,
                perturb(&self.corrupted, kind, tokenizer)?,
            ),
            Perturbation::Numeric => {
                let mut order: Vec<&str> = self.clean.terms.distinct();
                for t in self.corrupted.terms.distinct() {
                    if !order.contains(&t) {
                        order.push(t);
                    }
                }
                let map = numeric_map(&order)?;
                (
                    remap(&self.clean, &order, &map, tokenizer)?,
                    remap(&self.corrupted, &order, &map, tokenizer)?,
                )
            }
        };
        PromptPair::new(clean, corrupted, self.intervention)
    }
}

pub fn differing_positions(a: &[u32], b: &[u32]) -> Vec<usize> {
    a.iter().zip(b).enumerate().filter(|(_, (x, y))| x != y).map(|(i, _)| i).collect()
}

/// Corrupt `instance`, drawing replacements from the pool its terms come
/// from (digits for numeric prompts, letters otherwise).
pub fn corrupt(
    instance: &SyllogismInstance,
    intervention: Intervention,
    seed: u64,
    tokenizer: &Tokenizer,
) -> Result<PromptPair> {
    let digit_pool = digits();
    let pool = if instance.terms.distinct().iter().all(|t| digit_pool.iter().any(|d| d == t)) {
        digit_pool
    } else {
        letters()
    };
    corrupt_with_pool(instance, intervention, seed, &pool, tokenizer)
}

pub fn corrupt_with_pool(
    instance: &SyllogismInstance,
    intervention: Intervention,
    seed: u64,
    pool: &[String],
    tokenizer: &Tokenizer,
) -> Result<PromptPair> {
    let used = instance.terms.distinct();
    let candidates: Vec<&String> = pool.iter().filter(|t| !used.contains(&t.as_str())).collect();
    let roles = intervention.edited_roles();
    if candidates.len() < roles.len() {
        return Err(Error::AlphabetExhausted);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fresh: Vec<&&String> = candidates.choose_multiple(&mut rng, roles.len()).collect();
    let mut terms = instance.terms.clone();
    for (&role, term) in roles.iter().zip(fresh) {
        terms.set(role, (*term).clone());
    }
    let corrupted = SyllogismInstance::render(instance.scheme, terms, instance.form, tokenizer)?;
    PromptPair::new(instance.clone(), corrupted, intervention)
}

/// Corrupt each instance with its own seed derived from `seed`.
pub fn corrupt_batch(
    instances: &[SyllogismInstance],
    intervention: Intervention,
    seed: u64,
    tokenizer: &Tokenizer,
) -> Result<Vec<PromptPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    instances
        .iter()
        .map(|inst| corrupt(inst, intervention, rng.gen(), tokenizer))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Terms become digits, assigned to distinct terms in role order.
    Numeric,
    /// "All X are Y" becomes "Each X is Y".
    Quantifier,
}

impl std::str::FromStr for Perturbation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "numeric" => Ok(Perturbation::Numeric),
            "quantifier" => Ok(Perturbation::Quantifier),
            other => Err(Error::Dataset(format!("unknown perturbation `{other}`"))),
        }
    }
}

/// Rewrite an instance's surface form while keeping its role structure.
pub fn perturb(
    instance: &SyllogismInstance,
    kind: Perturbation,
    tokenizer: &Tokenizer,
) -> Result<SyllogismInstance> {
    match kind {
        Perturbation::Quantifier => {
            let mut out = SyllogismInstance::render(
                instance.scheme,
                instance.terms.clone(),
                QuantifierForm::Each,
                tokenizer,
            )?;
            out.label = instance.label;
            Ok(out)
        }
        Perturbation::Numeric => {
            let order = instance.terms.distinct();
            let map = numeric_map(&order)?;
            remap(instance, &order, &map, tokenizer)
        }
    }
}

/// Perturb a batch for ablation or scoring.
///
/// Numeric batches draw a seeded injective letter→digit map per instance;
/// the fixed map of [`perturb`] would turn every instance of a scheme into the
/// same prompt and leave nothing for a batch mean to average over.
pub fn perturb_batch(
    instances: &[SyllogismInstance],
    kind: Perturbation,
    seed: u64,
    tokenizer: &Tokenizer,
) -> Result<Vec<SyllogismInstance>> {
    match kind {
        Perturbation::Quantifier => instances.iter().map(|i| perturb(i, kind, tokenizer)).collect(),
        Perturbation::Numeric => {
            let pool = digits();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            instances
                .iter()
                .map(|inst| {
                    let order = inst.terms.distinct();
                    if order.len() > pool.len() {
                        return Err(Error::AlphabetExhausted);
                    }
                    let map: Vec<String> = pool.choose_multiple(&mut rng, order.len()).cloned().collect();
                    remap(inst, &order, &map, tokenizer)
                })
                .collect()
        }
    }
}

fn numeric_map(order: &[&str]) -> Result<Vec<String>> {
    let pool = digits();
    if order.len() > pool.len() {
        return Err(Error::AlphabetExhausted);
    }
    Ok(pool[..order.len()].to_vec())
}

fn remap(
    instance: &SyllogismInstance,
    order: &[&str],
    map: &[String],
    tokenizer: &Tokenizer,
) -> Result<SyllogismInstance> {
    let mut terms = instance.terms.clone();
    for role in Role::TERMS {
        let old = instance.terms.get(role).unwrap();
        let i = order.iter().position(|t| *t == old).expect("term is in the mapping");
        terms.set(role, map[i].clone());
    }
    let mut out = SyllogismInstance::render(instance.scheme, terms, instance.form, tokenizer)?;
    out.label = instance.label;
    Ok(out)
}
