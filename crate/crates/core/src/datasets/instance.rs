use serde::{Deserialize, Serialize};

use super::scheme::{Proposition, Quantifier, SyllogisticScheme, Term};
use crate::error::{Error, Result};
use crate::model::Tokenizer;

/// Token slot a term occupies in a rendered prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    S,
    /// Middle term in the minor premise.
    M1,
    /// Middle term in the major premise.
    M2,
    P,
    /// Final prompt position, where the completion is read.
    Last,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::S, Role::M1, Role::M2, Role::P, Role::Last];
    pub const TERMS: [Role; 4] = [Role::S, Role::M1, Role::M2, Role::P];

    pub fn label(self) -> &'static str {
        match self {
            Role::S => "s",
            Role::M1 => "m1",
            Role::M2 => "m2",
            Role::P => "p",
            Role::Last => "last",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().trim_start_matches('[').trim_end_matches(']');
        Role::ALL
            .into_iter()
            .find(|r| r.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Dataset(format!("unknown role `{s}`")))
    }
}

/// Surface strings of the four term slots, space-prefixed (`" A"`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Terms {
    pub s: String,
    pub m1: String,
    pub m2: String,
    pub p: String,
}

impl Terms {
    /// Terms of a well-formed syllogism, where both middle slots hold `m`.
    pub fn triple(s: &str, m: &str, p: &str) -> Self {
        Terms { s: s.into(), m1: m.into(), m2: m.into(), p: p.into() }
    }

    pub fn get(&self, role: Role) -> Option<&str> {
        match role {
            Role::S => Some(&self.s),
            Role::M1 => Some(&self.m1),
            Role::M2 => Some(&self.m2),
            Role::P => Some(&self.p),
            Role::Last => None,
        }
    }

    pub fn set(&mut self, role: Role, term: String) {
        match role {
            Role::S => self.s = term,
            Role::M1 => self.m1 = term,
            Role::M2 => self.m2 = term,
            Role::P => self.p = term,
            Role::Last => {}
        }
    }

    /// Distinct term strings in role order `s, m1, m2, p`.
    pub fn distinct(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::with_capacity(4);
        for r in Role::TERMS {
            let t = self.get(r).unwrap();
            if !out.contains(&t) {
                out.push(t);
            }
        }
        out
    }
}

/// Surface form of universal affirmatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantifierForm {
    /// "All X are Y".
    #[default]
    Plural,
    /// "Each X is Y".
    Each,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Belief {
    Consistent,
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RolePositions {
    /// Every occurrence of the subject term (premise and conclusion).
    pub s: Vec<usize>,
    pub m1: usize,
    pub m2: usize,
    pub p: usize,
    pub last: usize,
}

impl RolePositions {
    pub fn of(&self, role: Role) -> Vec<usize> {
        match role {
            Role::S => self.s.clone(),
            Role::M1 => vec![self.m1],
            Role::M2 => vec![self.m2],
            Role::P => vec![self.p],
            Role::Last => vec![self.last],
        }
    }

    /// Representative (first) position of a role.
    pub fn first(&self, role: Role) -> usize {
        match role {
            Role::S => self.s[0],
            Role::M1 => self.m1,
            Role::M2 => self.m2,
            Role::P => self.p,
            Role::Last => self.last,
        }
    }

    /// Role whose slot is at `pos`, if any; the last position wins over `s`.
    pub fn role_at(&self, pos: usize) -> Option<Role> {
        if pos == self.last {
            return Some(Role::Last);
        }
        Role::TERMS.into_iter().find(|&r| self.of(r).contains(&pos))
    }
}

/// One rendered, tokenized syllogism prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyllogismInstance {
    pub scheme: SyllogisticScheme,
    pub terms: Terms,
    #[serde(default)]
    pub form: QuantifierForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Belief>,
    pub prompt: String,
    pub tokens: Vec<u32>,
    pub role_positions: RolePositions,
    pub answer_token: u32,
    pub distractor_token: u32,
}

impl SyllogismInstance {
    /// Render `scheme` with `terms`; answer is `p`, distractor is `m1`.
    pub fn render(
        scheme: SyllogisticScheme,
        terms: Terms,
        form: QuantifierForm,
        tokenizer: &Tokenizer,
    ) -> Result<Self> {
        for r in Role::TERMS {
            let t = terms.get(r).unwrap();
            if !t.starts_with(' ') || t.trim().is_empty() || t.trim() != &t[1..] {
                return Err(Error::Dataset(format!(
                    "term `{t}` must be a single space-prefixed word"
                )));
            }
        }
        let segments = segments(&scheme, &terms, form);
        let mut prompt = String::new();
        let mut tokens = Vec::new();
        let mut s = Vec::new();
        let (mut m1, mut m2, mut p) = (None, None, None);
        for (text, role) in &segments {
            prompt.push_str(text);
            match role {
                Some(role) => {
                    let id = tokenizer.single_token(text)?;
                    let at = tokens.len();
                    match role {
                        Role::S => s.push(at),
                        Role::M1 => m1 = Some(at),
                        Role::M2 => m2 = Some(at),
                        Role::P => p = Some(at),
                        Role::Last => unreachable!(),
                    }
                    tokens.push(id);
                }
                None => tokens.extend(tokenizer.encode(text)),
            }
        }
        if tokenizer.encode(&prompt) != tokens {
            return Err(Error::Dataset(format!(
                "segment-wise encoding of `{prompt}` differs from encoding the whole prompt"
            )));
        }
        let missing = || Error::Dataset(format!("scheme {scheme} lacks a term slot"));
        let role_positions = RolePositions {
            s,
            m1: m1.ok_or_else(missing)?,
            m2: m2.ok_or_else(missing)?,
            p: p.ok_or_else(missing)?,
            last: tokens.len() - 1,
        };
        let answer_token = tokenizer.single_token(&terms.p)?;
        let distractor_token = tokenizer.single_token(&terms.m1)?;
        if answer_token == distractor_token {
            return Err(Error::Dataset(format!(
                "answer and distractor are the same token in `{prompt}`"
            )));
        }
        Ok(SyllogismInstance {
            scheme,
            terms,
            form,
            label: None,
            prompt,
            tokens,
            role_positions,
            answer_token,
            distractor_token,
        })
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    /// Check that re-rendering with `tokenizer` reproduces this instance.
    /// Answer and distractor may differ (pairs override them).
    pub fn verify(&self, tokenizer: &Tokenizer) -> Result<()> {
        let fresh = Self::render(self.scheme, self.terms.clone(), self.form, tokenizer)?;
        if fresh.prompt != self.prompt
            || fresh.tokens != self.tokens
            || fresh.role_positions != self.role_positions
        {
            return Err(Error::Dataset(format!(
                "stored tokens of `{}` do not match its re-encoding",
                self.prompt
            )));
        }
        let vocab = tokenizer.vocab_size() as u32;
        for t in [self.answer_token, self.distractor_token] {
            if t >= vocab {
                return Err(Error::TokenOutOfVocab(t));
            }
        }
        Ok(())
    }
}

/// Prompt pieces in order; term pieces carry their role.
fn segments(
    scheme: &SyllogisticScheme,
    terms: &Terms,
    form: QuantifierForm,
) -> Vec<(String, Option<Role>)> {
    let mut out = Vec::with_capacity(20);
    for (p, lead, middle) in [(scheme.minor, "", Role::M1), (scheme.major, " ", Role::M2)] {
        let pred = opening(&mut out, terms, form, p, lead, true, middle);
        out.push((terms.get(pred).unwrap().to_string(), Some(pred)));
        out.push((".".into(), None));
    }
    out.push((" Therefore,".into(), None));
    opening(&mut out, terms, form, scheme.conclusion, " ", false, Role::M1);
    out
}

/// Push quantifier, subject and copula; return the predicate's role.
fn opening(
    out: &mut Vec<(String, Option<Role>)>,
    terms: &Terms,
    form: QuantifierForm,
    p: Proposition,
    lead: &str,
    capital: bool,
    middle: Role,
) -> Role {
    let (q, copula) = words(p.quantifier, form);
    let q = if capital { q.to_string() } else { q.to_lowercase() };
    let role = |t: Term| match t {
        Term::S => Role::S,
        Term::M => middle,
        Term::P => Role::P,
    };
    let subject = role(p.subject);
    out.push((format!("{lead}{q}"), None));
    out.push((terms.get(subject).unwrap().to_string(), Some(subject)));
    out.push((format!(" {copula}"), None));
    role(p.predicate)
}

fn words(q: Quantifier, form: QuantifierForm) -> (&'static str, &'static str) {
    match (q, form) {
        (Quantifier::All, QuantifierForm::Plural) => ("All", "are"),
        (Quantifier::All, QuantifierForm::Each) => ("Each", "is"),
        (Quantifier::No, _) => ("No", "are"),
        (Quantifier::Some, _) => ("Some", "are"),
        (Quantifier::SomeNot, _) => ("Some", "are not"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> Terms {
        Terms::triple(" A", " B", " C")
    }

    #[test]
    fn barbara_prompt_and_roles() {
        let tok = Tokenizer::gpt2();
        let scheme = SyllogisticScheme::lookup("AAA-1").unwrap();
        let inst = SyllogismInstance::render(scheme, abc(), QuantifierForm::Plural, &tok).unwrap();
        assert_eq!(inst.prompt, "All A are B. All B are C. Therefore, all A are");
        assert_eq!(inst.n_tokens(), 15);
        assert_eq!(inst.role_positions, RolePositions { s: vec![1, 13], m1: 3, m2: 6, p: 8, last: 14 });
        assert_eq!(inst.answer_token, 327);
        assert_eq!(inst.distractor_token, 347);
        assert_eq!(inst.role_positions.role_at(6), Some(Role::M2));
        assert_eq!(inst.role_positions.role_at(14), Some(Role::Last));
        assert_eq!(inst.role_positions.role_at(0), None);
    }

    #[test]
    fn negative_conclusion_keeps_not() {
        let tok = Tokenizer::gpt2();
        let scheme = SyllogisticScheme::lookup("OAO-3").unwrap();
        let inst = SyllogismInstance::render(scheme, abc(), QuantifierForm::Plural, &tok).unwrap();
        assert_eq!(inst.prompt, "All B are A. Some B are not C. Therefore, some A are not");
        assert_eq!(inst.role_positions.s, vec![3, 14]);
        assert_eq!(inst.role_positions.last, 16);
        assert_eq!(inst.role_positions.m1, 1);
        assert_eq!(inst.role_positions.m2, 6);
        assert_eq!(inst.role_positions.p, 9);
    }

    #[test]
    fn each_form_only_rewrites_universal_affirmatives() {
        let tok = Tokenizer::gpt2();
        let aaa = SyllogisticScheme::lookup("AAA-1").unwrap();
        let inst = SyllogismInstance::render(aaa, abc(), QuantifierForm::Each, &tok).unwrap();
        assert_eq!(inst.prompt, "Each A is B. Each B is C. Therefore, each A is");
        assert_eq!(
            inst.tokens,
            [10871, 317, 318, 347, 13, 5501, 347, 318, 327, 13, 8447, 11, 1123, 317, 318]
        );
        let eae = SyllogisticScheme::lookup("EAE-1").unwrap();
        let inst = SyllogismInstance::render(eae, abc(), QuantifierForm::Each, &tok).unwrap();
        assert_eq!(inst.prompt, "Each A is B. No B are C. Therefore, no A are");
    }

    #[test]
    fn bare_or_multi_token_terms_are_rejected() {
        let tok = Tokenizer::gpt2();
        let aaa = SyllogisticScheme::lookup("AAA-1").unwrap();
        let bare = Terms::triple("A", " B", " C");
        assert!(SyllogismInstance::render(aaa, bare, QuantifierForm::Plural, &tok).is_err());
        let long = Terms::triple(" A", " electromagnetism", " C");
        assert!(matches!(
            SyllogismInstance::render(aaa, long, QuantifierForm::Plural, &tok),
            Err(Error::MultiToken(_))
        ));
        let same = Terms::triple(" A", " B", " B");
        assert!(SyllogismInstance::render(aaa, same, QuantifierForm::Plural, &tok).is_err());
    }

    #[test]
    fn verify_detects_tampering() {
        let tok = Tokenizer::gpt2();
        let aaa = SyllogisticScheme::lookup("AAA-1").unwrap();
        let mut inst = SyllogismInstance::render(aaa, abc(), QuantifierForm::Plural, &tok).unwrap();
        inst.verify(&tok).unwrap();
        inst.tokens[0] = 0;
        assert!(inst.verify(&tok).is_err());
    }
}
