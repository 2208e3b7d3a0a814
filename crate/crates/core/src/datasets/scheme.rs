use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Categorical quantifier of one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantifier {
    /// A: "All X are Y".
    All,
    /// E: "No X are Y".
    No,
    /// I: "Some X are Y".
    Some,
    /// O: "Some X are not Y".
    SomeNot,
}

impl Quantifier {
    pub fn letter(self) -> char {
        match self {
            Quantifier::All => 'A',
            Quantifier::No => 'E',
            Quantifier::Some => 'I',
            Quantifier::SomeNot => 'O',
        }
    }
}

/// Abstract term of a syllogism: subject, middle, or predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    S,
    M,
    P,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Proposition {
    pub quantifier: Quantifier,
    pub subject: Term,
    pub predicate: Term,
}

const fn prop(quantifier: Quantifier, subject: Term, predicate: Term) -> Proposition {
    Proposition { quantifier, subject, predicate }
}

/// One of the unconditionally valid categorical syllogism forms.
///
/// The minor premise (the one mentioning `s`) is rendered first, then the
/// major premise, then the conclusion `s → p` with `p` left as the blank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SyllogisticScheme {
    pub name: &'static str,
    pub minor: Proposition,
    pub major: Proposition,
    pub conclusion: Proposition,
    pub figure: u8,
}

/// Role filled by the blank at the end of every prompt.
pub const ANSWER_ROLE: Term = Term::P;
/// Competing completion used for the logit difference.
pub const DISTRACTOR_ROLE: Term = Term::M;

use Quantifier::{All, No, Some as Sm, SomeNot};
use Term::{M, P, S};

macro_rules! scheme {
    ($name:literal, $fig:literal, $minor:expr, $major:expr, $concl:expr) => {
        SyllogisticScheme { name: $name, minor: $minor, major: $major, conclusion: $concl, figure: $fig }
    };
}

/// All fifteen schemes, in the order of their reference table.
pub const SCHEMES: [SyllogisticScheme; 15] = [
    scheme!("Barbara", 1, prop(All, S, M), prop(All, M, P), prop(All, S, P)),
    scheme!("Celarent", 1, prop(All, S, M), prop(No, M, P), prop(No, S, P)),
    scheme!("Darii", 1, prop(Sm, S, M), prop(All, M, P), prop(Sm, S, P)),
    scheme!("Ferio", 1, prop(Sm, S, M), prop(No, M, P), prop(SomeNot, S, P)),
    scheme!("Camestres", 2, prop(No, S, M), prop(All, P, M), prop(No, S, P)),
    scheme!("Cesare", 2, prop(All, S, M), prop(No, P, M), prop(No, S, P)),
    scheme!("Baroco", 2, prop(SomeNot, S, M), prop(All, P, M), prop(SomeNot, S, P)),
    scheme!("Festino", 2, prop(Sm, S, M), prop(No, P, M), prop(SomeNot, S, P)),
    scheme!("Disamis", 3, prop(All, M, S), prop(Sm, M, P), prop(Sm, S, P)),
    scheme!("Datisi", 3, prop(Sm, M, S), prop(All, M, P), prop(Sm, S, P)),
    scheme!("Ferison", 3, prop(Sm, M, S), prop(No, M, P), prop(SomeNot, S, P)),
    scheme!("Bokardo", 3, prop(All, M, S), prop(SomeNot, M, P), prop(SomeNot, S, P)),
    scheme!("Dimaris", 4, prop(All, M, S), prop(Sm, P, M), prop(Sm, S, P)),
    scheme!("Camenes", 4, prop(No, M, S), prop(All, P, M), prop(No, S, P)),
    scheme!("Fresison", 4, prop(Sm, M, S), prop(No, P, M), prop(SomeNot, S, P)),
];

impl SyllogisticScheme {
    /// Mood letters in the traditional major–minor–conclusion order, e.g. `"EAE"`.
    pub fn mood(&self) -> String {
        [self.major, self.minor, self.conclusion].iter().map(|p| p.quantifier.letter()).collect()
    }

    /// `MOOD-FIGURE`, e.g. `"AAA-1"`.
    pub fn id(&self) -> String {
        format!("{}-{}", self.mood(), self.figure)
    }

    /// Premises as rendered with letters `A` (s), `B` (m), `C` (p).
    pub fn premise_templates(&self) -> [String; 2] {
        [letter_sentence(self.minor, true), letter_sentence(self.major, true)]
    }

    /// Conclusion as rendered with letters, final term removed.
    pub fn conclusion_template(&self) -> String {
        let full = letter_sentence(self.conclusion, false);
        let cut = full.rfind(' ').expect("conclusion has several words");
        format!("Therefore, {}", &full[..cut])
    }

    pub fn all() -> &'static [SyllogisticScheme] {
        &SCHEMES
    }

    /// Look up by id (`AAA-1`) or name (`Barbara`), case-insensitively.
    pub fn lookup(key: &str) -> Result<SyllogisticScheme> {
        let key = key.trim();
        let key = if key.eq_ignore_ascii_case("bocardo") { "Bokardo" } else { key };
        SCHEMES
            .iter()
            .find(|s| s.id().eq_ignore_ascii_case(key) || s.name.eq_ignore_ascii_case(key))
            .copied()
            .ok_or_else(|| Error::UnknownScheme(key.to_string()))
    }
}

fn letter_sentence(p: Proposition, capital: bool) -> String {
    let letter = |t: Term| match t {
        S => "A",
        M => "B",
        P => "C",
    };
    let (q, tail) = match p.quantifier {
        All => ("All", ""),
        No => ("No", ""),
        Sm => ("Some", ""),
        SomeNot => ("Some", " not"),
    };
    let q = if capital { q.to_string() } else { q.to_lowercase() };
    format!("{q} {} are{tail} {}.", letter(p.subject), letter(p.predicate))
}

impl fmt::Display for SyllogisticScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for SyllogisticScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::lookup(s)
    }
}

impl Serialize for SyllogisticScheme {
    fn serialize<Ser: serde::Serializer>(&self, ser: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        ser.serialize_str(&self.id())
    }
}

impl<'de> Deserialize<'de> for SyllogisticScheme {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let key = String::deserialize(de)?;
        Self::lookup(&key).map_err(serde::de::Error::custom)
    }
}
