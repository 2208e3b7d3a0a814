//! Byte-level BPE compatible with the original GPT-2 encoder.

use std::collections::HashMap;
use std::path::Path;

use regex::Regex;

use crate::error::{Error, Result};

const PRETOKENIZE: &str = r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+";

const BUNDLED_VOCAB: &str = include_str!("../../assets/gpt2/vocab.json");
const BUNDLED_MERGES: &str = include_str!("../../assets/gpt2/merges.txt");

#[derive(Debug, Clone)]
pub struct Tokenizer {
    encoder: HashMap<String, u32>,
    decoder: Vec<String>,
    ranks: HashMap<(String, String), usize>,
    byte_to_char: [char; 256],
    char_to_byte: HashMap<char, u8>,
    pattern: Regex,
}

/// The reversible byte → printable-unicode map used by GPT-2.
fn bytes_to_unicode() -> [char; 256] {
    let mut printable: Vec<u32> = (b'!' as u32..=b'~' as u32)
        .chain(0xA1..=0xAC)
        .chain(0xAE..=0xFF)
        .collect();
    let mut mapped = printable.clone();
    let mut extra = 0u32;
    for b in 0..256u32 {
        if !printable.contains(&b) {
            printable.push(b);
            mapped.push(256 + extra);
            extra += 1;
        }
    }
    let mut table = ['\0'; 256];
    for (b, c) in printable.into_iter().zip(mapped) {
        table[b as usize] = char::from_u32(c).expect("valid code point");
    }
    table
}

impl Tokenizer {
    pub fn from_files(vocab: impl AsRef<Path>, merges: impl AsRef<Path>) -> Result<Self> {
        let vocab = vocab.as_ref();
        let merges = merges.as_ref();
        let vocab_text = std::fs::read_to_string(vocab).map_err(|e| Error::io(vocab, e))?;
        let merges_text = std::fs::read_to_string(merges).map_err(|e| Error::io(merges, e))?;
        Self::from_strs(&vocab_text, &merges_text)
    }

    /// The GPT-2 vocabulary and merge table shipped with the crate.
    pub fn gpt2() -> Self {
        Self::from_strs(BUNDLED_VOCAB, BUNDLED_MERGES).expect("bundled tokenizer is valid")
    }

    pub fn from_strs(vocab_json: &str, merges_txt: &str) -> Result<Self> {
        let encoder: HashMap<String, u32> = serde_json::from_str(vocab_json)
            .map_err(|e| Error::Tokenizer(format!("vocab is not a string→id JSON map: {e}")))?;
        if encoder.is_empty() {
            return Err(Error::Tokenizer("empty vocabulary".into()));
        }
        let size = encoder.values().max().copied().unwrap_or(0) as usize + 1;
        let mut decoder = vec![String::new(); size];
        for (tok, &id) in &encoder {
            decoder[id as usize] = tok.clone();
        }

        let mut ranks = HashMap::new();
        for line in merges_txt.lines() {
            if line.starts_with("#version") || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) => {
                    let rank = ranks.len();
                    ranks.entry((a.to_string(), b.to_string())).or_insert(rank);
                }
                _ => return Err(Error::Tokenizer(format!("malformed merge line `{line}`"))),
            }
        }

        let byte_to_char = bytes_to_unicode();
        let char_to_byte = byte_to_char
            .iter()
            .enumerate()
            .map(|(b, &c)| (c, b as u8))
            .collect();

        Ok(Tokenizer {
            encoder,
            decoder,
            ranks,
            byte_to_char,
            char_to_byte,
            pattern: Regex::new(PRETOKENIZE).expect("static pattern"),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.decoder.len()
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.encoder.get(token).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for piece in self.pretokenize(text) {
            let mapped: String = piece.bytes().map(|b| self.byte_to_char[b as usize]).collect();
            for sym in self.bpe(&mapped) {
                // Every single byte symbol is in the GPT-2 vocab, so lookups of
                // merge results cannot miss for a consistent vocab/merges pair.
                if let Some(&id) = self.encoder.get(&sym) {
                    ids.push(id);
                } else {
                    ids.extend(sym.chars().filter_map(|c| self.encoder.get(&c.to_string())));
                }
            }
        }
        ids
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            let tok = self
                .decoder
                .get(id as usize)
                .filter(|t| !t.is_empty())
                .ok_or(Error::TokenOutOfVocab(id))?;
            for c in tok.chars() {
                let b = self
                    .char_to_byte
                    .get(&c)
                    .ok_or_else(|| Error::Tokenizer(format!("token {id} has unmapped char {c:?}")))?;
                bytes.push(*b);
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Surface string of a single token.
    pub fn token_str(&self, id: u32) -> Result<String> {
        self.decode(&[id])
    }

    /// Encode `term` and return its id if it is exactly one token.
    pub fn single_token(&self, term: &str) -> Result<u32> {
        match self.encode(term).as_slice() {
            [id] => Ok(*id),
            _ => Err(Error::MultiToken(term.to_string())),
        }
    }

    /// Split into pre-tokens. Emulates the `\s+(?!\S)` branch of the reference
    /// pattern: a whitespace run followed by a non-space gives up its last char
    /// so the next word can carry a leading space.
    fn pretokenize<'t>(&self, text: &'t str) -> Vec<&'t str> {
        let mut out = Vec::new();
        let mut at = 0;
        while at < text.len() {
            let Some(m) = self.pattern.find_at(text, at) else { break };
            let piece = m.as_str();
            let mut end = m.end();
            if end < text.len() && piece.chars().all(char::is_whitespace) {
                let last = piece.chars().next_back().map_or(0, char::len_utf8);
                if piece.len() > last {
                    end -= last;
                }
            }
            out.push(&text[m.start()..end]);
            at = end;
        }
        out
    }

    fn bpe(&self, word: &str) -> Vec<String> {
        let mut parts: Vec<String> = word.chars().map(String::from).collect();
        while parts.len() > 1 {
            let best = parts
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    self.ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&r| (r, i))
                })
                .min();
            let Some((_, at)) = best else { break };
            let (first, second) = (parts[at].clone(), parts[at + 1].clone());
            let mut merged = Vec::with_capacity(parts.len());
            let mut i = 0;
            while i < parts.len() {
                if i + 1 < parts.len() && parts[i] == first && parts[i + 1] == second {
                    merged.push(format!("{first}{second}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut parts[i]));
                    i += 1;
                }
            }
            parts = merged;
        }
        parts
    }
}
