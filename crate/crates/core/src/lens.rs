//! Input-independent view of a head's OV circuit in token space.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, HeadId, ModelBundle, Tokenizer};

/// `W_E[src] · W_V^h · W_O^h · W_U[:, dst]` over a token subset; rows are
/// source tokens, columns output tokens. Layer norm and biases are left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensMatrix {
    pub head: HeadId,
    pub tokens: Vec<u32>,
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

impl LensMatrix {
    pub fn to_array(&self) -> Array2<f64> {
        let n = self.tokens.len();
        Array2::from_shape_fn((n, n), |(i, j)| self.matrix[i][j])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Square table with a header row of output-token labels.
    pub fn to_csv(&self) -> String {
        let quote = |s: &str| format!("\"{}\"", s.replace('"', "\"\""));
        let mut out = String::from("source");
        for l in &self.labels {
            let _ = write!(out, ",{}", quote(l));
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.matrix) {
            out.push_str(&quote(l));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Token ids of `" A"` … `" Z"`.
pub fn letter_tokens(tokenizer: &Tokenizer) -> Result<Vec<u32>> {
    crate::datasets::letters().iter().map(|l| tokenizer.single_token(l)).collect()
}

pub fn ov_lens(bundle: &ModelBundle, head: HeadId, vocab_subset: &[u32]) -> Result<LensMatrix> {
    bundle.check_head(head.layer, head.head)?;
    if vocab_subset.is_empty() {
        return Err(Error::Empty("vocabulary subset"));
    }
    let d = bundle.config.d_model;
    let mut emb = Array2::<f32>::zeros((vocab_subset.len(), d));
    for (i, &t) in vocab_subset.iter().enumerate() {
        emb.row_mut(i).assign(&bundle.unembed_column(t)?);
    }
    let ov = emb.dot(&bundle.w_v_head(head.layer, head.head)).dot(&bundle.w_o_head(head.layer, head.head));
    let mut matrix = Vec::with_capacity(vocab_subset.len());
    for src in ov.rows() {
        let row = vocab_subset
            .iter()
            .map(|&t| Ok(dot(src, bundle.unembed_column(t)?) as f64))
            .collect::<Result<Vec<f64>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("lens of head {head}")));
        }
        matrix.push(row);
    }
    let labels = vocab_subset
        .iter()
        .map(|&t| bundle.tokenizer.token_str(t))
        .collect::<Result<Vec<String>>>()?;
    Ok(LensMatrix { head, tokens: vocab_subset.to_vec(), labels, matrix })
}

/// `mean(diagonal) − mean(off-diagonal)`; negative means the head lowers
/// the logit of the token it reads.
pub fn diagonal_score(lens: &LensMatrix) -> Result<f64> {
    let n = lens.matrix.len();
    if n < 2 || lens.matrix.iter().any(|r| r.len() != n) {
        return Err(Error::Dataset("diagonal score needs a square matrix of size ≥ 2".into()));
    }
    let mut diag = 0.0;
    let mut off = 0.0;
    for (i, row) in lens.matrix.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i == j {
                diag += v;
            } else {
                off += v;
            }
        }
    }
    Ok(diag / n as f64 - off / (n * (n - 1)) as f64)
}
