use ndarray::{Array2, Array3, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Every intermediate activation of one forward pass, recorded after any
/// hook replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCache {
    pub tokens: Vec<u32>,
    /// Per layer, `N × D`.
    pub resid_pre: Vec<Array2<f32>>,
    pub resid_mid: Vec<Array2<f32>>,
    pub resid_post: Vec<Array2<f32>>,
    /// Per layer, `H × N × N` post-softmax weights (query × key).
    pub pattern: Vec<Array3<f32>>,
    /// Per layer, `H × N × d`.
    pub value: Vec<Array3<f32>>,
    /// Per layer, `H × N × D`; excludes the output bias.
    pub head_out: Vec<Array3<f32>>,
    pub mlp_out: Vec<Array2<f32>>,
    /// Final layer-normed residual, `N × D`.
    pub final_ln: Array2<f32>,
    /// `N × |V|`.
    pub logits: Array2<f32>,
}

impl ActivationCache {
    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn n_layers(&self) -> usize {
        self.resid_pre.len()
    }

    pub fn pattern(&self, layer: usize, head: usize) -> ArrayView2<'_, f32> {
        self.pattern[layer].index_axis(ndarray::Axis(0), head)
    }

    pub fn value(&self, layer: usize, head: usize) -> ArrayView2<'_, f32> {
        self.value[layer].index_axis(ndarray::Axis(0), head)
    }

    pub fn head_out(&self, layer: usize, head: usize) -> ArrayView2<'_, f32> {
        self.head_out[layer].index_axis(ndarray::Axis(0), head)
    }

    pub fn logits_at(&self, position: usize) -> ArrayView1<'_, f32> {
        self.logits.row(position)
    }

    pub fn logit(&self, position: usize, token: u32) -> Result<f32> {
        if token as usize >= self.logits.ncols() {
            return Err(Error::TokenOutOfVocab(token));
        }
        Ok(self.logits[[position, token as usize]])
    }

    pub fn last_position(&self) -> usize {
        self.n_tokens().saturating_sub(1)
    }
}
