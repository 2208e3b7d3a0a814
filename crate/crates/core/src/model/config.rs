use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// tanh approximation used by GPT-2 ("gelu_new").
    Gelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub ln_epsilon: f32,
    pub activation: Activation,
}

impl ModelConfig {
    /// GPT-2 medium (345M).
    pub fn gpt2_medium() -> Self {
        Self::gpt2_like(24, 16, 1024)
    }

    pub fn gpt2_like(n_layers: usize, n_heads: usize, d_model: usize) -> Self {
        ModelConfig {
            n_layers,
            n_heads,
            d_model,
            d_head: d_model / n_heads,
            d_mlp: 4 * d_model,
            vocab_size: 50257,
            max_positions: 1024,
            ln_epsilon: 1e-5,
            activation: Activation::Gelu,
        }
    }

    /// Head count of the public GPT-2 checkpoints, keyed by hidden size.
    pub fn gpt2_heads_for_width(d_model: usize) -> Option<usize> {
        match d_model {
            768 => Some(12),
            1024 => Some(16),
            1280 => Some(20),
            1600 => Some(25),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_head", self.d_head),
            ("d_mlp", self.d_mlp),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_heads * self.d_head != self.d_model {
            return Err(Error::Config(format!(
                "d_model {} != n_heads {} x d_head {}",
                self.d_model, self.n_heads, self.d_head
            )));
        }
        if !(self.ln_epsilon > 0.0 && self.ln_epsilon.is_finite()) {
            return Err(Error::Config("ln_epsilon must be a positive finite number".into()));
        }
        Ok(())
    }

    pub fn total_heads(&self) -> usize {
        self.n_layers * self.n_heads
    }
}

/// Subset of a Hugging Face `config.json` for GPT-2 checkpoints.
#[derive(Debug, Deserialize)]
pub(crate) struct HfGpt2Config {
    pub n_layer: usize,
    pub n_head: usize,
    pub n_embd: usize,
    #[serde(default)]
    pub n_positions: Option<usize>,
    #[serde(default)]
    pub vocab_size: Option<usize>,
    #[serde(default)]
    pub n_inner: Option<usize>,
    #[serde(default)]
    pub layer_norm_epsilon: Option<f32>,
}

impl HfGpt2Config {
    pub fn to_config(&self) -> ModelConfig {
        let mut cfg = ModelConfig::gpt2_like(self.n_layer, self.n_head, self.n_embd);
        if let Some(p) = self.n_positions {
            cfg.max_positions = p;
        }
        if let Some(v) = self.vocab_size {
            cfg.vocab_size = v;
        }
        if let Some(i) = self.n_inner {
            cfg.d_mlp = i;
        }
        if let Some(e) = self.layer_norm_epsilon {
            cfg.ln_epsilon = e;
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medium_dimensions() {
        let c = ModelConfig::gpt2_medium();
        assert_eq!((c.n_layers, c.n_heads, c.d_model, c.d_head), (24, 16, 1024, 64));
        assert_eq!(c.total_heads(), 384);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_inconsistent_head_split() {
        let mut c = ModelConfig::gpt2_like(2, 2, 8);
        c.d_head = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::gpt2_like(2, 2, 8);
        c.ln_epsilon = 0.0;
        assert!(c.validate().is_err());
    }
}
