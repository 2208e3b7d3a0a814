use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use super::config::{HfGpt2Config, ModelConfig};
use super::tokenizer::Tokenizer;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LayerNormWeights {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
}

/// One transformer block. Matrices use the row-vector convention (`x · W`),
/// so the GPT-2 in×out storage layout is used as-is.
#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub ln1: LayerNormWeights,
    /// `D × D`; head `h` owns columns `h·d .. (h+1)·d`.
    pub w_q: Array2<f32>,
    pub w_k: Array2<f32>,
    pub w_v: Array2<f32>,
    pub b_q: Array1<f32>,
    pub b_k: Array1<f32>,
    pub b_v: Array1<f32>,
    /// `D × D`; head `h` owns rows `h·d .. (h+1)·d`.
    pub w_o: Array2<f32>,
    pub b_o: Array1<f32>,
    pub ln2: LayerNormWeights,
    pub w_in: Array2<f32>,
    pub b_in: Array1<f32>,
    pub w_out: Array2<f32>,
    pub b_out: Array1<f32>,
}

/// Immutable model: config, weights and tokenizer. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub config: ModelConfig,
    /// `|V| × D`. The unembedding is its transpose (tied weights).
    pub token_embedding: Array2<f32>,
    pub position_embedding: Array2<f32>,
    pub layers: Vec<LayerWeights>,
    pub ln_final: LayerNormWeights,
    pub tokenizer: Arc<Tokenizer>,
}

impl ModelBundle {
    fn head_cols(&self, head: usize) -> std::ops::Range<usize> {
        let d = self.config.d_head;
        head * d..(head + 1) * d
    }

    pub fn w_q_head(&self, layer: usize, head: usize) -> ArrayView2<'_, f32> {
        self.layers[layer].w_q.slice(s![.., self.head_cols(head)])
    }

    pub fn w_k_head(&self, layer: usize, head: usize) -> ArrayView2<'_, f32> {
        self.layers[layer].w_k.slice(s![.., self.head_cols(head)])
    }

    pub fn w_v_head(&self, layer: usize, head: usize) -> ArrayView2<'_, f32> {
        self.layers[layer].w_v.slice(s![.., self.head_cols(head)])
    }

    pub fn w_o_head(&self, layer: usize, head: usize) -> ArrayView2<'_, f32> {
        self.layers[layer].w_o.slice(s![self.head_cols(head), ..])
    }

    /// `D × |V|` view of the tied unembedding.
    pub fn unembedding(&self) -> ArrayView2<'_, f32> {
        self.token_embedding.t()
    }

    /// Unembedding column for one token (the token's embedding row).
    pub fn unembed_column(&self, token: u32) -> Result<ArrayView1<'_, f32>> {
        if token as usize >= self.config.vocab_size {
            return Err(Error::TokenOutOfVocab(token));
        }
        Ok(self.token_embedding.row(token as usize))
    }

    pub fn check_head(&self, layer: usize, head: usize) -> Result<()> {
        if layer >= self.config.n_layers || head >= self.config.n_heads {
            return Err(Error::InvalidHead { layer, head });
        }
        Ok(())
    }

    /// Check every tensor against the config and for finiteness.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let (dm, v, p, f) = (c.d_model, c.vocab_size, c.max_positions, c.d_mlp);
        if self.layers.len() != c.n_layers {
            return Err(Error::Config(format!(
                "{} layers loaded, config says {}",
                self.layers.len(),
                c.n_layers
            )));
        }
        check2("wte", &self.token_embedding, [v, dm])?;
        check2("wpe", &self.position_embedding, [p, dm])?;
        check_ln("ln_f", &self.ln_final, dm)?;
        for (l, w) in self.layers.iter().enumerate() {
            let n = |t: &str| format!("h.{l}.{t}");
            check_ln(&n("ln_1"), &w.ln1, dm)?;
            check_ln(&n("ln_2"), &w.ln2, dm)?;
            check2(&n("w_q"), &w.w_q, [dm, dm])?;
            check2(&n("w_k"), &w.w_k, [dm, dm])?;
            check2(&n("w_v"), &w.w_v, [dm, dm])?;
            check2(&n("attn.c_proj.weight"), &w.w_o, [dm, dm])?;
            check2(&n("mlp.c_fc.weight"), &w.w_in, [dm, f])?;
            check2(&n("mlp.c_proj.weight"), &w.w_out, [f, dm])?;
            check1(&n("b_q"), &w.b_q, dm)?;
            check1(&n("b_k"), &w.b_k, dm)?;
            check1(&n("b_v"), &w.b_v, dm)?;
            check1(&n("attn.c_proj.bias"), &w.b_o, dm)?;
            check1(&n("mlp.c_fc.bias"), &w.b_in, f)?;
            check1(&n("mlp.c_proj.bias"), &w.b_out, dm)?;
        }
        Ok(())
    }

    /// Randomly initialised GPT-2-shaped model for tests and benchmarks.
    pub fn random(config: ModelConfig, tokenizer: Arc<Tokenizer>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dm, f) = (config.d_model, config.d_mlp);
        let attn = 1.0 / (dm as f32).sqrt();
        let mat = |r: usize, c: usize, scale: f32, rng: &mut ChaCha8Rng| {
            Array2::from_shape_simple_fn((r, c), || rng.gen_range(-scale..scale))
        };
        let token_embedding = mat(config.vocab_size, dm, 0.5, &mut rng);
        let position_embedding = mat(config.max_positions, dm, 0.5, &mut rng);
        let vec = |n: usize, center: f32, spread: f32, rng: &mut ChaCha8Rng| {
            Array1::from_shape_simple_fn(n, || center + rng.gen_range(-spread..spread))
        };
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(LayerWeights {
                ln1: LayerNormWeights {
                    gamma: vec(dm, 1.0, 0.1, &mut rng),
                    beta: vec(dm, 0.0, 0.1, &mut rng),
                },
                w_q: mat(dm, dm, 3.0 * attn, &mut rng),
                w_k: mat(dm, dm, 3.0 * attn, &mut rng),
                w_v: mat(dm, dm, 1.5 * attn, &mut rng),
                b_q: vec(dm, 0.0, 0.1, &mut rng),
                b_k: vec(dm, 0.0, 0.1, &mut rng),
                b_v: vec(dm, 0.0, 0.1, &mut rng),
                w_o: mat(dm, dm, 1.5 * attn, &mut rng),
                b_o: vec(dm, 0.0, 0.1, &mut rng),
                ln2: LayerNormWeights {
                    gamma: vec(dm, 1.0, 0.1, &mut rng),
                    beta: vec(dm, 0.0, 0.1, &mut rng),
                },
                w_in: mat(dm, f, 1.5 * attn, &mut rng),
                b_in: vec(f, 0.0, 0.1, &mut rng),
                w_out: mat(f, dm, 1.5 / (f as f32).sqrt(), &mut rng),
                b_out: vec(dm, 0.0, 0.1, &mut rng),
            });
        }
        let ln_final = LayerNormWeights {
            gamma: vec(dm, 1.0, 0.1, &mut rng),
            beta: vec(dm, 0.0, 0.1, &mut rng),
        };
        let bundle = ModelBundle {
            config,
            token_embedding,
            position_embedding,
            layers,
            ln_final,
            tokenizer,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

fn check2(name: &str, a: &Array2<f32>, expected: [usize; 2]) -> Result<()> {
    if a.shape() != expected {
        return Err(Error::ShapeMismatch {
            name: name.into(),
            expected: expected.to_vec(),
            found: a.shape().to_vec(),
        });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(name.into()));
    }
    Ok(())
}

fn check1(name: &str, a: &Array1<f32>, len: usize) -> Result<()> {
    if a.len() != len {
        return Err(Error::ShapeMismatch {
            name: name.into(),
            expected: vec![len],
            found: a.shape().to_vec(),
        });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(name.into()));
    }
    Ok(())
}

fn check_ln(name: &str, ln: &LayerNormWeights, d: usize) -> Result<()> {
    check1(&format!("{name}.weight"), &ln.gamma, d)?;
    check1(&format!("{name}.bias"), &ln.beta, d)
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

struct TensorSource<'a> {
    st: SafeTensors<'a>,
    prefix: &'static str,
}

impl<'a> TensorSource<'a> {
    fn raw(&self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let full = format!("{}{}", self.prefix, name);
        let view = self
            .st
            .tensor(&full)
            .map_err(|_| Error::MissingTensor(full.clone()))?;
        let data = to_f32(&full, &view)?;
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(full));
        }
        Ok((view.shape().to_vec(), data))
    }

    fn shape(&self, name: &str) -> Result<Vec<usize>> {
        let full = format!("{}{}", self.prefix, name);
        self.st
            .tensor(&full)
            .map(|v| v.shape().to_vec())
            .map_err(|_| Error::MissingTensor(full))
    }

    fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Array2<f32>> {
        let (shape, data) = self.raw(name)?;
        if shape != [rows, cols] {
            return Err(Error::ShapeMismatch {
                name: format!("{}{}", self.prefix, name),
                expected: vec![rows, cols],
                found: shape,
            });
        }
        Ok(Array2::from_shape_vec((rows, cols), data).expect("shape checked"))
    }

    fn vector(&self, name: &str, len: usize) -> Result<Array1<f32>> {
        let (shape, data) = self.raw(name)?;
        if shape != [len] {
            return Err(Error::ShapeMismatch {
                name: format!("{}{}", self.prefix, name),
                expected: vec![len],
                found: shape,
            });
        }
        Ok(Array1::from_vec(data))
    }

    fn layer_norm(&self, name: &str, d: usize) -> Result<LayerNormWeights> {
        Ok(LayerNormWeights {
            gamma: self.vector(&format!("{name}.weight"), d)?,
            beta: self.vector(&format!("{name}.bias"), d)?,
        })
    }
}

fn to_f32(name: &str, view: &TensorView<'_>) -> Result<Vec<f32>> {
    let bytes = view.data();
    let out = match view.dtype() {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        Dtype::F16 => bytes
            .chunks_exact(2)
            .map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect(),
        Dtype::BF16 => bytes
            .chunks_exact(2)
            .map(|c| half::bf16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as f32)
            .collect(),
        other => {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has unsupported dtype {other:?}"
            )))
        }
    };
    Ok(out)
}

/// Load a GPT-2-family checkpoint plus GPT-2 tokenizer files.
///
/// The architecture comes from a `config.json` next to the checkpoint when
/// present, then from checkpoint metadata (`n_head`, `layer_norm_epsilon`),
/// and otherwise is inferred from tensor shapes using the public GPT-2 widths.
pub fn load_bundle(
    checkpoint: impl AsRef<Path>,
    vocab: impl AsRef<Path>,
    merges: impl AsRef<Path>,
) -> Result<ModelBundle> {
    let tokenizer = Tokenizer::from_files(vocab, merges)?;
    load_bundle_with_tokenizer(checkpoint, Arc::new(tokenizer))
}

pub fn load_bundle_with_tokenizer(
    checkpoint: impl AsRef<Path>,
    tokenizer: Arc<Tokenizer>,
) -> Result<ModelBundle> {
    let path = checkpoint.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let sibling = path.with_file_name("config.json");
    let hf_config = if sibling.is_file() {
        let text = std::fs::read_to_string(&sibling).map_err(|e| Error::io(&sibling, e))?;
        let hf: HfGpt2Config = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", sibling.display())))?;
        Some(hf.to_config())
    } else {
        None
    };
    bundle_from_bytes(&bytes, hf_config, tokenizer)
}

/// Parse an in-memory checkpoint. `config` overrides any inference.
pub fn bundle_from_bytes(
    bytes: &[u8],
    config: Option<ModelConfig>,
    tokenizer: Arc<Tokenizer>,
) -> Result<ModelBundle> {
    let (_, meta) = SafeTensors::read_metadata(bytes)
        .map_err(|e| Error::Checkpoint(format!("unreadable header: {e}")))?;
    let st = SafeTensors::deserialize(bytes)
        .map_err(|e| Error::Checkpoint(format!("unreadable container: {e}")))?;
    let prefix = if st.tensor("wte.weight").is_ok() {
        ""
    } else if st.tensor("transformer.wte.weight").is_ok() {
        "transformer."
    } else {
        return Err(Error::MissingTensor("wte.weight".into()));
    };
    let src = TensorSource { st, prefix };

    let config = match config {
        Some(c) => c,
        None => infer_config(&src, meta.metadata().as_ref())?,
    };
    config.validate()?;
    let (dm, f) = (config.d_model, config.d_mlp);

    let token_embedding = src.matrix("wte.weight", config.vocab_size, dm)?;
    let position_embedding = src.matrix("wpe.weight", config.max_positions, dm)?;
    let mut layers = Vec::with_capacity(config.n_layers);
    for l in 0..config.n_layers {
        let n = |t: &str| format!("h.{l}.{t}");
        let qkv = src.matrix(&n("attn.c_attn.weight"), dm, 3 * dm)?;
        let qkv_b = src.vector(&n("attn.c_attn.bias"), 3 * dm)?;
        layers.push(LayerWeights {
            ln1: src.layer_norm(&n("ln_1"), dm)?,
            w_q: qkv.slice(s![.., 0..dm]).to_owned(),
            w_k: qkv.slice(s![.., dm..2 * dm]).to_owned(),
            w_v: qkv.slice(s![.., 2 * dm..3 * dm]).to_owned(),
            b_q: qkv_b.slice(s![0..dm]).to_owned(),
            b_k: qkv_b.slice(s![dm..2 * dm]).to_owned(),
            b_v: qkv_b.slice(s![2 * dm..3 * dm]).to_owned(),
            w_o: src.matrix(&n("attn.c_proj.weight"), dm, dm)?,
            b_o: src.vector(&n("attn.c_proj.bias"), dm)?,
            ln2: src.layer_norm(&n("ln_2"), dm)?,
            w_in: src.matrix(&n("mlp.c_fc.weight"), dm, f)?,
            b_in: src.vector(&n("mlp.c_fc.bias"), f)?,
            w_out: src.matrix(&n("mlp.c_proj.weight"), f, dm)?,
            b_out: src.vector(&n("mlp.c_proj.bias"), dm)?,
        });
    }
    let ln_final = src.layer_norm("ln_f", dm)?;

    // An explicit LM head must be the tied embedding.
    if let Ok(view) = src.st.tensor("lm_head.weight") {
        let head = to_f32("lm_head.weight", &view)?;
        let tied = token_embedding.as_slice().expect("standard layout");
        if view.shape() != [config.vocab_size, dm] || head.as_slice() != tied {
            return Err(Error::Checkpoint(
                "lm_head.weight is not tied to the token embedding".into(),
            ));
        }
    }

    let bundle = ModelBundle {
        config,
        token_embedding,
        position_embedding,
        layers,
        ln_final,
        tokenizer,
    };
    bundle.validate()?;
    Ok(bundle)
}

fn infer_config(src: &TensorSource<'_>, meta: Option<&HashMap<String, String>>) -> Result<ModelConfig> {
    let wte = src.shape("wte.weight")?;
    let wpe = src.shape("wpe.weight")?;
    if wte.len() != 2 || wpe.len() != 2 {
        return Err(Error::Checkpoint("embeddings must be 2-D".into()));
    }
    let d_model = wte[1];
    let mut n_layers = 0;
    while src.shape(&format!("h.{n_layers}.ln_1.weight")).is_ok() {
        n_layers += 1;
    }
    let fc = src.shape("h.0.mlp.c_fc.weight")?;
    let meta_heads = meta
        .and_then(|m| m.get("n_head"))
        .and_then(|v| v.parse::<usize>().ok());
    let n_heads = meta_heads
        .or_else(|| ModelConfig::gpt2_heads_for_width(d_model))
        .ok_or_else(|| {
            Error::Config(format!(
                "cannot infer head count for width {d_model}; provide config.json"
            ))
        })?;
    let eps = meta
        .and_then(|m| m.get("layer_norm_epsilon"))
        .and_then(|v| v.parse::<f32>().ok())
        .unwrap_or(1e-5);
    let mut cfg = ModelConfig::gpt2_like(n_layers, n_heads, d_model);
    cfg.vocab_size = wte[0];
    cfg.max_positions = wpe[0];
    cfg.d_mlp = *fc.get(1).unwrap_or(&0);
    cfg.ln_epsilon = eps;
    Ok(cfg)
}

/// Serialise a bundle with standard GPT-2 tensor names (fused qkv, in×out
/// layout). Architecture details not recoverable from shapes go in metadata.
pub fn checkpoint_bytes(bundle: &ModelBundle) -> Result<Vec<u8>> {
    let dm = bundle.config.d_model;
    let mut tensors: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, data: Vec<f32>| {
        let bytes: Vec<u8> = data.iter().flat_map(|x| x.to_le_bytes()).collect();
        tensors.push((name, shape, bytes));
    };
    let flat2 = |a: &Array2<f32>| a.iter().copied().collect::<Vec<f32>>();
    let flat1 = |a: &Array1<f32>| a.to_vec();

    push("wte.weight".into(), bundle.token_embedding.shape().to_vec(), flat2(&bundle.token_embedding));
    push("wpe.weight".into(), bundle.position_embedding.shape().to_vec(), flat2(&bundle.position_embedding));
    for (l, w) in bundle.layers.iter().enumerate() {
        let n = |t: &str| format!("h.{l}.{t}");
        push(n("ln_1.weight"), vec![dm], flat1(&w.ln1.gamma));
        push(n("ln_1.bias"), vec![dm], flat1(&w.ln1.beta));
        let qkv = ndarray::concatenate(Axis(1), &[w.w_q.view(), w.w_k.view(), w.w_v.view()])
            .expect("matching rows");
        push(n("attn.c_attn.weight"), vec![dm, 3 * dm], flat2(&qkv));
        let qkv_b = ndarray::concatenate(Axis(0), &[w.b_q.view(), w.b_k.view(), w.b_v.view()])
            .expect("vectors");
        push(n("attn.c_attn.bias"), vec![3 * dm], flat1(&qkv_b));
        push(n("attn.c_proj.weight"), vec![dm, dm], flat2(&w.w_o));
        push(n("attn.c_proj.bias"), vec![dm], flat1(&w.b_o));
        push(n("ln_2.weight"), vec![dm], flat1(&w.ln2.gamma));
        push(n("ln_2.bias"), vec![dm], flat1(&w.ln2.beta));
        push(n("mlp.c_fc.weight"), w.w_in.shape().to_vec(), flat2(&w.w_in));
        push(n("mlp.c_fc.bias"), vec![w.b_in.len()], flat1(&w.b_in));
        push(n("mlp.c_proj.weight"), w.w_out.shape().to_vec(), flat2(&w.w_out));
        push(n("mlp.c_proj.bias"), vec![dm], flat1(&w.b_out));
    }
    push("ln_f.weight".into(), vec![dm], flat1(&bundle.ln_final.gamma));
    push("ln_f.bias".into(), vec![dm], flat1(&bundle.ln_final.beta));

    let views: Vec<(String, TensorView<'_>)> = tensors
        .iter()
        .map(|(name, shape, data)| {
            let view = TensorView::new(Dtype::F32, shape.clone(), data)
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            Ok((name.clone(), view))
        })
        .collect::<Result<_>>()?;
    let metadata: HashMap<String, String> = [
        ("n_head".to_string(), bundle.config.n_heads.to_string()),
        ("layer_norm_epsilon".to_string(), bundle.config.ln_epsilon.to_string()),
    ]
    .into_iter()
    .collect();
    safetensors::serialize(views, &Some(metadata))
        .map_err(|e| Error::Checkpoint(format!("serialisation failed: {e}")))
}

pub fn save_checkpoint(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(bundle)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ModelBundle {
        let mut cfg = ModelConfig::gpt2_like(2, 2, 8);
        cfg.vocab_size = 40;
        cfg.max_positions = 12;
        ModelBundle::random(cfg, Arc::new(Tokenizer::gpt2()), 7).unwrap()
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let b = toy();
        let bytes = checkpoint_bytes(&b).unwrap();
        let back = bundle_from_bytes(&bytes, None, b.tokenizer.clone()).unwrap();
        assert_eq!(back.config, b.config);
        assert_eq!(back.token_embedding, b.token_embedding);
        for (x, y) in back.layers.iter().zip(&b.layers) {
            assert_eq!(x.w_q, y.w_q);
            assert_eq!(x.w_v, y.w_v);
            assert_eq!(x.b_k, y.b_k);
            assert_eq!(x.w_out, y.w_out);
        }
    }

    #[test]
    fn per_head_slices_reassemble_fused_qkv() {
        let b = toy();
        let bytes = checkpoint_bytes(&b).unwrap();
        let st = SafeTensors::deserialize(&bytes).unwrap();
        let fused = to_f32("qkv", &st.tensor("h.1.attn.c_attn.weight").unwrap()).unwrap();
        let dm = b.config.d_model;
        let fused = Array2::from_shape_vec((dm, 3 * dm), fused).unwrap();
        let mut parts = Vec::new();
        for get in [ModelBundle::w_q_head, ModelBundle::w_k_head, ModelBundle::w_v_head] {
            for h in 0..b.config.n_heads {
                parts.push(get(&b, 1, h));
            }
        }
        let rebuilt = ndarray::concatenate(Axis(1), &parts).unwrap();
        assert_eq!(rebuilt, fused);
    }

    #[test]
    fn missing_final_norm_is_reported() {
        let b = toy();
        let bytes = checkpoint_bytes(&b).unwrap();
        let st = SafeTensors::deserialize(&bytes).unwrap();
        let kept: Vec<(String, TensorView<'_>)> = st
            .tensors()
            .into_iter()
            .filter(|(n, _)| !n.starts_with("ln_f"))
            .collect();
        let meta: HashMap<String, String> = [("n_head".to_string(), "2".to_string())].into();
        let stripped = safetensors::serialize(kept, &Some(meta)).unwrap();
        let err = bundle_from_bytes(&stripped, None, b.tokenizer.clone()).unwrap_err();
        assert!(matches!(err, Error::MissingTensor(ref n) if n.starts_with("ln_f")), "{err}");
        assert!(err.to_string().contains("missing tensor"));
    }

    #[test]
    fn shape_mismatch_against_config() {
        let b = toy();
        let bytes = checkpoint_bytes(&b).unwrap();
        let mut cfg = b.config.clone();
        cfg.d_mlp += 1;
        let err = bundle_from_bytes(&bytes, Some(cfg), b.tokenizer.clone()).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut b = toy();
        b.layers[0].b_in[3] = f32::NAN;
        assert!(matches!(b.validate(), Err(Error::NonFinite(_))));
        let bytes = checkpoint_bytes(&b).unwrap();
        let err = bundle_from_bytes(&bytes, None, b.tokenizer.clone()).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
    }

    #[test]
    fn garbage_file_is_a_checkpoint_error() {
        let err = bundle_from_bytes(b"not a container", None, Arc::new(Tokenizer::gpt2()))
            .unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    #[test]
    fn head_count_inferred_for_public_widths() {
        assert_eq!(ModelConfig::gpt2_heads_for_width(1024), Some(16));
        assert_eq!(ModelConfig::gpt2_heads_for_width(100), None);
    }

    #[test]
    fn unembedding_is_tied_transpose() {
        let b = toy();
        let u = b.unembedding();
        assert_eq!(u.shape(), &[8, 40]);
        assert_eq!(u.column(5), b.token_embedding.row(5));
        assert!(b.unembed_column(40).is_err());
    }
}
