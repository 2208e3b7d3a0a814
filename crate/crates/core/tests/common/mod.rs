//! Shared fixtures and a naive f64 reference transformer used as an oracle.
//!
//! The reference reads weights straight from serialized checkpoint bytes
//! (fused `c_attn`, GPT-2 names) and evaluates the network with plain loops,
//! so it shares no arithmetic with the library's forward pass.

#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use safetensors::SafeTensors;
use syllogism_circuits::datasets::{corrupt, generate_symbolic, Intervention, PromptPair, SyllogisticScheme};
use syllogism_circuits::model::{checkpoint_bytes, ModelBundle, ModelConfig, Tokenizer};

pub fn tokenizer() -> Arc<Tokenizer> {
    static TOK: OnceLock<Arc<Tokenizer>> = OnceLock::new();
    TOK.get_or_init(|| Arc::new(Tokenizer::gpt2())).clone()
}

/// Small GPT-2-shaped model with the real vocabulary.
pub fn toy_model(n_layers: usize, n_heads: usize, d_model: usize, seed: u64) -> ModelBundle {
    let mut cfg = ModelConfig::gpt2_like(n_layers, n_heads, d_model);
    cfg.max_positions = 32;
    ModelBundle::random(cfg, tokenizer(), seed).unwrap()
}

pub fn pairs(scheme: &str, intervention: Intervention, n: usize, seed: u64) -> Vec<PromptPair> {
    let tok = tokenizer();
    let scheme = SyllogisticScheme::lookup(scheme).unwrap();
    generate_symbolic(scheme, n, seed, &tok)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, inst)| corrupt(inst, intervention, seed + i as u64, &tok).unwrap())
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

type Mat = Vec<Vec<f64>>;

struct RefLayer {
    ln1: (Vec<f64>, Vec<f64>),
    c_attn: Mat,
    c_attn_b: Vec<f64>,
    c_proj: Mat,
    c_proj_b: Vec<f64>,
    ln2: (Vec<f64>, Vec<f64>),
    fc: Mat,
    fc_b: Vec<f64>,
    proj: Mat,
    proj_b: Vec<f64>,
}

pub struct Reference {
    pub n_heads: usize,
    pub d_model: usize,
    eps: f64,
    wte: Mat,
    wpe: Mat,
    layers: Vec<RefLayer>,
    lnf: (Vec<f64>, Vec<f64>),
}

/// Site of a reference splice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RefSite {
    ResidPre,
    HeadOut(usize),
    HeadValue(usize),
    HeadPattern(usize),
    MlpOut,
}

/// `(site, layer, position) → replacement row`.
pub type Splices = HashMap<(RefSite, usize, usize), Vec<f64>>;

#[derive(Debug, Clone)]
pub struct RefRun {
    /// `[layer][pos][D]`
    pub resid_pre: Vec<Mat>,
    /// `[layer][head][pos][D]`
    pub head_out: Vec<Vec<Mat>>,
    /// `[layer][head][pos][d]`
    pub value: Vec<Vec<Mat>>,
    /// `[layer][head][query][key]`
    pub pattern: Vec<Vec<Mat>>,
    pub mlp_out: Vec<Mat>,
    /// `[pos][V]`
    pub logits: Mat,
}

impl RefRun {
    pub fn last_logits(&self) -> &[f64] {
        self.logits.last().unwrap()
    }

    pub fn delta(&self, answer: u32, distractor: u32) -> f64 {
        let l = self.last_logits();
        l[answer as usize] - l[distractor as usize]
    }
}

fn read(st: &SafeTensors<'_>, name: &str) -> (Vec<usize>, Vec<f64>) {
    let t = st.tensor(name).unwrap_or_else(|_| panic!("{name}"));
    let data = t
        .data()
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    (t.shape().to_vec(), data)
}

fn mat(st: &SafeTensors<'_>, name: &str) -> Mat {
    let (shape, data) = read(st, name);
    data.chunks(shape[1]).map(|r| r.to_vec()).collect()
}

fn vector(st: &SafeTensors<'_>, name: &str) -> Vec<f64> {
    read(st, name).1
}

fn vec_mat(x: &[f64], w: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; w[0].len()];
    for (xi, row) in x.iter().zip(w) {
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
    out
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn layer_norm(x: &[f64], (g, b): &(Vec<f64>, Vec<f64>), eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    x.iter().zip(g).zip(b).map(|((v, g), b)| (v - mean) * inv * g + b).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

impl Reference {
    pub fn new(bundle: &ModelBundle) -> Self {
        let bytes = checkpoint_bytes(bundle).unwrap();
        let st = SafeTensors::deserialize(&bytes).unwrap();
        let n_layers = (0..).take_while(|l| st.tensor(&format!("h.{l}.ln_1.weight")).is_ok()).count();
        let ln = |p: &str| (vector(&st, &format!("{p}.weight")), vector(&st, &format!("{p}.bias")));
        let layers = (0..n_layers)
            .map(|l| {
                let n = |t: &str| format!("h.{l}.{t}");
                RefLayer {
                    ln1: ln(&n("ln_1")),
                    c_attn: mat(&st, &n("attn.c_attn.weight")),
                    c_attn_b: vector(&st, &n("attn.c_attn.bias")),
                    c_proj: mat(&st, &n("attn.c_proj.weight")),
                    c_proj_b: vector(&st, &n("attn.c_proj.bias")),
                    ln2: ln(&n("ln_2")),
                    fc: mat(&st, &n("mlp.c_fc.weight")),
                    fc_b: vector(&st, &n("mlp.c_fc.bias")),
                    proj: mat(&st, &n("mlp.c_proj.weight")),
                    proj_b: vector(&st, &n("mlp.c_proj.bias")),
                }
            })
            .collect();
        Reference {
            n_heads: bundle.config.n_heads,
            d_model: bundle.config.d_model,
            eps: bundle.config.ln_epsilon as f64,
            wte: mat(&st, "wte.weight"),
            wpe: mat(&st, "wpe.weight"),
            layers,
            lnf: ln("ln_f"),
        }
    }

    pub fn run(&self, tokens: &[u32], splices: &Splices) -> RefRun {
        let (n, dm, nh) = (tokens.len(), self.d_model, self.n_heads);
        let d = dm / nh;
        let get = |site: RefSite, layer: usize, pos: usize| splices.get(&(site, layer, pos));
        let mut x: Mat = tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| add(&self.wte[t as usize], &self.wpe[i]))
            .collect();
        let mut run = RefRun {
            resid_pre: vec![],
            head_out: vec![],
            value: vec![],
            pattern: vec![],
            mlp_out: vec![],
            logits: vec![],
        };
        for (l, w) in self.layers.iter().enumerate() {
            for (i, row) in x.iter_mut().enumerate() {
                if let Some(r) = get(RefSite::ResidPre, l, i) {
                    *row = r.clone();
                }
            }
            run.resid_pre.push(x.clone());
            let qkv: Mat = x
                .iter()
                .map(|r| add(&vec_mat(&layer_norm(r, &w.ln1, self.eps), &w.c_attn), &w.c_attn_b))
                .collect();
            let (mut outs, mut values, mut patterns) = (vec![], vec![], vec![]);
            for h in 0..nh {
                let q: Mat = qkv.iter().map(|r| r[h * d..(h + 1) * d].to_vec()).collect();
                let k: Mat = qkv.iter().map(|r| r[dm + h * d..dm + (h + 1) * d].to_vec()).collect();
                let mut v: Mat = qkv.iter().map(|r| r[2 * dm + h * d..2 * dm + (h + 1) * d].to_vec()).collect();
                for (i, row) in v.iter_mut().enumerate() {
                    if let Some(r) = get(RefSite::HeadValue(h), l, i) {
                        *row = r.clone();
                    }
                }
                let mut pat: Mat = vec![vec![0.0; n]; n];
                for i in 0..n {
                    let scores: Vec<f64> = (0..=i)
                        .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
                        .collect();
                    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                    for j in 0..=i {
                        pat[i][j] = (scores[j] - m).exp() / z;
                    }
                    if let Some(r) = get(RefSite::HeadPattern(h), l, i) {
                        pat[i] = r.clone();
                    }
                }
                let wo: Mat = w.c_proj[h * d..(h + 1) * d].to_vec();
                let mut out: Mat = (0..n)
                    .map(|i| {
                        let mut z = vec![0.0; d];
                        for j in 0..n {
                            for (zc, vc) in z.iter_mut().zip(&v[j]) {
                                *zc += pat[i][j] * vc;
                            }
                        }
                        vec_mat(&z, &wo)
                    })
                    .collect();
                for (i, row) in out.iter_mut().enumerate() {
                    if let Some(r) = get(RefSite::HeadOut(h), l, i) {
                        *row = r.clone();
                    }
                }
                outs.push(out);
                values.push(v);
                patterns.push(pat);
            }
            let mut mlps = vec![];
            for i in 0..n {
                let mut mid = add(&x[i], &w.c_proj_b);
                for out in &outs {
                    mid = add(&mid, &out[i]);
                }
                let hidden: Vec<f64> = add(&vec_mat(&layer_norm(&mid, &w.ln2, self.eps), &w.fc), &w.fc_b)
                    .into_iter()
                    .map(gelu)
                    .collect();
                let mut mlp = add(&vec_mat(&hidden, &w.proj), &w.proj_b);
                if let Some(r) = get(RefSite::MlpOut, l, i) {
                    mlp = r.clone();
                }
                x[i] = add(&mid, &mlp);
                mlps.push(mlp);
            }
            run.head_out.push(outs);
            run.value.push(values);
            run.pattern.push(patterns);
            run.mlp_out.push(mlps);
        }
        run.logits = x
            .iter()
            .map(|r| {
                let f = layer_norm(r, &self.lnf, self.eps);
                self.wte.iter().map(|e| e.iter().zip(&f).map(|(a, b)| a * b).sum()).collect()
            })
            .collect();
        run
    }

    /// Rows of `site` at `layer` for `positions`, taken from `donor`.
    pub fn splices_from(donor: &RefRun, site: RefSite, layer: usize, positions: &[usize]) -> Splices {
        positions
            .iter()
            .map(|&p| {
                let row = match site {
                    RefSite::ResidPre => donor.resid_pre[layer][p].clone(),
                    RefSite::HeadOut(h) => donor.head_out[layer][h][p].clone(),
                    RefSite::HeadValue(h) => donor.value[layer][h][p].clone(),
                    RefSite::HeadPattern(h) => donor.pattern[layer][h][p].clone(),
                    RefSite::MlpOut => donor.mlp_out[layer][p].clone(),
                };
                ((site, layer, p), row)
            })
            .collect()
    }

    /// Clean logits after routing the sender's corrupted output only
    /// through the receiver: first pass freezes every other head between the
    /// two layers at its clean output, second pass splices the receiver.
    pub fn path_patched(
        &self,
        clean: &RefRun,
        corrupted: &RefRun,
        tokens: &[u32],
        sender: (usize, usize),
        receiver: (usize, usize),
    ) -> RefRun {
        let n = tokens.len();
        let all: Vec<usize> = (0..n).collect();
        let mut first = Reference::splices_from(corrupted, RefSite::HeadOut(sender.1), sender.0, &all);
        for l in sender.0..receiver.0 {
            for h in 0..self.n_heads {
                if (l, h) != sender {
                    first.extend(Reference::splices_from(clean, RefSite::HeadOut(h), l, &all));
                }
            }
        }
        let step = self.run(tokens, &first);
        let second = Reference::splices_from(&step, RefSite::HeadOut(receiver.1), receiver.0, &all);
        self.run(tokens, &second)
    }

    /// Position-wise mean head outputs over `runs`: `[layer][head][pos][D]`.
    pub fn mean_head_out(runs: &[RefRun]) -> Vec<Vec<Mat>> {
        let mut mean = runs[0].head_out.clone();
        for (l, layer) in mean.iter_mut().enumerate() {
            for (h, head) in layer.iter_mut().enumerate() {
                for (p, row) in head.iter_mut().enumerate() {
                    for (c, v) in row.iter_mut().enumerate() {
                        *v = runs.iter().map(|r| r.head_out[l][h][p][c]).sum::<f64>() / runs.len() as f64;
                    }
                }
            }
        }
        mean
    }
}
