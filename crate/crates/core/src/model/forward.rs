//! Hooked forward pass.
//!
//! Pre-LN GPT-2 block: `mid = x + Σ_h head_out_h + b_O`, `post = mid + MLP(LN₂(mid))`,
//! with every head computed separately so its contribution can be spliced.
//! The full and the final-state-only entry points share the same per-layer
//! arithmetic, so a logit read from either path is bit-identical.

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, ArrayViewMut2, Axis, Zip};

use super::bundle::{LayerNormWeights, ModelBundle};
use super::cache::ActivationCache;
use super::patch::{build_hooks, HeadId, Hook, HookSource, MeanAblation, PatchSpec, Site};
use crate::error::{Error, Result};

/// Deterministic dot product with a fixed 8-lane accumulation order.
pub(crate) fn dot(a: ArrayView1<'_, f32>, b: ArrayView1<'_, f32>) -> f32 {
    match (a.as_slice(), b.as_slice()) {
        (Some(x), Some(y)) => dot_slices(x, y),
        _ => {
            let x = a.to_vec();
            let y = b.to_vec();
            dot_slices(&x, &y)
        }
    }
}

fn dot_slices(x: &[f32], y: &[f32]) -> f32 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [0f32; 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for k in 0..8 {
            acc[k] += a[k] * b[k];
        }
    }
    let mut tail = 0f32;
    for (a, b) in xr.iter().zip(yr) {
        tail += a * b;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub(crate) fn layer_norm(x: ArrayView2<'_, f32>, w: &LayerNormWeights, eps: f32) -> Array2<f32> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        layer_norm_row(row.view_mut(), w, eps);
    }
    out
}

fn layer_norm_row(mut row: ndarray::ArrayViewMut1<'_, f32>, w: &LayerNormWeights, eps: f32) {
    let n = row.len() as f32;
    let mean = row.sum() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    Zip::from(&mut row)
        .and(&w.gamma)
        .and(&w.beta)
        .for_each(|v, &g, &b| *v = (*v - mean) * inv * g + b);
}

fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

fn softmax_causal(mut scores: ArrayViewMut2<'_, f32>) {
    for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
        let max = row.slice(s![..=i]).fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        let mut total = 0.0;
        for j in 0..row.len() {
            if j <= i {
                let e = (row[j] - max).exp();
                row[j] = e;
                total += e;
            } else {
                row[j] = 0.0;
            }
        }
        row.slice_mut(s![..=i]).mapv_inplace(|v| v / total);
    }
}

/// Final layer-normed residual of one run. Logits are read lazily, only for
/// the tokens a metric needs.
#[derive(Debug, Clone)]
pub struct FinalState {
    pub final_ln: Array2<f32>,
}

impl FinalState {
    pub fn logit(&self, bundle: &ModelBundle, position: usize, token: u32) -> Result<f32> {
        Ok(dot(self.final_ln.row(position), bundle.unembed_column(token)?))
    }

    pub fn last_logit(&self, bundle: &ModelBundle, token: u32) -> Result<f32> {
        self.logit(bundle, self.final_ln.nrows() - 1, token)
    }
}

#[derive(Default)]
struct Trace {
    resid_pre: Vec<Array2<f32>>,
    resid_mid: Vec<Array2<f32>>,
    resid_post: Vec<Array2<f32>>,
    pattern: Vec<Array3<f32>>,
    value: Vec<Array3<f32>>,
    head_out: Vec<Array3<f32>>,
    mlp_out: Vec<Array2<f32>>,
}

/// Forward pass with optional activation patching and mean ablation.
///
/// Empty `patch` (or `None`) gives a plain forward. Targets in `patch` take
/// their replacement from `donor`; heads listed in `ablation` are replaced by
/// the table's position-wise mean.
pub fn forward(
    bundle: &ModelBundle,
    tokens: &[u32],
    patch: Option<&PatchSpec>,
    donor: Option<&ActivationCache>,
    ablation: Option<MeanAblation<'_>>,
) -> Result<ActivationCache> {
    let hooks = build_hooks(patch, donor, ablation)?;
    forward_hooked(bundle, tokens, &hooks)
}

pub fn forward_hooked(bundle: &ModelBundle, tokens: &[u32], hooks: &[Hook<'_>]) -> Result<ActivationCache> {
    let (trace, final_ln) = run(bundle, tokens, hooks, None, true)?;
    let v = bundle.config.vocab_size;
    let mut logits = Array2::<f32>::zeros((tokens.len(), v));
    for (i, mut row) in logits.rows_mut().into_iter().enumerate() {
        let h = final_ln.row(i);
        for (t, out) in row.iter_mut().enumerate() {
            *out = dot(h, bundle.token_embedding.row(t));
        }
    }
    Ok(ActivationCache {
        tokens: tokens.to_vec(),
        resid_pre: trace.resid_pre,
        resid_mid: trace.resid_mid,
        resid_post: trace.resid_post,
        pattern: trace.pattern,
        value: trace.value,
        head_out: trace.head_out,
        mlp_out: trace.mlp_out,
        final_ln,
        logits,
    })
}

/// Hooked run that keeps only the final residual.
///
/// With `resume = Some((base, layer))`, layers before `layer` are taken from
/// `base` (which must be a run over the same tokens with no hooks earlier than
/// `layer`) and computation starts from `base.resid_pre[layer]`.
pub fn forward_final(
    bundle: &ModelBundle,
    tokens: &[u32],
    hooks: &[Hook<'_>],
    resume: Option<(&ActivationCache, usize)>,
) -> Result<FinalState> {
    let (_, final_ln) = run(bundle, tokens, hooks, resume, false)?;
    Ok(FinalState { final_ln })
}

fn validate_hooks(bundle: &ModelBundle, n: usize, hooks: &[Hook<'_>], start: usize) -> Result<()> {
    let c = &bundle.config;
    for hook in hooks {
        let t = &hook.target;
        t.validate(c.n_layers, c.n_heads, n)?;
        if t.layer < start {
            return Err(Error::InvalidTarget(format!(
                "hook at layer {} precedes resume layer {start}",
                t.layer
            )));
        }
        match hook.source {
            HookSource::Cache(donor) => {
                if donor.n_tokens() != n || donor.n_layers() != c.n_layers {
                    return Err(Error::DonorMismatch(format!(
                        "donor has {} tokens / {} layers, run has {n} / {}",
                        donor.n_tokens(),
                        donor.n_layers(),
                        c.n_layers
                    )));
                }
            }
            HookSource::Rows(rows) => {
                let width = match t.site {
                    Site::ResidPre | Site::HeadOut | Site::MlpOut => c.d_model,
                    Site::HeadValue => c.d_head,
                    Site::HeadPattern => n,
                };
                if rows.dim() != (n, width) {
                    return Err(Error::DonorMismatch(format!(
                        "replacement rows are {:?}, site needs ({n}, {width})",
                        rows.dim()
                    )));
                }
            }
            HookSource::Mean(table) => {
                if t.site != Site::HeadOut {
                    return Err(Error::InvalidTarget("mean tables only cover head outputs".into()));
                }
                if table.n_positions() != n || table.head_out.len() != c.n_layers {
                    return Err(Error::DonorMismatch(format!(
                        "mean table covers {} positions, run has {n}",
                        table.n_positions()
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Output of one head (`N × D`) in a hooked run; later layers are skipped.
/// `resume` has the same meaning as in [`forward_final`].
pub fn forward_head_out(
    bundle: &ModelBundle,
    tokens: &[u32],
    hooks: &[Hook<'_>],
    resume: Option<(&ActivationCache, usize)>,
    head: HeadId,
) -> Result<Array2<f32>> {
    bundle.check_head(head.layer, head.head)?;
    if resume.is_some_and(|(_, l)| l > head.layer) {
        return Err(Error::InvalidTarget(format!("resume layer is past head {head}")));
    }
    let (by_layer, x) = run_layers(bundle, tokens, hooks, resume, head.layer, None)?;
    let mut trace = Trace::default();
    block(bundle, head.layer, x, &by_layer[head.layer], Some(&mut trace));
    Ok(trace.head_out[0].index_axis(Axis(0), head.head).to_owned())
}

fn run(
    bundle: &ModelBundle,
    tokens: &[u32],
    hooks: &[Hook<'_>],
    resume: Option<(&ActivationCache, usize)>,
    record: bool,
) -> Result<(Trace, Array2<f32>)> {
    let mut trace = Trace::default();
    let (_, x) = run_layers(
        bundle,
        tokens,
        hooks,
        resume,
        bundle.config.n_layers,
        record.then_some(&mut trace),
    )?;
    let final_ln = layer_norm(x.view(), &bundle.ln_final, bundle.config.ln_epsilon);
    Ok((trace, final_ln))
}

/// Run blocks from the resume layer up to (not including) `end`; returns the
/// hooks grouped by layer and the residual entering `end`.
fn run_layers<'h, 'a>(
    bundle: &ModelBundle,
    tokens: &[u32],
    hooks: &'h [Hook<'a>],
    resume: Option<(&ActivationCache, usize)>,
    end: usize,
    mut trace: Option<&mut Trace>,
) -> Result<(Vec<Vec<&'h Hook<'a>>>, Array2<f32>)> {
    let c = &bundle.config;
    let n = tokens.len();
    if n == 0 {
        return Err(Error::Empty("token sequence"));
    }
    if n > c.max_positions {
        return Err(Error::SequenceTooLong { len: n, max: c.max_positions });
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= c.vocab_size) {
        return Err(Error::TokenOutOfVocab(t));
    }
    let start = resume.map_or(0, |(_, l)| l);
    if start > c.n_layers {
        return Err(Error::InvalidTarget(format!("resume layer {start} out of range")));
    }
    validate_hooks(bundle, n, hooks, start)?;

    let mut by_layer: Vec<Vec<&Hook<'_>>> = vec![Vec::new(); c.n_layers];
    for h in hooks {
        by_layer[h.target.layer].push(h);
    }

    let mut x = match resume {
        None => {
            let mut x = Array2::<f32>::zeros((n, c.d_model));
            for (i, &t) in tokens.iter().enumerate() {
                let mut row = x.row_mut(i);
                row.assign(&bundle.token_embedding.row(t as usize));
                row += &bundle.position_embedding.row(i);
            }
            x
        }
        Some((base, layer)) => {
            if base.tokens != tokens || base.n_layers() != c.n_layers {
                return Err(Error::DonorMismatch("resume base is a different run".into()));
            }
            if let Some(trace) = trace.as_deref_mut() {
                trace.resid_pre.extend_from_slice(&base.resid_pre[..layer]);
                trace.resid_mid.extend_from_slice(&base.resid_mid[..layer]);
                trace.resid_post.extend_from_slice(&base.resid_post[..layer]);
                trace.pattern.extend_from_slice(&base.pattern[..layer]);
                trace.value.extend_from_slice(&base.value[..layer]);
                trace.head_out.extend_from_slice(&base.head_out[..layer]);
                trace.mlp_out.extend_from_slice(&base.mlp_out[..layer]);
            }
            if layer == c.n_layers {
                base.resid_post[layer - 1].clone()
            } else {
                base.resid_pre[layer].clone()
            }
        }
    };

    for layer in start..end {
        x = block(bundle, layer, x, &by_layer[layer], trace.as_deref_mut());
    }
    Ok((by_layer, x))
}

/// Overwrite the hook's positions of `dst` with the rows of its source.
fn splice(dst: &mut ArrayViewMut2<'_, f32>, hook: &Hook<'_>, layer: usize) {
    let t = &hook.target;
    let head = t.head.unwrap_or(0);
    let src: ArrayView2<'_, f32> = match hook.source {
        HookSource::Cache(c) => match t.site {
            Site::ResidPre => c.resid_pre[layer].view(),
            Site::HeadOut => c.head_out(layer, head),
            Site::HeadValue => c.value(layer, head),
            Site::HeadPattern => c.pattern(layer, head),
            Site::MlpOut => c.mlp_out[layer].view(),
        },
        HookSource::Mean(table) => table.head_out[layer].index_axis(Axis(0), head),
        HookSource::Rows(rows) => rows.view(),
    };
    for &p in &t.positions {
        dst.row_mut(p).assign(&src.row(p));
    }
}

fn block(
    bundle: &ModelBundle,
    layer: usize,
    mut x: Array2<f32>,
    hooks: &[&Hook<'_>],
    trace: Option<&mut Trace>,
) -> Array2<f32> {
    let c = &bundle.config;
    let w = &bundle.layers[layer];
    let (n, d) = (x.nrows(), c.d_head);
    let head_hooks = |site: Site, head: usize| {
        hooks
            .iter()
            .filter(move |h| h.target.site == site && h.target.head == Some(head))
    };

    for hook in hooks.iter().filter(|h| h.target.site == Site::ResidPre) {
        splice(&mut x.view_mut(), hook, layer);
    }

    let ln1 = layer_norm(x.view(), &w.ln1, c.ln_epsilon);
    let q = ln1.dot(&w.w_q) + &w.b_q;
    let k = ln1.dot(&w.w_k) + &w.b_k;
    let v = ln1.dot(&w.w_v) + &w.b_v;
    let scale = 1.0 / (d as f32).sqrt();

    let record = trace.is_some();
    let mut patterns = record.then(|| Array3::<f32>::zeros((c.n_heads, n, n)));
    let mut values = record.then(|| Array3::<f32>::zeros((c.n_heads, n, d)));
    let mut outs = record.then(|| Array3::<f32>::zeros((c.n_heads, n, c.d_model)));
    let mut attn = Array2::<f32>::zeros((n, c.d_model));

    for h in 0..c.n_heads {
        let cols = h * d..(h + 1) * d;
        let qh = q.slice(s![.., cols.clone()]);
        let kh = k.slice(s![.., cols.clone()]);
        let mut vh = v.slice(s![.., cols]).to_owned();
        for hook in head_hooks(Site::HeadValue, h) {
            splice(&mut vh.view_mut(), hook, layer);
        }

        let mut pattern = qh.dot(&kh.t());
        pattern.mapv_inplace(|s| s * scale);
        softmax_causal(pattern.view_mut());
        for hook in head_hooks(Site::HeadPattern, h) {
            splice(&mut pattern.view_mut(), hook, layer);
        }

        let z = pattern.dot(&vh);
        let mut out = z.dot(&bundle.w_o_head(layer, h));
        for hook in head_hooks(Site::HeadOut, h) {
            splice(&mut out.view_mut(), hook, layer);
        }
        attn += &out;

        if let (Some(p), Some(vv), Some(o)) = (&mut patterns, &mut values, &mut outs) {
            p.index_axis_mut(Axis(0), h).assign(&pattern);
            vv.index_axis_mut(Axis(0), h).assign(&vh);
            o.index_axis_mut(Axis(0), h).assign(&out);
        }
    }
    attn += &w.b_o;
    let mid = &x + &attn;

    let ln2 = layer_norm(mid.view(), &w.ln2, c.ln_epsilon);
    let mut hidden = ln2.dot(&w.w_in) + &w.b_in;
    hidden.mapv_inplace(gelu);
    let mut mlp = hidden.dot(&w.w_out) + &w.b_out;
    for hook in hooks.iter().filter(|h| h.target.site == Site::MlpOut) {
        splice(&mut mlp.view_mut(), hook, layer);
    }
    let post = &mid + &mlp;

    if let Some(t) = trace {
        t.resid_pre.push(x);
        t.resid_mid.push(mid);
        t.resid_post.push(post.clone());
        t.pattern.push(patterns.expect("recording"));
        t.value.push(values.expect("recording"));
        t.head_out.push(outs.expect("recording"));
        t.mlp_out.push(mlp);
    }
    post
}
