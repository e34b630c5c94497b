//! Forward evaluation: full-sequence pass (training, diffusion decoding) and
//! incremental per-position pass with cached keys/values (AR decoding).
//!
//! Both paths apply the same per-position arithmetic in the same order, so an
//! AR decode that rebuilds its cache from scratch each step produces logits
//! bit-identical to the cached decode.

use crate::error::{invalid, Result};

use super::{AttentionMode, ModelParams, NormParams};

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

#[inline]
pub(crate) fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

#[inline]
pub(crate) fn gelu_deriv(u: f64) -> f64 {
    let w = GELU_C * (u + GELU_A * u * u * u);
    let t = w.tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

/// y[o] = sum_in w[o][in] * x[in]; `w` is row-major out x in.
#[inline]
pub(crate) fn linear(x: &[f64], w: &[f64], out_dim: usize, in_dim: usize, y: &mut [f64]) {
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        y[o] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// Layer norm of one position; returns (normalized pre-scale, 1/std).
#[inline]
fn layer_norm(x: &[f64], p: &NormParams, xhat: &mut [f64], y: &mut [f64]) -> f64 {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * rstd;
        y[i] = p.scale[i] * xhat[i] + p.offset[i];
    }
    rstd
}

pub(crate) struct NormCache {
    pub xhat: Vec<f64>, // L x d
    pub rstd: Vec<f64>, // L
}

pub(crate) struct LayerCache {
    pub ln1: NormCache,
    pub a: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Attention probabilities, heads x queries x keys; disallowed keys hold 0.
    pub attn: Vec<f64>,
    pub ctx: Vec<f64>,
    pub ln2: NormCache,
    pub b: Vec<f64>,
    pub u: Vec<f64>,
    pub g: Vec<f64>,
}

pub(crate) struct FwdCache {
    pub len: usize,
    pub real_len: usize,
    pub mode: AttentionMode,
    pub tokens: Vec<u32>,
    pub layers: Vec<LayerCache>,
    pub lnf: NormCache,
    pub hfin: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Key range a query at `i` may attend to: `[0, allowed_end(i))`.
#[inline]
fn allowed_end(mode: AttentionMode, i: usize, real_len: usize) -> usize {
    match mode {
        AttentionMode::Causal => (i + 1).min(real_len),
        AttentionMode::Bidirectional => real_len,
    }
}

fn check_inputs(params: &ModelParams, tokens: &[u32], real_len: usize) -> Result<()> {
    let cfg = &params.config;
    if tokens.is_empty() {
        return Err(invalid("empty token buffer"));
    }
    if tokens.len() > cfg.max_len {
        return Err(invalid(format!(
            "sequence length {} exceeds max_len {}",
            tokens.len(),
            cfg.max_len
        )));
    }
    if real_len == 0 || real_len > tokens.len() {
        return Err(invalid("real_len must be in [1, len]"));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(invalid(format!("token id {t} outside vocab of size {}", cfg.vocab_size)));
    }
    Ok(())
}

pub(crate) fn forward_cached(
    params: &ModelParams,
    tokens: &[u32],
    mode: AttentionMode,
    real_len: usize,
) -> Result<FwdCache> {
    check_inputs(params, tokens, real_len)?;
    let cfg = &params.config;
    let (len, d, h, dh, dff) =
        (tokens.len(), cfg.d_model, cfg.n_heads, cfg.head_dim(), cfg.d_ff);
    let inv_sqrt_dh = 1.0 / (dh as f64).sqrt();

    let mut x = vec![0.0; len * d];
    for (i, &t) in tokens.iter().enumerate() {
        let te = &params.tok_emb[t as usize * d..(t as usize + 1) * d];
        let pe = &params.pos_emb[i * d..(i + 1) * d];
        for j in 0..d {
            x[i * d + j] = te[j] + pe[j];
        }
    }
    let mut layer_caches = Vec::with_capacity(cfg.n_layers);
    for layer in &params.layers {
        let x_in = x.clone();

        let mut ln1 = NormCache { xhat: vec![0.0; len * d], rstd: vec![0.0; len] };
        let mut a = vec![0.0; len * d];
        let mut scratch = vec![0.0; d];
        for i in 0..len {
            ln1.rstd[i] = layer_norm(
                &x_in[i * d..(i + 1) * d],
                &layer.ln1,
                &mut ln1.xhat[i * d..(i + 1) * d],
                &mut scratch,
            );
            a[i * d..(i + 1) * d].copy_from_slice(&scratch);
        }

        let mut q = vec![0.0; len * d];
        let mut k = vec![0.0; len * d];
        let mut v = vec![0.0; len * d];
        for i in 0..len {
            let ai = &a[i * d..(i + 1) * d];
            linear(ai, &layer.wq, d, d, &mut q[i * d..(i + 1) * d]);
            linear(ai, &layer.wk, d, d, &mut k[i * d..(i + 1) * d]);
            linear(ai, &layer.wv, d, d, &mut v[i * d..(i + 1) * d]);
        }

        let mut attn = vec![0.0; h * len * len];
        let mut ctx = vec![0.0; len * d];
        for head in 0..h {
            let off = head * dh;
            for i in 0..len {
                let end = allowed_end(mode, i, real_len);
                let qi = &q[i * d + off..i * d + off + dh];
                let row = &mut attn[(head * len + i) * len..(head * len + i) * len + len];
                let mut max_score = f64::NEG_INFINITY;
                for (j, slot) in row.iter_mut().enumerate().take(end) {
                    let kj = &k[j * d + off..j * d + off + dh];
                    let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * inv_sqrt_dh;
                    *slot = s;
                    max_score = max_score.max(s);
                }
                let mut total = 0.0;
                for slot in row.iter_mut().take(end) {
                    *slot = (*slot - max_score).exp();
                    total += *slot;
                }
                for slot in row.iter_mut().take(end) {
                    *slot /= total;
                }
                let ci = &mut ctx[i * d + off..i * d + off + dh];
                for j in 0..end {
                    let p = row[j];
                    let vj = &v[j * d + off..j * d + off + dh];
                    for (c, vv) in ci.iter_mut().zip(vj) {
                        *c += p * vv;
                    }
                }
            }
        }

        let mut x_mid = vec![0.0; len * d];
        for i in 0..len {
            linear(&ctx[i * d..(i + 1) * d], &layer.wo, d, d, &mut scratch);
            for j in 0..d {
                x_mid[i * d + j] = x_in[i * d + j] + scratch[j];
            }
        }

        let mut ln2 = NormCache { xhat: vec![0.0; len * d], rstd: vec![0.0; len] };
        let mut b = vec![0.0; len * d];
        for i in 0..len {
            ln2.rstd[i] = layer_norm(
                &x_mid[i * d..(i + 1) * d],
                &layer.ln2,
                &mut ln2.xhat[i * d..(i + 1) * d],
                &mut scratch,
            );
            b[i * d..(i + 1) * d].copy_from_slice(&scratch);
        }

        let mut u = vec![0.0; len * dff];
        let mut g = vec![0.0; len * dff];
        let mut x_next = vec![0.0; len * d];
        for i in 0..len {
            let ui = &mut u[i * dff..(i + 1) * dff];
            linear(&b[i * d..(i + 1) * d], &layer.w1, dff, d, ui);
            for (uu, bb) in ui.iter_mut().zip(&layer.b1) {
                *uu += bb;
            }
            let gi = &mut g[i * dff..(i + 1) * dff];
            for (gg, &uu) in gi.iter_mut().zip(ui.iter()) {
                *gg = gelu(uu);
            }
            linear(gi, &layer.w2, d, dff, &mut scratch);
            for j in 0..d {
                x_next[i * d + j] = x_mid[i * d + j] + scratch[j] + layer.b2[j];
            }
        }

        layer_caches.push(LayerCache { ln1, a, q, k, v, attn, ctx, ln2, b, u, g });
        x = x_next;
    }

    let mut lnf = NormCache { xhat: vec![0.0; len * d], rstd: vec![0.0; len] };
    let mut hfin = vec![0.0; len * d];
    let mut scratch = vec![0.0; d];
    for i in 0..len {
        lnf.rstd[i] = layer_norm(
            &x[i * d..(i + 1) * d],
            &params.final_norm,
            &mut lnf.xhat[i * d..(i + 1) * d],
            &mut scratch,
        );
        hfin[i * d..(i + 1) * d].copy_from_slice(&scratch);
    }
    let mut logits = vec![0.0; len * cfg.vocab_size];
    for i in 0..len {
        linear(
            &hfin[i * d..(i + 1) * d],
            &params.out_proj,
            cfg.vocab_size,
            d,
            &mut logits[i * cfg.vocab_size..(i + 1) * cfg.vocab_size],
        );
    }

    Ok(FwdCache {
        len,
        real_len,
        mode,
        tokens: tokens.to_vec(),
        layers: layer_caches,
        lnf,
        hfin,
        logits,
    })
}

/// Full-pass output. `logits` is positions x vocab; `attention`, when
/// captured, is layers x heads x queries x keys with exact zeros at
/// disallowed keys; `final_hidden` is the post-norm hidden state.
pub struct ForwardOutput {
    pub len: usize,
    pub vocab: usize,
    pub logits: Vec<f64>,
    pub attention: Option<Vec<f64>>,
    pub final_hidden: Option<Vec<f64>>,
}

impl ForwardOutput {
    pub fn logits_row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.vocab..(i + 1) * self.vocab]
    }

    /// Attention row for (layer, head, query); panics if not captured.
    pub fn attention_row(&self, layer: usize, head: usize, query: usize, n_heads: usize) -> &[f64] {
        let attn = self.attention.as_ref().expect("attention not captured");
        let base = ((layer * n_heads + head) * self.len + query) * self.len;
        &attn[base..base + self.len]
    }
}

pub fn forward(
    params: &ModelParams,
    tokens: &[u32],
    mode: AttentionMode,
    capture_attention: bool,
) -> Result<ForwardOutput> {
    forward_detailed(params, tokens, mode, tokens.len(), capture_attention)
}

/// Forward with an explicit real length: positions at `real_len..` are
/// padding, excluded as attention keys but still computed (fixed cost).
pub fn forward_detailed(
    params: &ModelParams,
    tokens: &[u32],
    mode: AttentionMode,
    real_len: usize,
    capture_attention: bool,
) -> Result<ForwardOutput> {
    let cache = forward_cached(params, tokens, mode, real_len)?;
    let attention = capture_attention.then(|| {
        let mut all = Vec::with_capacity(cache.layers.len() * cache.layers[0].attn.len());
        for l in &cache.layers {
            all.extend_from_slice(&l.attn);
        }
        all
    });
    Ok(ForwardOutput {
        len: cache.len,
        vocab: params.config.vocab_size,
        logits: cache.logits,
        attention,
        final_hidden: Some(cache.hfin),
    })
}

/// Per-layer cached keys/values for incremental causal decoding.
pub struct IncrementalState {
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    len: usize,
}

impl IncrementalState {
    pub fn new(params: &ModelParams) -> IncrementalState {
        IncrementalState {
            k: vec![Vec::new(); params.config.n_layers],
            v: vec![Vec::new(); params.config.n_layers],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends one token at the next position and returns its logits row.
    /// Mirrors the full causal forward arithmetic exactly.
    pub fn append(&mut self, params: &ModelParams, token: u32) -> Result<Vec<f64>> {
        let cfg = &params.config;
        let pos = self.len;
        if pos >= cfg.max_len {
            return Err(invalid("incremental decode exceeded max_len"));
        }
        if token as usize >= cfg.vocab_size {
            return Err(invalid("token outside vocab"));
        }
        let (d, h, dh, dff) = (cfg.d_model, cfg.n_heads, cfg.head_dim(), cfg.d_ff);
        let inv_sqrt_dh = 1.0 / (dh as f64).sqrt();

        let mut x: Vec<f64> = (0..d)
            .map(|j| params.tok_emb[token as usize * d + j] + params.pos_emb[pos * d + j])
            .collect();
        let mut xhat = vec![0.0; d];
        let mut a = vec![0.0; d];
        let mut scratch = vec![0.0; d];
        for (l, layer) in params.layers.iter().enumerate() {
            layer_norm(&x, &layer.ln1, &mut xhat, &mut a);
            let mut q = vec![0.0; d];
            let mut k_new = vec![0.0; d];
            let mut v_new = vec![0.0; d];
            linear(&a, &layer.wq, d, d, &mut q);
            linear(&a, &layer.wk, d, d, &mut k_new);
            linear(&a, &layer.wv, d, d, &mut v_new);
            self.k[l].extend_from_slice(&k_new);
            self.v[l].extend_from_slice(&v_new);
            let keys = &self.k[l];
            let vals = &self.v[l];
            let n_keys = pos + 1;

            let mut ctx = vec![0.0; d];
            let mut row = vec![0.0; n_keys];
            for head in 0..h {
                let off = head * dh;
                let qi = &q[off..off + dh];
                let mut max_score = f64::NEG_INFINITY;
                for (j, slot) in row.iter_mut().enumerate() {
                    let kj = &keys[j * d + off..j * d + off + dh];
                    let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * inv_sqrt_dh;
                    *slot = s;
                    max_score = max_score.max(s);
                }
                let mut total = 0.0;
                for slot in row.iter_mut() {
                    *slot = (*slot - max_score).exp();
                    total += *slot;
                }
                for slot in row.iter_mut() {
                    *slot /= total;
                }
                let ci = &mut ctx[off..off + dh];
                for (j, &p) in row.iter().enumerate() {
                    let vj = &vals[j * d + off..j * d + off + dh];
                    for (c, vv) in ci.iter_mut().zip(vj) {
                        *c += p * vv;
                    }
                }
            }

            linear(&ctx, &layer.wo, d, d, &mut scratch);
            for j in 0..d {
                x[j] += scratch[j];
            }

            let mut b = vec![0.0; d];
            layer_norm(&x, &layer.ln2, &mut xhat, &mut b);
            let mut u = vec![0.0; dff];
            linear(&b, &layer.w1, dff, d, &mut u);
            for (uu, bb) in u.iter_mut().zip(&layer.b1) {
                *uu += bb;
            }
            let g: Vec<f64> = u.iter().map(|&uu| gelu(uu)).collect();
            linear(&g, &layer.w2, d, dff, &mut scratch);
            for j in 0..d {
                x[j] += scratch[j] + layer.b2[j];
            }
        }

        let mut hfin = vec![0.0; d];
        layer_norm(&x, &params.final_norm, &mut xhat, &mut hfin);
        let mut logits = vec![0.0; cfg.vocab_size];
        linear(&hfin, &params.out_proj, cfg.vocab_size, d, &mut logits);
        self.len += 1;
        Ok(logits)
    }
}
