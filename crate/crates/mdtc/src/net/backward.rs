//! Hand-written backpropagation for both training losses, verified against
//! central finite differences in the test suite.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::layout::SequenceLayout;
use crate::mask::MaskState;

use super::forward::{forward_cached, gelu_deriv, FwdCache};
use super::loss::{log_sum_exp, PredConvention};
use super::{AttentionMode, ModelParams, NormParams};

/// Gradient tensors, mirroring [`ModelParams`] shape for shape.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub tok_emb: Vec<f64>,
    pub pos_emb: Vec<f64>,
    pub layers: Vec<LayerGrads>,
    pub final_norm: NormGrads,
    pub out_proj: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NormGrads {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub ln1: NormGrads,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub ln2: NormGrads,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> ModelGrads {
        let c = &params.config;
        let d = c.d_model;
        ModelGrads {
            tok_emb: vec![0.0; c.vocab_size * d],
            pos_emb: vec![0.0; c.max_len * d],
            layers: (0..c.n_layers)
                .map(|_| LayerGrads {
                    ln1: NormGrads { scale: vec![0.0; d], offset: vec![0.0; d] },
                    wq: vec![0.0; d * d],
                    wk: vec![0.0; d * d],
                    wv: vec![0.0; d * d],
                    wo: vec![0.0; d * d],
                    ln2: NormGrads { scale: vec![0.0; d], offset: vec![0.0; d] },
                    w1: vec![0.0; c.d_ff * d],
                    b1: vec![0.0; c.d_ff],
                    w2: vec![0.0; d * c.d_ff],
                    b2: vec![0.0; d],
                })
                .collect(),
            final_norm: NormGrads { scale: vec![0.0; d], offset: vec![0.0; d] },
            out_proj: vec![0.0; c.vocab_size * d],
        }
    }

    /// Same canonical tensor order as [`ModelParams::tensors`].
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out: Vec<&Vec<f64>> = vec![&self.tok_emb, &self.pos_emb];
        for l in &self.layers {
            out.push(&l.ln1.scale);
            out.push(&l.ln1.offset);
            out.push(&l.wq);
            out.push(&l.wk);
            out.push(&l.wv);
            out.push(&l.wo);
            out.push(&l.ln2.scale);
            out.push(&l.ln2.offset);
            out.push(&l.w1);
            out.push(&l.b1);
            out.push(&l.w2);
            out.push(&l.b2);
        }
        out.push(&self.final_norm.scale);
        out.push(&self.final_norm.offset);
        out.push(&self.out_proj);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            out.push(&mut l.ln1.scale);
            out.push(&mut l.ln1.offset);
            out.push(&mut l.wq);
            out.push(&mut l.wk);
            out.push(&mut l.wv);
            out.push(&mut l.wo);
            out.push(&mut l.ln2.scale);
            out.push(&mut l.ln2.offset);
            out.push(&mut l.w1);
            out.push(&mut l.b1);
            out.push(&mut l.w2);
            out.push(&mut l.b2);
        }
        out.push(&mut self.final_norm.scale);
        out.push(&mut self.final_norm.offset);
        out.push(&mut self.out_proj);
        out
    }

    pub fn add_scaled(&mut self, other: &ModelGrads, factor: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += factor * b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for a in t.iter_mut() {
                *a *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// A differentiable loss instance over one sequence.
pub enum LossSpec<'a> {
    Ar { layout: &'a SequenceLayout },
    Diffusion {
        layout: &'a SequenceLayout,
        masked_tokens: &'a [u32],
        mask: &'a MaskState,
        t: f64,
        conv: PredConvention,
    },
}

fn ln_backward(
    dy: &[f64],
    norm: &NormParams,
    xhat: &[f64],
    rstd: f64,
    dscale: &mut [f64],
    doffset: &mut [f64],
    dx: &mut [f64],
) {
    let d = dy.len();
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for j in 0..d {
        let dxh = dy[j] * norm.scale[j];
        m1 += dxh;
        m2 += dxh * xhat[j];
        dscale[j] += dy[j] * xhat[j];
        doffset[j] += dy[j];
    }
    m1 /= d as f64;
    m2 /= d as f64;
    for j in 0..d {
        let dxh = dy[j] * norm.scale[j];
        dx[j] += rstd * (dxh - m1 - xhat[j] * m2);
    }
}

/// dW[o][c] += dy[o] * x[c]; dx[c] += W[o][c] * dy[o]
fn linear_backward(
    dy: &[f64],
    x: &[f64],
    w: &[f64],
    out_dim: usize,
    in_dim: usize,
    dw: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    for o in 0..out_dim {
        let g = dy[o];
        if g == 0.0 {
            continue;
        }
        let row = &mut dw[o * in_dim..(o + 1) * in_dim];
        for (slot, &xv) in row.iter_mut().zip(x) {
            *slot += g * xv;
        }
    }
    if let Some(dx) = dx {
        for o in 0..out_dim {
            let g = dy[o];
            if g == 0.0 {
                continue;
            }
            let row = &w[o * in_dim..(o + 1) * in_dim];
            for (slot, &wv) in dx.iter_mut().zip(row) {
                *slot += g * wv;
            }
        }
    }
}

fn backprop(params: &ModelParams, cache: &FwdCache, dlogits: &[f64]) -> ModelGrads {
    let cfg = &params.config;
    let (len, d, h, dh, dff, vocab) =
        (cache.len, cfg.d_model, cfg.n_heads, cfg.head_dim(), cfg.d_ff, cfg.vocab_size);
    let inv_sqrt_dh = 1.0 / (dh as f64).sqrt();
    let mut grads = ModelGrads::zeros_like(params);

    // output projection and final norm
    let mut dx = vec![0.0; len * d];
    {
        let mut dhfin = vec![0.0; len * d];
        for i in 0..len {
            let dl = &dlogits[i * vocab..(i + 1) * vocab];
            if dl.iter().all(|&g| g == 0.0) {
                continue;
            }
            linear_backward(
                dl,
                &cache.hfin[i * d..(i + 1) * d],
                &params.out_proj,
                vocab,
                d,
                &mut grads.out_proj,
                Some(&mut dhfin[i * d..(i + 1) * d]),
            );
        }
        for i in 0..len {
            ln_backward(
                &dhfin[i * d..(i + 1) * d],
                &params.final_norm,
                &cache.lnf.xhat[i * d..(i + 1) * d],
                cache.lnf.rstd[i],
                &mut grads.final_norm.scale,
                &mut grads.final_norm.offset,
                &mut dx[i * d..(i + 1) * d],
            );
        }
    }

    for (l, layer) in params.layers.iter().enumerate().rev() {
        let lc = &cache.layers[l];
        let lg = &mut grads.layers[l];

        // feed-forward block: x_next = x_mid + W2 gelu(W1 b + b1) + b2
        let mut dx_mid = dx.clone(); // residual path
        {
            let mut dg = vec![0.0; dff];
            let mut du = vec![0.0; dff];
            let mut db = vec![0.0; d];
            for i in 0..len {
                let dxi = &dx[i * d..(i + 1) * d];
                if dxi.iter().all(|&g| g == 0.0) {
                    continue;
                }
                for (slot, &g) in lg.b2.iter_mut().zip(dxi) {
                    *slot += g;
                }
                dg.iter_mut().for_each(|x| *x = 0.0);
                linear_backward(
                    dxi,
                    &lc.g[i * dff..(i + 1) * dff],
                    &layer.w2,
                    d,
                    dff,
                    &mut lg.w2,
                    Some(&mut dg),
                );
                for c in 0..dff {
                    du[c] = dg[c] * gelu_deriv(lc.u[i * dff + c]);
                    lg.b1[c] += du[c];
                }
                db.iter_mut().for_each(|x| *x = 0.0);
                linear_backward(
                    &du,
                    &lc.b[i * d..(i + 1) * d],
                    &layer.w1,
                    dff,
                    d,
                    &mut lg.w1,
                    Some(&mut db),
                );
                ln_backward(
                    &db,
                    &layer.ln2,
                    &lc.ln2.xhat[i * d..(i + 1) * d],
                    lc.ln2.rstd[i],
                    &mut lg.ln2.scale,
                    &mut lg.ln2.offset,
                    &mut dx_mid[i * d..(i + 1) * d],
                );
            }
        }

        // attention block: x_mid = x_in + Wo ctx
        let mut dx_in = dx_mid.clone(); // residual path
        {
            let mut dctx = vec![0.0; len * d];
            for i in 0..len {
                let doi = &dx_mid[i * d..(i + 1) * d];
                if doi.iter().all(|&g| g == 0.0) {
                    continue;
                }
                linear_backward(
                    doi,
                    &lc.ctx[i * d..(i + 1) * d],
                    &layer.wo,
                    d,
                    d,
                    &mut lg.wo,
                    Some(&mut dctx[i * d..(i + 1) * d]),
                );
            }

            let mut dq = vec![0.0; len * d];
            let mut dk = vec![0.0; len * d];
            let mut dv = vec![0.0; len * d];
            let mut dp = vec![0.0; len];
            for head in 0..h {
                let off = head * dh;
                for i in 0..len {
                    let end = match cache.mode {
                        AttentionMode::Causal => (i + 1).min(cache.real_len),
                        AttentionMode::Bidirectional => cache.real_len,
                    };
                    let dctx_i = &dctx[i * d + off..i * d + off + dh];
                    if dctx_i.iter().all(|&g| g == 0.0) {
                        continue;
                    }
                    let row = &lc.attn[(head * len + i) * len..(head * len + i) * len + end];
                    let mut sum_term = 0.0;
                    for j in 0..end {
                        let vj = &lc.v[j * d + off..j * d + off + dh];
                        dp[j] = dctx_i.iter().zip(vj).map(|(a, b)| a * b).sum();
                        let p = row[j];
                        let dvj = &mut dv[j * d + off..j * d + off + dh];
                        for (slot, &g) in dvj.iter_mut().zip(dctx_i) {
                            *slot += p * g;
                        }
                        sum_term += row[j] * dp[j];
                    }
                    let qi = &lc.q[i * d + off..i * d + off + dh];
                    let dqi = &mut dq[i * d + off..i * d + off + dh];
                    for j in 0..end {
                        let ds = row[j] * (dp[j] - sum_term) * inv_sqrt_dh;
                        if ds == 0.0 {
                            continue;
                        }
                        let kj = &lc.k[j * d + off..j * d + off + dh];
                        for (slot, &kv) in dqi.iter_mut().zip(kj) {
                            *slot += ds * kv;
                        }
                        let dkj = &mut dk[j * d + off..j * d + off + dh];
                        for (slot, &qv) in dkj.iter_mut().zip(qi) {
                            *slot += ds * qv;
                        }
                    }
                }
            }

            let mut da = vec![0.0; len * d];
            for i in 0..len {
                let a_i = &lc.a[i * d..(i + 1) * d];
                let da_i = &mut da[i * d..(i + 1) * d];
                linear_backward(&dq[i * d..(i + 1) * d], a_i, &layer.wq, d, d, &mut lg.wq, Some(da_i));
                linear_backward(&dk[i * d..(i + 1) * d], a_i, &layer.wk, d, d, &mut lg.wk, Some(da_i));
                linear_backward(&dv[i * d..(i + 1) * d], a_i, &layer.wv, d, d, &mut lg.wv, Some(da_i));
            }
            for i in 0..len {
                ln_backward(
                    &da[i * d..(i + 1) * d],
                    &layer.ln1,
                    &lc.ln1.xhat[i * d..(i + 1) * d],
                    lc.ln1.rstd[i],
                    &mut lg.ln1.scale,
                    &mut lg.ln1.offset,
                    &mut dx_in[i * d..(i + 1) * d],
                );
            }
        }
        dx = dx_in;
    }

    for (i, &t) in cache.tokens.iter().enumerate() {
        let src = &dx[i * d..(i + 1) * d];
        let te = &mut grads.tok_emb[t as usize * d..(t as usize + 1) * d];
        for (slot, &g) in te.iter_mut().zip(src) {
            *slot += g;
        }
        let pe = &mut grads.pos_emb[i * d..(i + 1) * d];
        for (slot, &g) in pe.iter_mut().zip(src) {
            *slot += g;
        }
    }

    grads
}

/// Softmax cross-entropy gradient rows: d logits = weight * (softmax - onehot).
fn ce_dlogits(cache: &FwdCache, vocab: usize, targets: &[(usize, u32, f64)]) -> (f64, Vec<f64>) {
    let mut dlogits = vec![0.0; cache.len * vocab];
    let mut loss = 0.0;
    for &(row, target, weight) in targets {
        let z = &cache.logits[row * vocab..(row + 1) * vocab];
        let lse = log_sum_exp(z);
        loss += weight * (lse - z[target as usize]);
        let dst = &mut dlogits[row * vocab..(row + 1) * vocab];
        for (o, slot) in dst.iter_mut().enumerate() {
            let p = (z[o] - lse).exp();
            *slot += weight * (p - if o == target as usize { 1.0 } else { 0.0 });
        }
    }
    (loss, dlogits)
}

/// Loss value and exact parameter gradients for one sequence.
pub fn loss_and_grad(params: &ModelParams, spec: &LossSpec) -> Result<(f64, ModelGrads)> {
    let (cache, targets) = match spec {
        LossSpec::Ar { layout } => {
            let cache =
                forward_cached(params, &layout.tokens, AttentionMode::Causal, layout.len())?;
            let w = 1.0 / layout.target_len() as f64;
            let targets: Vec<(usize, u32, f64)> = layout
                .target_span
                .range()
                .map(|i| (i - 1, layout.tokens[i], w))
                .collect();
            (cache, targets)
        }
        LossSpec::Diffusion { layout, masked_tokens, mask, t, conv } => {
            if !(*t > 0.0 && *t <= 1.0) {
                return Err(crate::error::invalid(format!("t={t} outside (0, 1]")));
            }
            let cache =
                forward_cached(params, masked_tokens, AttentionMode::Bidirectional, layout.len())?;
            let w = 1.0 / t;
            let targets: Vec<(usize, u32, f64)> = mask
                .masked
                .iter()
                .enumerate()
                .filter(|(_, m)| **m)
                .map(|(rel, _)| {
                    let i = layout.target_span.start + rel;
                    (conv.pred_row(i), layout.tokens[i], w)
                })
                .collect();
            (cache, targets)
        }
    };
    let (loss, dlogits) = ce_dlogits(&cache, params.config.vocab_size, &targets);
    if !loss.is_finite() {
        return Err(Error::NumericError(format!("non-finite loss {loss}")));
    }
    let grads = backprop(params, &cache, &dlogits);
    Ok((loss, grads))
}

/// Batch-mean loss and gradients. Per-sequence work runs in parallel; the
/// reduction is a fixed-order fold so results are independent of thread
/// count.
pub fn gradients(params: &ModelParams, batch: &[LossSpec]) -> Result<(f64, ModelGrads)> {
    if batch.is_empty() {
        return Err(crate::error::invalid("empty batch"));
    }
    let per_item: Vec<Result<(f64, ModelGrads)>> =
        batch.par_iter().map(|spec| loss_and_grad(params, spec)).collect();
    let mut total = ModelGrads::zeros_like(params);
    let mut loss_sum = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for item in per_item {
        let (loss, grads) = item?;
        loss_sum += loss;
        total.add_scaled(&grads, scale);
    }
    Ok((loss_sum * scale, total))
}
