//! Tiny transformer with causal and bidirectional attention, double
//! precision throughout, and hand-written backpropagation.
//!
//! Pre-norm residual blocks, learned absolute position embeddings, GELU
//! feed-forward, untied output projection. Small enough that every gradient
//! can be checked against central finite differences.

mod backward;
mod forward;
mod loss;

pub use backward::{gradients, loss_and_grad, LossSpec, ModelGrads};
pub use forward::{forward, forward_detailed, ForwardOutput, IncrementalState};
pub use loss::{
    loss_ar, loss_diffusion, shift_logits, unshift_logits, weighted_masked_ce, PredConvention,
};

use serde::{Deserialize, Serialize};

use crate::container::{Container, TensorData};
use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Queries attend only to positions at or before themselves.
    Causal,
    /// Every token attends to all others; only padding is masked.
    Bidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub default_mode: AttentionMode,
}

impl ModelConfig {
    /// Default desk-scale configuration: big enough for alignment heads to
    /// emerge, small enough for finite-difference verification.
    pub fn toy(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            vocab_size,
            max_len: 128,
            default_mode: AttentionMode::Bidirectional,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(invalid("model dimensions must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(invalid(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size == 0 || self.max_len == 0 {
            return Err(invalid("vocab_size and max_len must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

impl NormParams {
    fn ones(d: usize) -> NormParams {
        NormParams { scale: vec![1.0; d], offset: vec![0.0; d] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1: NormParams,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub ln2: NormParams,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Named tensors of the model; row-major `out_dim x in_dim` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tok_emb: Vec<f64>,
    pub pos_emb: Vec<f64>,
    pub layers: Vec<LayerParams>,
    pub final_norm: NormParams,
    pub out_proj: Vec<f64>,
}

pub const INIT_STD: f64 = 0.02;

impl ModelParams {
    /// Fresh parameters: N(0, 0.02^2) weights, unit norms, zero biases.
    pub fn init_random(config: &ModelConfig, rng: &mut RngStream) -> Result<ModelParams> {
        config.validate()?;
        let d = config.d_model;
        let draw = |n: usize, r: &mut RngStream| -> Vec<f64> {
            (0..n).map(|_| r.gaussian(0.0, INIT_STD)).collect()
        };
        let layers = (0..config.n_layers)
            .map(|l| {
                let mut r = rng.split_u64(l as u64);
                LayerParams {
                    ln1: NormParams::ones(d),
                    wq: draw(d * d, &mut r),
                    wk: draw(d * d, &mut r),
                    wv: draw(d * d, &mut r),
                    wo: draw(d * d, &mut r),
                    ln2: NormParams::ones(d),
                    w1: draw(config.d_ff * d, &mut r),
                    b1: vec![0.0; config.d_ff],
                    w2: draw(d * config.d_ff, &mut r),
                    b2: vec![0.0; d],
                }
            })
            .collect();
        let mut r_emb = rng.split("embeddings");
        let mut r_out = rng.split("out_proj");
        Ok(ModelParams {
            config: *config,
            tok_emb: draw(config.vocab_size * d, &mut r_emb),
            pos_emb: draw(config.max_len * d, &mut r_emb),
            layers,
            final_norm: NormParams::ones(d),
            out_proj: draw(config.vocab_size * d, &mut r_out),
        })
    }

    /// Diffusion initialization from an autoregressive checkpoint: every
    /// tensor is copied bit-exactly, then only the mask-token embedding row
    /// is redrawn from N(0, 0.02^2).
    pub fn init_from_ar(ar: &ModelParams, mask_id: u32, rng: &mut RngStream) -> Result<ModelParams> {
        if mask_id as usize >= ar.config.vocab_size {
            return Err(invalid("mask_id outside the checkpoint vocabulary"));
        }
        if ar.tensors().iter().any(|(_, t, _)| t.iter().any(|x| !x.is_finite())) {
            return Err(invalid("AR checkpoint contains non-finite values"));
        }
        let mut out = ar.clone();
        out.config.default_mode = AttentionMode::Bidirectional;
        let d = ar.config.d_model;
        let row = mask_id as usize * d;
        for x in &mut out.tok_emb[row..row + d] {
            *x = rng.gaussian(0.0, INIT_STD);
        }
        Ok(out)
    }

    /// Canonical (name, data, shape) listing; serialization and the optimizer
    /// rely on this order being stable.
    pub fn tensors(&self) -> Vec<(String, &Vec<f64>, Vec<usize>)> {
        let c = &self.config;
        let d = c.d_model;
        let mut out: Vec<(String, &Vec<f64>, Vec<usize>)> = vec![
            ("tok_emb".into(), &self.tok_emb, vec![c.vocab_size, d]),
            ("pos_emb".into(), &self.pos_emb, vec![c.max_len, d]),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            let base = format!("layer{l}");
            out.push((format!("{base}.ln1.scale"), &layer.ln1.scale, vec![d]));
            out.push((format!("{base}.ln1.offset"), &layer.ln1.offset, vec![d]));
            out.push((format!("{base}.wq"), &layer.wq, vec![d, d]));
            out.push((format!("{base}.wk"), &layer.wk, vec![d, d]));
            out.push((format!("{base}.wv"), &layer.wv, vec![d, d]));
            out.push((format!("{base}.wo"), &layer.wo, vec![d, d]));
            out.push((format!("{base}.ln2.scale"), &layer.ln2.scale, vec![d]));
            out.push((format!("{base}.ln2.offset"), &layer.ln2.offset, vec![d]));
            out.push((format!("{base}.w1"), &layer.w1, vec![c.d_ff, d]));
            out.push((format!("{base}.b1"), &layer.b1, vec![c.d_ff]));
            out.push((format!("{base}.w2"), &layer.w2, vec![d, c.d_ff]));
            out.push((format!("{base}.b2"), &layer.b2, vec![d]));
        }
        out.push(("final_norm.scale".into(), &self.final_norm.scale, vec![d]));
        out.push(("final_norm.offset".into(), &self.final_norm.offset, vec![d]));
        out.push(("out_proj".into(), &self.out_proj, vec![c.vocab_size, d]));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = vec![&mut self.tok_emb, &mut self.pos_emb];
        for layer in &mut self.layers {
            out.push(&mut layer.ln1.scale);
            out.push(&mut layer.ln1.offset);
            out.push(&mut layer.wq);
            out.push(&mut layer.wk);
            out.push(&mut layer.wv);
            out.push(&mut layer.wo);
            out.push(&mut layer.ln2.scale);
            out.push(&mut layer.ln2.offset);
            out.push(&mut layer.w1);
            out.push(&mut layer.b1);
            out.push(&mut layer.w2);
            out.push(&mut layer.b2);
        }
        out.push(&mut self.final_norm.scale);
        out.push(&mut self.final_norm.offset);
        out.push(&mut self.out_proj);
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t, _)| t.len()).sum()
    }

    /// Checkpoint container with the model config (and any extra provenance)
    /// embedded as metadata.
    pub fn to_container(&self, extra: serde_json::Value) -> Result<Container> {
        let config = serde_json::json!({
            "model": self.config,
            "extra": extra,
        });
        let mut c = Container::new("checkpoint", config);
        for (name, data, shape) in self.tensors() {
            c.push(&name, shape, TensorData::F64(data.clone()))?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<ModelParams> {
        if c.kind != "checkpoint" {
            return Err(Error::Format(format!("expected a checkpoint container, got {}", c.kind)));
        }
        let config: ModelConfig = serde_json::from_value(c.config["model"].clone())?;
        let mut rng = RngStream::new(0);
        let mut params = ModelParams::init_random(&config, &mut rng)?;
        let names: Vec<String> = params.tensors().iter().map(|(n, _, _)| n.clone()).collect();
        for (name, slot) in names.iter().zip(params.tensors_mut()) {
            let data = c.get(name)?.as_f64()?;
            if data.len() != slot.len() {
                return Err(Error::Format(format!("tensor {name} has wrong size")));
            }
            slot.copy_from_slice(data);
        }
        Ok(params)
    }
}
