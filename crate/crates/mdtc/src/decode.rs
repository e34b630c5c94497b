//! Decoders: confidence-scheduled iterative unmasking (fixed forward-pass
//! count), constrained regeneration for editing, and AR baselines with and
//! without incremental-state caching.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::layout::SequenceLayout;
use crate::net::{forward_detailed, AttentionMode, IncrementalState, ModelParams, PredConvention};
use crate::rng::RngStream;
use crate::schedule::{linear_schedule, planned_unmask_counts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceKind {
    /// Gap between the two largest probabilities.
    TopKMargin,
    /// Largest probability.
    MaxProb,
    /// Negative Shannon entropy (higher = more certain).
    NegEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub steps: usize,
    /// Sampling temperature applied to logits before nucleus sampling.
    pub sample_temperature: f64,
    pub top_p: f64,
    /// Separate temperature applied to logits before the confidence softmax.
    pub confidence_temperature: f64,
    pub confidence_kind: ConfidenceKind,
    pub t_floor: f64,
    /// Prediction convention; `Unshifted` only for the no-label-shift arm.
    pub shifted: bool,
    /// Pad the buffer to this length per forward pass (fixed-cost decoding).
    pub pad_to: Option<usize>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        // sampling constants as tuned for the reference system
        DecodeConfig {
            steps: 16,
            sample_temperature: 0.986,
            top_p: 0.586,
            confidence_temperature: 0.424,
            confidence_kind: ConfidenceKind::TopKMargin,
            t_floor: 0.0,
            shifted: true,
            pad_to: None,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("decode needs at least one step"));
        }
        if self.sample_temperature <= 0.0 || self.confidence_temperature <= 0.0 {
            return Err(invalid("temperatures must be positive"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(invalid(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if !(0.0..1.0).contains(&self.t_floor) {
            return Err(invalid("t_floor outside [0, 1)"));
        }
        Ok(())
    }

    fn conv(&self) -> PredConvention {
        if self.shifted { PredConvention::Shifted } else { PredConvention::Unshifted }
    }
}

/// Per-generation record: when each target position was revealed, how many
/// positions each step revealed, and what the generation cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeTrace {
    /// Step at which each target position was unmasked (usize::MAX = never,
    /// only possible for frozen positions in constrained decodes).
    pub unmask_step: Vec<usize>,
    pub step_unmask_counts: Vec<usize>,
    pub forward_pass_count: usize,
    /// Total per-position evaluations: len x steps for parallel decoding,
    /// sum of prefix lengths for uncached AR.
    pub position_evals: usize,
    pub wall_time_s: f64,
}

impl DecodeTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("position,unmask_step\n");
        for (pos, step) in self.unmask_step.iter().enumerate() {
            out.push_str(&format!("{pos},{step}\n"));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

/// Softmax of `logits / temperature`.
pub fn temperature_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| ((z - m) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Confidence score of a probability vector; higher means more certain.
pub fn confidence(probs: &[f64], kind: ConfidenceKind) -> Result<f64> {
    if probs.len() < 2 {
        return Err(invalid("confidence needs a vocabulary of at least 2"));
    }
    Ok(match kind {
        ConfidenceKind::TopKMargin => {
            let (mut p1, mut p2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &p in probs {
                if p > p1 {
                    p2 = p1;
                    p1 = p;
                } else if p > p2 {
                    p2 = p;
                }
            }
            p1 - p2
        }
        ConfidenceKind::MaxProb => probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ConfidenceKind::NegEntropy => {
            probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum()
        }
    })
}

/// Nucleus sampling: softmax at the sampling temperature, keep the smallest
/// probability-descending prefix with cumulative mass >= top_p (ties broken
/// toward lower token ids), renormalize, draw.
pub fn top_p_sample(logits: &[f64], temperature: f64, top_p: f64, rng: &mut RngStream) -> u32 {
    let probs = temperature_softmax(logits, temperature);
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let mut cutoff = order.len();
    let mut cum = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        cum += probs[idx];
        if cum >= top_p {
            cutoff = rank + 1;
            break;
        }
    }
    let nucleus = &order[..cutoff];
    let mass: f64 = nucleus.iter().map(|&i| probs[i]).sum();
    let mut dart = rng.f64() * mass;
    for &idx in nucleus {
        dart -= probs[idx];
        if dart < 0.0 {
            return idx as u32;
        }
    }
    nucleus[nucleus.len() - 1] as u32
}

struct UnmaskRun {
    tokens: Vec<u32>,
    trace: DecodeTrace,
}

/// Core unmasking loop shared by full and constrained decoding.
///
/// Exactly `steps` forward passes; per step every still-masked position gets
/// a sampled candidate and a confidence score, and the top slice of the
/// amended schedule is revealed. Candidates at positions left masked are
/// discarded and re-predicted next step. Sampling uses per-(step, position)
/// child streams so results are independent of evaluation order.
fn run_unmasking(
    params: &ModelParams,
    layout: &SequenceLayout,
    initial_masked: Vec<bool>,
    config: &DecodeConfig,
    rng: &RngStream,
    mut observer: Option<&mut dyn FnMut(usize, &[u32], &[bool])>,
) -> Result<UnmaskRun> {
    config.validate()?;
    let vocab = &layout.vocab;
    let n_target = layout.target_len();
    let schedule = linear_schedule(config.steps, config.t_floor)?;
    let n_initial = initial_masked.iter().filter(|m| **m).count();
    let planned = planned_unmask_counts(&schedule, n_initial);

    let mut tokens = layout.tokens.clone();
    let mut masked = initial_masked;
    for (rel, m) in masked.iter().enumerate() {
        if *m {
            tokens[layout.target_span.start + rel] = vocab.mask_id;
        }
    }
    let pad_len = config.pad_to.unwrap_or(layout.len()).max(layout.len());
    let mut buffer = vec![vocab.pad_id; pad_len];
    let real_len = layout.len();

    let mut unmask_step = vec![usize::MAX; n_target];
    let mut step_counts = Vec::with_capacity(config.steps);
    let started = Instant::now();
    for step in 0..config.steps {
        buffer[..real_len].copy_from_slice(&tokens);
        let out =
            forward_detailed(params, &buffer, AttentionMode::Bidirectional, real_len, false)?;

        let mut candidates: Vec<(usize, u32, f64)> = Vec::new();
        let step_rng = rng.split_u64(step as u64);
        for (rel, m) in masked.iter().enumerate() {
            if !*m {
                continue;
            }
            let pos = layout.target_span.start + rel;
            let row = out.logits_row(config.conv().pred_row(pos));
            let mut pos_rng = step_rng.split_u64(pos as u64);
            let token = top_p_sample(row, config.sample_temperature, config.top_p, &mut pos_rng);
            let conf_probs = temperature_softmax(row, config.confidence_temperature);
            let score = confidence(&conf_probs, config.confidence_kind)?;
            candidates.push((rel, token, score));
        }

        let quota = planned[step].min(candidates.len());
        // highest confidence first; ties toward lower positions for
        // platform-independent ordering
        candidates.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
        for &(rel, token, _) in candidates.iter().take(quota) {
            tokens[layout.target_span.start + rel] = token;
            masked[rel] = false;
            unmask_step[rel] = step;
        }
        step_counts.push(quota);
        if let Some(obs) = observer.as_deref_mut() {
            obs(step, &tokens, &masked);
        }
    }
    debug_assert!(masked.iter().all(|m| !m), "masks remain after the final step");

    Ok(UnmaskRun {
        tokens,
        trace: DecodeTrace {
            unmask_step,
            step_unmask_counts: step_counts,
            forward_pass_count: config.steps,
            position_evals: pad_len * config.steps,
            wall_time_s: started.elapsed().as_secs_f64(),
        },
    })
}

/// Iterative parallel unmasking of a fully masked target.
pub fn diffuse_decode(
    params: &ModelParams,
    layout: &SequenceLayout,
    config: &DecodeConfig,
    rng: &RngStream,
) -> Result<(Vec<u32>, DecodeTrace)> {
    let all_masked = layout.target().iter().all(|&t| t == layout.vocab.mask_id);
    if !all_masked {
        return Err(invalid("diffuse_decode expects a fully masked target"));
    }
    let run =
        run_unmasking(params, layout, vec![true; layout.target_len()], config, rng, None)?;
    Ok((run.tokens, run.trace))
}

/// Instrumented variant used by the invariant suites: the observer sees the
/// token buffer and mask after every step.
pub fn diffuse_decode_observed(
    params: &ModelParams,
    layout: &SequenceLayout,
    config: &DecodeConfig,
    rng: &RngStream,
    observer: &mut dyn FnMut(usize, &[u32], &[bool]),
) -> Result<(Vec<u32>, DecodeTrace)> {
    let run = run_unmasking(
        params,
        layout,
        vec![true; layout.target_len()],
        config,
        rng,
        Some(observer),
    )?;
    Ok((run.tokens, run.trace))
}

/// Regenerates only the given target positions; everything else is frozen
/// bit-identically. An empty mask set returns the input unchanged.
pub fn constrained_diffuse_decode(
    params: &ModelParams,
    layout: &SequenceLayout,
    mask_set: &[usize],
    config: &DecodeConfig,
    rng: &RngStream,
) -> Result<Vec<u32>> {
    if mask_set.is_empty() {
        return Ok(layout.tokens.clone());
    }
    let n = layout.target_len();
    let mut masked = vec![false; n];
    for &rel in mask_set {
        if rel >= n {
            return Err(invalid(format!("mask position {rel} outside the target span")));
        }
        masked[rel] = true;
    }
    let run = run_unmasking(params, layout, masked, config, rng, None)?;
    Ok(run.tokens)
}

/// Sequential AR baseline. With `cached` the per-layer key/value states are
/// reused across steps; without it the whole prefix is recomputed every
/// step. Both variants draw the same sampling streams, so for a given seed
/// they emit bit-identical tokens.
pub fn ar_decode(
    params: &ModelParams,
    layout: &SequenceLayout,
    cached: bool,
    temperature: f64,
    top_p: f64,
    rng: &RngStream,
) -> Result<(Vec<u32>, DecodeTrace)> {
    if temperature <= 0.0 || !(top_p > 0.0 && top_p <= 1.0) {
        return Err(invalid("bad sampling parameters"));
    }
    let mut tokens = layout.tokens.clone();
    let start = layout.target_span.start;
    let n_target = layout.target_len();
    let started = Instant::now();
    let mut position_evals = 0usize;

    if cached {
        let mut state = IncrementalState::new(params);
        let mut logits = Vec::new();
        for &tok in tokens.iter().take(start) {
            logits = state.append(params, tok)?;
            position_evals += 1;
        }
        for i in 0..n_target {
            let pos = start + i;
            let mut pos_rng = rng.split_u64(pos as u64);
            let token = top_p_sample(&logits, temperature, top_p, &mut pos_rng);
            tokens[pos] = token;
            if i + 1 < n_target {
                logits = state.append(params, token)?;
                position_evals += 1;
            }
        }
    } else {
        for i in 0..n_target {
            let pos = start + i;
            // recompute the full prefix from scratch
            let mut state = IncrementalState::new(params);
            let mut logits = Vec::new();
            for &tok in tokens.iter().take(pos) {
                logits = state.append(params, tok)?;
                position_evals += 1;
            }
            let mut pos_rng = rng.split_u64(pos as u64);
            tokens[pos] = top_p_sample(&logits, temperature, top_p, &mut pos_rng);
        }
    }

    let trace = DecodeTrace {
        unmask_step: (0..n_target).collect(),
        step_unmask_counts: vec![1; n_target],
        forward_pass_count: n_target,
        position_evals,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok((tokens, trace))
}
