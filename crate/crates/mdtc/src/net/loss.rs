//! Label-shifted prediction and the two training losses.
//!
//! Label shift keeps the AR convention inside the diffusion model: the
//! hidden state at position i predicts the token at i+1, implemented by
//! reading logits row i-1 as the prediction for position i.

use crate::error::{invalid, Result};
use crate::layout::SequenceLayout;
use crate::mask::MaskState;

use super::{forward, AttentionMode, ModelParams};

/// Which logits row predicts position i.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredConvention {
    /// Prediction for position i is logits row i-1 (AR-compatible).
    Shifted,
    /// Prediction for position i is logits row i (ablation arm).
    Unshifted,
}

impl PredConvention {
    pub(crate) fn pred_row(&self, position: usize) -> usize {
        match self {
            PredConvention::Shifted => position - 1,
            PredConvention::Unshifted => position,
        }
    }
}

/// Shifted view: row i of the output is row i-1 of the input; row 0 carries
/// no prediction and is zero-filled.
pub fn shift_logits(logits: &[f64], len: usize, vocab: usize) -> Result<Vec<f64>> {
    if len < 2 {
        return Err(invalid("shift needs at least two positions"));
    }
    debug_assert_eq!(logits.len(), len * vocab);
    let mut out = vec![0.0; len * vocab];
    out[vocab..].copy_from_slice(&logits[..(len - 1) * vocab]);
    Ok(out)
}

/// Inverse of [`shift_logits`] on the valid range; the last row is zeroed.
pub fn unshift_logits(shifted: &[f64], len: usize, vocab: usize) -> Result<Vec<f64>> {
    if len < 2 {
        return Err(invalid("unshift needs at least two positions"));
    }
    debug_assert_eq!(shifted.len(), len * vocab);
    let mut out = vec![0.0; len * vocab];
    out[..(len - 1) * vocab].copy_from_slice(&shifted[vocab..]);
    Ok(out)
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// -log softmax(row)[target]
pub(crate) fn cross_entropy(row: &[f64], target: u32) -> f64 {
    log_sum_exp(row) - row[target as usize]
}

/// 1/t-weighted cross entropy over the given (logits row, true token) pairs.
/// This is the loss kernel shared by the model-level diffusion loss and the
/// closed-form unit checks.
pub fn weighted_masked_ce(logits: &[f64], vocab: usize, targets: &[(usize, u32)], t: f64) -> f64 {
    let sum: f64 = targets
        .iter()
        .map(|&(row, tok)| cross_entropy(&logits[row * vocab..(row + 1) * vocab], tok))
        .sum();
    sum / t
}

/// Mean next-token cross entropy over target-span positions, causal mode.
pub fn loss_ar(params: &ModelParams, layout: &SequenceLayout) -> Result<f64> {
    let out = forward(params, &layout.tokens, AttentionMode::Causal, false)?;
    let n = layout.target_len() as f64;
    let sum: f64 = layout
        .target_span
        .range()
        .map(|i| cross_entropy(out.logits_row(i - 1), layout.tokens[i]))
        .sum();
    Ok(sum / n)
}

/// Masked diffusion loss: (1/t) * sum over masked positions of
/// -log p(original token | corrupted sequence), bidirectional mode.
/// Unmasked positions contribute exactly zero; an empty mask set returns 0.
pub fn loss_diffusion(
    params: &ModelParams,
    layout: &SequenceLayout,
    masked_tokens: &[u32],
    mask: &MaskState,
    t: f64,
    conv: PredConvention,
) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(invalid(format!("t={t} outside (0, 1]")));
    }
    if mask.masked.len() != layout.target_len() || masked_tokens.len() != layout.len() {
        return Err(invalid("mask state inconsistent with layout"));
    }
    if mask.n_masked() == 0 {
        return Ok(0.0);
    }
    let out = forward(params, masked_tokens, AttentionMode::Bidirectional, false)?;
    let vocab = params.config.vocab_size;
    let targets: Vec<(usize, u32)> = mask
        .masked
        .iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .map(|(rel, _)| {
            let i = layout.target_span.start + rel;
            (conv.pred_row(i), layout.tokens[i])
        })
        .collect();
    Ok(weighted_masked_ce(&out.logits, vocab, &targets, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::build_layout;
    use crate::mask::apply_random_mask;
    use crate::net::ModelConfig;
    use crate::rng::RngStream;
    use crate::vocab::Vocab;

    fn setup() -> (ModelParams, SequenceLayout, Vocab) {
        let v = Vocab::canonical(2, 6).unwrap();
        let cfg = ModelConfig {
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            d_ff: 32,
            vocab_size: v.size as usize,
            max_len: 32,
            default_mode: AttentionMode::Causal,
        };
        let params = ModelParams::init_random(&cfg, &mut RngStream::new(21)).unwrap();
        let layout = build_layout(&[v.text_id(0)], &[], 5, &v)
            .unwrap()
            .with_target(&[v.speech_id(0), v.speech_id(1), v.speech_id(2), v.speech_id(3), v.speech_id(4)])
            .unwrap();
        (params, layout, v)
    }

    #[test]
    fn shift_moves_rows_and_round_trips() {
        let logits = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 3 rows x 2 vocab
        let s = shift_logits(&logits, 3, 2).unwrap();
        assert_eq!(&s[2..6], &[1.0, 2.0, 3.0, 4.0]); // rows 1,2 are old rows 0,1
        assert_eq!(&s[..2], &[0.0, 0.0]);
        let u = unshift_logits(&s, 3, 2).unwrap();
        assert_eq!(&u[..4], &logits[..4]);
        assert!(shift_logits(&[1.0, 2.0], 1, 2).is_err());
    }

    #[test]
    fn shifted_loss_equals_target_shifted_ce() {
        // equivalence of the two formulations: CE(shift(logits)[i], x_i) over
        // the target span equals CE(logits[i], x_{i+1}) over shifted indices
        let (params, layout, _) = setup();
        let out = forward(&params, &layout.tokens, AttentionMode::Causal, false).unwrap();
        let vocab = params.config.vocab_size;
        let shifted = shift_logits(&out.logits, layout.len(), vocab).unwrap();
        let via_shift: f64 = layout
            .target_span
            .range()
            .map(|i| cross_entropy(&shifted[i * vocab..(i + 1) * vocab], layout.tokens[i]))
            .sum::<f64>()
            / layout.target_len() as f64;
        let via_targets: f64 = layout
            .target_span
            .range()
            .map(|i| cross_entropy(out.logits_row(i - 1), layout.tokens[i]))
            .sum::<f64>()
            / layout.target_len() as f64;
        assert!((via_shift - via_targets).abs() < 1e-15);
        assert!((loss_ar(&params, &layout).unwrap() - via_targets).abs() < 1e-15);
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let (mut params, layout, _) = setup();
        // zero output projection makes every logits row uniform
        for x in &mut params.out_proj {
            *x = 0.0;
        }
        let loss = loss_ar(&params, &layout).unwrap();
        let expect = (params.config.vocab_size as f64).ln();
        assert!((loss - expect).abs() < 1e-12, "{loss} vs {expect}");
    }

    #[test]
    fn ar_loss_counts_only_target_span() {
        // same target, different text: the text portion never enters the sum,
        // so only logits rows inside the target span matter
        let (params, layout, _) = setup();
        let loss = loss_ar(&params, &layout).unwrap();
        let out = forward(&params, &layout.tokens, AttentionMode::Causal, false).unwrap();
        let manual: f64 = layout
            .target_span
            .range()
            .map(|i| cross_entropy(out.logits_row(i - 1), layout.tokens[i]))
            .sum::<f64>()
            / layout.target_len() as f64;
        assert_eq!(loss, manual);
    }

    #[test]
    fn empty_mask_set_is_zero_loss() {
        let (params, layout, _) = setup();
        let mask = MaskState { masked: vec![false; layout.target_len()], step: 0 };
        let loss =
            loss_diffusion(&params, &layout, &layout.tokens, &mask, 0.7, PredConvention::Shifted)
                .unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn unit_weight_at_t1_equals_plain_ce_sum() {
        let (params, layout, _) = setup();
        let mut rng = RngStream::new(33);
        let (masked_tokens, mask) = apply_random_mask(&layout, 1.0, &mut rng).unwrap();
        let loss = loss_diffusion(
            &params, &layout, &masked_tokens, &mask, 1.0, PredConvention::Shifted,
        )
        .unwrap();
        let out = forward(&params, &masked_tokens, AttentionMode::Bidirectional, false).unwrap();
        let manual: f64 = layout
            .target_span
            .range()
            .map(|i| cross_entropy(out.logits_row(i - 1), layout.tokens[i]))
            .sum();
        assert!((loss - manual).abs() < 1e-12);
    }

    #[test]
    fn closed_form_single_masked_position() {
        // engineered logits: probability of the true token is exactly 0.25,
        // so the loss is (1/0.5) * (-ln 0.25) = 2.772588722239781
        let mut logits = vec![-1e9; 2 * 7];
        logits[7] = 0.25f64.ln();
        logits[8] = 0.75f64.ln();
        let loss = weighted_masked_ce(&logits, 7, &[(1, 0)], 0.5);
        assert!((loss - 2.772_588_722_239_781).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn bad_t_rejected() {
        let (params, layout, _) = setup();
        let mask = MaskState::all_masked(layout.target_len());
        for t in [0.0, -0.5, 1.5] {
            assert!(loss_diffusion(
                &params, &layout, &layout.tokens, &mask, t, PredConvention::Shifted
            )
            .is_err());
        }
    }
}
