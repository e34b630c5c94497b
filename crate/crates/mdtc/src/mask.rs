//! Forward masking process: independently replace each target token by
//! `[MASK]` with probability t.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::layout::SequenceLayout;
use crate::rng::RngStream;

/// Which target positions are currently masked, plus the decode step index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskState {
    /// One flag per target position (relative to the target span).
    pub masked: Vec<bool>,
    pub step: usize,
}

impl MaskState {
    pub fn n_masked(&self) -> usize {
        self.masked.iter().filter(|m| **m).count()
    }

    pub fn all_masked(len: usize) -> MaskState {
        MaskState { masked: vec![true; len], step: 0 }
    }
}

/// Masks each target-span token independently with probability `t` and
/// returns the corrupted buffer plus the exact replacement record. Tokens
/// outside the target span are never touched.
pub fn apply_random_mask(
    layout: &SequenceLayout,
    t: f64,
    rng: &mut RngStream,
) -> Result<(Vec<u32>, MaskState)> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(invalid(format!("mask rate t={t} outside (0, 1]")));
    }
    let mut tokens = layout.tokens.clone();
    let mut masked = vec![false; layout.target_len()];
    for (rel, i) in layout.target_span.range().enumerate() {
        if rng.f64() < t {
            tokens[i] = layout.vocab.mask_id;
            masked[rel] = true;
        }
    }
    Ok((tokens, MaskState { masked, step: 0 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::build_layout;
    use crate::vocab::Vocab;

    fn realized_layout() -> SequenceLayout {
        let v = Vocab::canonical(4, 12).unwrap();
        let l = build_layout(&[v.text_id(0)], &[v.speech_id(7)], 4, &v).unwrap();
        l.with_target(&[v.speech_id(0), v.speech_id(1), v.speech_id(2), v.speech_id(3)])
            .unwrap()
    }

    #[test]
    fn probability_one_masks_everything() {
        let l = realized_layout();
        let mut rng = RngStream::new(11);
        let (tokens, state) = apply_random_mask(&l, 1.0, &mut rng).unwrap();
        assert!(state.masked.iter().all(|m| *m));
        for i in l.target_span.range() {
            assert_eq!(tokens[i], l.vocab.mask_id);
        }
    }

    #[test]
    fn seeded_pattern_is_reproducible() {
        let l = realized_layout();
        let run = |seed| {
            let mut rng = RngStream::new(seed);
            apply_random_mask(&l, 0.5, &mut rng).unwrap()
        };
        // golden pattern for seed 42, frozen from the first run
        let (_, state) = run(42);
        assert_eq!(state.masked, vec![true, false, true, false]);
        assert_eq!(run(42), run(42));
    }

    #[test]
    fn non_target_spans_untouched() {
        let l = realized_layout();
        let mut rng = RngStream::new(3);
        for _ in 0..200 {
            let (tokens, state) = apply_random_mask(&l, 0.6, &mut rng).unwrap();
            for (i, (a, b)) in tokens.iter().zip(l.tokens.iter()).enumerate() {
                if l.target_span.contains(i) {
                    let rel = i - l.target_span.start;
                    if state.masked[rel] {
                        assert_eq!(*a, l.vocab.mask_id);
                    } else {
                        assert_eq!(a, b);
                    }
                } else {
                    assert_eq!(a, b, "non-target token changed at {i}");
                }
            }
        }
    }

    #[test]
    fn tiny_rate_masks_almost_nothing() {
        let l = realized_layout();
        let mut rng = RngStream::new(77);
        let trials = 100_000;
        let mut masked = 0usize;
        for _ in 0..trials {
            let (_, state) = apply_random_mask(&l, 1e-9, &mut rng).unwrap();
            masked += state.n_masked();
        }
        let n = (trials * l.target_len()) as f64;
        let p = 1e-9;
        let sigma = (n * p * (1.0 - p)).sqrt();
        assert!((masked as f64 - n * p).abs() <= 3.0 * sigma + 1.0);
    }

    #[test]
    fn out_of_domain_rate_rejected() {
        let l = realized_layout();
        let mut rng = RngStream::new(0);
        assert!(apply_random_mask(&l, 0.0, &mut rng).is_err());
        assert!(apply_random_mask(&l, 1.5, &mut rng).is_err());
        assert!(apply_random_mask(&l, -0.1, &mut rng).is_err());
    }
}
