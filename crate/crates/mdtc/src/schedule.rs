//! Masking-level schedule for iterative unmasking: `linspace(1, t_floor, T+1)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// `levels[k]` is the masking level after k steps; strictly decreasing
    /// from 1 down to the floor.
    pub levels: Vec<f64>,
}

impl Schedule {
    pub fn steps(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn floor(&self) -> f64 {
        *self.levels.last().unwrap()
    }
}

/// T+1 equally spaced levels from 1 down to `t_floor`.
pub fn linear_schedule(steps: usize, t_floor: f64) -> Result<Schedule> {
    if steps == 0 {
        return Err(invalid("schedule needs at least one step"));
    }
    if !(0.0..1.0).contains(&t_floor) {
        return Err(invalid(format!("t_floor {t_floor} outside [0, 1)")));
    }
    let t = steps as f64;
    let levels = (0..=steps)
        .map(|k| ((t - k as f64) + k as f64 * t_floor) / t)
        .collect();
    Ok(Schedule { levels })
}

/// Per-step unmask counts for a fully masked target of `target_len` tokens:
/// `floor(|M| * (1 - t_{k+1}/t_k))`, amended to make at least one move of
/// progress per step while masks remain and to unmask everything at the final
/// step.
pub fn planned_unmask_counts(schedule: &Schedule, target_len: usize) -> Vec<usize> {
    let steps = schedule.steps();
    let mut remaining = target_len;
    let mut counts = Vec::with_capacity(steps);
    for k in 0..steps {
        let n = if remaining == 0 {
            0
        } else if k == steps - 1 {
            remaining
        } else {
            let ratio = 1.0 - schedule.levels[k + 1] / schedule.levels[k];
            ((remaining as f64 * ratio).floor() as usize).clamp(1, remaining)
        };
        counts.push(n);
        remaining -= n;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(got: &[f64], want: &[f64]) {
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn equal_spacing_to_zero() {
        let s = linear_schedule(4, 0.0).unwrap();
        assert_close(&s.levels, &[1.0, 0.75, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn two_endpoints() {
        let s = linear_schedule(1, 0.0).unwrap();
        assert_close(&s.levels, &[1.0, 0.0]);
    }

    #[test]
    fn arithmetic_progression_with_floor() {
        let s = linear_schedule(3, 0.1).unwrap();
        assert_close(&s.levels, &[1.0, 0.7, 0.4, 0.1]);
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(linear_schedule(0, 0.0).is_err());
        assert!(linear_schedule(4, 1.0).is_err());
        assert!(linear_schedule(4, -0.1).is_err());
    }

    #[test]
    fn strictly_decreasing_for_many_shapes() {
        for steps in 1..40 {
            for &floor in &[0.0, 0.05, 0.3, 0.9] {
                let s = linear_schedule(steps, floor).unwrap();
                assert_eq!(s.levels.len(), steps + 1);
                assert_eq!(s.levels[0], 1.0);
                assert!((s.floor() - floor).abs() < 1e-12);
                for w in s.levels.windows(2) {
                    assert!(w[1] < w[0]);
                }
            }
        }
    }

    #[test]
    fn planned_counts_t4_len8() {
        let s = linear_schedule(4, 0.0).unwrap();
        assert_eq!(planned_unmask_counts(&s, 8), vec![2, 2, 2, 2]);
    }

    #[test]
    fn planned_counts_always_cover_target() {
        for steps in 1..20 {
            for len in 1..40 {
                let s = linear_schedule(steps, 0.0).unwrap();
                let counts = planned_unmask_counts(&s, len);
                assert_eq!(counts.iter().sum::<usize>(), len);
                // at least one unmask per step until the target is exhausted
                let mut remaining = len;
                for &c in &counts {
                    if remaining > 0 {
                        assert!(c >= 1);
                    } else {
                        assert_eq!(c, 0);
                    }
                    remaining -= c;
                }
            }
        }
    }
}
