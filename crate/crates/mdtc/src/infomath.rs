//! Exact information-theoretic oracles over enumerable processes.
//!
//! Certifies, by enumeration, that the expected KL gap between the optimal
//! bidirectional predictor and the left-context-only predictor never exceeds
//! the process's forward-dependence constant. All quantities are in nats.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;
use crate::synth::{exact_joint, JointTable, ProcessSpec};

/// Positions beyond this make exact subset maximization (2^(i-1) subsets per
/// position) impractical.
pub const MAX_EXACT_SUBSET_LEN: usize = 10;
/// Reveal-pattern budget for the exact expected-KL computation.
pub const MAX_EXACT_PATTERNS: usize = 1 << 13;

const NEG_CLAMP: f64 = -1e-12;
/// Conditioning events lighter than this are skipped and their mass reported.
const DEGENERATE_MASS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsMethod {
    Exact,
    SampledLowerBound,
}

#[derive(Debug, Clone)]
pub struct MiEntry {
    pub position: usize,
    pub subset: Vec<usize>,
    pub mi: f64,
}

/// Maximum over positions i and past subsets S of I(x_i; X_{>i} | X_S).
#[derive(Debug, Clone)]
pub struct EpsReport {
    pub eps: f64,
    pub argmax_position: usize,
    pub argmax_subset: Vec<usize>,
    pub table: Vec<MiEntry>,
    pub method: EpsMethod,
}

fn clamp_nonneg(x: f64, what: &str) -> f64 {
    debug_assert!(x >= NEG_CLAMP, "{what} = {x} below the roundoff clamp");
    x.max(0.0)
}

#[inline]
fn pack(seq: &[u32], positions: &[usize], alphabet: usize) -> usize {
    let mut key = 0usize;
    for &p in positions {
        key = key * alphabet + seq[p] as usize;
    }
    key
}

/// I(x_i; X_B | X_S) by two passes over the joint table, nats.
fn conditional_mi(table: &JointTable, i: usize, cond: &[usize], future: &[usize]) -> f64 {
    if future.is_empty() {
        return 0.0;
    }
    let v = table.alphabet;
    let dim_s = v.pow(cond.len() as u32);
    let dim_b = v.pow(future.len() as u32);
    let mut p_sab = vec![0.0f64; dim_s * v * dim_b];
    let mut p_s = vec![0.0f64; dim_s];
    let mut p_sa = vec![0.0f64; dim_s * v];
    let mut p_sb = vec![0.0f64; dim_s * dim_b];
    for (seq, p) in &table.entries {
        if *p <= 0.0 {
            continue;
        }
        let ks = pack(seq, cond, v);
        let kb = pack(seq, future, v);
        let a = seq[i] as usize;
        p_sab[(ks * v + a) * dim_b + kb] += p;
        p_s[ks] += p;
        p_sa[ks * v + a] += p;
        p_sb[ks * dim_b + kb] += p;
    }
    let mut mi = 0.0;
    for (seq, p) in &table.entries {
        if *p <= 0.0 {
            continue;
        }
        let ks = pack(seq, cond, v);
        let kb = pack(seq, future, v);
        let a = seq[i] as usize;
        let cell = p_sab[(ks * v + a) * dim_b + kb];
        // each (s, a, b) cell contributes its summed mass exactly once in total
        mi += p * (cell * p_s[ks] / (p_sa[ks * v + a] * p_sb[ks * dim_b + kb])).ln();
    }
    clamp_nonneg(mi, "conditional MI")
}

fn subset_from_mask(mask: usize) -> Vec<usize> {
    (0..usize::BITS as usize).filter(|b| mask >> b & 1 == 1).collect()
}

fn eps_from_entries(table: Vec<MiEntry>, method: EpsMethod) -> EpsReport {
    let mut eps = 0.0;
    let mut argmax_position = 0;
    let mut argmax_subset = Vec::new();
    for e in &table {
        if e.mi > eps {
            eps = e.mi;
            argmax_position = e.position;
            argmax_subset = e.subset.clone();
        }
    }
    EpsReport { eps, argmax_position, argmax_subset, table, method }
}

fn fixed_len_table(spec: &ProcessSpec) -> Result<(JointTable, usize)> {
    let table = exact_joint(spec)?;
    let n = table
        .fixed_len
        .ok_or_else(|| invalid("information oracles need a fixed-length law"))?;
    Ok((table, n))
}

/// Exact forward-dependence constant: enumerates every position and every
/// subset of its past.
pub fn eps_forward_dependence(spec: &ProcessSpec) -> Result<EpsReport> {
    let (table, n) = fixed_len_table(spec)?;
    if n > MAX_EXACT_SUBSET_LEN {
        return Err(Error::ResourceLimit(format!(
            "subset enumeration needs N <= {MAX_EXACT_SUBSET_LEN}, got {n}; \
             use the sampled lower bound instead"
        )));
    }
    let mut entries = Vec::new();
    for i in 0..n {
        let future: Vec<usize> = (i + 1..n).collect();
        for mask in 0..(1usize << i) {
            let cond = subset_from_mask(mask);
            let mi = conditional_mi(&table, i, &cond, &future);
            entries.push(MiEntry { position: i, subset: cond, mi });
        }
    }
    Ok(eps_from_entries(entries, EpsMethod::Exact))
}

/// Random-subset variant for longer sequences; the result is a lower bound
/// on the true eps and the report says so.
pub fn eps_forward_dependence_sampled(
    spec: &ProcessSpec,
    subsets_per_position: usize,
    rng: &mut RngStream,
) -> Result<EpsReport> {
    let (table, n) = fixed_len_table(spec)?;
    let mut entries = Vec::new();
    for i in 0..n {
        let future: Vec<usize> = (i + 1..n).collect();
        // always include the empty and full past
        let mut masks = vec![0usize, (1usize << i) - 1];
        let mut sub_rng = rng.split_u64(i as u64);
        for _ in 0..subsets_per_position {
            masks.push((sub_rng.next_u64() as usize) & ((1usize << i) - 1));
        }
        masks.sort_unstable();
        masks.dedup();
        for mask in masks {
            let cond = subset_from_mask(mask);
            let mi = conditional_mi(&table, i, &cond, &future);
            entries.push(MiEntry { position: i, subset: cond, mi });
        }
    }
    Ok(eps_from_entries(entries, EpsMethod::SampledLowerBound))
}

/// Expected KL between the two-sided and left-only posteriors of x_i for one
/// fixed reveal pattern, plus the conditioning mass skipped as degenerate.
fn pattern_kl_contrib(table: &JointTable, i: usize, revealed: &[usize]) -> (f64, f64) {
    let v = table.alphabet;
    let left: Vec<usize> = revealed.iter().copied().filter(|&j| j < i).collect();
    let dim_f = v.pow(revealed.len() as u32);
    let dim_l = v.pow(left.len() as u32);
    let mut p_fa = vec![0.0f64; dim_f * v];
    let mut p_f = vec![0.0f64; dim_f];
    let mut p_la = vec![0.0f64; dim_l * v];
    let mut p_l = vec![0.0f64; dim_l];
    for (seq, p) in &table.entries {
        if *p <= 0.0 {
            continue;
        }
        let kf = pack(seq, revealed, v);
        let kl = pack(seq, &left, v);
        let a = seq[i] as usize;
        p_fa[kf * v + a] += p;
        p_f[kf] += p;
        p_la[kl * v + a] += p;
        p_l[kl] += p;
    }
    let mut acc = 0.0;
    let mut skipped = 0.0;
    for (seq, p) in &table.entries {
        if *p <= 0.0 {
            continue;
        }
        let kf = pack(seq, revealed, v);
        let kl = pack(seq, &left, v);
        let a = seq[i] as usize;
        if p_f[kf] < DEGENERATE_MASS || p_l[kl] < DEGENERATE_MASS {
            skipped += p;
            continue;
        }
        let post_full = p_fa[kf * v + a] / p_f[kf];
        let post_left = p_la[kl * v + a] / p_l[kl];
        acc += p * (post_full / post_left).ln();
    }
    (clamp_nonneg(acc, "expected KL"), skipped)
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(invalid(format!("tau = {tau} outside (0, 1)")));
    }
    Ok(())
}

/// All per-pattern contributions for position i, indexed by the reveal
/// bitmask over the other N-1 positions. Weights are applied per tau later.
fn pattern_contribs(table: &JointTable, n: usize, i: usize) -> Result<Vec<f64>> {
    let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    let n_patterns = 1usize << others.len();
    if n_patterns > MAX_EXACT_PATTERNS {
        return Err(Error::ResourceLimit(format!(
            "{n_patterns} reveal patterns exceed the exact budget of {MAX_EXACT_PATTERNS}; \
             use the Monte Carlo estimator"
        )));
    }
    let mut contribs = Vec::with_capacity(n_patterns);
    for pat in 0..n_patterns {
        let revealed: Vec<usize> = others
            .iter()
            .enumerate()
            .filter(|(b, _)| pat >> b & 1 == 1)
            .map(|(_, &j)| j)
            .collect();
        let (c, _skipped) = pattern_kl_contrib(table, i, &revealed);
        contribs.push(c);
    }
    Ok(contribs)
}

fn weighted_gap(contribs: &[f64], n_others: usize, tau: f64) -> f64 {
    let mut total = 0.0;
    for (pat, c) in contribs.iter().enumerate() {
        let revealed = (pat as u64).count_ones() as i32;
        let w = (1.0 - tau).powi(revealed) * tau.powi(n_others as i32 - revealed);
        total += w * c;
    }
    total
}

/// E over reveal patterns (each position independently revealed with
/// probability 1-tau) and revealed values of
/// KL( P(x_i | rev_<i, rev_>i) || P(x_i | rev_<i) ), exact.
pub fn expected_kl_gap(spec: &ProcessSpec, tau: f64, i: usize) -> Result<f64> {
    check_tau(tau)?;
    let (table, n) = fixed_len_table(spec)?;
    if i >= n {
        return Err(invalid(format!("position {i} outside sequence of length {n}")));
    }
    let contribs = pattern_contribs(&table, n, i)?;
    Ok(weighted_gap(&contribs, n - 1, tau))
}

/// Monte Carlo fallback: samples (pattern, values) and averages conditional
/// KLs computed from the joint table. Returns (estimate, standard error).
pub fn expected_kl_gap_mc(
    spec: &ProcessSpec,
    tau: f64,
    i: usize,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    check_tau(tau)?;
    if n_samples < 2 {
        return Err(invalid("need at least 2 samples"));
    }
    let (table, n) = fixed_len_table(spec)?;
    if i >= n {
        return Err(invalid(format!("position {i} outside sequence of length {n}")));
    }
    let probs: Vec<f64> = table.entries.iter().map(|(_, p)| *p).collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let seq = &table.entries[rng.categorical(&probs)].0;
        let revealed: Vec<(usize, u32)> = (0..n)
            .filter(|&j| j != i && rng.f64() < 1.0 - tau)
            .map(|j| (j, seq[j]))
            .collect();
        let left: Vec<(usize, u32)> =
            revealed.iter().copied().filter(|&(j, _)| j < i).collect();
        let post_full = table.conditional(&revealed, i)?;
        let post_left = table.conditional(&left, i)?;
        let kl: f64 = post_full
            .iter()
            .zip(&post_left)
            .filter(|(q, _)| **q > 0.0)
            .map(|(q, p)| q * (q / p).ln())
            .sum();
        sum += kl;
        sum_sq += kl * kl;
    }
    let mean = sum / n_samples as f64;
    let var = (sum_sq / n_samples as f64 - mean * mean).max(0.0);
    Ok((mean, (var / n_samples as f64).sqrt()))
}

#[derive(Debug, Clone)]
pub struct TheoremRow {
    pub position: usize,
    pub tau: f64,
    pub kl_gap: f64,
    pub eps: f64,
    pub margin: f64,
    pub pass: bool,
}

/// Outcome of checking kl_gap(i, tau) <= eps + tolerance across the grid.
#[derive(Debug, Clone)]
pub struct TheoremReport {
    pub eps_report: EpsReport,
    pub rows: Vec<TheoremRow>,
    pub all_pass: bool,
    pub tolerance: f64,
}

pub const THEOREM_TOLERANCE: f64 = 1e-9;

/// Checks the bound for every position and every requested masking rate.
pub fn verify_theorem(spec: &ProcessSpec, taus: &[f64]) -> Result<TheoremReport> {
    if taus.is_empty() {
        return Err(invalid("need at least one tau"));
    }
    for &t in taus {
        check_tau(t)?;
    }
    let eps_report = eps_forward_dependence(spec)?;
    let (table, n) = fixed_len_table(spec)?;
    let mut rows = Vec::new();
    let mut all_pass = true;
    for i in 0..n {
        let contribs = pattern_contribs(&table, n, i)?;
        for &tau in taus {
            let kl_gap = weighted_gap(&contribs, n - 1, tau);
            let margin = eps_report.eps - kl_gap;
            let pass = kl_gap <= eps_report.eps + THEOREM_TOLERANCE;
            all_pass &= pass;
            rows.push(TheoremRow { position: i, tau, kl_gap, eps: eps_report.eps, margin, pass });
        }
    }
    Ok(TheoremReport { eps_report, rows, all_pass, tolerance: THEOREM_TOLERANCE })
}

impl TheoremReport {
    pub fn to_csv(&self) -> String {
        let method = match self.eps_report.method {
            EpsMethod::Exact => "exact",
            EpsMethod::SampledLowerBound => "sampled_lower_bound",
        };
        let mut out = String::from("position,tau,kl_gap,eps,margin,method\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.12e},{:.12e},{:.12e},{}",
                r.position, r.tau, r.kl_gap, r.eps, r.margin, method
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Human-readable summary; all quantities in nats.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let e = &self.eps_report;
        let _ = writeln!(
            s,
            "eps = {:.6} nats ({}) at position {} with past subset {:?}",
            e.eps,
            match e.method {
                EpsMethod::Exact => "exact max over all (i, S)",
                EpsMethod::SampledLowerBound => "sampled lower bound, non-certifying",
            },
            e.argmax_position,
            e.argmax_subset
        );
        let worst = self
            .rows
            .iter()
            .min_by(|a, b| a.margin.partial_cmp(&b.margin).unwrap());
        if let Some(w) = worst {
            let _ = writeln!(
                s,
                "worst margin {:.3e} nats at position {} tau {}",
                w.margin, w.position, w.tau
            );
        }
        let _ = writeln!(
            s,
            "{} of {} (position, tau) checks pass at tolerance {:.0e}",
            self.rows.iter().filter(|r| r.pass).count(),
            self.rows.len(),
            self.tolerance
        );
        s
    }
}
