//! Synthetic small-alphabet token processes with exactly enumerable joint
//! distributions. These stand in for acoustic token streams: they are cheap
//! to sample for training and small enough that posteriors, mutual
//! informations, and sequence likelihoods can be computed exactly.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::layout::{build_layout, SequenceLayout, Span};
use crate::rng::RngStream;
use crate::vocab::Vocab;

const PROB_ROW_TOL: f64 = 1e-12;
/// Enumeration budget for exact joint tables.
pub const MAX_JOINT_STATES: usize = 1_000_000;

/// Contiguous, ordered target spans, one per text token, covering the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthAlignment {
    pub spans: Vec<Span>,
}

impl GroundTruthAlignment {
    pub fn validate(&self, target_len: usize) -> Result<()> {
        let mut cursor = 0usize;
        for s in &self.spans {
            if s.start != cursor || s.is_empty() {
                return Err(invalid("alignment spans must be contiguous and non-empty"));
            }
            cursor = s.end;
        }
        if cursor != target_len {
            return Err(invalid("alignment spans must cover the target"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessKind {
    /// First-order chain over the observed alphabet.
    MarkovChain { init: Vec<f64>, trans: Vec<Vec<f64>> },
    /// Hidden first-order chain; each observation equals the hidden symbol
    /// with probability 1 - emit_noise, otherwise a uniform draw.
    NoisyChain { init: Vec<f64>, trans: Vec<Vec<f64>>, emit_noise: f64 },
    /// Each text symbol expands to its codeword; with `dur_jitter` the
    /// codeword's last symbol is doubled with probability 1/2.
    TextExpansion { codebook: Vec<Vec<u32>>, dur_jitter: bool, text_len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub kind: ProcessKind,
    /// Observed alphabet size V.
    pub alphabet: usize,
    /// Sequence length N (nominal for jittered expansion).
    pub len: usize,
}

fn check_row(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(invalid(format!("{what} has entries outside [0,1]")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > PROB_ROW_TOL {
        return Err(invalid(format!("{what} sums to {s}, expected 1")));
    }
    Ok(())
}

impl ProcessSpec {
    pub fn markov(init: Vec<f64>, trans: Vec<Vec<f64>>, len: usize) -> Result<ProcessSpec> {
        let alphabet = init.len();
        let spec = ProcessSpec { kind: ProcessKind::MarkovChain { init, trans }, alphabet, len };
        spec.validate()?;
        Ok(spec)
    }

    pub fn noisy_chain(
        init: Vec<f64>,
        trans: Vec<Vec<f64>>,
        emit_noise: f64,
        len: usize,
    ) -> Result<ProcessSpec> {
        let alphabet = init.len();
        let spec = ProcessSpec {
            kind: ProcessKind::NoisyChain { init, trans, emit_noise },
            alphabet,
            len,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Expansion process with the canonical injective codebook
    /// `g(y) = [y*L, .., y*L + L - 1]` over a speech alphabet of `D * L`.
    pub fn text_expansion(
        text_alphabet: usize,
        expand_len: usize,
        dur_jitter: bool,
        text_len: usize,
    ) -> Result<ProcessSpec> {
        if text_alphabet == 0 || expand_len == 0 || text_len == 0 {
            return Err(invalid("text_alphabet, expand_len, text_len must be >= 1"));
        }
        let codebook = (0..text_alphabet)
            .map(|y| (0..expand_len).map(|j| (y * expand_len + j) as u32).collect())
            .collect();
        let spec = ProcessSpec {
            kind: ProcessKind::TextExpansion { codebook, dur_jitter, text_len },
            alphabet: text_alphabet * expand_len,
            len: text_len * expand_len,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.len == 0 {
            return Err(invalid("sequence length must be >= 1"));
        }
        match &self.kind {
            ProcessKind::MarkovChain { init, trans }
            | ProcessKind::NoisyChain { init, trans, .. } => {
                if init.len() != self.alphabet || trans.len() != self.alphabet {
                    return Err(invalid("init/trans dimensions must match the alphabet"));
                }
                check_row(init, "init")?;
                for (i, row) in trans.iter().enumerate() {
                    if row.len() != self.alphabet {
                        return Err(invalid("transition matrix must be square"));
                    }
                    check_row(row, &format!("trans row {i}"))?;
                }
                if let ProcessKind::NoisyChain { emit_noise, .. } = &self.kind {
                    if !(0.0..1.0).contains(emit_noise) {
                        return Err(invalid("emit_noise must be in [0, 1)"));
                    }
                }
            }
            ProcessKind::TextExpansion { codebook, text_len, .. } => {
                if codebook.is_empty() || *text_len == 0 {
                    return Err(invalid("codebook and text_len must be non-empty"));
                }
                for (y, word) in codebook.iter().enumerate() {
                    if word.is_empty() {
                        return Err(invalid(format!("codebook entry {y} is empty")));
                    }
                    if word.iter().any(|&s| s as usize >= self.alphabet) {
                        return Err(invalid(format!("codebook entry {y} exceeds the alphabet")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Number of text symbols the process pairs with each sequence; chains
    /// carry a single dummy text symbol so layouts always have a text span.
    pub fn text_alphabet(&self) -> usize {
        match &self.kind {
            ProcessKind::TextExpansion { codebook, .. } => codebook.len(),
            _ => 1,
        }
    }

    pub fn is_deterministic_given_text(&self) -> bool {
        matches!(&self.kind, ProcessKind::TextExpansion { dur_jitter: false, .. })
    }

    /// Target sequence implied by a text, when the mapping is deterministic.
    pub fn expand_text(&self, text_syms: &[u32]) -> Option<Vec<u32>> {
        match &self.kind {
            ProcessKind::TextExpansion { codebook, dur_jitter: false, .. } => Some(
                text_syms
                    .iter()
                    .flat_map(|&y| codebook[y as usize].iter().copied())
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Alignment implied by a text under the deterministic expansion.
    pub fn expansion_alignment(&self, text_syms: &[u32]) -> Option<GroundTruthAlignment> {
        match &self.kind {
            ProcessKind::TextExpansion { codebook, dur_jitter: false, .. } => {
                let mut spans = Vec::with_capacity(text_syms.len());
                let mut cursor = 0usize;
                for &y in text_syms {
                    let l = codebook[y as usize].len();
                    spans.push(Span::new(cursor, cursor + l));
                    cursor += l;
                }
                Some(GroundTruthAlignment { spans })
            }
            _ => None,
        }
    }
}

/// One sampled sequence: target symbols, text symbols (empty for chains),
/// and the construction-implied alignment for expansion processes.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOut {
    pub tokens: Vec<u32>,
    pub text: Vec<u32>,
    pub alignment: Option<GroundTruthAlignment>,
}

fn sample_chain(init: &[f64], trans: &[Vec<f64>], len: usize, rng: &mut RngStream) -> Vec<u32> {
    let mut out = Vec::with_capacity(len);
    let mut state = rng.categorical(init);
    out.push(state as u32);
    for _ in 1..len {
        state = rng.categorical(&trans[state]);
        out.push(state as u32);
    }
    out
}

/// Draws one sequence from the process law. The hidden path of a noisy chain
/// is drawn before any emission noise, so with `emit_noise = 0` the output
/// matches the plain chain sample for the same stream.
pub fn sample_sequence(spec: &ProcessSpec, rng: &mut RngStream) -> SampleOut {
    match &spec.kind {
        ProcessKind::MarkovChain { init, trans } => SampleOut {
            tokens: sample_chain(init, trans, spec.len, rng),
            text: vec![],
            alignment: None,
        },
        ProcessKind::NoisyChain { init, trans, emit_noise } => {
            let hidden = sample_chain(init, trans, spec.len, rng);
            let tokens = hidden
                .iter()
                .map(|&z| {
                    if rng.f64() < *emit_noise {
                        rng.below(spec.alphabet) as u32
                    } else {
                        z
                    }
                })
                .collect();
            SampleOut { tokens, text: vec![], alignment: None }
        }
        ProcessKind::TextExpansion { codebook, dur_jitter, text_len } => {
            let text: Vec<u32> =
                (0..*text_len).map(|_| rng.below(codebook.len()) as u32).collect();
            let mut tokens = Vec::with_capacity(spec.len + text_len);
            let mut spans = Vec::with_capacity(*text_len);
            for &y in &text {
                let word = &codebook[y as usize];
                let start = tokens.len();
                tokens.extend_from_slice(word);
                if *dur_jitter && rng.bernoulli(0.5) {
                    tokens.push(*word.last().unwrap());
                }
                spans.push(Span::new(start, tokens.len()));
            }
            SampleOut { tokens, text, alignment: Some(GroundTruthAlignment { spans }) }
        }
    }
}

/// Exact probability of an observed sequence under the process law
/// (forward algorithm for the noisy chain, parse DP for expansions).
pub fn sequence_prob(spec: &ProcessSpec, tokens: &[u32]) -> f64 {
    match &spec.kind {
        ProcessKind::MarkovChain { init, trans } => {
            if tokens.is_empty() {
                return 0.0;
            }
            let mut p = init[tokens[0] as usize];
            for w in tokens.windows(2) {
                p *= trans[w[0] as usize][w[1] as usize];
            }
            p
        }
        ProcessKind::NoisyChain { init, trans, emit_noise } => {
            if tokens.is_empty() {
                return 0.0;
            }
            let v = spec.alphabet;
            let emit = |x: u32, z: usize| -> f64 {
                let base = emit_noise / v as f64;
                if x as usize == z { base + (1.0 - emit_noise) } else { base }
            };
            let mut alpha: Vec<f64> =
                (0..v).map(|z| init[z] * emit(tokens[0], z)).collect();
            for &x in &tokens[1..] {
                let mut next = vec![0.0; v];
                for (z2, n) in next.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (z1, a) in alpha.iter().enumerate() {
                        acc += a * trans[z1][z2];
                    }
                    *n = acc * emit(x, z2);
                }
                alpha = next;
            }
            alpha.iter().sum()
        }
        ProcessKind::TextExpansion { codebook, dur_jitter, text_len } => {
            // f[j][k] = probability mass of parses of tokens[..j] using k text symbols
            let n = tokens.len();
            let d = codebook.len() as f64;
            let mut f = vec![vec![0.0f64; text_len + 1]; n + 1];
            f[0][0] = 1.0;
            for j in 0..n {
                for k in 0..*text_len {
                    let base = f[j][k];
                    if base == 0.0 {
                        continue;
                    }
                    for word in codebook {
                        let l = word.len();
                        if j + l <= n && tokens[j..j + l] == word[..] {
                            let w = if *dur_jitter { 0.5 } else { 1.0 };
                            f[j + l][k + 1] += base * w / d;
                        }
                        if *dur_jitter && j + l + 1 <= n {
                            let ok = tokens[j..j + l] == word[..]
                                && tokens[j + l] == *word.last().unwrap();
                            if ok {
                                f[j + l + 1][k + 1] += base * 0.5 / d;
                            }
                        }
                    }
                }
            }
            f[n][*text_len]
        }
    }
}

/// Exhaustive joint distribution over sequences.
#[derive(Debug, Clone)]
pub struct JointTable {
    pub entries: Vec<(Vec<u32>, f64)>,
    index: HashMap<Vec<u32>, usize>,
    /// Common sequence length, when the law is fixed-length.
    pub fixed_len: Option<usize>,
    pub alphabet: usize,
}

impl JointTable {
    pub fn prob(&self, seq: &[u32]) -> f64 {
        self.index.get(seq).map(|&i| self.entries[i].1).unwrap_or(0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }

    /// Marginal distribution of position `i` (fixed-length laws only).
    pub fn marginal(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.alphabet];
        for (seq, p) in &self.entries {
            out[seq[i] as usize] += p;
        }
        out
    }

    /// Exact posterior over `x_i` given revealed positions, by summing the
    /// joint over all consistent completions.
    pub fn conditional(&self, revealed: &[(usize, u32)], i: usize) -> Result<Vec<f64>> {
        let n = self.fixed_len.ok_or_else(|| {
            invalid("exact conditionals require a fixed-length law")
        })?;
        if revealed.iter().any(|(j, _)| *j == i) {
            return Err(invalid(format!("position {i} is already revealed")));
        }
        if i >= n || revealed.iter().any(|(j, _)| *j >= n) {
            return Err(invalid("position outside the sequence"));
        }
        let mut posterior = vec![0.0f64; self.alphabet];
        let mut mass = 0.0f64;
        for (seq, p) in &self.entries {
            if revealed.iter().all(|&(j, v)| seq[j] == v) {
                posterior[seq[i] as usize] += p;
                mass += p;
            }
        }
        if mass <= 0.0 {
            return Err(Error::ZeroSupport(format!(
                "revealed assignment {revealed:?} has zero probability"
            )));
        }
        for q in &mut posterior {
            *q /= mass;
        }
        Ok(posterior)
    }
}

fn odometer(alphabet: usize, len: usize) -> impl Iterator<Item = Vec<u32>> {
    let total = (alphabet as u64).pow(len as u32);
    (0..total).map(move |mut code| {
        let mut seq = vec![0u32; len];
        for slot in seq.iter_mut().rev() {
            *slot = (code % alphabet as u64) as u32;
            code /= alphabet as u64;
        }
        seq
    })
}

/// Enumerates every sequence and its exact probability. Fails with a
/// resource-limit error when the state space exceeds [`MAX_JOINT_STATES`].
pub fn exact_joint(spec: &ProcessSpec) -> Result<JointTable> {
    spec.validate()?;
    match &spec.kind {
        ProcessKind::MarkovChain { .. } | ProcessKind::NoisyChain { .. } => {
            let states = (spec.alphabet as f64).powi(spec.len as i32);
            if states > MAX_JOINT_STATES as f64 {
                return Err(Error::ResourceLimit(format!(
                    "V^N = {}^{} exceeds the enumeration budget of {MAX_JOINT_STATES}",
                    spec.alphabet, spec.len
                )));
            }
            let mut entries = Vec::with_capacity(states as usize);
            let mut index = HashMap::with_capacity(states as usize);
            for seq in odometer(spec.alphabet, spec.len) {
                let p = sequence_prob(spec, &seq);
                index.insert(seq.clone(), entries.len());
                entries.push((seq, p));
            }
            Ok(JointTable { entries, index, fixed_len: Some(spec.len), alphabet: spec.alphabet })
        }
        ProcessKind::TextExpansion { codebook, dur_jitter, text_len } => {
            let d = codebook.len();
            let outcomes = (d as f64).powi(*text_len as i32)
                * if *dur_jitter { 2f64.powi(*text_len as i32) } else { 1.0 };
            if outcomes > MAX_JOINT_STATES as f64 {
                return Err(Error::ResourceLimit(format!(
                    "{outcomes} expansion outcomes exceed the enumeration budget"
                )));
            }
            let mut acc: HashMap<Vec<u32>, f64> = HashMap::new();
            let jitter_patterns = if *dur_jitter { 1usize << text_len } else { 1 };
            for text in odometer(d, *text_len) {
                for pat in 0..jitter_patterns {
                    let mut seq = Vec::new();
                    for (k, &y) in text.iter().enumerate() {
                        let word = &codebook[y as usize];
                        seq.extend_from_slice(word);
                        if *dur_jitter && (pat >> k) & 1 == 1 {
                            seq.push(*word.last().unwrap());
                        }
                    }
                    let p = (1.0 / d as f64).powi(*text_len as i32) / jitter_patterns as f64;
                    *acc.entry(seq).or_insert(0.0) += p;
                }
            }
            let mut entries: Vec<(Vec<u32>, f64)> = acc.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let index =
                entries.iter().enumerate().map(|(i, (s, _))| (s.clone(), i)).collect();
            let fixed_len = (!*dur_jitter).then_some(spec.len);
            Ok(JointTable { entries, index, fixed_len, alphabet: spec.alphabet })
        }
    }
}

/// Spec-level wrapper over [`JointTable::conditional`].
pub fn exact_conditional(
    spec: &ProcessSpec,
    revealed: &[(usize, u32)],
    i: usize,
) -> Result<Vec<f64>> {
    exact_joint(spec)?.conditional(revealed, i)
}

/// Canonical vocab for a process: its text alphabet plus its speech alphabet.
pub fn process_vocab(spec: &ProcessSpec) -> Result<Vocab> {
    Vocab::canonical(spec.text_alphabet() as u32, spec.alphabet as u32)
}

/// One training example: a fully realized layout plus generation metadata.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub layout: SequenceLayout,
    pub text_syms: Vec<u32>,
    pub alignment: Option<GroundTruthAlignment>,
}

/// Samples a sequence and wraps it into a layout. For chains the first
/// `prompt_len` symbols become the visible prompt (with a dummy text token);
/// expansion processes use their text and take no prompt.
pub fn sample_training_layout(
    spec: &ProcessSpec,
    vocab: &Vocab,
    prompt_len: usize,
    rng: &mut RngStream,
) -> Result<TrainExample> {
    let sample = sample_sequence(spec, rng);
    let speech: Vec<u32> = sample.tokens.iter().map(|&s| vocab.speech_id(s)).collect();
    match &spec.kind {
        ProcessKind::TextExpansion { .. } => {
            if prompt_len != 0 {
                return Err(invalid("expansion processes take no prompt"));
            }
            let text_ids: Vec<u32> = sample.text.iter().map(|&y| vocab.text_id(y)).collect();
            let layout = build_layout(&text_ids, &[], speech.len(), vocab)?.with_target(&speech)?;
            Ok(TrainExample { layout, text_syms: sample.text, alignment: sample.alignment })
        }
        _ => {
            if prompt_len >= spec.len {
                return Err(invalid("prompt_len must leave a non-empty target"));
            }
            let layout = build_layout(
                &[vocab.text_id(0)],
                &speech[..prompt_len],
                speech.len() - prompt_len,
                vocab,
            )?
            .with_target(&speech[prompt_len..])?;
            Ok(TrainExample { layout, text_syms: vec![], alignment: None })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn uniform_iid(v: usize, len: usize) -> ProcessSpec {
        let row = vec![1.0 / v as f64; v];
        ProcessSpec::markov(row.clone(), vec![row; v], len).unwrap()
    }

    pub(crate) fn copy_chain(v: usize, len: usize) -> ProcessSpec {
        let init = vec![1.0 / v as f64; v];
        let trans = (0..v)
            .map(|i| (0..v).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        ProcessSpec::markov(init, trans, len).unwrap()
    }

    fn mixing_trans(v: usize, stay: f64) -> Vec<Vec<f64>> {
        let off = (1.0 - stay) / (v - 1) as f64;
        (0..v)
            .map(|i| (0..v).map(|j| if i == j { stay } else { off }).collect())
            .collect()
    }

    #[test]
    fn identity_chain_is_constant() {
        let mut init = vec![0.0; 3];
        init[1] = 1.0;
        let spec = ProcessSpec::markov(
            init,
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
            5,
        )
        .unwrap();
        let mut rng = RngStream::new(4);
        assert_eq!(sample_sequence(&spec, &mut rng).tokens, vec![1, 1, 1, 1, 1]);
    }

    #[test]
    fn zero_noise_matches_plain_chain() {
        let init = vec![0.5, 0.3, 0.2];
        let trans = mixing_trans(3, 0.6);
        let markov = ProcessSpec::markov(init.clone(), trans.clone(), 8).unwrap();
        let noisy = ProcessSpec::noisy_chain(init, trans, 0.0, 8).unwrap();
        let a = sample_sequence(&markov, &mut RngStream::new(99));
        let b = sample_sequence(&noisy, &mut RngStream::new(99));
        assert_eq!(a.tokens, b.tokens);
    }

    #[test]
    fn deterministic_expansion_and_alignment() {
        let spec = ProcessSpec::text_expansion(2, 3, false, 2).unwrap();
        let expanded = spec.expand_text(&[0, 1]).unwrap();
        assert_eq!(expanded, vec![0, 1, 2, 3, 4, 5]);
        let align = spec.expansion_alignment(&[0, 1]).unwrap();
        assert_eq!(align.spans, vec![Span::new(0, 3), Span::new(3, 6)]);
        align.validate(6).unwrap();

        let mut rng = RngStream::new(1);
        let s = sample_sequence(&spec, &mut rng);
        assert_eq!(s.tokens, spec.expand_text(&s.text).unwrap());
        assert_eq!(s.alignment.unwrap().spans.len(), 2);
    }

    #[test]
    fn joint_v2_n1() {
        let spec = ProcessSpec::markov(vec![0.3, 0.7], vec![vec![0.5, 0.5]; 2], 1).unwrap();
        let t = exact_joint(&spec).unwrap();
        assert!((t.prob(&[0]) - 0.3).abs() < 1e-15);
        assert!((t.prob(&[1]) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn joint_uniform_iid_v2_n2() {
        let t = exact_joint(&uniform_iid(2, 2)).unwrap();
        assert_eq!(t.entries.len(), 4);
        for (_, p) in &t.entries {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn noisy_joint_normalizes() {
        let spec =
            ProcessSpec::noisy_chain(vec![0.2, 0.5, 0.3], mixing_trans(3, 0.7), 0.1, 4).unwrap();
        let t = exact_joint(&spec).unwrap();
        assert!((t.total_mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn jittered_joint_normalizes_and_matches_parse_dp() {
        let spec = ProcessSpec::text_expansion(2, 2, true, 3).unwrap();
        let t = exact_joint(&spec).unwrap();
        assert!((t.total_mass() - 1.0).abs() < 1e-12);
        for (seq, p) in &t.entries {
            assert!((sequence_prob(&spec, seq) - p).abs() < 1e-12);
        }
        // a sequence with no valid parse has probability zero
        assert_eq!(sequence_prob(&spec, &[1, 1, 1, 1, 1, 1]), 0.0);
    }

    #[test]
    fn conditional_under_independence_is_marginal() {
        let spec = uniform_iid(2, 4);
        let post = exact_conditional(&spec, &[(0, 1), (3, 0)], 2).unwrap();
        assert!((post[0] - 0.5).abs() < 1e-12);
        assert!((post[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn copy_chain_conditions_backward() {
        let spec = copy_chain(2, 4);
        let post = exact_conditional(&spec, &[(2, 1)], 1).unwrap();
        assert_eq!(post, vec![0.0, 1.0]);
    }

    #[test]
    fn noisy_conditional_matches_naive_sum() {
        let spec =
            ProcessSpec::noisy_chain(vec![0.4, 0.3, 0.3], mixing_trans(3, 0.6), 0.2, 6).unwrap();
        let table = exact_joint(&spec).unwrap();
        let i = 3;
        let revealed = [(2usize, 1u32)];
        let post = table.conditional(&revealed, i).unwrap();
        // independent route: direct filtered sums over the raw table
        let mut num = vec![0.0f64; 3];
        let mut den = 0.0;
        for (seq, p) in &table.entries {
            if seq[2] == 1 {
                num[seq[i] as usize] += p;
                den += p;
            }
        }
        for (a, b) in post.iter().zip(num.iter().map(|x| x / den)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn markov_property_with_zero_noise() {
        let trans = mixing_trans(3, 0.6);
        let spec = ProcessSpec::noisy_chain(vec![0.4, 0.3, 0.3], trans.clone(), 0.0, 5).unwrap();
        let post = exact_conditional(&spec, &[(1, 2)], 2).unwrap();
        for (a, b) in post.iter().zip(&trans[2]) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_support_conditioning_is_an_error() {
        let spec = copy_chain(2, 3);
        // copy chain never produces mixed symbols
        let err = exact_conditional(&spec, &[(0, 0), (2, 1)], 1).unwrap_err();
        assert!(matches!(err, Error::ZeroSupport(_)));
    }

    #[test]
    fn conditional_with_all_but_one_revealed_is_row_ratio() {
        let spec =
            ProcessSpec::noisy_chain(vec![0.5, 0.5], mixing_trans(2, 0.8), 0.15, 4).unwrap();
        let table = exact_joint(&spec).unwrap();
        let revealed = [(0usize, 1u32), (1, 0), (3, 1)];
        let post = table.conditional(&revealed, 2).unwrap();
        let p0 = table.prob(&[1, 0, 0, 1]);
        let p1 = table.prob(&[1, 0, 1, 1]);
        assert!((post[0] - p0 / (p0 + p1)).abs() < 1e-12);
        assert!((post[1] - p1 / (p0 + p1)).abs() < 1e-12);
    }

    #[test]
    fn sample_frequencies_match_marginals() {
        let spec =
            ProcessSpec::noisy_chain(vec![0.6, 0.4], mixing_trans(2, 0.7), 0.1, 4).unwrap();
        let table = exact_joint(&spec).unwrap();
        let mut rng = RngStream::new(2024);
        let n = 100_000;
        let mut counts = vec![vec![0usize; 2]; 4];
        for _ in 0..n {
            let s = sample_sequence(&spec, &mut rng);
            for (i, &x) in s.tokens.iter().enumerate() {
                counts[i][x as usize] += 1;
            }
        }
        for i in 0..4 {
            let m = table.marginal(i);
            for v in 0..2 {
                let expect = n as f64 * m[v];
                let sigma = (n as f64 * m[v] * (1.0 - m[v])).sqrt();
                assert!(
                    (counts[i][v] as f64 - expect).abs() <= 3.0 * sigma,
                    "position {i} symbol {v}: {} vs {expect}",
                    counts[i][v]
                );
            }
        }
    }

    #[test]
    fn enumeration_budget_enforced() {
        let spec = uniform_iid(6, 9); // 6^9 > 1e6
        assert!(matches!(exact_joint(&spec), Err(Error::ResourceLimit(_))));
    }

    #[test]
    fn training_layout_for_chain_and_expansion() {
        let chain =
            ProcessSpec::noisy_chain(vec![0.5, 0.5], mixing_trans(2, 0.7), 0.1, 8).unwrap();
        let vocab = process_vocab(&chain).unwrap();
        let mut rng = RngStream::new(5);
        let ex = sample_training_layout(&chain, &vocab, 3, &mut rng).unwrap();
        ex.layout.validate().unwrap();
        assert_eq!(ex.layout.prompt_span.len(), 3);
        assert_eq!(ex.layout.target_len(), 5);

        let te = ProcessSpec::text_expansion(3, 2, true, 4).unwrap();
        let vocab = process_vocab(&te).unwrap();
        let ex = sample_training_layout(&te, &vocab, 0, &mut rng).unwrap();
        ex.layout.validate().unwrap();
        assert_eq!(ex.text_syms.len(), 4);
        let align = ex.alignment.unwrap();
        align.validate(ex.layout.target_len()).unwrap();
        assert!(sample_training_layout(&te, &vocab, 1, &mut rng).is_err());
    }
}
