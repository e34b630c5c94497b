//! Sequence buffer layout: `[SOS, text, SEP, prompt, target, EOS]`.
//!
//! Only the target span is ever maskable; text, prompt, and specials stay
//! visible to the model at all times.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::vocab::Vocab;

/// Half-open index interval into a token buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, i: usize) -> bool {
        i >= self.start && i < self.end
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceLayout {
    pub tokens: Vec<u32>,
    pub text_span: Span,
    pub prompt_span: Span,
    pub target_span: Span,
    pub vocab: Vocab,
}

/// Builds `[SOS, text, SEP, prompt, MASK x target_len, EOS]` with spans set
/// accordingly. Text must be non-empty and inside the text range; prompt ids
/// must be speech ids.
pub fn build_layout(text: &[u32], prompt: &[u32], target_len: usize, vocab: &Vocab) -> Result<SequenceLayout> {
    if text.is_empty() {
        return Err(invalid("text span must be non-empty"));
    }
    if target_len == 0 {
        return Err(invalid("target_len must be >= 1"));
    }
    for &id in text {
        if !vocab.text_range.contains(id) {
            return Err(invalid(format!("text id {id} outside text range")));
        }
    }
    for &id in prompt {
        if !vocab.speech_range.contains(id) {
            return Err(invalid(format!("prompt id {id} outside speech range")));
        }
    }
    let mut tokens = Vec::with_capacity(3 + text.len() + prompt.len() + target_len);
    tokens.push(vocab.sos_id);
    tokens.extend_from_slice(text);
    tokens.push(vocab.sep_id);
    tokens.extend_from_slice(prompt);
    let target_start = tokens.len();
    tokens.extend(std::iter::repeat(vocab.mask_id).take(target_len));
    tokens.push(vocab.eos_id);

    Ok(SequenceLayout {
        tokens,
        text_span: Span::new(1, 1 + text.len()),
        prompt_span: Span::new(2 + text.len(), 2 + text.len() + prompt.len()),
        target_span: Span::new(target_start, target_start + target_len),
        vocab: *vocab,
    })
}

impl SequenceLayout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn target_len(&self) -> usize {
        self.target_span.len()
    }

    pub fn target(&self) -> &[u32] {
        &self.tokens[self.target_span.range()]
    }

    pub fn text(&self) -> &[u32] {
        &self.tokens[self.text_span.range()]
    }

    pub fn prompt(&self) -> &[u32] {
        &self.tokens[self.prompt_span.range()]
    }

    /// Same layout with the target span filled with `target` values.
    pub fn with_target(&self, target: &[u32]) -> Result<SequenceLayout> {
        if target.len() != self.target_len() {
            return Err(invalid(format!(
                "target length {} does not match span length {}",
                target.len(),
                self.target_len()
            )));
        }
        let mut out = self.clone();
        out.tokens[self.target_span.range()].copy_from_slice(target);
        Ok(out)
    }

    /// Structural invariants: span ordering, sentinel tokens at the seams.
    pub fn validate(&self) -> Result<()> {
        let v = &self.vocab;
        if self.tokens.first() != Some(&v.sos_id) {
            return Err(invalid("layout must start with SOS"));
        }
        if self.tokens.last() != Some(&v.eos_id) {
            return Err(invalid("layout must end with EOS"));
        }
        if self.tokens.get(self.text_span.end) != Some(&v.sep_id) {
            return Err(invalid("token after text span must be SEP"));
        }
        if self.text_span.is_empty() || self.target_span.is_empty() {
            return Err(invalid("text and target spans must be non-empty"));
        }
        let ordered = self.text_span.end <= self.prompt_span.start
            && self.prompt_span.end <= self.target_span.start
            && self.target_span.end < self.tokens.len() + 1;
        if !ordered {
            return Err(invalid("spans must be disjoint and ordered text < prompt < target"));
        }
        Ok(())
    }
}
