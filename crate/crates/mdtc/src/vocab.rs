//! Token id space: five special ids plus disjoint text and speech id ranges.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Half-open id interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdRange {
    pub start: u32,
    pub end: u32,
}

impl IdRange {
    pub fn new(start: u32, end: u32) -> Self {
        IdRange { start, end }
    }

    pub fn contains(&self, id: u32) -> bool {
        id >= self.start && id < self.end
    }

    pub fn len(&self) -> usize {
        (self.end - self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    fn overlaps(&self, other: &IdRange) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Shared vocabulary: ordinary tokens live in `text_range` / `speech_range`,
/// everything else is one of the five special ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub size: u32,
    pub mask_id: u32,
    pub sos_id: u32,
    pub sep_id: u32,
    pub eos_id: u32,
    pub pad_id: u32,
    pub text_range: IdRange,
    pub speech_range: IdRange,
}

impl Vocab {
    /// Canonical layout: `[pad, mask, sos, sep, eos, text..., speech...]`.
    pub fn canonical(text_symbols: u32, speech_symbols: u32) -> Result<Vocab> {
        let text_start = 5;
        let speech_start = text_start + text_symbols;
        let v = Vocab {
            size: speech_start + speech_symbols,
            pad_id: 0,
            mask_id: 1,
            sos_id: 2,
            sep_id: 3,
            eos_id: 4,
            text_range: IdRange::new(text_start, speech_start),
            speech_range: IdRange::new(speech_start, speech_start + speech_symbols),
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let specials = [self.mask_id, self.sos_id, self.sep_id, self.eos_id, self.pad_id];
        for (i, a) in specials.iter().enumerate() {
            if *a >= self.size {
                return Err(invalid(format!("special id {a} outside vocab of size {}", self.size)));
            }
            for b in specials.iter().skip(i + 1) {
                if a == b {
                    return Err(invalid(format!("special ids collide at {a}")));
                }
            }
            if self.text_range.contains(*a) || self.speech_range.contains(*a) {
                return Err(invalid(format!("special id {a} falls inside an ordinary-token range")));
            }
        }
        if self.text_range.overlaps(&self.speech_range) {
            return Err(invalid("text and speech ranges overlap"));
        }
        if self.text_range.is_empty() || self.speech_range.is_empty() {
            return Err(invalid("text and speech ranges must be non-empty"));
        }
        if self.text_range.end > self.size || self.speech_range.end > self.size {
            return Err(invalid("ordinary-token range exceeds vocab size"));
        }
        Ok(())
    }

    /// Vocab id of text symbol `sym` (0-based within the text alphabet).
    pub fn text_id(&self, sym: u32) -> u32 {
        debug_assert!(sym < self.text_range.len() as u32);
        self.text_range.start + sym
    }

    /// Vocab id of speech symbol `sym` (0-based within the speech alphabet).
    pub fn speech_id(&self, sym: u32) -> u32 {
        debug_assert!(sym < self.speech_range.len() as u32);
        self.speech_range.start + sym
    }

    /// Inverse of [`Vocab::speech_id`]; `None` for non-speech ids.
    pub fn speech_symbol(&self, id: u32) -> Option<u32> {
        self.speech_range.contains(id).then(|| id - self.speech_range.start)
    }

    pub fn text_symbol(&self, id: u32) -> Option<u32> {
        self.text_range.contains(id).then(|| id - self.text_range.start)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_layout_is_valid() {
        let v = Vocab::canonical(4, 12).unwrap();
        assert_eq!(v.size, 21);
        assert_eq!(v.text_id(0), 5);
        assert_eq!(v.speech_id(0), 9);
        assert_eq!(v.speech_symbol(9), Some(0));
        assert_eq!(v.speech_symbol(5), None);
    }

    #[test]
    fn rejects_overlapping_ranges() {
        let mut v = Vocab::canonical(4, 12).unwrap();
        v.speech_range = IdRange::new(6, 18);
        assert!(v.validate().is_err());
    }

    #[test]
    fn rejects_special_inside_range() {
        let mut v = Vocab::canonical(4, 12).unwrap();
        v.mask_id = 7;
        assert!(v.validate().is_err());
    }

    #[test]
    fn rejects_duplicate_specials() {
        let mut v = Vocab::canonical(4, 12).unwrap();
        v.sep_id = v.eos_id;
        assert!(v.validate().is_err());
    }
}
