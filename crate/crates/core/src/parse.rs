//! Turning raw model output into answer letters and frame intervals.

use serde::{Deserialize, Serialize};

use crate::corpus::OPTION_LETTERS;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChoiceOutcome {
    Parsed { index: usize },
    ParseFailure { raw_text: String },
}

impl ChoiceOutcome {
    pub fn index(&self) -> Option<usize> {
        match self {
            Self::Parsed { index } => Some(*index),
            Self::ParseFailure { .. } => None,
        }
    }

    pub fn letter(&self) -> Option<char> {
        self.index().map(|i| OPTION_LETTERS[i])
    }

    pub fn is_failure(&self) -> bool {
        matches!(self, Self::ParseFailure { .. })
    }
}

fn letter_index(c: char) -> Option<usize> {
    match c.to_ascii_uppercase() {
        l @ 'A'..='E' => Some(l as usize - 'A' as usize),
        _ => None,
    }
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(|c| c.is_alphanumeric() || c == '_')
}

/// Reads the answer letter from a model reply.
///
/// The first non-whitespace character decides when it is an uppercase
/// A-E; a lowercase a-e counts only when it stands alone ("b", "c)").
/// Otherwise the reply is scanned for the first standalone uppercase option
/// letter, then for a lowercase one wrapped in brackets or followed by `:`/`)`.
pub fn parse_choice(text: &str) -> ChoiceOutcome {
    let chars: Vec<char> = text.chars().collect();
    if let Some(first) = chars.iter().position(|c| !c.is_whitespace()) {
        let c = chars[first];
        if let Some(i) = letter_index(c) {
            if c.is_ascii_uppercase() || !is_word_char(chars.get(first + 1).copied()) {
                return ChoiceOutcome::Parsed { index: i };
            }
        }
    }
    let standalone = |i: usize| {
        let prev = i.checked_sub(1).map(|p| chars[p]);
        !is_word_char(prev) && !is_word_char(chars.get(i + 1).copied())
    };
    for (i, &c) in chars.iter().enumerate() {
        if c.is_ascii_uppercase() && standalone(i) {
            if let Some(idx) = letter_index(c) {
                return ChoiceOutcome::Parsed { index: idx };
            }
        }
    }
    for (i, &c) in chars.iter().enumerate() {
        if c.is_ascii_lowercase() && standalone(i) {
            let prev = i.checked_sub(1).map(|p| chars[p]);
            let next = chars.get(i + 1).copied();
            let marked = matches!(prev, Some('(' | '[')) || matches!(next, Some(':' | ')' | ']'));
            if marked {
                if let Some(idx) = letter_index(c) {
                    return ChoiceOutcome::Parsed { index: idx };
                }
            }
        }
    }
    ChoiceOutcome::ParseFailure {
        raw_text: text.to_string(),
    }
}

/// Frame-index intervals predicted by the grounding prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalPrediction {
    pub intervals: Vec<(u64, u64)>,
    /// Some pair arrived as `[b, a]` with `b > a` and was swapped.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub swapped: bool,
}

impl IntervalPrediction {
    /// Formats as `[a, b] and [c, d]`.
    pub fn to_prompt_format(&self) -> String {
        self.intervals
            .iter()
            .map(|(a, b)| format!("[{a}, {b}]"))
            .collect::<Vec<_>>()
            .join(" and ")
    }
}

struct Scanner<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Scanner<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, b: u8) -> bool {
        self.skip_ws();
        if self.bytes.get(self.pos) == Some(&b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn int(&mut self) -> Option<u64> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
    }

    /// Parses `[int, int]` at the current position.
    fn pair(&mut self) -> Option<(u64, u64)> {
        if !self.eat(b'[') {
            return None;
        }
        let a = self.int()?;
        if !self.eat(b',') {
            return None;
        }
        let b = self.int()?;
        self.eat(b']').then_some((a, b))
    }
}

/// Extracts every `[int, int]` group; surrounding prose is ignored.
/// Returns `None` when no pair is found.
pub fn parse_intervals(text: &str) -> Option<IntervalPrediction> {
    let bytes = text.as_bytes();
    let mut intervals = Vec::new();
    let mut swapped = false;
    let mut i = 0;
    while let Some(off) = bytes[i..].iter().position(|&b| b == b'[') {
        let start = i + off;
        let mut s = Scanner { bytes, pos: start };
        match s.pair() {
            Some((a, b)) => {
                if a > b {
                    swapped = true;
                    intervals.push((b, a));
                } else {
                    intervals.push((a, b));
                }
                i = s.pos;
            }
            None => i = start + 1,
        }
    }
    (!intervals.is_empty()).then_some(IntervalPrediction { intervals, swapped })
}
