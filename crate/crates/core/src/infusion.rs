//! Rendering detections and OCR spans as compact sentences.
//!
//! Only the center of each box is kept, objects with the same label are
//! grouped under one count, and an instruction header is prepended:
//!
//! ```text
//! Here are the central coordinates of certain objects in this image: 2 people:{[0.25, 0.12], [0.11, 0.43]}, 1 cake:{[0.42, 0.32]}.
//! Here are the central coordinates of certain texts in this image: 'Birthday'[0.41, 0.85], 'YEARS'[0.11, 0.34].
//! ```
//!
//! Groups are ordered by descending count, ties by first appearance.
//! Coordinates have two decimals, rounded half-to-even on the binary value.

use std::collections::HashMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{filter_by_confidence, Detection, OcrSpan, Thresholds};
use crate::tokenize::Tokenizer;

pub const OD_HEADER: &str = "Here are the central coordinates of certain objects in this image: ";
pub const OCR_HEADER: &str = "Here are the central coordinates of certain texts in this image: ";

/// Sentences longer than this many tokens are left out of the prompt.
pub const DEFAULT_BUDGET: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Od,
    Ocr,
}

/// A rendered sentence with its measured length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfusionText {
    pub modality: Modality,
    pub sentence: String,
    pub token_len: usize,
    /// Set by [`apply_budget`] when `token_len` exceeded the budget; the
    /// sentence is then empty but `token_len` keeps the measured length.
    pub dropped: bool,
}

impl InfusionText {
    pub fn empty(modality: Modality) -> Self {
        Self {
            modality,
            sentence: String::new(),
            token_len: 0,
            dropped: false,
        }
    }

    /// True when there is something to put in a prompt.
    pub fn is_usable(&self) -> bool {
        !self.dropped && !self.sentence.is_empty()
    }
}

/// Two-decimal rendering of a normalized coordinate.
pub fn format_coord(v: f64) -> String {
    // NaN and -0.0 both land on 0.
    let v = if v > 0.0 { v.min(1.0) } else { 0.0 };
    format!("{v:.2}")
}

const IRREGULAR_PLURALS: &[(&str, &str)] = &[
    ("person", "people"),
    ("child", "children"),
    ("man", "men"),
    ("woman", "women"),
    ("foot", "feet"),
    ("tooth", "teeth"),
    ("mouse", "mice"),
    ("sheep", "sheep"),
    ("knife", "knives"),
    ("scissors", "scissors"),
    ("skis", "skis"),
];

/// English plural of the last word of `label` when `count > 1`.
pub fn pluralize(label: &str, count: usize) -> String {
    if count <= 1 {
        return label.to_string();
    }
    let split = label.rfind(' ').map_or(0, |i| i + 1);
    let (head, word) = label.split_at(split);
    let lower = word.to_lowercase();
    if let Some((_, plural)) = IRREGULAR_PLURALS.iter().find(|(s, _)| *s == lower) {
        return format!("{head}{plural}");
    }
    let mut chars = lower.chars().rev();
    let last = chars.next();
    let before = chars.next();
    let plural = match (before, last) {
        (Some(b), Some('y')) if !"aeiou".contains(b) => format!("{}ies", &word[..word.len() - 1]),
        (_, Some('s' | 'x' | 'z')) | (Some('c' | 's'), Some('h')) => format!("{word}es"),
        _ => format!("{word}s"),
    };
    format!("{head}{plural}")
}

fn push_coord(out: &mut String, (x, y): (f64, f64)) {
    let _ = write!(out, "[{}, {}]", format_coord(x), format_coord(y));
}

/// Groups retained detections by label, ordered by descending count and then
/// by first appearance; coordinates keep input order.
pub fn group_detections(detections: &[Detection]) -> Vec<(&str, Vec<(f64, f64)>)> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<(&str, Vec<(f64, f64)>)> = Vec::new();
    for d in detections {
        let slot = *index.entry(d.label.as_str()).or_insert_with(|| {
            groups.push((d.label.as_str(), Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(d.center());
    }
    // Stable sort keeps first-appearance order among equal counts.
    groups.sort_by_key(|g| std::cmp::Reverse(g.1.len()));
    groups
}

pub fn build_od_sentence(detections: &[Detection], thresholds: &Thresholds, tokenizer: &Tokenizer) -> InfusionText {
    let kept = filter_by_confidence(detections, thresholds.od_conf);
    if kept.is_empty() {
        return InfusionText::empty(Modality::Od);
    }
    let mut s = String::from(OD_HEADER);
    for (i, (label, centers)) in group_detections(&kept).into_iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "{} {}:{{", centers.len(), pluralize(label, centers.len()));
        for (j, c) in centers.into_iter().enumerate() {
            if j > 0 {
                s.push_str(", ");
            }
            push_coord(&mut s, c);
        }
        s.push('}');
    }
    s.push('.');
    InfusionText {
        modality: Modality::Od,
        token_len: tokenizer.count(&s),
        sentence: s,
        dropped: false,
    }
}

/// Wraps text in single quotes, doubling embedded ones.
pub fn quote_text(text: &str) -> String {
    format!("'{}'", text.replace('\'', "''"))
}

pub fn build_ocr_sentence(spans: &[OcrSpan], thresholds: &Thresholds, tokenizer: &Tokenizer) -> InfusionText {
    let kept = filter_by_confidence(spans, thresholds.ocr_box);
    if kept.is_empty() {
        return InfusionText::empty(Modality::Ocr);
    }
    let mut s = String::from(OCR_HEADER);
    for (i, span) in kept.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        s.push_str(&quote_text(&span.text));
        push_coord(&mut s, span.center());
    }
    s.push('.');
    InfusionText {
        modality: Modality::Ocr,
        token_len: tokenizer.count(&s),
        sentence: s,
        dropped: false,
    }
}

/// Drops a sentence whose length exceeds `budget`.
pub fn apply_budget(text: InfusionText, budget: usize) -> InfusionText {
    if text.token_len > budget {
        InfusionText {
            sentence: String::new(),
            dropped: true,
            ..text
        }
    } else {
        text
    }
}

/// One parsed object group: rendered count, rendered label, centers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedGroup {
    pub count: usize,
    pub label: String,
    pub centers: Vec<(f64, f64)>,
}

/// Parses a rendered object sentence back into its groups.
pub fn parse_od_sentence(sentence: &str) -> Option<Vec<ParsedGroup>> {
    let mut rest = sentence.strip_prefix(OD_HEADER)?.strip_suffix('.')?;
    let mut groups = Vec::new();
    loop {
        let (count, after) = rest.split_once(' ')?;
        let count: usize = count.parse().ok()?;
        let (label, after) = after.split_once(":{")?;
        let (centers, after) = parse_coords(after)?;
        let after = after.strip_prefix('}')?;
        groups.push(ParsedGroup {
            count,
            label: label.to_string(),
            centers,
        });
        if after.is_empty() {
            return Some(groups);
        }
        rest = after.strip_prefix(", ")?;
    }
}

fn parse_coords(mut s: &str) -> Option<(Vec<(f64, f64)>, &str)> {
    let mut out = Vec::new();
    loop {
        let (c, after) = parse_coord(s)?;
        out.push(c);
        match after.strip_prefix(", [") {
            Some(_) => s = &after[2..],
            None => return Some((out, after)),
        }
    }
}

fn parse_coord(s: &str) -> Option<((f64, f64), &str)> {
    let s = s.strip_prefix('[')?;
    let (body, after) = s.split_once(']')?;
    let (x, y) = body.split_once(", ")?;
    Some(((x.parse().ok()?, y.parse().ok()?), after))
}

/// Parses a rendered text sentence back into `(text, center)` entries.
pub fn parse_ocr_sentence(sentence: &str) -> Option<Vec<(String, (f64, f64))>> {
    let mut rest = sentence.strip_prefix(OCR_HEADER)?.strip_suffix('.')?;
    let mut out = Vec::new();
    loop {
        let mut chars = rest.strip_prefix('\'')?.char_indices().peekable();
        let mut text = String::new();
        let close = loop {
            let (i, c) = chars.next()?;
            if c == '\'' {
                if matches!(chars.peek(), Some((_, '\''))) {
                    chars.next();
                    text.push('\'');
                    continue;
                }
                break i;
            }
            text.push(c);
        };
        let (center, after) = parse_coord(&rest[1 + close + 1..])?;
        out.push((text, center));
        if after.is_empty() {
            return Some(out);
        }
        rest = after.strip_prefix(", ")?;
    }
}

/// Corpus-level length summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub samples: usize,
    pub nonzero_samples: usize,
    pub mean_len: f64,
    /// Mean over non-zero lengths; 0 with `nonzero_empty` set when every
    /// sample is empty.
    pub mean_len_nonzero: f64,
    pub nonzero_empty: bool,
    pub k: usize,
    pub frac_over_k: f64,
    #[serde(skip)]
    sorted: Vec<usize>,
}

impl LengthStats {
    /// Fraction of samples with length strictly greater than `k`.
    pub fn frac_over(&self, k: usize) -> f64 {
        let at_most = self.sorted.partition_point(|&l| l <= k);
        (self.samples - at_most) as f64 / self.samples as f64
    }
}

pub fn corpus_stats(lengths: &[usize], k: usize) -> Result<LengthStats> {
    if lengths.is_empty() {
        return Err(Error::Empty("length statistics need at least one sample".into()));
    }
    let total: u128 = lengths.iter().map(|&l| l as u128).sum();
    let nonzero = lengths.iter().filter(|&&l| l > 0).count();
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let mut stats = LengthStats {
        samples: lengths.len(),
        nonzero_samples: nonzero,
        mean_len: total as f64 / lengths.len() as f64,
        mean_len_nonzero: if nonzero == 0 { 0.0 } else { total as f64 / nonzero as f64 },
        nonzero_empty: nonzero == 0,
        k,
        frac_over_k: 0.0,
        sorted,
    };
    stats.frac_over_k = stats.frac_over(k);
    Ok(stats)
}
