//! Benchmark subsets, answer scoring, caption/foil metrics and the mean
//! relative improvement over a baseline.

mod delta;
mod report;
mod valse;

pub use delta::{delta, fold_mme_split, MME_COGNITION, MME_PERCEPTION, MME_TOTAL};
pub use report::{BenchmarkScore, ScoreReport};
pub use valse::{
    build_valse_questions, parse_yes_no, valse_score, ValseCounters, ValseMetrics, YesNo, VALSE_TEMPLATE,
};

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{decode, load_documents};
use crate::orchestrator::RunRecord;
use crate::tokenize::is_word_char;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerType {
    Binary,
    Choice,
    Open,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchSample {
    pub sample_id: String,
    pub image_ref: String,
    pub question: String,
    pub answer: String,
    pub answer_type: AnswerType,
}

impl BenchSample {
    pub fn validate(&self) -> Result<()> {
        if self.sample_id.trim().is_empty() {
            return Err(Error::validation("sample_id", "must not be empty"));
        }
        if self.question.trim().is_empty() {
            return Err(Error::validation("question", "must not be empty"));
        }
        if self.answer_type == AnswerType::Binary && !is_yes_no(&normalize_answer(&self.answer)) {
            return Err(Error::validation(
                "answer",
                format!("binary sample {} has non yes/no gold {:?}", self.sample_id, self.answer),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValseInstance {
    pub instance_id: String,
    pub image_ref: String,
    pub caption: String,
    pub foil: String,
}

/// Which record schema a benchmark file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchKind {
    Qa,
    Valse,
}

fn parse_bench_sample(bytes: &[u8]) -> Result<BenchSample> {
    let s: BenchSample = decode(bytes)?;
    s.validate()?;
    Ok(s)
}

fn parse_valse_instance(bytes: &[u8]) -> Result<ValseInstance> {
    decode(bytes)
}

pub fn load_bench_samples(path: &Path) -> Result<Vec<BenchSample>> {
    load_documents(path, parse_bench_sample)
}

pub fn load_valse_instances(path: &Path) -> Result<Vec<ValseInstance>> {
    load_documents(path, parse_valse_instance)
}

/// Looks at the first record: caption/foil pairs are VALSE, anything else QA.
pub fn detect_bench_kind(path: &Path) -> Result<BenchKind> {
    let text = std::fs::read_to_string(path)?;
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::Empty(format!("{} has no records", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(first).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        path: String::new(),
        message: e.to_string(),
    })?;
    Ok(if v.get("caption").is_some() && v.get("foil").is_some() {
        BenchKind::Valse
    } else {
        BenchKind::Qa
    })
}

const TERMINAL_PUNCT: &[char] = &['.', ',', '!', '?', ';', ':'];

/// Lowercases, trims, strips terminal punctuation, collapses whitespace and
/// drops a leading article.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let trimmed = lowered.trim().trim_end_matches(TERMINAL_PUNCT).trim_end();
    let collapsed = trimmed.split_whitespace().collect::<Vec<_>>().join(" ");
    for article in ["a ", "an ", "the "] {
        if let Some(rest) = collapsed.strip_prefix(article) {
            return rest.to_string();
        }
    }
    collapsed
}

fn is_yes_no(s: &str) -> bool {
    s == "yes" || s == "no"
}

/// First word of the normalized reply, without surrounding punctuation.
pub fn first_token(reply: &str) -> String {
    normalize_answer(reply)
        .split_whitespace()
        .next()
        .map(|t| t.trim_matches(|c: char| !is_word_char(c)).to_string())
        .unwrap_or_default()
}

fn has_standalone_or(question: &str) -> bool {
    question
        .split(|c: char| !is_word_char(c))
        .any(|w| w.eq_ignore_ascii_case("or"))
}

/// Keeps yes/no samples and choice questions (containing the word "or").
pub fn gqa_star_filter(samples: &[BenchSample]) -> Vec<BenchSample> {
    samples
        .iter()
        .filter(|s| is_yes_no(&normalize_answer(&s.answer)) || has_standalone_or(&s.question))
        .cloned()
        .collect()
}

pub fn is_correct(sample: &BenchSample, reply: &str) -> bool {
    let gold = normalize_answer(&sample.answer);
    match sample.answer_type {
        AnswerType::Binary => first_token(reply) == gold,
        AnswerType::Choice | AnswerType::Open => normalize_answer(reply) == gold,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactScore {
    pub total: usize,
    pub correct: usize,
    /// Samples with no successful reply; scored as wrong.
    pub missing: usize,
    pub accuracy: f64,
}

/// Exact-match accuracy in percent over `(sample, reply)` pairs.
pub fn score_exact<'a, I>(pairs: I) -> Result<ExactScore>
where
    I: IntoIterator<Item = (&'a BenchSample, Option<&'a str>)>,
{
    let (mut total, mut correct, mut missing) = (0, 0, 0);
    for (sample, reply) in pairs {
        total += 1;
        match reply {
            Some(r) if is_correct(sample, r) => correct += 1,
            Some(_) => {}
            None => missing += 1,
        }
    }
    if total == 0 {
        return Err(Error::Empty("no samples to score".into()));
    }
    Ok(ExactScore {
        total,
        correct,
        missing,
        accuracy: 100.0 * correct as f64 / total as f64,
    })
}

/// Successful replies keyed by sample id, restricted to one fingerprint.
pub fn replies_by_sample<'a>(records: &'a [RunRecord], fingerprint: Option<&str>) -> HashMap<&'a str, &'a str> {
    records
        .iter()
        .filter(|r| fingerprint.is_none_or(|f| r.config_fingerprint == f))
        .filter_map(|r| r.response.as_deref().filter(|_| r.is_success()).map(|resp| (r.sample_id.as_str(), resp)))
        .collect()
}

/// Sample ids used for the two questions asked per caption/foil instance.
pub fn valse_sample_ids(instance_id: &str) -> (String, String) {
    (format!("{instance_id}#caption"), format!("{instance_id}#foil"))
}
