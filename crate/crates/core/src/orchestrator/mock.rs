//! A deterministic stand-in model that answers from the detection text.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use super::endpoint::{Endpoint, EndpointError};
use super::{Mode, PromptBundle};
use crate::infusion::{parse_ocr_sentence, parse_od_sentence, pluralize, ParsedGroup};
use crate::tokenize::is_word_char;

const FALLBACK: &str = "no";

fn words(s: &str) -> Vec<String> {
    s.split(|c: char| !is_word_char(c))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Length (in words) of the longest prefix of `rest` naming `label`, in
/// either number.
fn label_match_len(label: &str, rest: &[String]) -> Option<usize> {
    let label = label.to_lowercase();
    let n = words(&label).len();
    (1..=rest.len().min(n + 1)).rev().find(|&k| {
        let phrase = rest[..k].join(" ");
        phrase == label || pluralize(&phrase, 2) == label || pluralize(&label, 2) == phrase
    })
}

fn find_group<'a>(groups: &'a [ParsedGroup], rest: &[String]) -> Option<&'a ParsedGroup> {
    groups
        .iter()
        .filter_map(|g| label_match_len(&g.label, rest).map(|k| (k, g)))
        .max_by_key(|(k, _)| *k)
        .map(|(_, g)| g)
}

fn strip_article(rest: &[String]) -> &[String] {
    match rest.first().map(String::as_str) {
        Some("a" | "an" | "the" | "any") => &rest[1..],
        _ => rest,
    }
}

/// Answers counting, existence and text-reading questions from the rendered
/// detection sentences. Plain bundles and anything else get "no".
pub fn mock_answer(bundle: &PromptBundle) -> String {
    if bundle.mode == Mode::Plain {
        return FALLBACK.into();
    }
    let groups = match bundle.od_text.as_ref().filter(|t| t.is_usable()) {
        Some(t) => match parse_od_sentence(&t.sentence) {
            Some(g) => g,
            None => return FALLBACK.into(),
        },
        None => Vec::new(),
    };
    let q = words(&bundle.question);
    match q.as_slice() {
        [how, many, rest @ ..] if how == "how" && many == "many" => {
            find_group(&groups, rest).map_or(0, |g| g.count).to_string()
        }
        [is, there, rest @ ..] if (is == "is" || is == "are") && there == "there" => {
            let yes = find_group(&groups, strip_article(rest)).is_some();
            if yes { "yes" } else { "no" }.into()
        }
        _ if bundle.question.to_lowercase().contains("what does the text") && q.iter().any(|w| w == "say") => bundle
            .ocr_text
            .as_ref()
            .filter(|t| t.is_usable())
            .and_then(|t| parse_ocr_sentence(&t.sentence))
            .and_then(|spans| spans.into_iter().next())
            .map_or_else(|| FALLBACK.into(), |(text, _)| text),
        _ => FALLBACK.into(),
    }
}

/// [`mock_answer`] behind the [`Endpoint`] trait, with a probe that records
/// how many calls were in flight at once.
#[derive(Debug, Default)]
pub struct MockEndpoint {
    delay: Duration,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    calls: AtomicUsize,
}

impl MockEndpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sleeps this long inside every call, so overlap is observable.
    pub fn with_delay(delay: Duration) -> Self {
        Self {
            delay,
            ..Self::default()
        }
    }

    pub fn peak_concurrency(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Endpoint for MockEndpoint {
    fn complete(&self, bundle: &PromptBundle, _prompt: &str) -> Result<String, EndpointError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let answer = mock_answer(bundle);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        Ok(answer)
    }
}
