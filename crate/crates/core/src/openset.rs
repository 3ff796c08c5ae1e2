//! Open-vocabulary detection prompts built from the user question.
//!
//! Candidate object names are pulled out of the question with a stopword
//! filter (no tagger, no lexicon), joined into the phrase-separated prompt
//! that grounding detectors expect, and the detector's matches are turned
//! back into ordinary [`Detection`]s with a two-score cutoff.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Detection, NormBox, Thresholds};
use crate::tokenize::is_word_char;

/// Question words, auxiliaries and modals, pronouns, articles and
/// determiners, prepositions, conjunctions, spatial relations, and filler.
pub const STOPWORDS: &[&str] = &[
    // question words
    "what", "which", "who", "whom", "whose", "where", "when", "why", "how", "whether",
    // auxiliaries and modals
    "is", "are", "was", "were", "be", "been", "being", "am", "do", "does", "did", "done", "doing", "have",
    "has", "had", "having", "can", "could", "will", "would", "shall", "should", "may", "might", "must",
    // common light verbs
    "get", "gets", "got", "make", "makes", "made", "seem", "seems", "appear", "appears", "look", "looks",
    "see", "seen", "shown", "show", "shows", "visible", "say", "says", "said", "wearing", "holding",
    // pronouns
    "i", "me", "my", "mine", "we", "us", "our", "ours", "you", "your", "yours", "he", "him", "his", "she",
    "her", "hers", "it", "its", "they", "them", "their", "theirs", "this", "that", "these", "those",
    "there", "here", "one", "ones", "itself", "themselves",
    // articles, determiners, quantifiers
    "a", "an", "the", "some", "any", "all", "each", "every", "both", "either", "neither", "no", "not",
    "none", "many", "much", "more", "most", "few", "fewer", "less", "least", "several", "other", "another",
    "such", "only", "same", "own", "number", "kind", "type", "sort",
    // prepositions
    "in", "on", "at", "of", "to", "for", "from", "by", "with", "without", "about", "into", "onto", "upon",
    "over", "under", "above", "below", "beneath", "between", "among", "through", "across", "along",
    "around", "against", "toward", "towards", "inside", "outside", "within", "near", "beside", "besides",
    "behind", "beyond", "after", "before", "during", "off", "up", "down", "out", "via", "per", "like",
    "than",
    // conjunctions
    "and", "or", "but", "nor", "so", "yet", "if", "then", "because", "while", "as", "also",
    // spatial relations
    "left", "right", "front", "back", "side", "next", "middle", "center", "closer", "farther",
    // filler and answer words
    "yes", "very", "too", "just", "really", "please", "s", "t",
];

pub fn default_stopwords() -> HashSet<&'static str> {
    STOPWORDS.iter().copied().collect()
}

/// Ordered, de-duplicated candidate names.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TargetList {
    names: Vec<String>,
}

impl TargetList {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for n in &names {
            if n.trim().is_empty() {
                return Err(Error::Input("target phrase must not be empty".into()));
            }
            if !seen.insert(n.to_lowercase()) {
                return Err(Error::Input(format!("duplicate target phrase {n:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

impl TryFrom<Vec<String>> for TargetList {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TargetList> for Vec<String> {
    fn from(t: TargetList) -> Self {
        t.names
    }
}

/// Pulls candidate object phrases out of a question. Consecutive non-stopword
/// tokens form one phrase; stopwords and punctuation break phrases.
pub fn extract_targets(question: &str, stopwords: &HashSet<&str>) -> TargetList {
    let lowered = question.to_lowercase();
    let mut phrases: Vec<String> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let flush = |current: &mut Vec<&str>, phrases: &mut Vec<String>| {
        if !current.is_empty() {
            let p = current.join(" ");
            if !phrases.contains(&p) {
                phrases.push(p);
            }
            current.clear();
        }
    };
    let mut start = None;
    for (i, c) in lowered.char_indices().chain(std::iter::once((lowered.len(), ' '))) {
        if is_word_char(c) && i < lowered.len() {
            start.get_or_insert(i);
            continue;
        }
        if let Some(s) = start.take() {
            let word = &lowered[s..i];
            if stopwords.contains(word) {
                flush(&mut current, &mut phrases);
            } else {
                current.push(word);
            }
        }
        if !c.is_whitespace() {
            flush(&mut current, &mut phrases);
        }
    }
    flush(&mut current, &mut phrases);
    TargetList { names: phrases }
}

/// A prompt for an open-set detector and the cutoffs to apply to its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpensetQuery {
    pub prompt: String,
    pub box_cutoff: f64,
    pub text_cutoff: f64,
}

/// Joins phrases as `"a . b ."`.
pub fn build_openset_prompt(targets: &TargetList, thresholds: &Thresholds) -> Result<OpensetQuery> {
    if targets.is_empty() {
        return Err(Error::Empty("no target phrases to build an open-set prompt from".into()));
    }
    let mut prompt = targets
        .names()
        .iter()
        .map(|n| n.to_lowercase())
        .collect::<Vec<_>>()
        .join(" . ");
    prompt.push_str(" .");
    Ok(OpensetQuery {
        prompt,
        box_cutoff: thresholds.openset_box,
        text_cutoff: thresholds.openset_text,
    })
}

/// Splits a prompt built by [`build_openset_prompt`] back into phrases.
pub fn split_openset_prompt(prompt: &str) -> Vec<String> {
    prompt
        .strip_suffix(" .")
        .unwrap_or(prompt)
        .split(" . ")
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect()
}

/// One phrase match from an open-set detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpensetMatch {
    pub phrase: String,
    pub bbox: NormBox,
    pub box_score: f64,
    pub text_score: f64,
}

/// Open-set detector output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct OpensetFile {
    pub image_id: String,
    pub query: String,
    pub matches: Vec<OpensetMatch>,
}

/// Keeps matches above both cutoffs (strictly) and turns them into detections
/// labeled with the returned phrase, scored by the box score.
pub fn openset_to_detections(matches: &[OpensetMatch], query: &OpensetQuery) -> Vec<Detection> {
    matches
        .iter()
        .filter(|m| m.box_score > query.box_cutoff && m.text_score > query.text_cutoff)
        .filter_map(|m| match Detection::new(m.phrase.clone(), m.bbox, m.box_score) {
            Ok(d) => Some(d),
            Err(e) => {
                log::warn!("skipping open-set match {:?}: {e}", m.phrase);
                None
            }
        })
        .collect()
}
