//! Caption/foil scoring for generative models.
//!
//! Each instance is asked twice, once with the caption and once with the
//! foil. A "yes" to the caption counts toward `capt_fits`, a "no" to the foil
//! toward `foil_detected`, both toward `foil_accuracy`, and the pair toward
//! `pairwise_acc` when both hold. Replies that are neither yes nor no count
//! as wrong.

use serde::{Deserialize, Serialize};

use super::{first_token, ValseInstance};
use crate::error::{Error, Result};

/// Question template; `{sentence}` is replaced by the quoted sentence.
pub const VALSE_TEMPLATE: &str = "Does this image match the sentence '{sentence}'? Use only 'yes' or 'no' to answer.";

/// Builds the caption question and the foil question.
pub fn build_valse_questions(inst: &ValseInstance) -> Result<(String, String)> {
    let fill = |field: &str, s: &str| {
        if s.trim().is_empty() {
            return Err(Error::Template(format!("instance {}: {field} is empty", inst.instance_id)));
        }
        Ok(VALSE_TEMPLATE.replace("{sentence}", &s.replace('\'', "''")))
    };
    Ok((fill("caption", &inst.caption)?, fill("foil", &inst.foil)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YesNo {
    Yes,
    No,
    Other,
}

pub fn parse_yes_no(reply: &str) -> YesNo {
    match first_token(reply).as_str() {
        "yes" => YesNo::Yes,
        "no" => YesNo::No,
        _ => YesNo::Other,
    }
}

/// Additive counters; shards can be merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValseCounters {
    pub count: u64,
    pub capt_fits: u64,
    pub foil_detected: u64,
    pub foil_accuracy: u64,
    pub pairwise_acc: u64,
}

impl ValseCounters {
    pub fn add(&mut self, caption_reply: YesNo, foil_reply: YesNo) {
        self.count += 1;
        let fits = caption_reply == YesNo::Yes;
        let detected = foil_reply == YesNo::No;
        if fits {
            self.capt_fits += 1;
            self.foil_accuracy += 1;
        }
        if detected {
            self.foil_detected += 1;
            self.foil_accuracy += 1;
        }
        if fits && detected {
            self.pairwise_acc += 1;
        }
    }

    pub fn merge(&mut self, other: &ValseCounters) {
        self.count += other.count;
        self.capt_fits += other.capt_fits;
        self.foil_detected += other.foil_detected;
        self.foil_accuracy += other.foil_accuracy;
        self.pairwise_acc += other.pairwise_acc;
    }

    pub fn metrics(&self) -> Result<ValseMetrics> {
        if self.count == 0 {
            return Err(Error::Empty("no caption/foil instances to score".into()));
        }
        let pct = |num: u64| num as f64 / self.count as f64;
        Ok(ValseMetrics {
            acc: pct(self.foil_accuracy * 50),
            p_c: pct(self.capt_fits * 100),
            p_f: pct(self.foil_detected * 100),
            acc_r: pct(self.pairwise_acc * 100),
            counters: *self,
        })
    }
}

/// Percentages. Each is `numerator / count` with the numerators given by
/// [`ValseMetrics::numerators`], so comparisons can be made exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValseMetrics {
    pub acc: f64,
    pub p_c: f64,
    pub p_f: f64,
    pub acc_r: f64,
    pub counters: ValseCounters,
}

impl ValseMetrics {
    /// `(acc, p_c, p_f, acc_r)` numerators over the common denominator `count`.
    pub fn numerators(&self) -> (u64, u64, u64, u64) {
        let c = &self.counters;
        (c.foil_accuracy * 50, c.capt_fits * 100, c.foil_detected * 100, c.pairwise_acc * 100)
    }
}

/// Scores one `(caption reply, foil reply)` pair per instance.
pub fn valse_score(instances: &[ValseInstance], replies: &[(String, String)]) -> Result<ValseMetrics> {
    if instances.len() != replies.len() {
        return Err(Error::Input(format!(
            "{} instances but {} reply pairs",
            instances.len(),
            replies.len()
        )));
    }
    let mut counters = ValseCounters::default();
    for (q1, q2) in replies {
        counters.add(parse_yes_no(q1), parse_yes_no(q2));
    }
    counters.metrics()
}
