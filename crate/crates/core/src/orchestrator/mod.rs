//! Prompt assembly and batch inference.
//!
//! Detection sentences go before the question in a single user message:
//!
//! ```text
//! <object sentence>
//! <text sentence>
//! <question>
//! ```
//!
//! Absent, empty or budget-dropped sentences are left out entirely.

mod batch;
mod endpoint;
mod mock;
mod store;

pub use batch::{config_fingerprint, run_batch, BatchOptions, BatchReport, BatchSample, Clock, FingerprintInput};
pub use endpoint::{
    build_request_body, image_part, parse_reply, Endpoint, EndpointConfig, EndpointError, ErrorClass, HttpEndpoint,
    API_KEY_ENV,
};
pub use mock::{mock_answer, MockEndpoint};
pub use store::{read_records, RecordedError, RunRecord, RunStore};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infusion::InfusionText;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Infused,
    Plain,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "infused" => Ok(Mode::Infused),
            "plain" => Ok(Mode::Plain),
            other => Err(Error::Input(format!("unknown mode {other:?} (expected infused or plain)"))),
        }
    }
}

/// Everything needed to build one request.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub image_ref: String,
    pub od_text: Option<InfusionText>,
    pub ocr_text: Option<InfusionText>,
    pub question: String,
    pub mode: Mode,
}

impl PromptBundle {
    pub fn plain(image_ref: impl Into<String>, question: impl Into<String>) -> Self {
        Self {
            image_ref: image_ref.into(),
            od_text: None,
            ocr_text: None,
            question: question.into(),
            mode: Mode::Plain,
        }
    }

    /// Dropped or empty sentences are discarded here.
    pub fn infused(
        image_ref: impl Into<String>,
        od_text: Option<InfusionText>,
        ocr_text: Option<InfusionText>,
        question: impl Into<String>,
    ) -> Self {
        Self {
            image_ref: image_ref.into(),
            od_text: od_text.filter(InfusionText::is_usable),
            ocr_text: ocr_text.filter(InfusionText::is_usable),
            question: question.into(),
            mode: Mode::Infused,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.question.trim().is_empty() {
            return Err(Error::validation("question", "must not be empty"));
        }
        if self.mode == Mode::Plain && (self.od_text.is_some() || self.ocr_text.is_some()) {
            return Err(Error::validation("mode", "plain bundles carry no detection text"));
        }
        Ok(())
    }
}

/// Builds the user message text.
pub fn assemble_prompt(bundle: &PromptBundle) -> String {
    let mut lines: Vec<&str> = Vec::with_capacity(3);
    if bundle.mode == Mode::Infused {
        for text in [&bundle.od_text, &bundle.ocr_text].into_iter().flatten() {
            if text.is_usable() {
                lines.push(&text.sentence);
            }
        }
    }
    lines.extend(bundle.question.lines().map(str::trim_end).filter(|l| !l.trim().is_empty()));
    lines.join("\n")
}
