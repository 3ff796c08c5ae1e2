//! Textual detection infusion for multimodal LLM prompts.
//!
//! Object-detector and OCR outputs are reduced to short sentences that list
//! the central coordinates of what was found ("2 people:{[0.25, 0.12], ...}"),
//! prepended to the user question, and sent to any chat-completions style
//! endpoint. The crate also carries the benchmark side: subset filters,
//! answer normalization, caption/foil scoring and the mean relative
//! improvement over a baseline.
//!
//! Module map:
//!
//! - [`geometry`]: canonical boxes, detections, OCR spans and thresholds
//! - [`ingest`]: detector/OCR/open-set result files
//! - [`tokenize`]: token counting used for length budgets
//! - [`infusion`]: sentence rendering, budgets and corpus length stats
//! - [`openset`]: open-vocabulary prompt building from questions
//! - [`orchestrator`]: prompt assembly, endpoints, run store, batch runner
//! - [`harness`]: benchmark filtering and scoring

pub mod error;
pub mod geometry;
pub mod harness;
pub mod infusion;
pub mod ingest;
pub mod openset;
pub mod orchestrator;
pub mod tokenize;

pub use error::{Error, Result};
pub use geometry::{center_of, filter_by_confidence, to_norm_box, Detection, NormBox, OcrSpan, Region, Thresholds};
pub use infusion::{
    apply_budget, build_ocr_sentence, build_od_sentence, corpus_stats, format_coord, pluralize, InfusionText,
    LengthStats, Modality,
};
pub use tokenize::{Tokenizer, TokenizerSpec};
