//! Run configuration: one TOML file, overridden by command-line flags.
//!
//! ```toml
//! budget = 1024
//! mode = "infused"
//! detector = "closed"
//!
//! [thresholds]
//! od_conf = 0.3
//! ocr_box = 0.6
//!
//! [tokenizer]
//! mode = "approx"
//!
//! [endpoint]
//! base_url = "http://localhost:8000/v1"
//! model = "llava-v1.5-7b"
//! parallelism = 4
//!
//! [paths]
//! od = "detections.jsonl"
//! ocr = "ocr.jsonl"
//! bench = "gqa.jsonl"
//! store = "runs.jsonl"
//! ```
//!
//! Relative paths in the file are resolved against the file's directory.

use std::path::{Path, PathBuf};

use infuse_core::infusion::DEFAULT_BUDGET;
use infuse_core::orchestrator::{EndpointConfig, Mode};
use infuse_core::{Error, Result, Thresholds, TokenizerSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    /// `--od` holds closed-set detection documents.
    #[default]
    Closed,
    /// `--od` holds open-set documents; matches become detections after the
    /// box and phrase cutoffs.
    Openset,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub od: Option<PathBuf>,
    pub ocr: Option<PathBuf>,
    pub bench: Option<PathBuf>,
    pub store: Option<PathBuf>,
    /// Output of `build-text`, read by `run` and `stats`.
    pub texts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub thresholds: Thresholds,
    pub tokenizer: TokenizerSpec,
    pub budget: usize,
    pub endpoint: EndpointConfig,
    pub paths: Paths,
    pub mode: Mode,
    pub detector: DetectorKind,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            tokenizer: TokenizerSpec::default(),
            budget: DEFAULT_BUDGET,
            endpoint: EndpointConfig::default(),
            paths: Paths::default(),
            mode: Mode::default(),
            detector: DetectorKind::default(),
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub od: Option<PathBuf>,
    pub ocr: Option<PathBuf>,
    pub bench: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub texts: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub parallel: Option<usize>,
    pub budget: Option<usize>,
    pub od_conf: Option<f64>,
    pub ocr_conf: Option<f64>,
    pub base_url: Option<String>,
    pub model: Option<String>,
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut cfg.paths;
        for slot in [&mut p.od, &mut p.ocr, &mut p.bench, &mut p.store, &mut p.texts] {
            rebase(base, slot);
        }
        if let TokenizerSpec::External { merges, .. } = &mut cfg.tokenizer {
            if merges.is_relative() {
                *merges = base.join(&*merges);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: Overrides) {
        let p = &mut self.paths;
        p.od = o.od.or(p.od.take());
        p.ocr = o.ocr.or(p.ocr.take());
        p.bench = o.bench.or(p.bench.take());
        p.store = o.store.or(p.store.take());
        p.texts = o.texts.or(p.texts.take());
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(n) = o.parallel {
            self.endpoint.parallelism = n;
        }
        if let Some(b) = o.budget {
            self.budget = b;
        }
        if let Some(c) = o.od_conf {
            self.thresholds.od_conf = c;
        }
        if let Some(c) = o.ocr_conf {
            self.thresholds.ocr_box = c;
        }
        if let Some(u) = o.base_url {
            self.endpoint.base_url = u;
        }
        if let Some(m) = o.model {
            self.endpoint.model = m;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        if self.budget == 0 {
            return Err(Error::Config("budget must be positive".into()));
        }
        if self.endpoint.parallelism == 0 {
            return Err(Error::Config("endpoint.parallelism must be at least 1".into()));
        }
        Ok(())
    }
}

/// An input path that must be set and must exist.
pub fn required_input<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    let path = p
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{flag} is required (flag or [paths] entry)")))?;
    check_exists(path)?;
    Ok(path)
}

pub fn check_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::Config(format!("{} does not exist", path.display())));
    }
    Ok(())
}
