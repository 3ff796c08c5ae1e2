use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkScore {
    /// The value compared across models (accuracy, or acc for caption/foil).
    pub primary: f64,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub count: usize,
}

/// Per-benchmark results for one model, plus the mean relative improvement
/// over a baseline when one was computed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub benchmarks: BTreeMap<String, BenchmarkScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl ScoreReport {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(Error::from_json)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    /// Primary value per benchmark.
    pub fn values(&self) -> BTreeMap<String, f64> {
        self.benchmarks.iter().map(|(k, v)| (k.clone(), v.primary)).collect()
    }

    pub fn insert(&mut self, name: impl Into<String>, score: BenchmarkScore) {
        self.benchmarks.insert(name.into(), score);
    }

    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        if let Some(m) = &self.model {
            let _ = writeln!(out, "model: {m}");
        }
        let _ = writeln!(out, "{:<24} {:>12} {:>8}  details", "benchmark", "score", "n");
        for (name, s) in &self.benchmarks {
            let details = s
                .metrics
                .iter()
                .map(|(k, v)| format!("{k}={v:.2}"))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(out, "{name:<24} {:>12.2} {:>8}  {details}", s.primary, s.count);
        }
        if let Some(d) = self.delta {
            let _ = writeln!(out, "{:<24} {:>+11.2}%", "delta", d);
        }
        out
    }
}
