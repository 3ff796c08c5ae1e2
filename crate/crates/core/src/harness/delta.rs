use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const MME_TOTAL: &str = "MME";
pub const MME_PERCEPTION: &str = "MME-P";
pub const MME_COGNITION: &str = "MME-C";

/// Mean relative improvement of `candidate` over `baseline`, in percent:
/// `100 / K * sum((c_k - b_k) / b_k)`.
///
/// Both maps must have the same keys and every baseline value must be
/// positive. MME belongs in as a single perception + cognition sum; see
/// [`fold_mme_split`].
pub fn delta(baseline: &BTreeMap<String, f64>, candidate: &BTreeMap<String, f64>) -> Result<f64> {
    if baseline.is_empty() {
        return Err(Error::Input("no benchmarks to compare".into()));
    }
    if baseline.keys().ne(candidate.keys()) {
        let only_base: Vec<_> = baseline.keys().filter(|k| !candidate.contains_key(*k)).collect();
        let only_cand: Vec<_> = candidate.keys().filter(|k| !baseline.contains_key(*k)).collect();
        return Err(Error::Input(format!(
            "benchmark keys differ: only in baseline {only_base:?}, only in candidate {only_cand:?}"
        )));
    }
    let mut sum = 0.0;
    for (k, &b) in baseline {
        let c = candidate[k];
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::Input(format!("baseline value for {k} must be positive, got {b}")));
        }
        if !c.is_finite() {
            return Err(Error::Input(format!("candidate value for {k} is not finite")));
        }
        sum += (c - b) / b;
    }
    Ok(100.0 * sum / baseline.len() as f64)
}

/// Replaces separate `MME-P` and `MME-C` entries with their sum under `MME`.
pub fn fold_mme_split(mut values: BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    match (values.remove(MME_PERCEPTION), values.remove(MME_COGNITION)) {
        (None, None) => Ok(values),
        (Some(p), Some(c)) => {
            if values.contains_key(MME_TOTAL) {
                return Err(Error::Input(format!(
                    "{MME_TOTAL} given together with {MME_PERCEPTION}/{MME_COGNITION}"
                )));
            }
            values.insert(MME_TOTAL.to_string(), p + c);
            Ok(values)
        }
        _ => Err(Error::Input(format!(
            "{MME_PERCEPTION} and {MME_COGNITION} must be given together"
        ))),
    }
}
