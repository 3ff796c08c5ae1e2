use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::endpoint::{Endpoint, EndpointConfig, EndpointError, ErrorClass};
use super::store::{RecordedError, RunRecord, RunStore};
use super::{assemble_prompt, Mode, PromptBundle};
use crate::error::{Error, Result};
use crate::geometry::Thresholds;
use crate::harness::VALSE_TEMPLATE;
use crate::infusion::{OCR_HEADER, OD_HEADER};

/// What goes into a run's configuration fingerprint.
#[derive(Debug, Clone, Serialize)]
pub struct FingerprintInput<'a> {
    pub thresholds: &'a Thresholds,
    pub budget: usize,
    pub mode: Mode,
    pub model: &'a str,
}

/// Short hex digest of thresholds, budget, sentence templates, mode and model.
pub fn config_fingerprint(input: &FingerprintInput<'_>) -> String {
    #[derive(Serialize)]
    struct Canonical<'a> {
        #[serde(flatten)]
        input: &'a FingerprintInput<'a>,
        templates: [&'static str; 3],
    }
    let canonical = serde_json::to_vec(&Canonical {
        input,
        templates: [OD_HEADER, OCR_HEADER, VALSE_TEMPLATE],
    })
    .expect("fingerprint input serializes");
    hex::encode(&Sha256::digest(&canonical)[..8])
}

/// Source of timestamps and latencies. `Frozen` reports zeros so that mock
/// runs are byte-for-byte reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    Frozen,
}

impl Clock {
    fn timestamp_ms(self) -> u64 {
        match self {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64),
            Clock::Frozen => 0,
        }
    }

    fn latency_ms(self, start: Instant) -> u64 {
        match self {
            Clock::System => start.elapsed().as_millis() as u64,
            Clock::Frozen => 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchSample {
    pub sample_id: String,
    pub bundle: PromptBundle,
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub parallelism: usize,
    pub retry_budget: u32,
    pub backoff: Duration,
    pub max_consecutive_failures: usize,
    /// Re-send samples whose stored record is a failure.
    pub retry_failed: bool,
    pub clock: Clock,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self::from(&EndpointConfig::default())
    }
}

impl From<&EndpointConfig> for BatchOptions {
    fn from(c: &EndpointConfig) -> Self {
        Self {
            parallelism: c.parallelism,
            retry_budget: c.retry_budget,
            backoff: Duration::from_millis(c.backoff_ms),
            max_consecutive_failures: c.max_consecutive_failures,
            retry_failed: false,
            clock: Clock::System,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BatchReport {
    /// One record per distinct sample, in input order. Samples that hit a
    /// transport failure are included but were not persisted.
    pub records: Vec<RunRecord>,
    /// Samples sent to the endpoint in this run.
    pub sent: usize,
    /// Samples already present in the store.
    pub skipped: usize,
    pub failed: usize,
}

struct Shared<'a> {
    pending: Vec<&'a BatchSample>,
    next: AtomicUsize,
    abort: AtomicBool,
    consecutive: AtomicUsize,
    results: Mutex<HashMap<&'a str, RunRecord>>,
    store_error: Mutex<Option<Error>>,
}

/// Sends every sample not yet in `store` under `fingerprint`, with at most
/// `opts.parallelism` requests in flight, and appends each outcome.
///
/// Transport failures (endpoint unreachable) are not persisted, so a resumed
/// run sends those samples again. After `max_consecutive_failures` endpoint
/// failures in a row the run stops dispatching and returns
/// [`Error::Aborted`]; everything recorded so far stays in the store.
pub fn run_batch(
    samples: &[BatchSample],
    endpoint: &dyn Endpoint,
    opts: &BatchOptions,
    store: &RunStore,
    fingerprint: &str,
) -> Result<BatchReport> {
    if opts.parallelism == 0 {
        return Err(Error::Config("parallelism must be at least 1".into()));
    }
    for s in samples {
        s.bundle
            .validate()
            .map_err(|e| Error::Input(format!("sample {}: {e}", s.sample_id)))?;
    }

    let mut seen = HashSet::new();
    let mut pending = Vec::new();
    let mut skipped = 0;
    for s in samples {
        if !seen.insert(s.sample_id.as_str()) {
            continue;
        }
        let resend = match store.get(fingerprint, &s.sample_id)? {
            None => true,
            Some(r) => opts.retry_failed && !r.is_success(),
        };
        if resend {
            pending.push(s);
        } else {
            skipped += 1;
        }
    }

    let shared = Shared {
        pending,
        next: AtomicUsize::new(0),
        abort: AtomicBool::new(false),
        consecutive: AtomicUsize::new(0),
        results: Mutex::new(HashMap::new()),
        store_error: Mutex::new(None),
    };
    let workers = opts.parallelism.min(shared.pending.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| worker(&shared, endpoint, opts, store, fingerprint));
        }
    });

    if let Some(e) = shared.store_error.into_inner().unwrap_or_else(|p| p.into_inner()) {
        return Err(e);
    }
    let mut results = shared.results.into_inner().unwrap_or_else(|p| p.into_inner());
    let sent = results.len();
    if shared.abort.load(Ordering::SeqCst) {
        return Err(Error::Aborted {
            consecutive: shared.consecutive.load(Ordering::SeqCst),
            completed: results.values().filter(|r| r.error.as_ref().is_none_or(|e| e.class != ErrorClass::Transport)).count(),
        });
    }

    let mut report = BatchReport {
        sent,
        skipped,
        ..BatchReport::default()
    };
    let mut emitted = HashSet::new();
    for s in samples {
        if !emitted.insert(s.sample_id.as_str()) {
            continue;
        }
        let rec = match results.remove(s.sample_id.as_str()) {
            Some(r) => r,
            None => store
                .get(fingerprint, &s.sample_id)?
                .ok_or_else(|| Error::Store {
                    path: store.path().to_path_buf(),
                    message: format!("record for {} vanished", s.sample_id),
                })?,
        };
        if !rec.is_success() {
            report.failed += 1;
        }
        report.records.push(rec);
    }
    Ok(report)
}

fn worker(shared: &Shared<'_>, endpoint: &dyn Endpoint, opts: &BatchOptions, store: &RunStore, fingerprint: &str) {
    loop {
        if shared.abort.load(Ordering::SeqCst) {
            return;
        }
        let i = shared.next.fetch_add(1, Ordering::SeqCst);
        let Some(sample) = shared.pending.get(i) else { return };
        let record = exchange(sample, endpoint, opts, fingerprint);

        let endpoint_failure = record
            .1
            .as_ref()
            .is_some_and(EndpointError::is_endpoint_failure);
        if endpoint_failure {
            let n = shared.consecutive.fetch_add(1, Ordering::SeqCst) + 1;
            if n >= opts.max_consecutive_failures.max(1) {
                shared.abort.store(true, Ordering::SeqCst);
            }
        } else {
            shared.consecutive.store(0, Ordering::SeqCst);
        }

        let (record, err) = record;
        let persist = err.as_ref().is_none_or(|e| e.class != ErrorClass::Transport);
        if persist {
            if let Err(e) = store.append(&record) {
                let mut slot = shared.store_error.lock().unwrap_or_else(|p| p.into_inner());
                slot.get_or_insert(e);
                shared.abort.store(true, Ordering::SeqCst);
                return;
            }
        }
        shared
            .results
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(sample.sample_id.as_str(), record);
    }
}

fn exchange(
    sample: &BatchSample,
    endpoint: &dyn Endpoint,
    opts: &BatchOptions,
    fingerprint: &str,
) -> (RunRecord, Option<EndpointError>) {
    let prompt = assemble_prompt(&sample.bundle);
    let timestamp_ms = opts.clock.timestamp_ms();
    let start = Instant::now();
    let mut attempts = 0;
    let outcome = loop {
        attempts += 1;
        match endpoint.complete(&sample.bundle, &prompt) {
            Ok(reply) => break Ok(reply),
            Err(e) if e.is_retryable() && attempts <= opts.retry_budget => {
                log::debug!("sample {} attempt {attempts} failed: {e}", sample.sample_id);
                let delay = opts.backoff.saturating_mul(1 << (attempts - 1).min(16));
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            }
            Err(e) => {
                log::warn!("sample {} failed after {attempts} attempt(s): {e}", sample.sample_id);
                break Err(e);
            }
        }
    };
    let (response, error) = match outcome {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e)),
    };
    let record = RunRecord {
        sample_id: sample.sample_id.clone(),
        config_fingerprint: fingerprint.to_string(),
        prompt,
        response,
        error: error.as_ref().map(|e| RecordedError {
            class: e.class,
            status: e.status,
            message: e.message.clone(),
        }),
        attempts,
        latency_ms: opts.clock.latency_ms(start),
        timestamp_ms,
    };
    (record, error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_depends_on_config() {
        let t = Thresholds::default();
        let base = FingerprintInput {
            thresholds: &t,
            budget: 1024,
            mode: Mode::Infused,
            model: "m",
        };
        let a = config_fingerprint(&base);
        assert_eq!(a.len(), 16);
        assert_eq!(a, config_fingerprint(&base));
        assert_ne!(a, config_fingerprint(&FingerprintInput { mode: Mode::Plain, ..base.clone() }));
        assert_ne!(a, config_fingerprint(&FingerprintInput { model: "n", ..base.clone() }));
        let t2 = Thresholds { od_conf: 0.5, ..t };
        assert_ne!(a, config_fingerprint(&FingerprintInput { thresholds: &t2, ..base }));
    }
}
