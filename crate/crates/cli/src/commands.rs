use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use infuse_core::harness::{
    build_valse_questions, delta, detect_bench_kind, fold_mme_split, gqa_star_filter, load_bench_samples,
    load_valse_instances, normalize_answer, replies_by_sample, score_exact, valse_sample_ids, BenchKind,
    BenchmarkScore, ScoreReport, ValseCounters,
};
use infuse_core::harness::parse_yes_no;
use infuse_core::infusion::{apply_budget, build_ocr_sentence, build_od_sentence, corpus_stats, InfusionText, LengthStats, Modality};
use infuse_core::ingest::{load_documents, parse_detection_file, parse_ocr_file, parse_openset_file, OcrFile};
use infuse_core::openset::{openset_to_detections, OpensetQuery};
use infuse_core::orchestrator::{
    config_fingerprint, read_records, run_batch, BatchOptions, BatchSample, Clock, Endpoint, FingerprintInput,
    HttpEndpoint, MockEndpoint, Mode, PromptBundle, RunStore,
};
use infuse_core::{Detection, Error, Result, Tokenizer};
use serde::{Deserialize, Serialize};

use crate::config::{check_exists, required_input, Config, DetectorKind};

/// Model name recorded for mock runs.
pub const MOCK_MODEL: &str = "mock";

/// One line of `build-text` output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub image_id: String,
    pub od_sentence: String,
    pub ocr_sentence: String,
    pub od_token_len: usize,
    pub ocr_token_len: usize,
    pub od_dropped: bool,
    pub ocr_dropped: bool,
}

impl TextRecord {
    pub fn new(image_id: String, od: &InfusionText, ocr: &InfusionText) -> Self {
        Self {
            image_id,
            od_sentence: od.sentence.clone(),
            ocr_sentence: ocr.sentence.clone(),
            od_token_len: od.token_len,
            ocr_token_len: ocr.token_len,
            od_dropped: od.dropped,
            ocr_dropped: ocr.dropped,
        }
    }

    pub fn od_text(&self) -> InfusionText {
        InfusionText {
            modality: Modality::Od,
            sentence: self.od_sentence.clone(),
            token_len: self.od_token_len,
            dropped: self.od_dropped,
        }
    }

    pub fn ocr_text(&self) -> InfusionText {
        InfusionText {
            modality: Modality::Ocr,
            sentence: self.ocr_sentence.clone(),
            token_len: self.ocr_token_len,
            dropped: self.ocr_dropped,
        }
    }
}

fn write_jsonl<T: Serialize>(out: Option<&Path>, items: &[T], stdout: &mut dyn Write) -> Result<()> {
    let mut sink: Box<dyn Write + '_> = match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(&mut *stdout),
    };
    for item in items {
        serde_json::to_writer(&mut sink, item).map_err(std::io::Error::from)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    load_documents(path, |bytes| {
        serde_json::from_slice(bytes).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            path: String::new(),
            message: e.to_string(),
        })
    })
}

fn load_detections(cfg: &Config, path: &Path) -> Result<Vec<(String, Vec<Detection>)>> {
    match cfg.detector {
        DetectorKind::Closed => Ok(load_documents(path, parse_detection_file)?
            .into_iter()
            .map(|f| (f.image_id, f.detections))
            .collect()),
        DetectorKind::Openset => Ok(load_documents(path, parse_openset_file)?
            .into_iter()
            .map(|f| {
                let query = OpensetQuery {
                    prompt: f.query,
                    box_cutoff: cfg.thresholds.openset_box,
                    text_cutoff: cfg.thresholds.openset_text,
                };
                (f.image_id, openset_to_detections(&f.matches, &query))
            })
            .collect()),
    }
}

/// Renders and budgets both sentences for every image mentioned by either
/// input, detection images first, in input order.
pub fn build_texts(cfg: &Config) -> Result<Vec<TextRecord>> {
    if cfg.paths.od.is_none() && cfg.paths.ocr.is_none() {
        return Err(Error::Config("build-text needs --od and/or --ocr".into()));
    }
    let tokenizer = Tokenizer::from_spec(&cfg.tokenizer)?;
    let dets = match &cfg.paths.od {
        Some(_) => load_detections(cfg, required_input(&cfg.paths.od, "--od")?)?,
        None => Vec::new(),
    };
    let ocr: Vec<OcrFile> = match &cfg.paths.ocr {
        Some(_) => load_documents(required_input(&cfg.paths.ocr, "--ocr")?, parse_ocr_file)?,
        None => Vec::new(),
    };
    if dets.is_empty() && ocr.is_empty() {
        return Err(Error::Empty("no detection or OCR documents".into()));
    }

    let mut order: Vec<&str> = Vec::new();
    let mut by_id: HashMap<&str, (Option<&[Detection]>, Option<&OcrFile>)> = HashMap::new();
    for (id, d) in &dets {
        let slot = by_id.entry(id).or_insert_with(|| {
            order.push(id);
            (None, None)
        });
        if slot.0.replace(d).is_some() {
            return Err(Error::Input(format!("image_id {id} appears twice in detection input")));
        }
    }
    for f in &ocr {
        let slot = by_id.entry(&f.image_id).or_insert_with(|| {
            order.push(&f.image_id);
            (None, None)
        });
        if slot.1.replace(f).is_some() {
            return Err(Error::Input(format!("image_id {} appears twice in OCR input", f.image_id)));
        }
    }

    Ok(order
        .into_iter()
        .map(|id| {
            let (d, o) = by_id[id];
            let od = d.map_or_else(
                || InfusionText::empty(Modality::Od),
                |d| apply_budget(build_od_sentence(d, &cfg.thresholds, &tokenizer), cfg.budget),
            );
            let oc = o.map_or_else(
                || InfusionText::empty(Modality::Ocr),
                |o| apply_budget(build_ocr_sentence(&o.spans, &cfg.thresholds, &tokenizer), cfg.budget),
            );
            TextRecord::new(id.to_string(), &od, &oc)
        })
        .collect())
}

pub fn cmd_build_text(cfg: &Config, out: Option<&Path>, stdout: &mut dyn Write) -> Result<usize> {
    let records = build_texts(cfg)?;
    write_jsonl(out, &records, stdout)?;
    Ok(records.len())
}

/// Reads `build-text` output, or builds it from `--od`/`--ocr`.
pub fn load_or_build_texts(cfg: &Config) -> Result<Vec<TextRecord>> {
    match &cfg.paths.texts {
        Some(p) => {
            check_exists(p)?;
            read_jsonl(p)
        }
        None => build_texts(cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModalityStats {
    pub modality: Modality,
    #[serde(flatten)]
    pub stats: LengthStats,
    pub frac_over_512: f64,
    pub frac_over_1024: f64,
}

pub fn length_stats(records: &[TextRecord]) -> Result<Vec<ModalityStats>> {
    let mut out = Vec::new();
    for (modality, lens) in [
        (Modality::Od, records.iter().map(|r| r.od_token_len).collect::<Vec<_>>()),
        (Modality::Ocr, records.iter().map(|r| r.ocr_token_len).collect()),
    ] {
        let stats = corpus_stats(&lens, 1024)?;
        out.push(ModalityStats {
            modality,
            frac_over_512: stats.frac_over(512),
            frac_over_1024: stats.frac_over(1024),
            stats,
        });
    }
    Ok(out)
}

pub fn cmd_stats(cfg: &Config, json: bool, stdout: &mut dyn Write) -> Result<Vec<ModalityStats>> {
    let stats = length_stats(&load_or_build_texts(cfg)?)?;
    if json {
        serde_json::to_writer_pretty(&mut *stdout, &stats).map_err(std::io::Error::from)?;
        writeln!(stdout)?;
    } else {
        writeln!(
            stdout,
            "{:<8} {:>8} {:>10} {:>14} {:>10} {:>10}",
            "modality", "samples", "mean", "mean_nonzero", "frac>512", "frac>1024"
        )?;
        for s in &stats {
            let name = match s.modality {
                Modality::Od => "od",
                Modality::Ocr => "ocr",
            };
            let nz = if s.stats.nonzero_empty {
                "n/a".to_string()
            } else {
                format!("{:.2}", s.stats.mean_len_nonzero)
            };
            writeln!(
                stdout,
                "{name:<8} {:>8} {:>10.2} {nz:>14} {:>10.4} {:>10.4}",
                s.stats.samples, s.stats.mean_len, s.frac_over_512, s.frac_over_1024
            )?;
        }
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GqaStarSummary {
    pub input: usize,
    pub retained: usize,
    pub yes_no: usize,
    pub choice: usize,
}

pub fn cmd_gqa_star(cfg: &Config, out: Option<&Path>, stdout: &mut dyn Write) -> Result<GqaStarSummary> {
    let samples = load_bench_samples(required_input(&cfg.paths.bench, "--bench")?)?;
    if samples.is_empty() {
        return Err(Error::Empty("benchmark has no samples".into()));
    }
    let kept = gqa_star_filter(&samples);
    let yes_no = kept
        .iter()
        .filter(|s| matches!(normalize_answer(&s.answer).as_str(), "yes" | "no"))
        .count();
    let summary = GqaStarSummary {
        input: samples.len(),
        retained: kept.len(),
        yes_no,
        choice: kept.len() - yes_no,
    };
    match out {
        Some(p) => {
            write_jsonl(Some(p), &kept, stdout)?;
            serde_json::to_writer(&mut *stdout, &summary).map_err(std::io::Error::from)?;
            writeln!(stdout)?;
        }
        None => {
            write_jsonl(None, &kept, stdout)?;
            log::info!("retained {} of {} samples", summary.retained, summary.input);
        }
    }
    Ok(summary)
}

fn model_name(cfg: &Config, mock: bool) -> &str {
    if mock {
        MOCK_MODEL
    } else {
        &cfg.endpoint.model
    }
}

pub fn fingerprint(cfg: &Config, mock: bool) -> String {
    config_fingerprint(&FingerprintInput {
        thresholds: &cfg.thresholds,
        budget: cfg.budget,
        mode: cfg.mode,
        model: model_name(cfg, mock),
    })
}

/// Finds the texts for a benchmark image: exact id first, then file stem.
fn lookup<'a>(texts: &'a HashMap<&str, &TextRecord>, image_ref: &str) -> Option<&'a TextRecord> {
    texts.get(image_ref).copied().or_else(|| {
        Path::new(image_ref)
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|stem| texts.get(stem).copied())
    })
}

/// The prompts a benchmark file turns into, one per question.
pub fn bench_samples(cfg: &Config) -> Result<Vec<BatchSample>> {
    let bench = required_input(&cfg.paths.bench, "--bench")?;
    let mut questions: Vec<(String, String, String)> = Vec::new();
    match detect_bench_kind(bench)? {
        BenchKind::Qa => {
            for s in load_bench_samples(bench)? {
                questions.push((s.sample_id, s.image_ref, s.question));
            }
        }
        BenchKind::Valse => {
            for inst in load_valse_instances(bench)? {
                let (q1, q2) = build_valse_questions(&inst)?;
                let (id1, id2) = valse_sample_ids(&inst.instance_id);
                questions.push((id1, inst.image_ref.clone(), q1));
                questions.push((id2, inst.image_ref, q2));
            }
        }
    }
    if questions.is_empty() {
        return Err(Error::Empty("benchmark has no samples".into()));
    }

    let records = match cfg.mode {
        Mode::Plain => Vec::new(),
        Mode::Infused => load_or_build_texts(cfg)?,
    };
    let texts: HashMap<&str, &TextRecord> = records.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let mut missing = 0;
    let samples = questions
        .into_iter()
        .map(|(sample_id, image_ref, question)| {
            let bundle = match cfg.mode {
                Mode::Plain => PromptBundle::plain(image_ref, question),
                Mode::Infused => {
                    let t = lookup(&texts, &image_ref);
                    if t.is_none() {
                        missing += 1;
                    }
                    let od = t.map(|t| apply_budget(t.od_text(), cfg.budget));
                    let ocr = t.map(|t| apply_budget(t.ocr_text(), cfg.budget));
                    PromptBundle::infused(image_ref, od, ocr, question)
                }
            };
            BatchSample { sample_id, bundle }
        })
        .collect();
    if missing > 0 {
        log::warn!("{missing} samples have no detection text for their image");
    }
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub fingerprint: String,
    pub samples: usize,
    pub sent: usize,
    pub skipped: usize,
    pub failed: usize,
}

pub fn cmd_run(cfg: &Config, mock: bool, retry_failed: bool, stdout: &mut dyn Write) -> Result<RunSummary> {
    let samples = bench_samples(cfg)?;
    let store_path = cfg
        .paths
        .store
        .as_deref()
        .ok_or_else(|| Error::Config("--store is required".into()))?;
    let store = RunStore::open(store_path)?;
    let fp = fingerprint(cfg, mock);
    let mut opts = BatchOptions::from(&cfg.endpoint);
    opts.retry_failed = retry_failed;
    let endpoint: Box<dyn Endpoint> = if mock {
        opts.clock = Clock::Frozen;
        Box::new(MockEndpoint::new())
    } else {
        Box::new(HttpEndpoint::from_env(&cfg.endpoint))
    };
    let report = run_batch(&samples, endpoint.as_ref(), &opts, &store, &fp)?;
    let summary = RunSummary {
        fingerprint: fp,
        samples: report.records.len(),
        sent: report.sent,
        skipped: report.skipped,
        failed: report.failed,
    };
    serde_json::to_writer(&mut *stdout, &summary).map_err(std::io::Error::from)?;
    writeln!(stdout)?;
    Ok(summary)
}

pub struct ScoreArgs<'a> {
    pub mock: bool,
    pub fingerprint: Option<&'a str>,
    pub name: Option<&'a str>,
    pub out: Option<&'a Path>,
    pub baseline: Option<&'a Path>,
}

pub fn score_benchmark(cfg: &Config, args: &ScoreArgs<'_>) -> Result<ScoreReport> {
    let bench = required_input(&cfg.paths.bench, "--bench")?;
    let store = required_input(&cfg.paths.store, "--store")?;
    let fp = args.fingerprint.map_or_else(|| fingerprint(cfg, args.mock), str::to_string);
    let records = read_records(store)?;
    if !records.iter().any(|r| r.config_fingerprint == fp) {
        let mut available: Vec<&str> = records.iter().map(|r| r.config_fingerprint.as_str()).collect();
        available.sort_unstable();
        available.dedup();
        return Err(Error::Empty(format!(
            "no records under fingerprint {fp} in {} (present: {available:?}); check --mode, --mock and thresholds",
            store.display()
        )));
    }
    let replies = replies_by_sample(&records, Some(&fp));
    let name = args.name.map(str::to_string).unwrap_or_else(|| {
        bench
            .file_stem()
            .map_or_else(|| "bench".into(), |s| s.to_string_lossy().into_owned())
    });

    let score = match detect_bench_kind(bench)? {
        BenchKind::Qa => {
            let samples = load_bench_samples(bench)?;
            let s = score_exact(samples.iter().map(|s| (s, replies.get(s.sample_id.as_str()).copied())))?;
            BenchmarkScore {
                primary: s.accuracy,
                metrics: BTreeMap::from([("accuracy".to_string(), s.accuracy), ("missing".to_string(), s.missing as f64)]),
                count: s.total,
            }
        }
        BenchKind::Valse => {
            let instances = load_valse_instances(bench)?;
            let mut counters = ValseCounters::default();
            for inst in &instances {
                let (a, b) = valse_sample_ids(&inst.instance_id);
                let reply = |id: &str| parse_yes_no(replies.get(id).copied().unwrap_or(""));
                counters.add(reply(&a), reply(&b));
            }
            let m = counters.metrics()?;
            BenchmarkScore {
                primary: m.acc,
                metrics: BTreeMap::from([
                    ("acc".to_string(), m.acc),
                    ("acc_r".to_string(), m.acc_r),
                    ("p_c".to_string(), m.p_c),
                    ("p_f".to_string(), m.p_f),
                ]),
                count: instances.len(),
            }
        }
    };

    let mut report = ScoreReport {
        model: Some(model_name(cfg, args.mock).to_string()),
        ..ScoreReport::default()
    };
    report.insert(name, score);
    if let Some(b) = args.baseline {
        report.delta = Some(delta(&report_values(b)?, &fold_mme_split(report.values())?)?);
    }
    Ok(report)
}

pub fn cmd_score(cfg: &Config, args: &ScoreArgs<'_>, stdout: &mut dyn Write) -> Result<ScoreReport> {
    let report = score_benchmark(cfg, args)?;
    if let Some(p) = args.out {
        report.save(p)?;
    }
    write!(stdout, "{}", report.to_table())?;
    Ok(report)
}

/// Benchmark values from a score report or a flat `{"name": value}` map,
/// with any MME perception/cognition split folded into one sum.
pub fn report_values(path: &Path) -> Result<BTreeMap<String, f64>> {
    check_exists(path)?;
    let text = std::fs::read_to_string(path)?;
    let values = match serde_json::from_str::<ScoreReport>(&text) {
        Ok(r) => r.values(),
        Err(_) => serde_json::from_str::<BTreeMap<String, f64>>(&text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            path: String::new(),
            message: format!("{}: neither a score report nor a name-to-value map: {e}", path.display()),
        })?,
    };
    fold_mme_split(values)
}

pub fn cmd_delta(baseline: &Path, candidate: &Path, stdout: &mut dyn Write) -> Result<f64> {
    let d = delta(&report_values(baseline)?, &report_values(candidate)?)?;
    writeln!(stdout, "delta: {d:+.2}%")?;
    Ok(d)
}

/// Paths `run` and `score` will read, for early existence checks.
pub fn inputs_of(cfg: &Config) -> Vec<PathBuf> {
    let p = &cfg.paths;
    [&p.od, &p.ocr, &p.bench, &p.texts].into_iter().flatten().cloned().collect()
}
