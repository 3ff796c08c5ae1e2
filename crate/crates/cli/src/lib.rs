//! `infuse` command line: build detection text, run prompts through an
//! endpoint or the mock model, and score the replies.

pub mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use infuse_core::orchestrator::{Mode, API_KEY_ENV};
use infuse_core::Error;

use crate::commands::ScoreArgs;
use crate::config::{check_exists, Config, Overrides};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_ENDPOINT: i32 = 3;
pub const EXIT_EMPTY: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "infuse", version, about = "Detection text infusion for multimodal LLM evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Infused,
    Plain,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Infused => Mode::Infused,
            ModeArg::Plain => Mode::Plain,
        }
    }
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Detection documents (file, stream or directory).
    #[arg(long, global = true)]
    pub od: Option<PathBuf>,
    /// OCR documents (file, stream or directory).
    #[arg(long, global = true)]
    pub ocr: Option<PathBuf>,
    /// Benchmark records.
    #[arg(long, global = true)]
    pub bench: Option<PathBuf>,
    /// Run store.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Output of build-text.
    #[arg(long, global = true)]
    pub texts: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Answer with the built-in deterministic model instead of an endpoint.
    #[arg(long, global = true)]
    pub mock: bool,
    /// Maximum requests in flight.
    #[arg(long, global = true)]
    pub parallel: Option<usize>,
    /// Token budget per sentence.
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    #[arg(long, global = true)]
    pub od_conf: Option<f64>,
    #[arg(long, global = true)]
    pub ocr_conf: Option<f64>,
    /// Endpoint base URL, e.g. http://localhost:8000/v1.
    #[arg(long, global = true)]
    pub base_url: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render detection and OCR sentences per image.
    BuildText {
        /// Output file (JSON lines); stdout if omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Sentence length statistics per modality.
    Stats {
        #[arg(long)]
        json: bool,
    },
    /// Keep yes/no and choice questions from a GQA-style benchmark.
    GqaStar {
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Send every benchmark question not yet in the run store.
    Run {
        /// Re-send samples whose stored record is a failure.
        #[arg(long)]
        retry_failed: bool,
    },
    /// Score the run store against the benchmark.
    Score {
        /// Write the report as JSON here.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Benchmark name in the report; defaults to the file stem.
        #[arg(long)]
        name: Option<String>,
        /// Score records under this fingerprint instead of the configured one.
        #[arg(long)]
        fingerprint: Option<String>,
        /// Report to compute the mean relative improvement against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Only compare two existing reports.
        #[arg(long, num_args = 2, value_names = ["BASELINE", "CANDIDATE"])]
        delta: Option<Vec<PathBuf>>,
    },
    /// Mean relative improvement of one report over another.
    Delta { baseline: PathBuf, candidate: PathBuf },
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidGeometry(_)
            | Error::Parse { .. }
            | Error::Validation { .. }
            | Error::Config(_)
            | Error::Input(_)
            | Error::Template(_) => EXIT_VALIDATION,
            Error::Aborted { .. } => EXIT_ENDPOINT,
            Error::Empty(_) => EXIT_EMPTY,
            Error::Store { .. } | Error::Io(_) => EXIT_FAILURE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

pub fn resolve_config(g: &GlobalArgs) -> Result<Config, Error> {
    let mut cfg = match &g.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cfg.apply(Overrides {
        od: g.od.clone(),
        ocr: g.ocr.clone(),
        bench: g.bench.clone(),
        store: g.store.clone(),
        texts: g.texts.clone(),
        mode: g.mode.map(Mode::from),
        parallel: g.parallel,
        budget: g.budget,
        od_conf: g.od_conf,
        ocr_conf: g.ocr_conf,
        base_url: g.base_url.clone(),
        model: g.model.clone(),
    });
    cfg.validate()?;
    for p in commands::inputs_of(&cfg) {
        check_exists(&p)?;
    }
    Ok(cfg)
}

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let g = &cli.global;
    let cfg = resolve_config(g)?;
    match &cli.command {
        Command::BuildText { out } => {
            let n = commands::cmd_build_text(&cfg, out.as_deref(), stdout)?;
            log::info!("wrote {n} records");
        }
        Command::Stats { json } => {
            commands::cmd_stats(&cfg, *json, stdout)?;
        }
        Command::GqaStar { out } => {
            commands::cmd_gqa_star(&cfg, out.as_deref(), stdout)?;
        }
        Command::Run { retry_failed } => {
            if !g.mock && std::env::var_os(API_KEY_ENV).is_none() {
                log::info!("{API_KEY_ENV} not set; sending requests without a bearer token");
            }
            commands::cmd_run(&cfg, g.mock, *retry_failed, stdout)?;
        }
        Command::Score {
            out,
            name,
            fingerprint,
            baseline,
            delta,
        } => {
            if let Some(pair) = delta {
                commands::cmd_delta(&pair[0], &pair[1], stdout)?;
            } else {
                let args = ScoreArgs {
                    mock: g.mock,
                    fingerprint: fingerprint.as_deref(),
                    name: name.as_deref(),
                    out: out.as_deref(),
                    baseline: baseline.as_deref(),
                };
                commands::cmd_score(&cfg, &args, stdout)?;
            }
        }
        Command::Delta { baseline, candidate } => {
            commands::cmd_delta(baseline, candidate, stdout)?;
        }
    }
    Ok(())
}
