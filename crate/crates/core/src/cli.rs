//! Command-line front end. `dispatch` maps argv to an exit status.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::agreement::{Aggregation, RankingPolicy};
use crate::corpus::{load_corpus, CorpusError};
use crate::gateway::{roster, Credentials, Gateway, GatewayError, ModelConfig, OPENROUTER_URL};
use crate::report::{build_bundle, write_bundle, ReplicateOptions, ReportError, DEFAULT_RESAMPLES};
use crate::runner::{
    execute_tasks, read_records, resume, Campaign, JsonlSink, RunStatus, RunnerError,
    DEFAULT_GLOBAL_CAP, DEFAULT_RUNS,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CORPUS: i32 = 3;
pub const EXIT_RECORDS: i32 = 4;
pub const EXIT_GATEWAY: i32 = 5;
pub const EXIT_ANALYSIS: i32 = 6;
pub const EXIT_OUTPUT: i32 = 7;

#[derive(Debug, Parser)]
#[command(name = "shg", version, about = "Holistic grading with LLMs: campaigns and agreement statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a corpus manifest and its files.
    Validate {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Send one minimal request per model.
    Probe {
        #[command(flatten)]
        models: ModelArgs,
    },
    /// Execute a grading campaign, appending to a JSONL record file.
    Run {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long, default_value_t = DEFAULT_RUNS)]
        runs: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Only run tasks missing from the record file (or failed requests).
        #[arg(long)]
        resume: bool,
        /// Global cap on outstanding requests.
        #[arg(long, default_value_t = DEFAULT_GLOBAL_CAP)]
        concurrency: usize,
    },
    /// Write replication tables from run records.
    Replicate {
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the model leaderboard.
    Rank {
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Comma-separated roster labels, or a JSON file with model configs.
    #[arg(long)]
    models: Option<String>,
    #[arg(long, default_value = OPENROUTER_URL)]
    endpoint: String,
    #[arg(long)]
    api_key_env: Option<String>,
}

#[derive(Debug, Args)]
struct AnalysisArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
    resamples: usize,
    /// Stack all runs into one series instead of per-run-then-average.
    #[arg(long)]
    pooled: bool,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Records(#[from] RunnerError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{0}")]
    Output(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Corpus(_) => EXIT_CORPUS,
            CliError::Records(_) => EXIT_RECORDS,
            CliError::Gateway(_) => EXIT_GATEWAY,
            CliError::Report(e) => match e {
                ReportError::Corpus(_) => EXIT_CORPUS,
                ReportError::Records(_) => EXIT_RECORDS,
                ReportError::Output { .. } => EXIT_OUTPUT,
                _ => EXIT_ANALYSIS,
            },
            CliError::Output(_) => EXIT_OUTPUT,
        }
    }
}

fn resolve_models(args: &ModelArgs) -> Result<Vec<ModelConfig>, CliError> {
    let mut models = match args.models.as_deref() {
        None => roster(&args.endpoint),
        Some(spec) if spec.ends_with(".json") || Path::new(spec).is_file() => {
            let raw = std::fs::read_to_string(spec)
                .map_err(|e| CliError::Usage(format!("cannot read models file {spec}: {e}")))?;
            serde_json::from_str(&raw)
                .map_err(|e| CliError::Usage(format!("malformed models file {spec}: {e}")))?
        }
        Some(list) => {
            let known = roster(&args.endpoint);
            list.split(',')
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(|l| {
                    known.iter().find(|m| m.label == l).cloned().ok_or_else(|| {
                        let labels: Vec<&str> = known.iter().map(|m| m.label.as_str()).collect();
                        CliError::Usage(format!("unknown model '{l}'; known: {}", labels.join(", ")))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    for m in &mut models {
        if args.models.as_deref().is_none_or(|s| !s.ends_with(".json")) {
            m.endpoint_url = args.endpoint.clone();
        }
        if let Some(env) = &args.api_key_env {
            m.api_key_env = Some(env.clone());
        }
        m.validate()?;
    }
    if models.is_empty() {
        return Err(CliError::Usage("no models selected".into()));
    }
    Ok(models)
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Output(format!("cannot start async runtime: {e}")))
}

fn replicate_options(a: &AnalysisArgs) -> ReplicateOptions {
    ReplicateOptions {
        seed: a.seed,
        resamples: a.resamples,
        aggregation: if a.pooled {
            Aggregation::Pooled
        } else {
            Aggregation::PerRun
        },
        policy: RankingPolicy::default(),
        ..ReplicateOptions::default()
    }
}

fn archive_path(records: &Path) -> PathBuf {
    let mut name = records.file_stem().unwrap_or_default().to_os_string();
    name.push(".raw.jsonl");
    records.with_file_name(name)
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Validate { corpus } => {
            let c = load_corpus(&corpus)?;
            println!(
                "ok: {} anchors, {} targets, {} populist / {} pluralist categories",
                c.anchors.len(),
                c.targets.len(),
                c.rubric.populist_categories.len(),
                c.rubric.pluralist_categories.len()
            );
            Ok(())
        }
        Command::Probe { models } => {
            let models = resolve_models(&models)?;
            let gateway = Gateway::new(Credentials::Env);
            let rt = runtime()?;
            let mut first_err = None;
            for m in &models {
                match rt.block_on(gateway.probe(m)) {
                    Ok(h) => println!("healthy\t{}\t{}\t{} ms", h.label, h.model_slug, h.latency.as_millis()),
                    Err(e) => {
                        println!("{}\t{}\t{e}", e.kind(), m.label);
                        first_err.get_or_insert(e);
                    }
                }
            }
            first_err.map_or(Ok(()), |e| Err(e.into()))
        }
        Command::Run {
            corpus,
            records,
            models,
            runs,
            seed,
            resume: resume_flag,
            concurrency,
        } => {
            let corpus = load_corpus(&corpus)?;
            let models = resolve_models(&models)?;
            let campaign = Campaign::new(corpus, models, runs, seed)?;
            let existing = read_records(&records)?;
            if !existing.is_empty() && !resume_flag {
                return Err(CliError::Usage(format!(
                    "{} already holds {} records; pass --resume to continue it",
                    records.display(),
                    existing.len()
                )));
            }
            let tasks = resume(&campaign, &existing)?;
            println!("{} of {} tasks to run", tasks.len(), campaign.tasks().len());
            let sink = JsonlSink::open(&records)?.with_archive(archive_path(&records))?;
            let gateway = Gateway::new(Credentials::Env);
            let done = runtime()?.block_on(execute_tasks(&campaign, tasks, &gateway, &sink, concurrency))?;
            let count = |s| done.iter().filter(|r| r.status == s).count();
            println!(
                "ok {}, extraction_failed {}, request_failed {}",
                count(RunStatus::Ok),
                count(RunStatus::ExtractionFailed),
                count(RunStatus::RequestFailed)
            );
            Ok(())
        }
        Command::Replicate { analysis, out } => {
            let records = read_records(&analysis.records)?;
            let corpus = load_corpus(&analysis.corpus)?;
            let bundle = build_bundle(records, &corpus, &replicate_options(&analysis))?;
            for p in write_bundle(&bundle, &out)? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Rank { analysis } => {
            let records = read_records(&analysis.records)?;
            let corpus = load_corpus(&analysis.corpus)?;
            let bundle = build_bundle(records, &corpus, &replicate_options(&analysis))?;
            println!("rank\tmodel\ticc_ccc\terror\tcalibration_gap\talpha_all\tloa_width");
            for e in &bundle.leaderboard {
                let t = e.tiers;
                println!(
                    "{}\t{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}",
                    e.rank, e.label, t[0], -t[1], -t[2], t[3], -t[4]
                );
            }
            Ok(())
        }
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
