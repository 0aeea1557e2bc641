//! Replication tables, figure-ready rows and the leaderboard.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::agreement::{
    bootstrap_ci, evaluate_model, krippendorff_alpha_interval, rank_models, Aggregation,
    AgreementError, IntervalCI, LeaderboardEntry, Metric, ModelEvaluation, RankingPolicy,
    ScoreMatrix, Statistic, DEFAULT_LEVELS,
};
use crate::corpus::{human_benchmark, load_corpus, Corpus, CorpusError};
use crate::exec::Execution;
use crate::gateway::roster;
use crate::runner::{latest_records, read_records, score_table_for, RunRecord, RunStatus, RunnerError};

pub const DEFAULT_RESAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no run records")]
    NoRecords,
    #[error("test speech '{0}' has no human scores")]
    MissingHumanScores(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Records(#[from] RunnerError),
    #[error("model '{model}': {source}")]
    Agreement {
        model: String,
        source: AgreementError,
    },
    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
}

#[derive(Debug, Clone)]
pub struct ReplicateOptions {
    pub seed: u64,
    pub resamples: usize,
    pub aggregation: Aggregation,
    pub policy: RankingPolicy,
    /// Display architecture per model label; unknown labels get "".
    pub architectures: BTreeMap<String, String>,
    pub exec: Execution,
}

impl Default for ReplicateOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            resamples: DEFAULT_RESAMPLES,
            aggregation: Aggregation::PerRun,
            policy: RankingPolicy::default(),
            architectures: roster("")
                .into_iter()
                .filter_map(|m| Some((m.label, m.architecture?)))
                .collect(),
            exec: Execution::default(),
        }
    }
}

/// Mean and sample SD across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementRow {
    pub model: String,
    pub architecture: String,
    pub pearson: Stat,
    pub spearman: Stat,
    pub icc: Stat,
    pub ccc: Stat,
    pub mae: Stat,
    pub rmse: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaRow {
    pub model: String,
    pub alpha_all: Option<f64>,
    pub alpha_ai_only: Option<f64>,
    pub coder_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRow {
    pub model: String,
    pub mae: Stat,
    pub rmse: Stat,
    pub bias: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub model: String,
    pub intercept: Stat,
    pub slope: Stat,
    pub r_squared: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlandAltmanRow {
    pub model: String,
    pub run: usize,
    pub bias: f64,
    pub sd: f64,
    pub loa_lower: f64,
    pub loa_upper: f64,
}

/// One plotted point: a model's runs on a speech, or the human coders.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureRow {
    /// Model label, or "human".
    pub rater: String,
    pub speech_id: String,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Empty for human rows.
    pub ci: Vec<IntervalCI>,
}

impl FigureRow {
    pub fn ci_at(&self, level: f64) -> Option<IntervalCI> {
        self.ci.iter().copied().find(|c| (c.level - level).abs() < 1e-12)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub model: String,
    pub expected: usize,
    pub ok: usize,
    pub extraction_failed: usize,
    pub request_failed: usize,
    pub missing: Vec<(String, u32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HumanAlphaRow {
    pub country: String,
    pub coders: usize,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationBundle {
    pub seed: u64,
    pub resamples: usize,
    pub aggregation: Aggregation,
    pub table_agreement: Vec<AgreementRow>,
    pub table_alpha: Vec<AlphaRow>,
    pub table_error: Vec<ErrorRow>,
    pub table_calibration: Vec<CalibrationRow>,
    pub bland_altman: Vec<BlandAltmanRow>,
    pub human_alpha: Vec<HumanAlphaRow>,
    pub figure_data: Vec<FigureRow>,
    pub leaderboard: Vec<LeaderboardEntry>,
    pub coverage: Vec<Coverage>,
}

impl ReplicationBundle {
    pub fn leaderboard_labels(&self) -> Vec<&str> {
        self.leaderboard.iter().map(|e| e.label.as_str()).collect()
    }
}

fn stat(e: &ModelEvaluation, m: Metric) -> Stat {
    e.summary.metrics.get(&m).map_or(
        Stat {
            mean: f64::NAN,
            sd: f64::NAN,
        },
        |s| Stat {
            mean: s.mean,
            sd: s.sd,
        },
    )
}

/// Model labels in order of first appearance.
fn model_order(records: &[RunRecord]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in records {
        if !out.contains(&r.model_label) {
            out.push(r.model_label.clone());
        }
    }
    out
}

fn human_means(corpus: &Corpus) -> Result<Vec<f64>, ReportError> {
    corpus
        .targets
        .iter()
        .map(|t| human_benchmark(t).map_err(|_| ReportError::MissingHumanScores(t.id.clone())))
        .collect()
}

fn human_alpha(corpus: &Corpus) -> Vec<HumanAlphaRow> {
    let mut groups: BTreeMap<&str, Vec<&crate::corpus::Speech>> = BTreeMap::new();
    for t in &corpus.targets {
        groups.entry(t.country.as_str()).or_default().push(t);
    }
    groups
        .into_iter()
        .map(|(country, speeches)| {
            let coders = speeches.iter().map(|s| s.human_scores.len()).max().unwrap_or(0);
            let cells = speeches
                .iter()
                .map(|s| (0..coders).map(|j| s.human_scores.get(j).copied()).collect())
                .collect();
            let alpha = ScoreMatrix::new(
                speeches.iter().map(|s| s.id.clone()).collect(),
                (1..=coders).map(|j| format!("coder{j}")).collect(),
                cells,
            )
            .ok()
            .and_then(|m| krippendorff_alpha_interval(&m).ok());
            HumanAlphaRow {
                country: country.to_string(),
                coders,
                alpha,
            }
        })
        .collect()
}

/// Run values, mean and percentile CIs for one (rater, speech) cell. Every
/// row is bootstrapped with the same seed, so a row does not depend on which
/// other rows exist.
pub fn figure_row(
    rater: &str,
    speech_id: &str,
    values: Vec<f64>,
    seed: u64,
    resamples: usize,
    exec: Execution,
) -> FigureRow {
    let ci = bootstrap_ci(&values, Statistic::Mean, resamples, &DEFAULT_LEVELS, seed, exec);
    FigureRow {
        rater: rater.to_string(),
        speech_id: speech_id.to_string(),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        values,
        ci,
    }
}

/// Figure rows for every model and speech, followed by human pass-through
/// rows (coder values and mean only).
pub fn figure_data(
    records: &[RunRecord],
    corpus: &Corpus,
    seed: u64,
    resamples: usize,
    exec: Execution,
) -> Vec<FigureRow> {
    let ids = corpus.target_ids();
    let runs = records.iter().map(|r| r.run_index).max().unwrap_or(0);
    let tables = score_table_for(records, &ids, runs);
    let mut rows = Vec::new();
    for label in model_order(records) {
        let t = &tables[&label];
        for (i, id) in ids.iter().enumerate() {
            let values: Vec<f64> = t.matrix.cells[i].iter().flatten().copied().collect();
            if !values.is_empty() {
                rows.push(figure_row(&label, id, values, seed, resamples, exec));
            }
        }
    }
    for t in &corpus.targets {
        if !t.human_scores.is_empty() {
            rows.push(FigureRow {
                rater: "human".into(),
                speech_id: t.id.clone(),
                values: t.human_scores.clone(),
                mean: t.human_scores.iter().sum::<f64>() / t.human_scores.len() as f64,
                ci: Vec::new(),
            });
        }
    }
    rows
}

/// Evaluates every model in `records` against the corpus human benchmark.
pub fn evaluate_all(
    records: &[RunRecord],
    corpus: &Corpus,
    aggregation: Aggregation,
    exec: Execution,
) -> Result<Vec<ModelEvaluation>, ReportError> {
    let humans = human_means(corpus)?;
    let ids = corpus.target_ids();
    let runs = records.iter().map(|r| r.run_index).max().unwrap_or(0);
    let tables = score_table_for(records, &ids, runs);
    let labels = model_order(records);
    exec.map_slice(&labels, |label| {
        evaluate_model(label, &tables[label].matrix, &humans, aggregation).map_err(|source| {
            ReportError::Agreement {
                model: label.clone(),
                source,
            }
        })
    })
    .into_iter()
    .collect()
}

/// The whole replication from in-memory records and corpus.
pub fn build_bundle(
    records: Vec<RunRecord>,
    corpus: &Corpus,
    opts: &ReplicateOptions,
) -> Result<ReplicationBundle, ReportError> {
    if records.is_empty() {
        return Err(ReportError::NoRecords);
    }
    let order = model_order(&records);
    let mut records = latest_records(records)?;
    // latest_records sorts by key; restore first-appearance model order
    records.sort_by_key(|r| order.iter().position(|l| *l == r.model_label));
    let evals = evaluate_all(&records, corpus, opts.aggregation, opts.exec)?;

    let ids = corpus.target_ids();
    let runs = records.iter().map(|r| r.run_index).max().unwrap_or(0);
    let tables = score_table_for(&records, &ids, runs);
    let coverage = evals
        .iter()
        .map(|e| {
            let mine: Vec<&RunRecord> = records.iter().filter(|r| r.model_label == e.label).collect();
            let count = |s: RunStatus| mine.iter().filter(|r| r.status == s).count();
            let cov = Coverage {
                model: e.label.clone(),
                expected: ids.len() * runs as usize,
                ok: count(RunStatus::Ok),
                extraction_failed: count(RunStatus::ExtractionFailed),
                request_failed: count(RunStatus::RequestFailed),
                missing: tables[&e.label].missing.clone(),
            };
            if !cov.missing.is_empty() {
                tracing::warn!(model = %e.label, missing = cov.missing.len(), "incomplete run coverage");
            }
            cov
        })
        .collect();

    let arch = |label: &str| opts.architectures.get(label).cloned().unwrap_or_default();
    Ok(ReplicationBundle {
        seed: opts.seed,
        resamples: opts.resamples,
        aggregation: opts.aggregation,
        table_agreement: evals
            .iter()
            .map(|e| AgreementRow {
                model: e.label.clone(),
                architecture: arch(&e.label),
                pearson: stat(e, Metric::Pearson),
                spearman: stat(e, Metric::Spearman),
                icc: stat(e, Metric::Icc),
                ccc: stat(e, Metric::Ccc),
                mae: stat(e, Metric::Mae),
                rmse: stat(e, Metric::Rmse),
            })
            .collect(),
        table_alpha: evals
            .iter()
            .map(|e| AlphaRow {
                model: e.label.clone(),
                alpha_all: e.alpha_all,
                alpha_ai_only: e.alpha_ai_only,
                coder_count: e.coder_count,
            })
            .collect(),
        table_error: evals
            .iter()
            .map(|e| ErrorRow {
                model: e.label.clone(),
                mae: stat(e, Metric::Mae),
                rmse: stat(e, Metric::Rmse),
                bias: stat(e, Metric::Bias),
            })
            .collect(),
        table_calibration: evals
            .iter()
            .map(|e| CalibrationRow {
                model: e.label.clone(),
                intercept: stat(e, Metric::Intercept),
                slope: stat(e, Metric::Slope),
                r_squared: stat(e, Metric::RSquared),
            })
            .collect(),
        bland_altman: evals
            .iter()
            .flat_map(|e| {
                e.bland_altman.iter().map(|(run, b)| BlandAltmanRow {
                    model: e.label.clone(),
                    run: *run,
                    bias: b.bias,
                    sd: b.sd,
                    loa_lower: b.loa_lower,
                    loa_upper: b.loa_upper,
                })
            })
            .collect(),
        human_alpha: human_alpha(corpus),
        figure_data: figure_data(&records, corpus, opts.seed, opts.resamples, opts.exec),
        leaderboard: rank_models(&evals, opts.policy),
        coverage,
    })
}

/// Rounds half away from zero to 3 decimals; NaN becomes an empty cell.
pub fn fmt3(x: f64) -> String {
    if x.is_nan() {
        return String::new();
    }
    let r = (x * 1000.0).round() / 1000.0;
    // avoid "-0.000"
    format!("{:.3}", if r == 0.0 { 0.0 } else { r })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt3).unwrap_or_default()
}

fn write_csv(dir: &Path, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<PathBuf, ReportError> {
    let path = dir.join(name);
    let out_err = |e: &dyn std::fmt::Display| ReportError::Output {
        path: path.clone(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(&path).map_err(|e| out_err(&e))?;
    w.write_record(header).map_err(|e| out_err(&e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| out_err(&e))?;
    }
    w.flush().map_err(|e| out_err(&e))?;
    Ok(path)
}

fn stat_cells(s: &[Stat]) -> Vec<String> {
    s.iter().flat_map(|s| [fmt3(s.mean), fmt3(s.sd)]).collect()
}

/// Writes the six CSV tables and `bundle.json` under `dir`.
pub fn write_bundle(bundle: &ReplicationBundle, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, ReportError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| ReportError::Output {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut written = Vec::new();

    let header: Vec<String> = ["model", "architecture"]
        .into_iter()
        .map(String::from)
        .chain(
            ["pearson", "spearman", "icc", "ccc", "mae", "rmse"]
                .iter()
                .flat_map(|m| [format!("{m}_mean"), format!("{m}_sd")]),
        )
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    written.push(write_csv(
        dir,
        "agreement.csv",
        &header,
        bundle
            .table_agreement
            .iter()
            .map(|r| {
                let mut row = vec![r.model.clone(), r.architecture.clone()];
                row.extend(stat_cells(&[r.pearson, r.spearman, r.icc, r.ccc, r.mae, r.rmse]));
                row
            })
            .collect(),
    )?);

    written.push(write_csv(
        dir,
        "alpha.csv",
        &["model", "alpha_all", "alpha_ai_only", "coder_count"],
        bundle
            .table_alpha
            .iter()
            .map(|r| {
                vec![
                    r.model.clone(),
                    fmt_opt(r.alpha_all),
                    fmt_opt(r.alpha_ai_only),
                    r.coder_count.to_string(),
                ]
            })
            .collect(),
    )?);

    written.push(write_csv(
        dir,
        "error.csv",
        &["model", "mae_mean", "mae_sd", "rmse_mean", "rmse_sd", "bias_mean", "bias_sd"],
        bundle
            .table_error
            .iter()
            .map(|r| {
                let mut row = vec![r.model.clone()];
                row.extend(stat_cells(&[r.mae, r.rmse, r.bias]));
                row
            })
            .collect(),
    )?);

    written.push(write_csv(
        dir,
        "calibration.csv",
        &[
            "model",
            "intercept_mean",
            "intercept_sd",
            "slope_mean",
            "slope_sd",
            "r_squared_mean",
            "r_squared_sd",
        ],
        bundle
            .table_calibration
            .iter()
            .map(|r| {
                let mut row = vec![r.model.clone()];
                row.extend(stat_cells(&[r.intercept, r.slope, r.r_squared]));
                row
            })
            .collect(),
    )?);

    written.push(write_csv(
        dir,
        "figure_data.csv",
        &[
            "rater", "speech_id", "values", "mean", "ci95_low", "ci95_high", "ci99_low", "ci99_high",
        ],
        bundle
            .figure_data
            .iter()
            .map(|r| {
                let ci = |level: f64| r.ci_at(level);
                vec![
                    r.rater.clone(),
                    r.speech_id.clone(),
                    r.values.iter().map(|v| fmt3(*v)).collect::<Vec<_>>().join(";"),
                    fmt3(r.mean),
                    fmt_opt(ci(0.95).map(|c| c.low)),
                    fmt_opt(ci(0.95).map(|c| c.high)),
                    fmt_opt(ci(0.99).map(|c| c.low)),
                    fmt_opt(ci(0.99).map(|c| c.high)),
                ]
            })
            .collect(),
    )?);

    written.push(write_csv(
        dir,
        "leaderboard.csv",
        &[
            "rank",
            "model",
            "interchangeability",
            "error",
            "calibration_gap",
            "alpha_all",
            "loa_width",
        ],
        bundle
            .leaderboard
            .iter()
            .map(|e| {
                let t = e.tiers;
                vec![
                    e.rank.to_string(),
                    e.label.clone(),
                    fmt3(t[0]),
                    fmt3(-t[1]),
                    fmt3(-t[2]),
                    fmt3(t[3]),
                    fmt3(-t[4]),
                ]
            })
            .collect(),
    )?);

    let json_path = dir.join("bundle.json");
    let json = serde_json::to_string_pretty(bundle).expect("bundle serializes");
    fs::write(&json_path, json + "\n").map_err(|e| ReportError::Output {
        path: json_path.clone(),
        message: e.to_string(),
    })?;
    written.push(json_path);
    Ok(written)
}

/// Loads records and corpus, builds the bundle and writes it to `out_dir`.
pub fn replicate(
    records_path: impl AsRef<Path>,
    corpus_path: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    opts: &ReplicateOptions,
) -> Result<ReplicationBundle, ReportError> {
    let records = read_records(records_path)?;
    let corpus = load_corpus(corpus_path)?;
    let bundle = build_bundle(records, &corpus, opts)?;
    write_bundle(&bundle, out_dir)?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::corpus;
    use crate::gateway::Usage;

    fn rec(label: &str, speech: &str, run: u32, score: f64) -> RunRecord {
        RunRecord {
            model_label: label.into(),
            speech_id: speech.into(),
            run_index: run,
            timestamp: "2025-08-15T00:00:00Z".parse().unwrap(),
            raw_response: String::new(),
            score: Some(score),
            rationale: String::new(),
            usage: Usage::default(),
            status: RunStatus::Ok,
        }
    }

    #[test]
    fn fmt3_rounds_half_away() {
        assert_eq!(fmt3(0.9745), "0.975");
        assert_eq!(fmt3(-0.2375), "-0.238");
        assert_eq!(fmt3(-0.0001), "0.000");
        assert_eq!(fmt3(1.0), "1.000");
        assert_eq!(fmt3(f64::NAN), "");
    }

    #[test]
    fn empty_records_rejected() {
        let c = corpus(&[0.0, 1.0, 2.0]);
        let err = build_bundle(Vec::new(), &c, &ReplicateOptions::default()).unwrap_err();
        assert_eq!(err.to_string(), "no run records");
    }

    #[test]
    fn figure_rows_include_humans() {
        let c = corpus(&[0.0, 1.0, 2.0]);
        let recs = vec![rec("m", "uk-campaign", 1, 0.2), rec("m", "uk-campaign", 2, 0.2)];
        let rows = figure_data(&recs, &c, 7, 200, Execution::Sequential);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].ci_at(0.99).map(|c| (c.low, c.high)), Some((0.2, 0.2)));
        assert_eq!(rows[1].rater, "human");
        assert!(rows[1].ci.is_empty());
        assert!((rows[1].mean - 0.05).abs() < 1e-12);
    }

    #[test]
    fn missing_human_scores_is_an_error() {
        let mut c = corpus(&[0.0, 1.0, 2.0]);
        c.targets[0].human_scores.clear();
        let err = build_bundle(vec![rec("m", "uk-campaign", 1, 0.2)], &c, &ReplicateOptions::default())
            .unwrap_err();
        assert!(matches!(err, ReportError::MissingHumanScores(_)));
    }
}
