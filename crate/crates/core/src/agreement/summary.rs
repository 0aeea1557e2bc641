use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{
    bland_altman, calibration_fit, ccc, error_stats, icc_2_1, krippendorff_alpha_interval, mean,
    pearson, sample_sd, spearman, AgreementError, BlandAltman, PairSeries, ScoreMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Pearson,
    Spearman,
    Icc,
    Ccc,
    Mae,
    Rmse,
    Bias,
    Intercept,
    Slope,
    RSquared,
}

impl Metric {
    pub const ALL: [Metric; 10] = [
        Metric::Pearson,
        Metric::Spearman,
        Metric::Icc,
        Metric::Ccc,
        Metric::Mae,
        Metric::Rmse,
        Metric::Bias,
        Metric::Intercept,
        Metric::Slope,
        Metric::RSquared,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Pearson => "pearson",
            Metric::Spearman => "spearman",
            Metric::Icc => "icc",
            Metric::Ccc => "ccc",
            Metric::Mae => "mae",
            Metric::Rmse => "rmse",
            Metric::Bias => "bias",
            Metric::Intercept => "intercept",
            Metric::Slope => "slope",
            Metric::RSquared => "r_squared",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Every metric for one AI-vs-human series.
fn all_metrics(s: &PairSeries) -> BTreeMap<Metric, Result<f64, AgreementError>> {
    let pair = ScoreMatrix::from_columns(
        (0..s.len()).map(|i| i.to_string()).collect(),
        vec!["ai".into(), "human".into()],
        &[s.ai().to_vec(), s.human().to_vec()],
    );
    let err = error_stats(s);
    let fit = calibration_fit(s);
    let mut m = BTreeMap::new();
    m.insert(Metric::Pearson, pearson(s));
    m.insert(Metric::Spearman, spearman(s));
    m.insert(Metric::Icc, pair.and_then(|p| icc_2_1(&p)));
    m.insert(Metric::Ccc, ccc(s));
    m.insert(Metric::Mae, Ok(err.mae));
    m.insert(Metric::Rmse, Ok(err.rmse));
    m.insert(Metric::Bias, Ok(err.bias));
    m.insert(Metric::Intercept, fit.clone().map(|f| f.intercept));
    m.insert(Metric::Slope, fit.clone().map(|f| f.slope));
    m.insert(Metric::RSquared, fit.map(|f| f.r_squared));
    m
}

/// Per-run values of one metric with their mean and sample SD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Values for the runs where the metric is defined, in run order.
    pub per_run: Vec<f64>,
    /// 1-based indices of the runs in `per_run`.
    pub runs: Vec<usize>,
    pub mean: f64,
    /// Sample SD (n - 1); 0 when only one run contributes.
    pub sd: f64,
    /// Runs excluded because the metric was undefined or the run incomplete.
    pub excluded: Vec<(usize, String)>,
    pub single_run: bool,
}

impl MetricSummary {
    fn from_values(values: Vec<(usize, f64)>, excluded: Vec<(usize, String)>) -> Self {
        let per_run: Vec<f64> = values.iter().map(|v| v.1).collect();
        let (mean, sd) = if per_run.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (mean(&per_run), sample_sd(&per_run))
        };
        Self {
            single_run: per_run.len() == 1,
            runs: values.iter().map(|v| v.0).collect(),
            per_run,
            mean,
            sd,
            excluded,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Metric per run against the human benchmark, then mean/SD across runs.
    #[default]
    PerRun,
    /// All (item, run) pairs stacked into a single series.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub aggregation: Aggregation,
    pub metrics: BTreeMap<Metric, MetricSummary>,
}

impl ModelSummary {
    pub fn mean(&self, m: Metric) -> f64 {
        self.metrics.get(&m).map_or(f64::NAN, |s| s.mean)
    }
}

/// Summarises a model from its items x runs matrix and the per-item human
/// benchmark (in the matrix's item order).
pub fn model_summary(
    runs: &ScoreMatrix,
    humans: &[f64],
    aggregation: Aggregation,
) -> Result<ModelSummary, AgreementError> {
    if humans.len() != runs.n_items() {
        return Err(AgreementError::LengthMismatch {
            ai: runs.n_items(),
            human: humans.len(),
        });
    }
    let mut values: BTreeMap<Metric, Vec<(usize, f64)>> = BTreeMap::new();
    let mut excluded: BTreeMap<Metric, Vec<(usize, String)>> = BTreeMap::new();

    let mut series = Vec::new();
    let mut incomplete = Vec::new();
    for j in 0..runs.n_raters() {
        match runs.column(j) {
            Some(col) => series.push((j + 1, col)),
            None => incomplete.push(j + 1),
        }
    }

    match aggregation {
        Aggregation::PerRun => {
            for (run, col) in &series {
                let s = PairSeries::unscaled(col.clone(), humans.to_vec())?;
                for (metric, v) in all_metrics(&s) {
                    match v {
                        Ok(x) => values.entry(metric).or_default().push((*run, x)),
                        Err(e) => excluded.entry(metric).or_default().push((*run, e.to_string())),
                    }
                }
            }
        }
        Aggregation::Pooled => {
            let ai: Vec<f64> = series.iter().flat_map(|(_, c)| c.iter().copied()).collect();
            let human: Vec<f64> = series.iter().flat_map(|_| humans.iter().copied()).collect();
            if !ai.is_empty() {
                let s = PairSeries::unscaled(ai, human)?;
                for (metric, v) in all_metrics(&s) {
                    match v {
                        Ok(x) => values.entry(metric).or_default().push((0, x)),
                        Err(e) => excluded.entry(metric).or_default().push((0, e.to_string())),
                    }
                }
            }
        }
    }

    let metrics = Metric::ALL
        .iter()
        .map(|&m| {
            let mut ex = excluded.remove(&m).unwrap_or_default();
            ex.extend(incomplete.iter().map(|&r| (r, "run has missing items".to_string())));
            ex.sort();
            (m, MetricSummary::from_values(values.remove(&m).unwrap_or_default(), ex))
        })
        .collect();
    Ok(ModelSummary {
        aggregation,
        metrics,
    })
}

/// Everything the leaderboard and replication tables need for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub label: String,
    pub summary: ModelSummary,
    /// Human benchmark as one coder plus every AI run.
    pub alpha_all: Option<f64>,
    pub alpha_ai_only: Option<f64>,
    pub coder_count: usize,
    /// Bland-Altman per complete run, keyed by 1-based run index.
    pub bland_altman: Vec<(usize, BlandAltman)>,
}

impl ModelEvaluation {
    /// Mean LoA width across runs.
    pub fn mean_loa_width(&self) -> f64 {
        if self.bland_altman.is_empty() {
            return f64::NAN;
        }
        self.bland_altman.iter().map(|(_, b)| b.width()).sum::<f64>()
            / self.bland_altman.len() as f64
    }

    /// Run with the narrowest limits of agreement.
    pub fn best_run(&self) -> Option<&(usize, BlandAltman)> {
        self.bland_altman
            .iter()
            .min_by(|a, b| a.1.width().total_cmp(&b.1.width()))
    }
}

pub fn evaluate_model(
    label: &str,
    runs: &ScoreMatrix,
    humans: &[f64],
    aggregation: Aggregation,
) -> Result<ModelEvaluation, AgreementError> {
    let summary = model_summary(runs, humans, aggregation)?;

    let mut raters = vec!["human".to_string()];
    raters.extend(runs.raters.iter().cloned());
    let cells = runs
        .cells
        .iter()
        .zip(humans)
        .map(|(row, &h)| std::iter::once(Some(h)).chain(row.iter().copied()).collect())
        .collect();
    let with_human = ScoreMatrix::new(runs.items.clone(), raters, cells)?;
    let alpha_all = krippendorff_alpha_interval(&with_human).ok();
    let alpha_ai_only = krippendorff_alpha_interval(runs).ok();

    let bland_altman = (0..runs.n_raters())
        .filter_map(|j| {
            let col = runs.column(j)?;
            let s = PairSeries::unscaled(col, humans.to_vec()).ok()?;
            bland_altman(&s).ok().map(|b| (j + 1, b))
        })
        .collect();

    Ok(ModelEvaluation {
        label: label.to_string(),
        summary,
        alpha_all,
        alpha_ai_only,
        coder_count: runs.n_raters() + 1,
        bland_altman,
    })
}
