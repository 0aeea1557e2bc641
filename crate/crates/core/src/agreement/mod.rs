//! Agreement, error, calibration and reliability statistics.
//!
//! Every function here is pure. The only randomness is the seeded bootstrap.

mod bootstrap;
mod correlation;
mod error;
mod icc;
mod krippendorff;
mod leaderboard;
mod summary;

pub use bootstrap::{bootstrap_ci, percentile, IntervalCI, Statistic, DEFAULT_LEVELS};
pub use correlation::{average_ranks, ccc, pearson, spearman};
pub use error::{bland_altman, calibration_fit, error_stats, BlandAltman, CalibrationFit, ErrorStats};
pub use icc::icc_2_1;
pub use krippendorff::krippendorff_alpha_interval;
pub use leaderboard::{rank_models, LeaderboardEntry, RankingPolicy};
pub use summary::{
    evaluate_model, model_summary, Aggregation, Metric, MetricSummary, ModelEvaluation,
    ModelSummary,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{SCORE_MAX, SCORE_MIN};

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
pub enum AgreementError {
    #[error("correlation undefined: {0} series is constant")]
    UndefinedCorrelation(&'static str),
    #[error("series lengths differ ({ai} vs {human})")]
    LengthMismatch { ai: usize, human: usize },
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("value {0} is not a finite score in [0, 2]")]
    OutOfScale(f64),
    #[error("value {0} is not finite")]
    NotFinite(f64),
    #[error("matrix has missing cells")]
    MissingCells,
    #[error("matrix shape mismatch: {0}")]
    Shape(String),
    #[error("zero variance: {0}")]
    ZeroVariance(&'static str),
    #[error("singular fit: AI series is constant")]
    SingularFit,
    #[error("fewer than 2 pairable values")]
    NotPairable,
}

/// AI and human scores aligned by item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSeries {
    ai: Vec<f64>,
    human: Vec<f64>,
}

impl PairSeries {
    /// Scores must lie on the 0-2 scale.
    pub fn new(ai: Vec<f64>, human: Vec<f64>) -> Result<Self, AgreementError> {
        let s = Self::unscaled(ai, human)?;
        if let Some(&v) = s
            .ai
            .iter()
            .chain(&s.human)
            .find(|v| !(SCORE_MIN..=SCORE_MAX).contains(*v))
        {
            return Err(AgreementError::OutOfScale(v));
        }
        Ok(s)
    }

    /// Like [`PairSeries::new`] but accepts any finite values, for use on
    /// transformed data.
    pub fn unscaled(ai: Vec<f64>, human: Vec<f64>) -> Result<Self, AgreementError> {
        if ai.len() != human.len() {
            return Err(AgreementError::LengthMismatch {
                ai: ai.len(),
                human: human.len(),
            });
        }
        if ai.is_empty() {
            return Err(AgreementError::TooShort { needed: 1, got: 0 });
        }
        if let Some(&v) = ai.iter().chain(&human).find(|v| !v.is_finite()) {
            return Err(AgreementError::NotFinite(v));
        }
        Ok(Self { ai, human })
    }

    pub fn ai(&self) -> &[f64] {
        &self.ai
    }

    pub fn human(&self) -> &[f64] {
        &self.human
    }

    pub fn len(&self) -> usize {
        self.ai.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ai.is_empty()
    }

    pub(crate) fn require(&self, needed: usize) -> Result<(), AgreementError> {
        if self.len() < needed {
            Err(AgreementError::TooShort {
                needed,
                got: self.len(),
            })
        } else {
            Ok(())
        }
    }
}

/// Items x raters grid; `None` marks a missing rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub items: Vec<String>,
    pub raters: Vec<String>,
    /// Row per item, column per rater.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl ScoreMatrix {
    pub fn new(
        items: Vec<String>,
        raters: Vec<String>,
        cells: Vec<Vec<Option<f64>>>,
    ) -> Result<Self, AgreementError> {
        if cells.len() != items.len() {
            return Err(AgreementError::Shape(format!(
                "{} rows for {} items",
                cells.len(),
                items.len()
            )));
        }
        if let Some((i, row)) = cells.iter().enumerate().find(|(_, r)| r.len() != raters.len()) {
            return Err(AgreementError::Shape(format!(
                "row {i} has {} cells for {} raters",
                row.len(),
                raters.len()
            )));
        }
        if let Some(v) = cells.iter().flatten().flatten().find(|v| !v.is_finite()) {
            return Err(AgreementError::NotFinite(*v));
        }
        Ok(Self {
            items,
            raters,
            cells,
        })
    }

    /// Complete matrix from dense rows with generated ids.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AgreementError> {
        let k = rows.first().map_or(0, Vec::len);
        Self::new(
            (0..rows.len()).map(|i| format!("item{}", i + 1)).collect(),
            (0..k).map(|j| format!("rater{}", j + 1)).collect(),
            rows.iter()
                .map(|r| r.iter().copied().map(Some).collect())
                .collect(),
        )
    }

    /// Complete matrix whose columns are the given rater series.
    pub fn from_columns(
        items: Vec<String>,
        raters: Vec<String>,
        columns: &[Vec<f64>],
    ) -> Result<Self, AgreementError> {
        if columns.len() != raters.len() {
            return Err(AgreementError::Shape(format!(
                "{} columns for {} raters",
                columns.len(),
                raters.len()
            )));
        }
        if let Some(c) = columns.iter().find(|c| c.len() != items.len()) {
            return Err(AgreementError::Shape(format!(
                "column of length {} for {} items",
                c.len(),
                items.len()
            )));
        }
        let cells = (0..items.len())
            .map(|i| columns.iter().map(|c| Some(c[i])).collect())
            .collect();
        Self::new(items, raters, cells)
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_raters(&self) -> usize {
        self.raters.len()
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().flatten().all(Option::is_some)
    }

    /// Dense rows, or `MissingCells`.
    pub fn dense(&self) -> Result<Vec<Vec<f64>>, AgreementError> {
        self.cells
            .iter()
            .map(|r| r.iter().copied().collect::<Option<Vec<_>>>())
            .collect::<Option<Vec<_>>>()
            .ok_or(AgreementError::MissingCells)
    }

    /// Column `j`, if every cell in it is present.
    pub fn column(&self, j: usize) -> Option<Vec<f64>> {
        self.cells.iter().map(|r| r.get(j).copied().flatten()).collect()
    }

    /// Copy with the raters at `keep` only.
    pub fn select_raters(&self, keep: &[usize]) -> Self {
        Self {
            items: self.items.clone(),
            raters: keep.iter().map(|&j| self.raters[j].clone()).collect(),
            cells: self
                .cells
                .iter()
                .map(|r| keep.iter().map(|&j| r[j]).collect())
                .collect(),
        }
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1). Zero for fewer than two values.
pub(crate) fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub(crate) fn is_constant(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] == w[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_series_validation() {
        assert!(PairSeries::new(vec![0.0, 2.0], vec![1.0, 1.0]).is_ok());
        assert_eq!(
            PairSeries::new(vec![0.0], vec![1.0, 1.0]),
            Err(AgreementError::LengthMismatch { ai: 1, human: 2 })
        );
        assert_eq!(
            PairSeries::new(vec![2.5], vec![1.0]),
            Err(AgreementError::OutOfScale(2.5))
        );
        assert!(PairSeries::unscaled(vec![2.5], vec![-1.0]).is_ok());
        assert!(PairSeries::unscaled(vec![f64::NAN], vec![1.0]).is_err());
    }

    #[test]
    fn matrix_shapes() {
        let m = ScoreMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.column(1), Some(vec![2.0, 4.0]));
        assert!(m.is_complete());
        assert!(ScoreMatrix::new(vec!["a".into()], vec!["r".into()], vec![vec![]]).is_err());
        let m = ScoreMatrix::new(
            vec!["a".into(), "b".into()],
            vec!["r1".into(), "r2".into()],
            vec![vec![Some(1.0), None], vec![Some(0.0), Some(1.0)]],
        )
        .unwrap();
        assert_eq!(m.column(1), None);
        assert_eq!(m.dense(), Err(AgreementError::MissingCells));
        assert_eq!(m.select_raters(&[0]).column(0), Some(vec![1.0, 0.0]));
    }
}
