use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{Metric, ModelEvaluation};

/// Lexicographic ranking over metric tiers.
///
/// Tiers, in priority order:
/// 1. interchangeability: mean of ICC and CCC (higher is better)
/// 2. error magnitude: mean of MAE and RMSE (lower)
/// 3. calibration quality: |slope - 1| + |intercept| + (1 - R²) (lower)
/// 4. pooled reliability: alpha with the human benchmark (higher)
/// 5. Bland-Altman tightness: mean LoA width across runs (lower)
///
/// Tier scores are bucketed at `resolution` before comparison, so models
/// closer than that fall through to the next tier. Remaining ties break on
/// calibration closeness (|slope - 1|, then |intercept|), then LoA width, then
/// label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingPolicy {
    pub resolution: f64,
}

impl Default for RankingPolicy {
    fn default() -> Self {
        Self { resolution: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub rank: usize,
    pub label: String,
    /// Tier scores in priority order, oriented so that higher is better.
    pub tiers: [f64; 5],
}

fn tier_scores(e: &ModelEvaluation) -> [f64; 5] {
    let s = &e.summary;
    let interchange = (s.mean(Metric::Icc) + s.mean(Metric::Ccc)) / 2.0;
    let error = (s.mean(Metric::Mae) + s.mean(Metric::Rmse)) / 2.0;
    let calibration = (s.mean(Metric::Slope) - 1.0).abs()
        + s.mean(Metric::Intercept).abs()
        + (1.0 - s.mean(Metric::RSquared));
    [
        interchange,
        -error,
        -calibration,
        e.alpha_all.unwrap_or(f64::NAN),
        -e.mean_loa_width(),
    ]
}

// NaN sorts below every real value, so models with undefined metrics sink.
fn bucket(x: f64, resolution: f64) -> i64 {
    if x.is_nan() {
        i64::MIN
    } else {
        (x / resolution).round() as i64
    }
}

fn nan_last(a: f64, b: f64) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        _ => a.total_cmp(&b),
    }
}

pub fn rank_models(models: &[ModelEvaluation], policy: RankingPolicy) -> Vec<LeaderboardEntry> {
    let mut scored: Vec<(&ModelEvaluation, [f64; 5])> =
        models.iter().map(|m| (m, tier_scores(m))).collect();
    scored.sort_by(|(ma, ta), (mb, tb)| {
        for (a, b) in ta.iter().zip(tb) {
            match bucket(*b, policy.resolution).cmp(&bucket(*a, policy.resolution)) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        let slope_gap = |m: &ModelEvaluation| (m.summary.mean(Metric::Slope) - 1.0).abs();
        let intercept_gap = |m: &ModelEvaluation| m.summary.mean(Metric::Intercept).abs();
        nan_last(slope_gap(ma), slope_gap(mb))
            .then_with(|| nan_last(intercept_gap(ma), intercept_gap(mb)))
            .then_with(|| nan_last(ma.mean_loa_width(), mb.mean_loa_width()))
            .then_with(|| ma.label.cmp(&mb.label))
    });
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (m, tiers))| LeaderboardEntry {
            rank: i + 1,
            label: m.label.clone(),
            tiers,
        })
        .collect()
}
