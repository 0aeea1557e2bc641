use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;

pub const DEFAULT_LEVELS: [f64; 2] = [0.95, 0.99];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    #[default]
    Mean,
}

impl Statistic {
    fn eval(self, xs: &[f64]) -> f64 {
        match self {
            Statistic::Mean => xs.iter().sum::<f64>() / xs.len() as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalCI {
    pub level: f64,
    pub low: f64,
    pub high: f64,
}

/// Linear-interpolation quantile of sorted data (the common "type 7").
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap of `statistic` over `values`.
///
/// Resample `i` draws from its own ChaCha stream keyed by `(seed, i)`, so the
/// result is identical for any [`Execution`] mode and thread count.
pub fn bootstrap_ci(
    values: &[f64],
    statistic: Statistic,
    resamples: usize,
    levels: &[f64],
    seed: u64,
    exec: Execution,
) -> Vec<IntervalCI> {
    if values.is_empty() || resamples == 0 {
        return Vec::new();
    }
    let n = values.len();
    let mut stats = exec.map_range(resamples, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let draw: Vec<f64> = (0..n).map(|_| values[rng.random_range(0..n)]).collect();
        statistic.eval(&draw)
    });
    stats.sort_by(f64::total_cmp);
    levels
        .iter()
        .map(|&level| {
            let tail = (1.0 - level) / 2.0;
            IntervalCI {
                level,
                low: percentile(&stats, tail),
                high: percentile(&stats, 1.0 - tail),
            }
        })
        .collect()
}
