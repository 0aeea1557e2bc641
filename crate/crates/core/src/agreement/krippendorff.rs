use super::{AgreementError, ScoreMatrix};

/// Krippendorff's alpha with the interval (squared difference) metric, via
/// the coincidence matrix over exact score values.
///
/// Items with fewer than two ratings are not pairable and are skipped.
pub fn krippendorff_alpha_interval(m: &ScoreMatrix) -> Result<f64, AgreementError> {
    if m.n_raters() < 2 {
        return Err(AgreementError::NotPairable);
    }
    let units: Vec<Vec<f64>> = m
        .cells
        .iter()
        .map(|r| r.iter().flatten().copied().collect::<Vec<_>>())
        .filter(|u| u.len() >= 2)
        .collect();

    let mut values: Vec<f64> = units.iter().flatten().copied().collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let index = |v: f64| values.binary_search_by(|p| p.total_cmp(&v)).expect("value indexed");

    let c = values.len();
    let mut coincidence = vec![vec![0.0f64; c]; c];
    for u in &units {
        let w = 1.0 / (u.len() - 1) as f64;
        for (i, &a) in u.iter().enumerate() {
            for (j, &b) in u.iter().enumerate() {
                if i != j {
                    coincidence[index(a)][index(b)] += w;
                }
            }
        }
    }
    let marginals: Vec<f64> = coincidence.iter().map(|r| r.iter().sum()).collect();
    let n: f64 = marginals.iter().sum();
    if n < 2.0 {
        return Err(AgreementError::NotPairable);
    }

    let mut observed = 0.0;
    let mut expected = 0.0;
    for a in 0..c {
        for b in 0..c {
            if a == b {
                continue;
            }
            let d2 = (values[a] - values[b]).powi(2);
            observed += coincidence[a][b] * d2;
            expected += marginals[a] * marginals[b] * d2;
        }
    }
    if expected == 0.0 {
        return Err(AgreementError::ZeroVariance("all pairable values are identical"));
    }
    // alpha = 1 - D_o / D_e with D_o = observed / n, D_e = expected / (n (n - 1))
    Ok(1.0 - (n - 1.0) * observed / expected)
}
