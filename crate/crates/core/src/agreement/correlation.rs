use super::{is_constant, mean, AgreementError, PairSeries};

fn pearson_raw(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

fn check_nonconstant(s: &PairSeries) -> Result<(), AgreementError> {
    if is_constant(s.ai()) {
        return Err(AgreementError::UndefinedCorrelation("ai"));
    }
    if is_constant(s.human()) {
        return Err(AgreementError::UndefinedCorrelation("human"));
    }
    Ok(())
}

/// Product-moment correlation.
pub fn pearson(s: &PairSeries) -> Result<f64, AgreementError> {
    s.require(2)?;
    check_nonconstant(s)?;
    Ok(pearson_raw(s.ai(), s.human()))
}

/// 1-based ranks; tied values share the mean of the positions they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && xs[idx[end]] == xs[idx[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let r = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of average-tied ranks.
pub fn spearman(s: &PairSeries) -> Result<f64, AgreementError> {
    s.require(2)?;
    check_nonconstant(s)?;
    Ok(pearson_raw(&average_ranks(s.ai()), &average_ranks(s.human())))
}

/// Lin's concordance correlation with population (1/n) moments.
///
/// Two constant, equal series have CCC 1. Two constant series at different
/// levels have no defined concordance and yield `ZeroVariance`.
pub fn ccc(s: &PairSeries) -> Result<f64, AgreementError> {
    let (x, y) = (s.ai(), s.human());
    if is_constant(x) && is_constant(y) {
        return if x[0] == y[0] {
            Ok(1.0)
        } else {
            Err(AgreementError::ZeroVariance("both series constant at different levels"))
        };
    }
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    let (cov, vx, vy) = (cov / n, vx / n, vy / n);
    Ok(2.0 * cov / (vx + vy + (mx - my).powi(2)))
}
