use super::{AgreementError, ScoreMatrix};

/// ICC(2,1): two-way random effects, single rater, absolute agreement
/// (Shrout & Fleiss), from the two-way ANOVA mean squares:
///
/// `(MSR - MSE) / (MSR + (k-1) MSE + k/n (MSC - MSE))`
pub fn icc_2_1(m: &ScoreMatrix) -> Result<f64, AgreementError> {
    let rows = m.dense()?;
    let n = rows.len();
    let k = m.n_raters();
    if n < 2 || k < 2 {
        return Err(AgreementError::TooShort {
            needed: 2,
            got: n.min(k),
        });
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = rows.iter().flatten().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let col_means: Vec<f64> = (0..k)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / nf)
        .collect();

    let ss_rows = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_cols = nf * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_err = 0.0;
    for (i, r) in rows.iter().enumerate() {
        for (j, x) in r.iter().enumerate() {
            ss_err += (x - row_means[i] - col_means[j] + grand).powi(2);
        }
    }
    let ms_rows = ss_rows / (nf - 1.0);
    let ms_cols = ss_cols / (kf - 1.0);
    let ms_err = ss_err / ((nf - 1.0) * (kf - 1.0));

    let denom = ms_rows + (kf - 1.0) * ms_err + kf / nf * (ms_cols - ms_err);
    if denom == 0.0 {
        return Err(AgreementError::ZeroVariance("matrix has no variance"));
    }
    Ok((ms_rows - ms_err) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_raters_agree_perfectly() {
        let m = ScoreMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert!((icc_2_1(&m).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn three_by_two_hand_value() {
        // rows (1,2),(3,4),(5,6): SSR = 16, SSC = 1.5, SSE = 0
        // MSR = 8, MSC = 1.5, MSE = 0 -> 8 / (8 + 2/3 * 1.5) = 8/9
        let m = ScoreMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert!((icc_2_1(&m).unwrap() - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_missing() {
        let m = ScoreMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(icc_2_1(&m), Err(AgreementError::ZeroVariance(_))));
        let m = ScoreMatrix::new(
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into()],
            vec![vec![Some(1.0), None], vec![Some(0.0), Some(1.0)]],
        )
        .unwrap();
        assert_eq!(icc_2_1(&m), Err(AgreementError::MissingCells));
    }
}
