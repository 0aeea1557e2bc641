use serde::{Deserialize, Serialize};

use super::{is_constant, mean, sample_sd, AgreementError, PairSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mae: f64,
    pub rmse: f64,
    /// Mean signed difference, AI minus human.
    pub bias: f64,
}

pub fn error_stats(s: &PairSeries) -> ErrorStats {
    let d: Vec<f64> = s.ai().iter().zip(s.human()).map(|(a, h)| a - h).collect();
    ErrorStats {
        mae: mean(&d.iter().map(|x| x.abs()).collect::<Vec<_>>()),
        rmse: mean(&d.iter().map(|x| x * x).collect::<Vec<_>>()).sqrt(),
        bias: mean(&d),
    }
}

/// `human = intercept + slope * ai`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of human on AI. R² comes from the residual sum of
/// squares, not from the correlation.
pub fn calibration_fit(s: &PairSeries) -> Result<CalibrationFit, AgreementError> {
    s.require(2)?;
    let (x, y) = (s.ai(), s.human());
    if is_constant(x) {
        return Err(AgreementError::SingularFit);
    }
    if is_constant(y) {
        return Err(AgreementError::ZeroVariance("human series is constant; R² undefined"));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    Ok(CalibrationFit {
        intercept,
        slope,
        r_squared: (1.0 - ss_res / ss_tot).clamp(0.0, 1.0),
    })
}

pub const LOA_Z: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub bias: f64,
    pub sd: f64,
    pub loa_lower: f64,
    pub loa_upper: f64,
    /// (pairwise mean, AI - human) per item.
    pub points: Vec<(f64, f64)>,
}

impl BlandAltman {
    pub fn width(&self) -> f64 {
        self.loa_upper - self.loa_lower
    }
}

/// Bias and 95% limits of agreement (`bias ± 1.96 · SD`, sample SD).
pub fn bland_altman(s: &PairSeries) -> Result<BlandAltman, AgreementError> {
    s.require(2)?;
    let points: Vec<(f64, f64)> = s
        .ai()
        .iter()
        .zip(s.human())
        .map(|(a, h)| ((a + h) / 2.0, a - h))
        .collect();
    let d: Vec<f64> = points.iter().map(|p| p.1).collect();
    let bias = mean(&d);
    let sd = sample_sd(&d);
    Ok(BlandAltman {
        bias,
        sd,
        loa_lower: bias - LOA_Z * sd,
        loa_upper: bias + LOA_Z * sd,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(a: &[f64], h: &[f64]) -> PairSeries {
        PairSeries::unscaled(a.to_vec(), h.to_vec()).unwrap()
    }

    #[test]
    fn error_stats_examples() {
        let e = error_stats(&ps(&[0., 1., 2.], &[0., 1., 2.]));
        assert_eq!((e.mae, e.rmse, e.bias), (0.0, 0.0, 0.0));
        let e = error_stats(&ps(&[1.5], &[1.0]));
        assert_eq!((e.mae, e.rmse, e.bias), (0.5, 0.5, 0.5));
    }

    #[test]
    fn calibration_examples() {
        let f = calibration_fit(&ps(&[0., 1., 2.], &[0., 1., 2.])).unwrap();
        assert!(f.intercept.abs() < 1e-15 && (f.slope - 1.0).abs() < 1e-15);
        assert!((f.r_squared - 1.0).abs() < 1e-15);
        let f = calibration_fit(&ps(&[0., 1., 2.], &[0., 2., 4.])).unwrap();
        assert!(f.intercept.abs() < 1e-15 && (f.slope - 2.0).abs() < 1e-15);
        assert!((f.r_squared - 1.0).abs() < 1e-15);
        assert_eq!(
            calibration_fit(&ps(&[1., 1., 1.], &[0., 1., 2.])),
            Err(AgreementError::SingularFit)
        );
    }

    #[test]
    fn bland_altman_examples() {
        let ba = bland_altman(&ps(&[0.1, 1.1, 2.1], &[0., 1., 2.])).unwrap();
        assert!((ba.bias - 0.1).abs() < 1e-12);
        assert!(ba.sd < 1e-12);
        assert!((ba.loa_lower - 0.1).abs() < 1e-12 && (ba.loa_upper - 0.1).abs() < 1e-12);

        // differences (0, 0.2): bias 0.1, SD sqrt(0.02)
        let ba = bland_altman(&ps(&[1.0, 1.2], &[1.0, 1.0])).unwrap();
        let half = 1.96 * 0.02f64.sqrt();
        assert!((ba.bias - 0.1).abs() < 1e-12);
        assert!((ba.loa_lower - (0.1 - half)).abs() < 1e-12);
        assert!((ba.loa_upper - (0.1 + half)).abs() < 1e-12);
        assert_eq!(ba.points.len(), 2);
        assert!((ba.points[1].0 - 1.1).abs() < 1e-12);
    }
}
