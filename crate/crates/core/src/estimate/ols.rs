use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simple regression `y = intercept + slope * x + residual`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub intercept: f64,
    pub slope: f64,
    pub residuals: Vec<f64>,
    pub stderr_intercept: f64,
    pub stderr_slope: f64,
    pub r_squared: f64,
    pub dof: usize,
}

impl OlsFit {
    pub fn sse(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum()
    }

    /// Residual standard error `sqrt(SSE / dof)`.
    pub fn residual_std(&self) -> f64 {
        (self.sse() / self.dof as f64).sqrt()
    }
}

/// Closed-form least squares on centered data.
pub fn ols(x: &[f64], y: &[f64]) -> Result<OlsFit> {
    if x.len() != y.len() {
        return Err(Error::Alignment(format!(
            "regressor has {} points, response has {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Domain(format!("need at least 3 points, got {n}")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if !(sxx > 1e-24 * scale * scale * nf) {
        return Err(Error::Singular("regressor is constant".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| yi - intercept - slope * xi)
        .collect();
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    let dof = n - 2;
    let s2 = sse / dof as f64;
    let r_squared = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 0.0 };
    Ok(OlsFit {
        intercept,
        slope,
        residuals,
        stderr_intercept: (s2 * (1.0 / nf + mx * mx / sxx)).sqrt(),
        stderr_slope: (s2 / sxx).sqrt(),
        r_squared,
        dof,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_line() {
        let f = ols(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((f.intercept - 1.0).abs() < 1e-14);
        assert!((f.slope - 2.0).abs() < 1e-14);
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-14));
        assert_eq!(f.r_squared, 1.0);
        assert_eq!(f.dof, 1);
    }

    #[test]
    fn constant_response() {
        let f = ols(&[0.0, 1.0, 2.0, 5.0], &[4.0; 4]).unwrap();
        assert_eq!(f.slope, 0.0);
        assert_eq!(f.r_squared, 0.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(ols(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]), Err(Error::Singular(_))));
        assert!(matches!(ols(&[1.0, 2.0, 3.0], &[1.0, 2.0]), Err(Error::Alignment(_))));
        assert!(ols(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    fn sse(x: &[f64], y: &[f64], a: f64, b: f64) -> f64 {
        x.iter().zip(y).map(|(xi, yi)| (yi - a - b * xi).powi(2)).sum()
    }

    #[test]
    fn grid_scan_finds_no_better_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|xi| 0.3 - 1.7 * xi + rng.random_range(-0.5..0.5)).collect();
        let f = ols(&x, &y).unwrap();
        let best = sse(&x, &y, f.intercept, f.slope);
        for span in [1e-1, 1e-3, 1e-5] {
            for i in -20..=20 {
                for j in -20..=20 {
                    let a = f.intercept + span * i as f64 / 20.0;
                    let b = f.slope + span * j as f64 / 20.0;
                    assert!(sse(&x, &y, a, b) >= best - 1e-8, "({a}, {b}) beats the fit");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn residuals_are_centered_and_orthogonal(
            pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..60)
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            prop_assume!(x.iter().any(|v| (v - x[0]).abs() > 1e-3));
            let f = ols(&x, &y).unwrap();
            let scale = 1.0 + y.iter().map(|v| v.abs()).sum::<f64>() + x.iter().map(|v| v.abs()).sum::<f64>();
            let sum: f64 = f.residuals.iter().sum();
            let dot: f64 = f.residuals.iter().zip(&x).map(|(r, xi)| r * xi).sum();
            prop_assert!(sum.abs() < 1e-9 * scale);
            prop_assert!(dot.abs() < 1e-9 * scale * scale);
            prop_assert!((0.0..=1.0).contains(&f.r_squared));
        }
    }
}
