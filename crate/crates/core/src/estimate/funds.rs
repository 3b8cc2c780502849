//! Joint regression of small- and mid-cap fund premia on a large-cap fund.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::diagnostics::pearson;
use super::ols::{ols, OlsFit};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundFit {
    pub alpha: f64,
    pub beta: f64,
    /// 95% Student-t confidence interval, `dof = n - 2`.
    pub ci_alpha: (f64, f64),
    pub ci_beta: (f64, f64),
    /// Residual standard error.
    pub sigma: f64,
    pub r_squared: f64,
    #[serde(skip)]
    pub fit: Option<OlsFit>,
}

impl FundFit {
    fn from_fit(fit: OlsFit, level: f64) -> Self {
        let t = StudentsT::new(0.0, 1.0, fit.dof as f64)
            .expect("dof >= 1")
            .inverse_cdf(0.5 + level / 2.0);
        Self {
            alpha: fit.intercept,
            beta: fit.slope,
            ci_alpha: (fit.intercept - t * fit.stderr_intercept, fit.intercept + t * fit.stderr_intercept),
            ci_beta: (fit.slope - t * fit.stderr_slope, fit.slope + t * fit.stderr_slope),
            sigma: fit.residual_std(),
            r_squared: fit.r_squared,
            fit: Some(fit),
        }
    }

    pub fn alpha_ci_contains(&self, v: f64) -> bool {
        self.ci_alpha.0 <= v && v <= self.ci_alpha.1
    }

    pub fn beta_ci_contains(&self, v: f64) -> bool {
        self.ci_beta.0 <= v && v <= self.ci_beta.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundsReport {
    pub months: usize,
    pub small: FundFit,
    pub mid: FundFit,
    /// Correlation of the two residual series; `None` when either is constant.
    pub residual_correlation: Option<f64>,
}

pub fn funds_regression(p_small: &[f64], p_mid: &[f64], p_large: &[f64]) -> Result<FundsReport> {
    let small = ols(p_large, p_small)?;
    let mid = ols(p_large, p_mid)?;
    let residual_correlation = pearson(&small.residuals, &mid.residuals).ok();
    Ok(FundsReport {
        months: p_large.len(),
        small: FundFit::from_fit(small, 0.95),
        mid: FundFit::from_fit(mid, 0.95),
        residual_correlation,
    })
}
