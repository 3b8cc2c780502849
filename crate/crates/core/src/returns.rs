//! Return algebra: arithmetic/geometric conversion, risk-free rates, equity
//! premia and fixed-length window sums.
//!
//! Monthly returns are held as geometric (log) returns everywhere inside the
//! crate so that they add across time. Arithmetic returns only appear when
//! reading or writing files.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calendar month encoded as `YYYYMM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Month(u32);

impl Month {
    pub fn new(year: u32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) || !(1000..=9999).contains(&year) {
            return Err(Error::Domain(format!("invalid month {year}-{month}")));
        }
        Ok(Month(year * 100 + month))
    }

    pub fn from_yyyymm(code: u32) -> Result<Self> {
        Month::new(code / 100, code % 100)
    }

    pub fn year(self) -> u32 {
        self.0 / 100
    }

    pub fn month(self) -> u32 {
        self.0 % 100
    }

    pub fn yyyymm(self) -> u32 {
        self.0
    }

    /// Months elapsed since January of year 0.
    pub fn ordinal(self) -> i64 {
        self.year() as i64 * 12 + self.month() as i64 - 1
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        let year = ordinal.div_euclid(12) as u32;
        let month = ordinal.rem_euclid(12) as u32 + 1;
        Month(year * 100 + month)
    }

    pub fn next(self) -> Self {
        Month::from_ordinal(self.ordinal() + 1)
    }

    pub fn offset(self, months: i64) -> Self {
        Month::from_ordinal(self.ordinal() + months)
    }

    /// Inclusive count of months in `[self, end]`; zero when `end < self`.
    pub fn span_to(self, end: Month) -> usize {
        (end.ordinal() - self.ordinal() + 1).max(0) as usize
    }
}

impl TryFrom<u32> for Month {
    type Error = Error;

    fn try_from(code: u32) -> Result<Self> {
        Month::from_yyyymm(code)
    }
}

impl From<Month> for u32 {
    fn from(m: Month) -> u32 {
        m.0
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReturnKind {
    Price,
    Total,
    Riskfree,
    Premium,
}

/// Monthly geometric returns starting at `start_month`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    values: Vec<f64>,
    start_month: Month,
    kind: ReturnKind,
}

impl ReturnSeries {
    pub fn new(values: Vec<f64>, start_month: Month, kind: ReturnKind) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite return at offset {i} of {kind:?} series starting {start_month}"
            )));
        }
        Ok(Self {
            values,
            start_month,
            kind,
        })
    }

    /// Build from arithmetic returns, converting each to geometric.
    pub fn from_arithmetic(arith: &[f64], start_month: Month, kind: ReturnKind) -> Result<Self> {
        let values = arith
            .iter()
            .map(|&a| to_geometric(a))
            .collect::<Result<Vec<_>>>()?;
        Self::new(values, start_month, kind)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn start_month(&self) -> Month {
        self.start_month
    }

    pub fn kind(&self) -> ReturnKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `G = ln(1 + A)`.
pub fn to_geometric(arithmetic: f64) -> Result<f64> {
    if !(arithmetic > -1.0) || !arithmetic.is_finite() {
        return Err(Error::Domain(format!(
            "arithmetic return {arithmetic} must be finite and > -1"
        )));
    }
    Ok(arithmetic.ln_1p())
}

/// `A = exp(G) - 1`.
pub fn to_arithmetic(geometric: f64) -> f64 {
    geometric.exp_m1()
}

/// Quoting convention of an annualized short rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateBasis {
    /// Annual rate as a fraction, e.g. `0.012` for 1.2%.
    Fraction,
    /// Annual rate in percent, e.g. `1.2`.
    Percent,
}

/// Geometric monthly risk-free return from an annualized rate:
/// `ln(1 + r/12)` for fractions, `ln(1 + r/1200)` for percents.
pub fn riskfree_geometric(rate: f64, basis: RateBasis) -> Result<f64> {
    let monthly = match basis {
        RateBasis::Fraction => rate / 12.0,
        RateBasis::Percent => rate / 1200.0,
    };
    if !(monthly > -1.0) || !monthly.is_finite() {
        return Err(Error::Domain(format!(
            "rate {rate} ({basis:?}) gives a non-positive growth factor"
        )));
    }
    Ok(monthly.ln_1p())
}

/// Elementwise `P(t) = Q(t) - R(t)`.
pub fn equity_premium(total: &ReturnSeries, riskfree: &ReturnSeries) -> Result<ReturnSeries> {
    if total.start_month != riskfree.start_month || total.len() != riskfree.len() {
        return Err(Error::Alignment(format!(
            "total series ({} months from {}) and risk-free series ({} months from {}) differ",
            total.len(),
            total.start_month,
            riskfree.len(),
            riskfree.start_month
        )));
    }
    let values = total
        .values
        .iter()
        .zip(&riskfree.values)
        .map(|(q, r)| q - r)
        .collect();
    ReturnSeries::new(values, total.start_month, ReturnKind::Premium)
}

/// What to do with trailing months that do not fill a whole window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemainderPolicy {
    #[default]
    Drop,
    Error,
}

/// Number of complete windows of length `window` in `len` months, applying
/// the remainder policy.
pub fn window_count(len: usize, window: usize, policy: RemainderPolicy) -> Result<usize> {
    if window == 0 || window > len {
        return Err(Error::Domain(format!(
            "window length {window} must be in 1..={len}"
        )));
    }
    let remainder = len % window;
    if remainder != 0 {
        match policy {
            RemainderPolicy::Error => {
                return Err(Error::Domain(format!(
                    "{len} months leave a partial window of {remainder} (window {window})"
                )))
            }
            RemainderPolicy::Drop => log::warn!(
                "dropping {remainder} trailing months that do not fill a {window}-month window"
            ),
        }
    }
    Ok(len / window)
}

/// Sum of values over consecutive non-overlapping windows.
pub fn window_aggregate(values: &[f64], window: usize, policy: RemainderPolicy) -> Result<Vec<f64>> {
    let n = window_count(values.len(), window, policy)?;
    Ok(values
        .chunks_exact(window)
        .take(n)
        .map(|w| w.iter().sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(values: &[f64], kind: ReturnKind) -> ReturnSeries {
        ReturnSeries::new(values.to_vec(), Month::new(1926, 7).unwrap(), kind).unwrap()
    }

    #[test]
    fn geometric_returns_add_arithmetic_compound() {
        assert!((0.2 + 0.3 - 0.5_f64).abs() < 1e-12);
        let g = to_geometric(0.2).unwrap() + to_geometric(0.3).unwrap();
        assert!((to_arithmetic(g) - 0.56).abs() < 1e-12);
        assert_eq!(to_geometric(0.0).unwrap(), 0.0);
    }

    #[test]
    fn total_loss_is_rejected() {
        assert!(matches!(to_geometric(-1.0), Err(Error::Domain(_))));
        assert!(to_geometric(-1.5).is_err());
        assert!(to_geometric(f64::NAN).is_err());
    }

    #[test]
    fn riskfree_bases_agree() {
        let expected = 1.001_f64.ln();
        assert_eq!(riskfree_geometric(0.0, RateBasis::Percent).unwrap(), 0.0);
        let frac = riskfree_geometric(0.012, RateBasis::Fraction).unwrap();
        let pct = riskfree_geometric(1.2, RateBasis::Percent).unwrap();
        // Series: x - x^2/2 + x^3/3 with x = 0.001.
        let series = 0.001 - 0.001_f64.powi(2) / 2.0 + 0.001_f64.powi(3) / 3.0;
        assert!((frac - expected).abs() < 1e-15);
        assert!((pct - expected).abs() < 1e-15);
        assert!((frac - series).abs() < 1e-12);
        assert!((frac - 0.0009995).abs() < 1e-7);
        assert!(riskfree_geometric(-1300.0, RateBasis::Percent).is_err());
    }

    #[test]
    fn premium_subtracts_riskfree() {
        let total = series(&[0.01, 0.02], ReturnKind::Total);
        let rf = series(&[0.001, 0.001], ReturnKind::Riskfree);
        let p = equity_premium(&total, &rf).unwrap();
        assert_eq!(p.kind(), ReturnKind::Premium);
        assert!((p.values()[0] - 0.009).abs() < 1e-15);
        assert!((p.values()[1] - 0.019).abs() < 1e-15);
        let zero = equity_premium(&total, &total).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn premium_rejects_misaligned() {
        let total = series(&[0.01, 0.02], ReturnKind::Total);
        let rf = ReturnSeries::new(vec![0.001, 0.001], Month::new(1926, 8).unwrap(), ReturnKind::Riskfree)
            .unwrap();
        assert!(matches!(equity_premium(&total, &rf), Err(Error::Alignment(_))));
        let short = series(&[0.001], ReturnKind::Riskfree);
        assert!(matches!(equity_premium(&total, &short), Err(Error::Alignment(_))));
    }

    #[test]
    fn windows_over_reference_length() {
        let v = vec![0.01; 1128];
        let w = window_aggregate(&v, 24, RemainderPolicy::Error).unwrap();
        assert_eq!(w.len(), 47);
        assert!(w.iter().all(|s| (s - 0.24).abs() < 1e-12));
        let whole = window_aggregate(&v, 1128, RemainderPolicy::Error).unwrap();
        assert_eq!(whole.len(), 1);
        assert!((whole[0] - 11.28).abs() < 1e-10);
    }

    #[test]
    fn window_errors() {
        let v = vec![1.0; 10];
        assert!(window_aggregate(&v, 0, RemainderPolicy::Drop).is_err());
        assert!(window_aggregate(&v, 11, RemainderPolicy::Drop).is_err());
        assert!(window_aggregate(&v, 3, RemainderPolicy::Error).is_err());
        assert_eq!(window_aggregate(&v, 3, RemainderPolicy::Drop).unwrap(), vec![3.0; 3]);
    }

    #[test]
    fn month_arithmetic() {
        let m = Month::from_yyyymm(192612).unwrap();
        assert_eq!(m.next().yyyymm(), 192701);
        assert_eq!(Month::new(1926, 7).unwrap().span_to(Month::new(2020, 6).unwrap()), 1128);
        assert!(Month::from_yyyymm(192613).is_err());
        assert_eq!(m.offset(-12).yyyymm(), 192512);
    }

    proptest! {
        #[test]
        fn arithmetic_geometric_round_trip(a in -0.999f64..10.0) {
            let back = to_arithmetic(to_geometric(a).unwrap());
            prop_assert!((back - a).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn window_sums_conserve_total(values in prop::collection::vec(-1.0f64..1.0, 1..200), k in 1usize..12) {
            prop_assume!(k <= values.len());
            let sums = window_aggregate(&values, k, RemainderPolicy::Drop).unwrap();
            let covered = sums.len() * k;
            let direct: f64 = values[..covered].iter().sum();
            prop_assert!((sums.iter().sum::<f64>() - direct).abs() < 1e-10);
        }

        #[test]
        fn premium_is_linear_in_total(a in prop::collection::vec(-0.5f64..0.5, 5), b in prop::collection::vec(-0.5f64..0.5, 5)) {
            let rf = series(&[0.001, 0.002, 0.0, -0.001, 0.003], ReturnKind::Riskfree);
            let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let lhs = equity_premium(&series(&ab, ReturnKind::Total), &rf).unwrap();
            let pa = equity_premium(&series(&a, ReturnKind::Total), &rf).unwrap();
            for i in 0..5 {
                prop_assert!((lhs.values()[i] - (pa.values()[i] + b[i])).abs() < 1e-12);
            }
        }
    }
}
