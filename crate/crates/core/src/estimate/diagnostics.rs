//! White-noise and normality diagnostics for residual series.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LjungBox {
    pub lags: usize,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JarqueBera {
    pub statistic: f64,
    pub p_value: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

fn chi2_sf(x: f64, dof: f64) -> f64 {
    // dof > 0 is guaranteed by callers
    ChiSquared::new(dof).expect("positive dof").sf(x)
}

fn centered(series: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let c: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let ss: f64 = c.iter().map(|v| v * v).sum();
    let scale = series.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !(ss > 1e-28 * n * scale * scale) || ss == 0.0 {
        return Err(Error::Degenerate("series is constant".into()));
    }
    Ok((c, ss))
}

/// Sample autocorrelations for lags `0..=max_lag`, normalized so lag 0 is 1.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if max_lag < 1 || series.len() <= max_lag {
        return Err(Error::Domain(format!(
            "need 1 <= max_lag < length, got max_lag {max_lag} for {} points",
            series.len()
        )));
    }
    let (c, ss) = centered(series)?;
    Ok((0..=max_lag)
        .map(|l| c[l..].iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / ss)
        .collect())
}

/// `Q = n (n + 2) sum_{l=1}^{h} r_l^2 / (n - l)`, chi-square with `h` dof.
pub fn ljung_box(series: &[f64], lags: usize) -> Result<LjungBox> {
    let r = acf(series, lags)?;
    let n = series.len() as f64;
    let q = n * (n + 2.0)
        * r.iter()
            .enumerate()
            .skip(1)
            .map(|(l, rl)| rl * rl / (n - l as f64))
            .sum::<f64>();
    Ok(LjungBox {
        lags,
        statistic: q,
        p_value: chi2_sf(q, lags as f64),
    })
}

/// `JB = n/6 (S^2 + K^2/4)` with population skewness `S` and excess kurtosis
/// `K`, chi-square with 2 dof.
pub fn jarque_bera(series: &[f64]) -> Result<JarqueBera> {
    if series.len() < 3 {
        return Err(Error::Domain("Jarque-Bera needs at least 3 points".into()));
    }
    let (c, ss) = centered(series)?;
    let n = series.len() as f64;
    let m2 = ss / n;
    let m3 = c.iter().map(|v| v.powi(3)).sum::<f64>() / n;
    let m4 = c.iter().map(|v| v.powi(4)).sum::<f64>() / n;
    let skewness = m3 / m2.powf(1.5);
    let excess_kurtosis = m4 / (m2 * m2) - 3.0;
    let statistic = n / 6.0 * (skewness * skewness + excess_kurtosis * excess_kurtosis / 4.0);
    Ok(JarqueBera {
        statistic,
        p_value: chi2_sf(statistic, 2.0),
        skewness,
        excess_kurtosis,
    })
}

/// Pearson correlation of two equally long samples.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Alignment(format!(
            "correlation needs two equal samples of length >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let (cx, sx) = centered(x)?;
    let (cy, sy) = centered(y)?;
    let r = cx.iter().zip(&cy).map(|(a, b)| a * b).sum::<f64>() / (sx * sy).sqrt();
    Ok(r.clamp(-1.0, 1.0))
}
