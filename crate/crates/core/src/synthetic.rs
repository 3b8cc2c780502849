//! Seeded synthetic data with planted parameters, used for fixtures and
//! recovery tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ingest::ReturnPanel;
use crate::returns::Month;

/// Decile panel whose window sums follow
/// `Qk = (1 + gamma C) Q1 + mu C + rho C Z` with the top decile as benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelDgp {
    pub start: Month,
    pub months: usize,
    pub window: usize,
    pub deciles: usize,
    pub gamma: f64,
    pub mu: f64,
    pub rho: f64,
    /// Benchmark monthly log drift and volatility.
    pub g_s: f64,
    pub sigma_s: f64,
    /// `C` of decile `k` is about `c_step (k - 1)`, jittered by up to `c_jitter` per window.
    pub c_step: f64,
    pub c_jitter: f64,
    /// Monthly geometric dividend return added to price returns.
    pub dividend: f64,
    /// Annual risk-free rate in percent.
    pub riskfree_pct: f64,
    pub benchmark_cap: f64,
}

impl Default for PanelDgp {
    fn default() -> Self {
        Self {
            start: Month::new(1926, 7).expect("valid month"),
            months: 1128,
            window: 24,
            deciles: 8,
            gamma: 0.0045,
            mu: 0.0069,
            rho: 0.052,
            g_s: 0.0044,
            sigma_s: 0.0541,
            c_step: 0.6,
            c_jitter: 0.2,
            dividend: 0.003,
            riskfree_pct: 3.0,
            benchmark_cap: 5.0e4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPanel {
    pub panel: ReturnPanel,
    /// Planted `C[row][window]` for deciles `2..=deciles`.
    pub c: Vec<Vec<f64>>,
    /// Planted `Z[row][window]`.
    pub z: Vec<Vec<f64>>,
    /// Annual rate in percent, for rate-file export.
    pub rate_pct: Vec<f64>,
}

/// Generates the panel. Caps are reset at each window start so that
/// `ln(S1/Sk) = C`, then drift with price returns inside the window.
pub fn synthetic_panel(dgp: &PanelDgp, seed: u64) -> Result<SyntheticPanel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let (t, k, kw) = (dgp.months, dgp.deciles, dgp.window);
    let months: Vec<Month> = (0..t).map(|i| dgp.start.offset(i as i64)).collect();
    let mut caps = vec![vec![0.0; t]; k];
    let mut price = vec![vec![0.0; t]; k];
    let nw = t.div_ceil(kw);
    let mut c = vec![vec![0.0; nw]; k - 1];
    let mut z = vec![vec![0.0; nw]; k - 1];
    let mut ln_s1 = dgp.benchmark_cap.ln();
    for n in 0..nw {
        let r = n * kw..((n + 1) * kw).min(t);
        let len = r.len() as f64;
        for row in 0..k - 1 {
            let u = normal().tanh();
            c[row][n] = dgp.c_step * (row + 1) as f64 + dgp.c_jitter * u;
        }
        let mut ln_s: Vec<f64> = (0..k)
            .map(|col| if col == 0 { ln_s1 } else { ln_s1 - c[col - 1][n] })
            .collect();
        let mut deltas = vec![vec![0.0; r.len()]; k - 1];
        for row in 0..k - 1 {
            let d: Vec<f64> = (0..r.len()).map(|_| normal()).collect();
            // Scale so the window sum is exactly rho C Z with Z standard normal.
            let sum: f64 = d.iter().sum();
            z[row][n] = sum / len.sqrt();
            let s = dgp.rho * c[row][n] / len.sqrt();
            deltas[row] = d.iter().map(|v| s * v).collect();
        }
        for (j, i) in r.enumerate() {
            let q1 = dgp.g_s + dgp.sigma_s * normal();
            price[0][i] = q1;
            for row in 0..k - 1 {
                let cc = c[row][n];
                price[row + 1][i] = (1.0 + dgp.gamma * cc) * q1 + dgp.mu * cc / len + deltas[row][j];
            }
            for col in 0..k {
                caps[col][i] = ln_s[col].exp();
                ln_s[col] += price[col][i];
            }
        }
        ln_s1 = ln_s[0];
    }
    let total: Vec<Vec<f64>> = price
        .iter()
        .map(|col| col.iter().map(|q| q + dgp.dividend).collect())
        .collect();
    let rf = (dgp.riskfree_pct / 1200.0).ln_1p();
    let panel = ReturnPanel::new(months, (1..=k).collect(), caps, price, total, vec![rf; t])?;
    Ok(SyntheticPanel {
        panel,
        c,
        z,
        rate_pct: vec![dgp.riskfree_pct; t],
    })
}

/// Two funds regressed on a third:
/// `P_S = alpha_s + beta_s P_L + e_S`, `P_M = alpha_m + beta_m P_L + e_M`,
/// with `corr(e_S, e_M) = resid_corr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FundsDgp {
    pub months: usize,
    pub alpha_s: f64,
    pub beta_s: f64,
    pub sigma_s: f64,
    pub alpha_m: f64,
    pub beta_m: f64,
    pub sigma_m: f64,
    pub resid_corr: f64,
    pub large_mean: f64,
    pub large_sd: f64,
}

impl Default for FundsDgp {
    fn default() -> Self {
        Self {
            months: 194,
            alpha_s: 0.0,
            beta_s: 1.27,
            sigma_s: 0.026,
            alpha_m: 0.0,
            beta_m: 1.15,
            sigma_m: 0.019,
            resid_corr: 0.83,
            large_mean: 0.006,
            large_sd: 0.045,
        }
    }
}

/// Monthly equity premia of the three funds.
#[derive(Debug, Clone)]
pub struct SyntheticFunds {
    pub small: Vec<f64>,
    pub mid: Vec<f64>,
    pub large: Vec<f64>,
}

pub fn synthetic_funds(dgp: &FundsDgp, seed: u64) -> SyntheticFunds {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let q = (1.0 - dgp.resid_corr * dgp.resid_corr).max(0.0).sqrt();
    let mut out = SyntheticFunds {
        small: Vec::with_capacity(dgp.months),
        mid: Vec::with_capacity(dgp.months),
        large: Vec::with_capacity(dgp.months),
    };
    for _ in 0..dgp.months {
        let l = dgp.large_mean + dgp.large_sd * normal();
        let (u, v) = (normal(), normal());
        out.large.push(l);
        out.small.push(dgp.alpha_s + dgp.beta_s * l + dgp.sigma_s * u);
        out.mid
            .push(dgp.alpha_m + dgp.beta_m * l + dgp.sigma_m * (dgp.resid_corr * u + q * v));
    }
    out
}
