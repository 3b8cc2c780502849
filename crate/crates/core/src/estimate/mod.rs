//! Windowed beta estimation, residual construction and noise fitting.

mod diagnostics;
mod funds;
mod ols;

pub use diagnostics::{acf, jarque_bera, ljung_box, pearson, JarqueBera, LjungBox};
pub use funds::{funds_regression, FundFit, FundsReport};
pub use ols::{ols, OlsFit};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ReturnPanel;
use crate::returns::{window_count, Month, RemainderPolicy};

/// Which end of the decile range serves as the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    /// Largest decile; normalizer `C`.
    #[default]
    Top,
    /// Smallest decile kept; normalizer `sqrt|C|`.
    Bottom,
}

impl Benchmark {
    pub fn decile(self, panel: &ReturnPanel) -> usize {
        match self {
            Benchmark::Top => *panel.deciles.iter().min().expect("panel has deciles"),
            Benchmark::Bottom => *panel.deciles.iter().max().expect("panel has deciles"),
        }
    }

    pub fn form(self) -> NoiseForm {
        match self {
            Benchmark::Top => NoiseForm::Linear,
            Benchmark::Bottom => NoiseForm::SqrtAbs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    #[default]
    Price,
    Premium,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMethod {
    /// Mean of `(beta - 1) / g(C)`.
    #[default]
    MeanRatio,
    /// Least squares of `beta - 1` on `g(C)` through the origin.
    LeastSquaresOrigin,
}

/// Size normalizer `g(C)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseForm {
    Linear,
    SqrtAbs,
}

impl NoiseForm {
    pub fn apply(self, c: f64) -> f64 {
        match self {
            NoiseForm::Linear => c,
            NoiseForm::SqrtAbs => c.abs().sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NearZeroPolicy {
    #[default]
    Exclude,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateOptions {
    pub window: usize,
    pub benchmark: Benchmark,
    pub gamma_method: GammaMethod,
    /// Overrides the normalizer implied by the benchmark.
    pub form: Option<NoiseForm>,
    pub near_zero: NearZeroPolicy,
    pub near_zero_threshold: f64,
    pub ljung_box_lags: Vec<usize>,
    pub acf_max_lag: usize,
    pub remainder: RemainderPolicy,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            window: 24,
            benchmark: Benchmark::Top,
            gamma_method: GammaMethod::MeanRatio,
            form: None,
            near_zero: NearZeroPolicy::Exclude,
            near_zero_threshold: 1e-6,
            ljung_box_lags: vec![6, 12],
            acf_max_lag: 12,
            remainder: RemainderPolicy::Drop,
        }
    }
}

impl EstimateOptions {
    pub fn form(&self) -> NoiseForm {
        self.form.unwrap_or_else(|| self.benchmark.form())
    }
}

/// One decile in one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEstimate {
    pub window: usize,
    pub start_month: Month,
    pub decile: usize,
    pub beta: f64,
    pub alpha: f64,
    /// `ln(S_benchmark / S_k)` at the window's first month.
    pub c: f64,
    pub window_return: f64,
    pub benchmark_return: f64,
}

fn target_series(panel: &ReturnPanel, col: usize, target: Target) -> Vec<f64> {
    match target {
        Target::Price => panel.price_returns[col].clone(),
        Target::Premium => panel.premium(col),
    }
}

/// Per-window OLS of each non-benchmark decile on the benchmark.
/// Result is indexed `[decile row][window]`, rows in panel column order.
pub fn windowed_betas(
    panel: &ReturnPanel,
    window: usize,
    benchmark_decile: usize,
    target: Target,
    remainder: RemainderPolicy,
) -> Result<Vec<Vec<WindowEstimate>>> {
    if window == 0 {
        return Err(Error::Domain("window length must be positive".into()));
    }
    let nw = window_count(panel.len(), window, remainder)?;
    let b = panel.column(benchmark_decile)?;
    let bench = target_series(panel, b, target);
    let cols: Vec<usize> = (0..panel.deciles.len()).filter(|&c| c != b).collect();
    cols.par_iter()
        .map(|&col| {
            let y = target_series(panel, col, target);
            (0..nw)
                .map(|n| {
                    let r = n * window..(n + 1) * window;
                    let fit = ols(&bench[r.clone()], &y[r.clone()]).map_err(|e| match e {
                        Error::Singular(m) => Error::Singular(format!(
                            "decile {}, window {}: {m}",
                            panel.deciles[col],
                            n + 1
                        )),
                        other => other,
                    })?;
                    Ok(WindowEstimate {
                        window: n + 1,
                        start_month: panel.months[r.start],
                        decile: panel.deciles[col],
                        beta: fit.slope,
                        alpha: fit.intercept,
                        c: (panel.caps[b][r.start] / panel.caps[col][r.start]).ln(),
                        window_return: y[r.clone()].iter().sum(),
                        benchmark_return: bench[r].iter().sum(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

fn included(g: f64, threshold: f64, policy: NearZeroPolicy, e: &WindowEstimate) -> Result<bool> {
    if g.abs() > threshold {
        return Ok(true);
    }
    match policy {
        NearZeroPolicy::Exclude => Ok(false),
        NearZeroPolicy::Error => Err(Error::Degenerate(format!(
            "size normalizer {g:e} for decile {}, window {} is too close to zero",
            e.decile, e.window
        ))),
    }
}

/// Trend of `beta - 1` against the size normalizer.
pub fn estimate_gamma(
    ests: &[Vec<WindowEstimate>],
    form: NoiseForm,
    method: GammaMethod,
    policy: NearZeroPolicy,
    threshold: f64,
) -> Result<f64> {
    let (mut num, mut den, mut count) = (0.0, 0.0, 0usize);
    for e in ests.iter().flatten() {
        let g = form.apply(e.c);
        if !included(g, threshold, policy, e)? {
            continue;
        }
        match method {
            GammaMethod::MeanRatio => num += (e.beta - 1.0) / g,
            GammaMethod::LeastSquaresOrigin => {
                num += g * (e.beta - 1.0);
                den += g * g;
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Degenerate("no window has a usable size normalizer".into()));
    }
    Ok(match method {
        GammaMethod::MeanRatio => num / count as f64,
        GammaMethod::LeastSquaresOrigin => num / den,
    })
}

/// `window_return - (1 + gamma g(C)) benchmark_return`.
pub fn residual(window_return: f64, benchmark_return: f64, c: f64, gamma: f64, form: NoiseForm) -> f64 {
    window_return - (1.0 + gamma * form.apply(c)) * benchmark_return
}

/// Residual matrix with the shape of `ests`.
pub fn residual_series(ests: &[Vec<WindowEstimate>], gamma: f64, form: NoiseForm) -> Vec<Vec<f64>> {
    ests.iter()
        .map(|row| {
            row.iter()
                .map(|e| residual(e.window_return, e.benchmark_return, e.c, gamma, form))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseFit {
    pub gamma: f64,
    pub mu: f64,
    pub rho: f64,
    pub form: NoiseForm,
    /// Cells used in the fit.
    pub cells: usize,
    /// `(decile row, window index)` of cells dropped for a near-zero normalizer.
    pub excluded: Vec<(usize, usize)>,
    /// `[decile row][window]`; `None` for excluded cells.
    pub standardized_z: Vec<Vec<Option<f64>>>,
}

/// Fit `eps / g(C) = mu + rho Z` with sample mean and sample standard
/// deviation (`n - 1`).
pub fn fit_noise(
    gamma: f64,
    eps: &[Vec<f64>],
    c: &[Vec<f64>],
    form: NoiseForm,
    policy: NearZeroPolicy,
    threshold: f64,
) -> Result<NoiseFit> {
    if eps.len() != c.len() || eps.iter().zip(c).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::Alignment("residual and size matrices differ in shape".into()));
    }
    let mut excluded = Vec::new();
    let normalized: Vec<Vec<Option<f64>>> = eps
        .iter()
        .zip(c)
        .enumerate()
        .map(|(k, (er, cr))| {
            er.iter()
                .zip(cr)
                .enumerate()
                .map(|(n, (e, cv))| {
                    let g = form.apply(*cv);
                    if g.abs() > threshold {
                        Ok(Some(e / g))
                    } else if policy == NearZeroPolicy::Exclude {
                        excluded.push((k, n));
                        Ok(None)
                    } else {
                        Err(Error::Degenerate(format!(
                            "size normalizer {g:e} at row {k}, window {} is too close to zero",
                            n + 1
                        )))
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    if !excluded.is_empty() {
        log::warn!("{} cells excluded for near-zero size normalizer", excluded.len());
    }
    let vals: Vec<f64> = normalized.iter().flatten().flatten().copied().collect();
    if vals.len() < 2 {
        return Err(Error::Degenerate("fewer than two usable residual cells".into()));
    }
    let m = vals.len() as f64;
    let mu = vals.iter().sum::<f64>() / m;
    let rho = (vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    let scale = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !(rho > 1e-14 * scale) || rho == 0.0 {
        return Err(Error::Degenerate(format!("normalized residuals have zero spread (mu = {mu})")));
    }
    let standardized_z = normalized
        .iter()
        .map(|row| row.iter().map(|v| v.map(|x| (x - mu) / rho)).collect())
        .collect();
    Ok(NoiseFit {
        gamma,
        mu,
        rho,
        form,
        cells: vals.len(),
        excluded,
        standardized_z,
    })
}

/// Pearson correlation over cells present in both matrices.
pub fn noise_cross_correlation(a: &[Vec<Option<f64>>], b: &[Vec<Option<f64>>]) -> Result<f64> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::Alignment("noise matrices differ in shape".into()));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = a
        .iter()
        .flatten()
        .zip(b.iter().flatten())
        .filter_map(|(p, q)| Some(((*p)?, (*q)?)))
        .unzip();
    pearson(&x, &y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesDiagnostics {
    pub decile: usize,
    pub points: usize,
    pub ljung_box: Vec<LjungBox>,
    pub jarque_bera: Option<JarqueBera>,
    pub acf: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub per_decile: Vec<SeriesDiagnostics>,
    /// Normality of all standardized cells pooled.
    pub pooled_jarque_bera: Option<JarqueBera>,
}

fn diagnose(decile: usize, z: &[f64], lags: &[usize], acf_max_lag: usize) -> SeriesDiagnostics {
    SeriesDiagnostics {
        decile,
        points: z.len(),
        ljung_box: lags.iter().filter_map(|&l| ljung_box(z, l).ok()).collect(),
        jarque_bera: jarque_bera(z).ok(),
        acf: acf(z, acf_max_lag.min(z.len().saturating_sub(1))).ok(),
    }
}

/// Empirical correlation matrix of standardized noise rows, pairwise
/// over windows present in both rows.
pub fn noise_correlation(z: &[Vec<Option<f64>>]) -> Vec<Vec<Option<f64>>> {
    let k = z.len();
    let mut out = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let (x, y): (Vec<f64>, Vec<f64>) = z[i]
                .iter()
                .zip(&z[j])
                .filter_map(|(p, q)| Some(((*p)?, (*q)?)))
                .unzip();
            let r = if i == j { Some(1.0) } else { pearson(&x, &y).ok() };
            out[i][j] = r;
            out[j][i] = r;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub benchmark: Benchmark,
    pub benchmark_decile: usize,
    pub target: Target,
    pub window: usize,
    pub windows: usize,
    pub first_month: Month,
    pub last_month: Month,
    pub gamma_method: GammaMethod,
    pub deciles: Vec<usize>,
    pub estimates: Vec<Vec<WindowEstimate>>,
    pub residuals: Vec<Vec<f64>>,
    pub noise: NoiseFit,
    pub diagnostics: Diagnostics,
    pub noise_correlation: Vec<Vec<Option<f64>>>,
    /// Correlation with the other target's standardized noise, when both were run.
    pub cross_correlation: Option<f64>,
}

/// Full pipeline for one target.
pub fn estimate_panel(panel: &ReturnPanel, target: Target, opts: &EstimateOptions) -> Result<EstimationReport> {
    let bdec = opts.benchmark.decile(panel);
    let form = opts.form();
    let ests = windowed_betas(panel, opts.window, bdec, target, opts.remainder)?;
    let gamma = estimate_gamma(&ests, form, opts.gamma_method, opts.near_zero, opts.near_zero_threshold)?;
    let residuals = residual_series(&ests, gamma, form);
    let c: Vec<Vec<f64>> = ests.iter().map(|r| r.iter().map(|e| e.c).collect()).collect();
    let noise = fit_noise(gamma, &residuals, &c, form, opts.near_zero, opts.near_zero_threshold)?;
    let deciles: Vec<usize> = ests.iter().map(|r| r[0].decile).collect();
    let rows: Vec<Vec<f64>> = noise
        .standardized_z
        .iter()
        .map(|r| r.iter().flatten().copied().collect())
        .collect();
    let per_decile = deciles
        .iter()
        .zip(&rows)
        .map(|(&d, z)| diagnose(d, z, &opts.ljung_box_lags, opts.acf_max_lag))
        .collect();
    let pooled: Vec<f64> = rows.iter().flatten().copied().collect();
    let windows = ests[0].len();
    Ok(EstimationReport {
        benchmark: opts.benchmark,
        benchmark_decile: bdec,
        target,
        window: opts.window,
        windows,
        first_month: panel.months[0],
        last_month: panel.months[windows * opts.window - 1],
        gamma_method: opts.gamma_method,
        deciles,
        noise_correlation: noise_correlation(&noise.standardized_z),
        diagnostics: Diagnostics {
            per_decile,
            pooled_jarque_bera: jarque_bera(&pooled).ok(),
        },
        estimates: ests,
        residuals,
        noise,
        cross_correlation: None,
    })
}

/// Price and premium pipelines with their noise cross-correlation filled in.
pub fn run_pipeline(panel: &ReturnPanel, opts: &EstimateOptions) -> Result<(EstimationReport, EstimationReport)> {
    let (price, premium) = rayon::join(
        || estimate_panel(panel, Target::Price, opts),
        || estimate_panel(panel, Target::Premium, opts),
    );
    let (mut price, mut premium) = (price?, premium?);
    let r = noise_cross_correlation(&price.noise.standardized_z, &premium.noise.standardized_z).ok();
    price.cross_correlation = r;
    premium.cross_correlation = r;
    Ok((price, premium))
}

impl EstimationReport {
    /// Window-level CSV: one row per (decile, window).
    pub fn write_windows_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<windows csv>", e);
        writeln!(out, "decile,window,start_month,c,beta,alpha,window_return,benchmark_return,residual,z")
            .map_err(io)?;
        for (k, row) in self.estimates.iter().enumerate() {
            for (n, e) in row.iter().enumerate() {
                let z = self.noise.standardized_z[k][n].map(|v| v.to_string()).unwrap_or_default();
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    e.decile,
                    e.window,
                    e.start_month,
                    e.c,
                    e.beta,
                    e.alpha,
                    e.window_return,
                    e.benchmark_return,
                    self.residuals[k][n],
                    z
                )
                .map_err(io)?;
            }
        }
        Ok(())
    }
}
