//! Market model types and the coefficient-function algebra.
//!
//! Each of alpha, alpha*, beta and sigma is a function of the relative size
//! `c = ln(S_0 / S_k)`, described by a [`CoefficientSpec`]: one branch for
//! `c > 0` (portfolio smaller than the benchmark), one for `c < 0`, and a
//! policy for the region around zero where data gives no guidance.
//!
//! Beta is always stored as its deviation from one, so the benchmark's own
//! beta of one at `c = 0` holds structurally.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One side of a coefficient function.
///
/// Sign conventions:
/// * `linear` evaluates `scale * c` with the signed `c`;
/// * `power` evaluates `scale * |c|^exponent`, so the sign lives in `scale`;
/// * `constant` evaluates `scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Branch {
    Linear { scale: f64 },
    Power { scale: f64, exponent: f64 },
    Constant { scale: f64 },
}

impl Branch {
    pub fn eval(&self, c: f64) -> f64 {
        match *self {
            Branch::Linear { scale } => scale * c,
            Branch::Power { scale, exponent } => scale * c.abs().powf(exponent),
            Branch::Constant { scale } => scale,
        }
    }

    /// The branch as `coef * |c|^exponent` on the given side of zero.
    pub fn tail_monomial(&self, side: Side) -> (f64, f64) {
        match (*self, side) {
            (Branch::Linear { scale }, Side::Positive) => (scale, 1.0),
            (Branch::Linear { scale }, Side::Negative) => (-scale, 1.0),
            (Branch::Power { scale, exponent }, _) => (scale, exponent),
            (Branch::Constant { scale }, _) => (scale, 0.0),
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = match *self {
            Branch::Linear { scale } | Branch::Constant { scale } => scale.is_finite(),
            Branch::Power { scale, exponent } => {
                scale.is_finite() && exponent.is_finite() && exponent >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid {what} branch {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Positive,
    Negative,
}

/// How the function is defined inside `(-c_minus, c_plus)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Branch formulas extend through zero (`c >= 0` uses the positive branch).
    #[default]
    AsIs,
    /// Straight line between the branch values at `-c_minus` and `c_plus`.
    LinearBridge,
}

fn default_joint() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    pub pos: Branch,
    pub neg: Branch,
    #[serde(default)]
    pub interpolation: Interpolation,
    #[serde(default = "default_joint")]
    pub c_minus: f64,
    #[serde(default = "default_joint")]
    pub c_plus: f64,
}

impl CoefficientSpec {
    pub fn piecewise(pos: Branch, neg: Branch) -> Self {
        Self {
            pos,
            neg,
            interpolation: Interpolation::AsIs,
            c_minus: 1.0,
            c_plus: 1.0,
        }
    }

    /// `slope * c` on the whole line.
    pub fn linear(slope: f64) -> Self {
        let b = Branch::Linear { scale: slope };
        Self::piecewise(b, b)
    }

    pub fn constant(value: f64) -> Self {
        let b = Branch::Constant { scale: value };
        Self::piecewise(b, b)
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// `pos_scale * |c|^exponent` for `c >= 0`, `neg_scale * |c|^exponent` below.
    pub fn power(pos_scale: f64, neg_scale: f64, exponent: f64) -> Self {
        Self::piecewise(
            Branch::Power {
                scale: pos_scale,
                exponent,
            },
            Branch::Power {
                scale: neg_scale,
                exponent,
            },
        )
    }

    pub fn with_bridge(mut self, c_minus: f64, c_plus: f64) -> Self {
        self.interpolation = Interpolation::LinearBridge;
        self.c_minus = c_minus;
        self.c_plus = c_plus;
        self
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        self.pos.validate(what)?;
        self.neg.validate(what)?;
        if !(self.c_minus > 0.0 && self.c_plus > 0.0)
            || !self.c_minus.is_finite()
            || !self.c_plus.is_finite()
        {
            return Err(Error::Domain(format!(
                "{what}: joint region bounds must be positive, got c_minus={}, c_plus={}",
                self.c_minus, self.c_plus
            )));
        }
        Ok(())
    }

    pub fn eval(&self, c: f64) -> Result<f64> {
        if !c.is_finite() {
            return Err(Error::Domain(format!("relative size {c} is not finite")));
        }
        Ok(self.eval_unchecked(c))
    }

    pub(crate) fn eval_unchecked(&self, c: f64) -> f64 {
        match self.interpolation {
            Interpolation::AsIs => {
                if c >= 0.0 {
                    self.pos.eval(c)
                } else {
                    self.neg.eval(c)
                }
            }
            Interpolation::LinearBridge => {
                if c >= self.c_plus {
                    self.pos.eval(c)
                } else if c <= -self.c_minus {
                    self.neg.eval(c)
                } else {
                    let lo = self.neg.eval(-self.c_minus);
                    let hi = self.pos.eval(self.c_plus);
                    let w = (c + self.c_minus) / (self.c_minus + self.c_plus);
                    lo + w * (hi - lo)
                }
            }
        }
    }

    /// `Some(slope)` when the function is `slope * c` everywhere.
    pub fn as_linear(&self) -> Option<f64> {
        match (self.pos, self.neg) {
            (Branch::Linear { scale: a }, Branch::Linear { scale: b }) if a == b => Some(a),
            _ => None,
        }
    }

    /// `Some(value)` when the function is constant everywhere.
    pub fn as_constant(&self) -> Option<f64> {
        match (self.pos, self.neg) {
            (Branch::Constant { scale: a }, Branch::Constant { scale: b }) if a == b => Some(a),
            _ => None,
        }
    }
}

/// Correlation structure of the idiosyncratic Brownian motions `W_1..W_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseCorrelation {
    Identity,
    /// Unit diagonal, every off-diagonal entry equal.
    Equicorrelated(f64),
    Matrix(Vec<Vec<f64>>),
}

impl NoiseCorrelation {
    pub fn to_matrix(&self, n: usize) -> DMatrix<f64> {
        match self {
            NoiseCorrelation::Identity => DMatrix::identity(n, n),
            NoiseCorrelation::Equicorrelated(r) => {
                DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { *r })
            }
            NoiseCorrelation::Matrix(rows) => DMatrix::from_fn(n, n, |i, j| rows[i][j]),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            NoiseCorrelation::Identity => Ok(()),
            NoiseCorrelation::Equicorrelated(r) => {
                let lower = if n > 1 { -1.0 / (n as f64 - 1.0) } else { -1.0 };
                if r.is_finite() && *r <= 1.0 && *r >= lower {
                    Ok(())
                } else {
                    Err(Error::Factorization(format!(
                        "equicorrelation {r} is not positive semidefinite for n = {n}"
                    )))
                }
            }
            NoiseCorrelation::Matrix(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Domain(format!("noise correlation must be {n}x{n}")));
                }
                for i in 0..n {
                    if (rows[i][i] - 1.0).abs() > 1e-12 {
                        return Err(Error::Domain(format!(
                            "noise correlation diagonal entry {i} is {}, expected 1",
                            rows[i][i]
                        )));
                    }
                    for j in 0..i {
                        if !rows[i][j].is_finite() || (rows[i][j] - rows[j][i]).abs() > 1e-12 {
                            return Err(Error::Domain(format!(
                                "noise correlation is not symmetric at ({i}, {j})"
                            )));
                        }
                    }
                }
                let eig = SymmetricEigen::new(self.to_matrix(n));
                let min = eig.eigenvalues.min();
                if min < -1e-10 * n as f64 {
                    return Err(Error::Factorization(format!(
                        "noise correlation is not positive semidefinite (min eigenvalue {min:e})"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Serializable parameter set; [`MarketModel`] is its validated form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketModelParams {
    pub n: usize,
    pub alpha: CoefficientSpec,
    pub alpha_star: CoefficientSpec,
    /// Deviation of beta from one.
    pub beta: CoefficientSpec,
    pub sigma: CoefficientSpec,
    pub g_s: f64,
    pub g_v: f64,
    pub sigma_s: f64,
    pub sigma_v: f64,
    pub rho_0: f64,
    pub noise_correlation: NoiseCorrelation,
}

/// `n` portfolios plus a benchmark: coefficient functions, the benchmark's
/// two-dimensional log-Brownian dynamics and the idiosyncratic correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarketModelParams", into = "MarketModelParams")]
pub struct MarketModel {
    params: MarketModelParams,
}

/// Coefficient values at one relative size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub alpha: f64,
    pub alpha_star: f64,
    pub beta: f64,
    pub sigma: f64,
}

impl MarketModel {
    pub fn new(params: MarketModelParams) -> Result<Self> {
        if params.n == 0 {
            return Err(Error::Domain("model needs at least one portfolio".into()));
        }
        params.alpha.validate("alpha")?;
        params.alpha_star.validate("alpha_star")?;
        params.beta.validate("beta")?;
        params.sigma.validate("sigma")?;
        for (name, v) in [("g_s", params.g_s), ("g_v", params.g_v)] {
            if !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be finite")));
            }
        }
        for (name, v) in [("sigma_s", params.sigma_s), ("sigma_v", params.sigma_v)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(params.rho_0.abs() <= 1.0) {
            return Err(Error::Domain(format!("rho_0 = {} outside [-1, 1]", params.rho_0)));
        }
        params.noise_correlation.validate(params.n)?;
        Ok(Self { params })
    }

    /// The linear family `alpha = mu c`, `beta = 1 + gamma c`, `sigma = rho`
    /// with independent idiosyncratic noise. The wealth side mirrors the size
    /// side (`alpha* = alpha`, `g_V = g_S`, `sigma_V = sigma_S`, `rho_0 = 1`);
    /// override through [`MarketModel::params`] when dividends matter.
    pub fn linear_case(n: usize, mu: f64, gamma: f64, rho: f64, g_s: f64, sigma_s: f64) -> Result<Self> {
        Self::new(MarketModelParams {
            n,
            alpha: CoefficientSpec::linear(mu),
            alpha_star: CoefficientSpec::linear(mu),
            beta: CoefficientSpec::linear(gamma),
            sigma: CoefficientSpec::constant(rho),
            g_s,
            g_v: g_s,
            sigma_s,
            sigma_v: sigma_s,
            rho_0: 1.0,
            noise_correlation: NoiseCorrelation::Identity,
        })
    }

    pub fn params(&self) -> &MarketModelParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn g_s(&self) -> f64 {
        self.params.g_s
    }

    pub fn g_v(&self) -> f64 {
        self.params.g_v
    }

    pub fn sigma_s(&self) -> f64 {
        self.params.sigma_s
    }

    pub fn sigma_v(&self) -> f64 {
        self.params.sigma_v
    }

    pub fn rho_0(&self) -> f64 {
        self.params.rho_0
    }

    pub fn noise_correlation(&self) -> &NoiseCorrelation {
        &self.params.noise_correlation
    }

    pub fn sigma_w(&self) -> DMatrix<f64> {
        self.params.noise_correlation.to_matrix(self.params.n)
    }

    /// `(mu, gamma, rho)` when the model is the linear family.
    pub fn linear_parameters(&self) -> Option<(f64, f64, f64)> {
        Some((
            self.params.alpha.as_linear()?,
            self.params.beta.as_linear()?,
            self.params.sigma.as_constant()?,
        ))
    }

    /// alpha, alpha*, beta (not the deviation) and sigma at `c`; sigma is
    /// reported as a magnitude.
    pub fn eval(&self, c: f64) -> Result<Coefficients> {
        if !c.is_finite() {
            return Err(Error::Domain(format!("relative size {c} is not finite")));
        }
        Ok(self.eval_unchecked(c))
    }

    pub(crate) fn eval_unchecked(&self, c: f64) -> Coefficients {
        let p = &self.params;
        Coefficients {
            alpha: p.alpha.eval_unchecked(c),
            alpha_star: p.alpha_star.eval_unchecked(c),
            beta: 1.0 + p.beta.eval_unchecked(c),
            sigma: p.sigma.eval_unchecked(c).abs(),
        }
    }

    /// Drift of the reduced relative-size SDE: `-alpha(c) + g_S (1 - beta(c))`.
    pub fn drift_tilde(&self, c: f64) -> Result<f64> {
        let k = self.eval(c)?;
        Ok(-k.alpha + self.params.g_s * (1.0 - k.beta))
    }

    /// Squared diffusion of the reduced relative-size SDE:
    /// `sigma_S^2 (1 - beta(c))^2 + sigma(c)^2`.
    pub fn diffusion_tilde_sq(&self, c: f64) -> Result<f64> {
        let k = self.eval(c)?;
        let s = self.params.sigma_s * (1.0 - k.beta);
        Ok(s * s + k.sigma * k.sigma)
    }

    /// Drift and squared diffusion of `ln V_k`:
    /// `(alpha*(c) + g_V beta(c), sigma_V^2 beta(c)^2 + sigma(c)^2)`.
    pub fn wealth_drift_diffusion(&self, c: f64) -> Result<(f64, f64)> {
        let k = self.eval(c)?;
        let p = &self.params;
        let v = p.sigma_v * k.beta;
        Ok((k.alpha_star + p.g_v * k.beta, v * v + k.sigma * k.sigma))
    }
}

impl TryFrom<MarketModelParams> for MarketModel {
    type Error = Error;

    fn try_from(params: MarketModelParams) -> Result<Self> {
        MarketModel::new(params)
    }
}

impl From<MarketModel> for MarketModelParams {
    fn from(m: MarketModel) -> Self {
        m.params
    }
}

/// Relative sizes `C_k = ln(m_0 / m_k)`, `k = 1..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeSizeVector(Vec<f64>);

impl RelativeSizeVector {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("relative sizes must be finite".into()));
        }
        Ok(Self(c))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Map market weights `(m_0, ..., m_n)` on the open simplex to relative sizes.
pub fn phi_map(weights: &[f64]) -> Result<RelativeSizeVector> {
    if weights.len() < 2 {
        return Err(Error::Domain("need the benchmark and at least one portfolio".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::Domain(format!("market weight {w} is not strictly positive")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("market weights sum to {total}, not 1")));
    }
    let ln_m0 = weights[0].ln();
    RelativeSizeVector::new(weights[1..].iter().map(|m| ln_m0 - m.ln()).collect())
}

/// Inverse of [`phi_map`]: `m_0 = 1 / (1 + sum_k e^{-C_k})`, `m_k = m_0 e^{-C_k}`.
pub fn phi_inverse(c: &RelativeSizeVector) -> Vec<f64> {
    weights_from_relative_sizes(c.as_slice())
}

pub(crate) fn weights_from_relative_sizes(c: &[f64]) -> Vec<f64> {
    // log-sum-exp over (0, -c_1, ..., -c_n)
    let max = c.iter().map(|v| -v).fold(0.0_f64, f64::max);
    let sum = (-max).exp() + c.iter().map(|v| (-v - max).exp()).sum::<f64>();
    let log_norm = max + sum.ln();
    std::iter::once(-log_norm)
        .chain(c.iter().map(|v| -v - log_norm))
        .map(f64::exp)
        .collect()
}

/// Parameter sets fitted to the decile data.
pub mod presets {
    use super::*;

    /// Top-decile benchmark, price returns: `gamma = 0.0045, mu = 0.0069, rho = 0.052`.
    pub const TOP_PRICE: (f64, f64, f64) = (0.0045, 0.0069, 0.052);
    /// Top-decile benchmark, equity premia (gamma stored as reported).
    pub const TOP_PREMIUM: (f64, f64, f64) = (0.045, 0.0017, 0.052);
    /// Bottom (8th) decile benchmark, price returns.
    pub const BOTTOM_PRICE: (f64, f64, f64) = (0.12, 0.0055, 0.090);
    /// Bottom (8th) decile benchmark, equity premia.
    pub const BOTTOM_PREMIUM: (f64, f64, f64) = (0.12, 0.0024, 0.088);
    /// Monthly log drift and volatility of the top-decile benchmark.
    pub const G_S: f64 = 0.0044;
    pub const SIGMA_S: f64 = 0.0541;

    /// Which functional form to use for beta on the `c < 0` side.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum NegativeBeta {
        /// `1 + gamma sqrt(|c|)`, as fitted against the bottom benchmark.
        SqrtAbs,
        /// `1 + gamma c`, the linear form.
        Linear,
    }

    /// Top-benchmark price fit on the whole line:
    /// `alpha = mu c`, `beta = 1 + gamma c`, `sigma = rho c`.
    pub fn top_benchmark_price() -> (CoefficientSpec, CoefficientSpec, CoefficientSpec) {
        let (gamma, mu, rho) = TOP_PRICE;
        (
            CoefficientSpec::linear(mu),
            CoefficientSpec::linear(gamma),
            CoefficientSpec::linear(rho),
        )
    }

    /// Bottom-benchmark price fit on the whole line:
    /// `alpha = -mu sqrt|c|`, `beta = 1 + gamma sqrt|c|` (or `1 + gamma c`),
    /// `sigma = rho sqrt|c|`.
    pub fn bottom_benchmark_price(beta_form: NegativeBeta) -> (CoefficientSpec, CoefficientSpec, CoefficientSpec) {
        let (gamma, mu, rho) = BOTTOM_PRICE;
        let beta = match beta_form {
            NegativeBeta::SqrtAbs => CoefficientSpec::power(gamma, gamma, 0.5),
            NegativeBeta::Linear => CoefficientSpec::linear(gamma),
        };
        (CoefficientSpec::power(-mu, -mu, 0.5), beta, CoefficientSpec::power(rho, rho, 0.5))
    }

    /// Two-regime price model: the top-benchmark fit for `c > 0` and the
    /// bottom-benchmark fit for `c < 0`.
    pub fn two_regime_price(beta_form: NegativeBeta) -> (CoefficientSpec, CoefficientSpec, CoefficientSpec) {
        let (top_a, top_b, top_s) = top_benchmark_price();
        let (bot_a, bot_b, bot_s) = bottom_benchmark_price(beta_form);
        let join = |top: CoefficientSpec, bot: CoefficientSpec| CoefficientSpec::piecewise(top.pos, bot.neg);
        (join(top_a, bot_a), join(top_b, bot_b), join(top_s, bot_s))
    }

    /// The linear model used for capital distribution curves:
    /// `mu = 0.0069, gamma = 0.0045, rho = 0.1, g_S = 0.0044, sigma_S = 0.0541`.
    pub fn curve_model(n: usize) -> Result<MarketModel> {
        MarketModel::linear_case(n, TOP_PRICE.1, TOP_PRICE.0, 0.1, G_S, SIGMA_S)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model_with(alpha: CoefficientSpec, beta: CoefficientSpec, sigma: CoefficientSpec) -> MarketModel {
        MarketModel::new(MarketModelParams {
            n: 3,
            alpha,
            alpha_star: alpha,
            beta,
            sigma,
            g_s: presets::G_S,
            g_v: 0.005,
            sigma_s: presets::SIGMA_S,
            sigma_v: 0.04,
            rho_0: 0.5,
            noise_correlation: NoiseCorrelation::Identity,
        })
        .unwrap()
    }

    // Independent scalar evaluator for the checks below.
    fn hand_eval(branch_pos: (&str, f64, f64), branch_neg: (&str, f64, f64), c: f64) -> f64 {
        let (kind, scale, p) = if c >= 0.0 { branch_pos } else { branch_neg };
        match kind {
            "linear" => scale * c,
            "power" => scale * c.abs().powf(p),
            _ => scale,
        }
    }

    #[test]
    fn linear_top_fit_at_unit_size() {
        let m = model_with(
            CoefficientSpec::linear(0.0069),
            CoefficientSpec::linear(0.0045),
            CoefficientSpec::constant(0.052),
        );
        let k = m.eval(1.0).unwrap();
        assert!((k.alpha - 0.0069).abs() < 1e-15);
        assert!((k.beta - 1.0045).abs() < 1e-15);
        assert!((k.sigma - 0.052).abs() < 1e-15);
    }

    #[test]
    fn as_is_vanishes_at_zero() {
        let (a, b, s) = presets::bottom_benchmark_price(presets::NegativeBeta::SqrtAbs);
        let k = model_with(a, b, s).eval(0.0).unwrap();
        assert_eq!((k.alpha, k.beta, k.sigma), (0.0, 1.0, 0.0));
        let (a, b, s) = presets::top_benchmark_price();
        let k = model_with(a, b, s).eval(0.0).unwrap();
        assert_eq!((k.alpha, k.beta, k.sigma), (0.0, 1.0, 0.0));
    }

    #[test]
    fn bottom_power_fit_at_minus_four() {
        let (a, b, s) = presets::bottom_benchmark_price(presets::NegativeBeta::SqrtAbs);
        let k = model_with(a, b, s).eval(-4.0).unwrap();
        assert!((k.beta - 1.24).abs() < 1e-15);
        assert!((k.alpha - -0.011).abs() < 1e-15);
        assert!((k.sigma - 0.18).abs() < 1e-15);
        let beta = 1.0 + hand_eval(("power", 0.12, 0.5), ("power", 0.12, 0.5), -4.0);
        assert!((k.beta - beta).abs() < 1e-15);
        let alpha = hand_eval(("power", -0.0055, 0.5), ("power", -0.0055, 0.5), -4.0);
        assert!((k.alpha - alpha).abs() < 1e-15);
    }

    #[test]
    fn non_finite_size_is_domain_error() {
        let m = presets::curve_model(2).unwrap();
        assert!(matches!(m.eval(f64::NAN), Err(Error::Domain(_))));
        assert!(m.drift_tilde(f64::INFINITY).is_err());
    }

    #[test]
    fn reduced_drift_values() {
        let m = model_with(
            CoefficientSpec::linear(0.0069),
            CoefficientSpec::linear(0.0045),
            CoefficientSpec::constant(0.052),
        );
        assert!((m.drift_tilde(1.0).unwrap() - -0.0069198).abs() < 1e-15);
        assert_eq!(m.drift_tilde(0.0).unwrap(), 0.0);
        let flat = model_with(CoefficientSpec::zero(), CoefficientSpec::zero(), CoefficientSpec::constant(0.1));
        for c in [-3.0, 0.0, 2.5] {
            assert_eq!(flat.drift_tilde(c).unwrap(), 0.0);
            assert!((flat.diffusion_tilde_sq(c).unwrap() - 0.01).abs() < 1e-16);
        }
    }

    #[test]
    fn reduced_diffusion_values() {
        let m = model_with(
            CoefficientSpec::linear(0.0069),
            CoefficientSpec::linear(0.0045),
            CoefficientSpec::constant(0.052),
        );
        let expected = (0.0541_f64 * 0.0045).powi(2) + 0.052_f64.powi(2);
        assert!((m.diffusion_tilde_sq(1.0).unwrap() - expected).abs() < 1e-18);
        assert!((expected - 0.0027040592679025).abs() < 1e-15);
        let (a, b, s) = presets::top_benchmark_price();
        assert_eq!(model_with(a, b, s).diffusion_tilde_sq(0.0).unwrap(), 0.0);
    }

    #[test]
    fn wealth_coefficients() {
        let m = model_with(CoefficientSpec::zero(), CoefficientSpec::zero(), CoefficientSpec::constant(0.1));
        let (g, s2) = m.wealth_drift_diffusion(1.7).unwrap();
        assert_eq!(g, 0.005);
        assert!((s2 - (0.04 * 0.04 + 0.01)).abs() < 1e-16);

        let (a, b, s) = presets::top_benchmark_price();
        let (g, s2) = model_with(a, b, s).wealth_drift_diffusion(0.0).unwrap();
        assert_eq!(g, 0.005);
        assert!((s2 - 0.04 * 0.04).abs() < 1e-18);

        let premium = model_with(CoefficientSpec::linear(0.0017), CoefficientSpec::linear(0.0045), s);
        let mut p = premium.params().clone();
        p.alpha_star = CoefficientSpec::linear(0.0017);
        let (g, _) = MarketModel::new(p).unwrap().wealth_drift_diffusion(2.0).unwrap();
        assert!((g - 0.008445).abs() < 1e-15);
    }

    #[test]
    fn bridge_is_continuous() {
        let spec = CoefficientSpec::piecewise(
            Branch::Linear { scale: 0.0069 },
            Branch::Power { scale: -0.0055, exponent: 0.5 },
        )
        .with_bridge(0.5, 1.0);
        let lo = spec.eval(-0.5).unwrap();
        let hi = spec.eval(1.0).unwrap();
        assert!((lo - -0.0055 * 0.5_f64.sqrt()).abs() < 1e-15);
        assert!((hi - 0.0069).abs() < 1e-15);
        let eps = 1e-9;
        assert!((spec.eval(-0.5 - eps).unwrap() - lo).abs() < 1e-9);
        assert!((spec.eval(1.0 + eps).unwrap() - hi).abs() < 1e-9);
        let mid = spec.eval(0.25).unwrap();
        assert!((mid - (lo + 0.5 * (hi - lo))).abs() < 1e-15);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = presets::curve_model(3).unwrap().params().clone();
        p.rho_0 = 1.5;
        assert!(MarketModel::new(p.clone()).is_err());
        p.rho_0 = 0.0;
        p.sigma_s = -0.1;
        assert!(MarketModel::new(p.clone()).is_err());
        p.sigma_s = 0.1;
        p.noise_correlation = NoiseCorrelation::Matrix(vec![
            vec![1.0, 0.9, -0.9],
            vec![0.9, 1.0, 0.9],
            vec![-0.9, 0.9, 1.0],
        ]);
        assert!(matches!(MarketModel::new(p.clone()), Err(Error::Factorization(_))));
        p.noise_correlation = NoiseCorrelation::Equicorrelated(-0.6);
        assert!(MarketModel::new(p.clone()).is_err());
        p.noise_correlation = NoiseCorrelation::Equicorrelated(0.3);
        assert!(MarketModel::new(p.clone()).is_ok());
        p.beta.pos = Branch::Power { scale: 1.0, exponent: -0.5 };
        assert!(MarketModel::new(p).is_err());
    }

    #[test]
    fn model_round_trips_through_toml() {
        let m = presets::curve_model(4).unwrap();
        let text = toml::to_string(&m).unwrap();
        let back: MarketModel = toml::from_str(&text).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn phi_examples() {
        let c = phi_map(&[0.5, 0.25, 0.25]).unwrap();
        for v in c.as_slice() {
            assert!((v - 2.0_f64.ln()).abs() < 1e-15);
        }
        let uniform = vec![0.25; 4];
        assert!(phi_map(&uniform).unwrap().as_slice().iter().all(|v| v.abs() < 1e-15));
        let back = phi_inverse(&RelativeSizeVector::new(vec![0.0; 3]).unwrap());
        assert!(back.iter().all(|w| (w - 0.25).abs() < 1e-15));
        assert!(phi_map(&[0.5, 0.5, 0.0]).is_err());
        assert!(phi_map(&[0.6, 0.6, -0.2]).is_err());
    }

    proptest! {
        #[test]
        fn phi_round_trip(raw in prop::collection::vec(0.01f64..10.0, 2..12)) {
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let back = phi_inverse(&phi_map(&w).unwrap());
            for (a, b) in w.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn diffusions_dominate_sigma(c in -50.0f64..50.0) {
            let (a, b, s) = presets::two_regime_price(presets::NegativeBeta::SqrtAbs);
            let m = model_with(a, b, s);
            let sig = m.eval(c).unwrap().sigma;
            prop_assert!(sig >= 0.0);
            prop_assert!(m.diffusion_tilde_sq(c).unwrap() >= sig * sig);
            prop_assert!(m.wealth_drift_diffusion(c).unwrap().1 >= sig * sig);
        }

        #[test]
        fn linear_drift_identity(c in -100.0f64..100.0, mu in -0.1f64..0.1, gamma in -0.1f64..0.1, g in -0.05f64..0.05) {
            let m = MarketModel::linear_case(1, mu, gamma, 0.1, g, 0.05).unwrap();
            let lhs = m.drift_tilde(c).unwrap();
            let rhs = -(mu + g * gamma) * c;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }
}
