//! Market weights, capital distribution curves, stability verdicts and
//! stationary densities of the relative-size diffusion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{ols, pearson};
use crate::model::{phi_inverse, Branch, MarketModel, RelativeSizeVector, Side};
use crate::simulate::SimulationEnsemble;

/// `mu_i = S_i / sum_j S_j`.
pub fn market_weights(caps: &[f64]) -> Result<Vec<f64>> {
    if caps.is_empty() {
        return Err(Error::Domain("no capitalizations".into()));
    }
    if let Some(c) = caps.iter().find(|c| !(**c > 0.0) || !c.is_finite()) {
        return Err(Error::Domain(format!("capitalization {c} is not positive")));
    }
    let total: f64 = caps.iter().sum();
    Ok(caps.iter().map(|c| c / total).collect())
}

/// Weights `(mu_0, ..., mu_n)` from relative sizes.
pub fn weights_from_sizes(c: &[f64]) -> Result<Vec<f64>> {
    Ok(phi_inverse(&RelativeSizeVector::new(c.to_vec())?))
}

/// `max_i |mu_i - 1/(n+1)|` over all `n + 1` weights.
pub fn max_weight_deviation(c: &[f64]) -> Result<f64> {
    let w = weights_from_sizes(c)?;
    let u = 1.0 / w.len() as f64;
    Ok(w.iter().map(|m| (m - u).abs()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    /// `(ln k, C_(k))`, sizes ascending, `k = 1..n`.
    #[default]
    Modified,
    /// `(ln r, ln mu_(r))`, weights descending, `r = 1..n+1` (benchmark included).
    Classical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveFit {
    pub rank_lo: usize,
    pub rank_hi: usize,
    pub slope: f64,
    pub intercept: f64,
    pub pearson_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSnapshot {
    pub t: f64,
    pub kind: CurveKind,
    /// `(ln rank, value)` in rank order.
    pub points: Vec<(f64, f64)>,
    pub fit: CurveFit,
}

/// Ranks the state and fits a line over ranks `fit_range` (1-based,
/// inclusive, clipped to the available ranks). Ties keep index order.
pub fn curve_snapshot(t: f64, c: &[f64], kind: CurveKind, fit_range: (usize, usize)) -> Result<CurveSnapshot> {
    if c.len() < 2 {
        return Err(Error::Domain(format!("need at least 2 portfolios, got {}", c.len())));
    }
    let values: Vec<f64> = match kind {
        CurveKind::Modified => {
            let mut v = c.to_vec();
            v.sort_by(|a, b| a.total_cmp(b));
            v
        }
        CurveKind::Classical => {
            let mut w = weights_from_sizes(c)?;
            w.sort_by(|a, b| b.total_cmp(a));
            w.into_iter().map(f64::ln).collect()
        }
    };
    let points: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .map(|(i, v)| (((i + 1) as f64).ln(), *v))
        .collect();
    let lo = fit_range.0.max(1);
    let hi = fit_range.1.min(points.len());
    if hi < lo || hi + 1 - lo < 3 {
        return Err(Error::Domain(format!(
            "fit range {:?} leaves fewer than 3 of {} ranks",
            fit_range,
            points.len()
        )));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = points[lo - 1..hi].iter().copied().unzip();
    let f = ols(&x, &y)?;
    let pearson_r = match pearson(&x, &y) {
        Ok(r) => r,
        Err(Error::Degenerate(_)) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(CurveSnapshot {
        t,
        kind,
        points,
        fit: CurveFit {
            rank_lo: lo,
            rank_hi: hi,
            slope: f.slope,
            intercept: f.intercept,
            pearson_r,
        },
    })
}

impl CurveSnapshot {
    /// `rank,ln_rank,value`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<curve csv>", e);
        writeln!(out, "rank,ln_rank,value").map_err(io)?;
        for (i, (lx, v)) in self.points.iter().enumerate() {
            writeln!(out, "{},{lx},{v}", i + 1).map_err(io)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    Yes,
    No,
    Inconclusive,
}

/// Leading behaviour of `h(c) = alpha(c) + g_S (beta(c) - 1)` on one tail,
/// `h ~ coefficient |c|^exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCondition {
    pub side: Side,
    pub coefficient: f64,
    pub exponent: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub stable: Stability,
    pub method: String,
    /// Minimum of `h` over the outer decade of the positive probe range.
    pub liminf_pos: f64,
    /// Maximum of `h` over the outer decade of the negative probe range.
    pub limsup_neg: f64,
    /// `mu + g_S gamma` when alpha and beta are linear.
    pub gamma_cap: Option<f64>,
    pub detail: Vec<TailCondition>,
}

const PROBES: usize = 41;

fn outer_decade(edge: f64) -> impl Iterator<Item = f64> {
    (0..PROBES).map(move |i| edge * 10f64.powf(-(i as f64) / (PROBES - 1) as f64))
}

fn probe_extrema(h: &dyn Fn(f64) -> f64, range: (f64, f64)) -> (f64, f64, bool, bool) {
    let pos: Vec<f64> = outer_decade(range.1).map(h).collect();
    let neg: Vec<f64> = outer_decade(range.0).map(h).collect();
    let liminf = pos.iter().copied().fold(f64::INFINITY, f64::min);
    let limsup = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let uniform = |v: &[f64]| v.iter().all(|x| *x > 0.0) || v.iter().all(|x| *x < 0.0);
    (liminf, limsup, uniform(&pos), uniform(&neg))
}

fn check_range(range: (f64, f64)) -> Result<()> {
    if !(range.0 <= -50.0 && range.1 >= 50.0) || !range.0.is_finite() || !range.1.is_finite() {
        return Err(Error::Domain(format!("probe range {range:?} must contain [-50, 50]")));
    }
    Ok(())
}

/// Sum of monomials `coef |c|^exp` reduced to its leading term.
fn leading(terms: &[(f64, f64)]) -> (f64, f64) {
    let mut exps: Vec<f64> = terms.iter().filter(|t| t.0 != 0.0).map(|t| t.1).collect();
    exps.sort_by(|a, b| b.total_cmp(a));
    exps.dedup();
    for e in exps {
        let coef: f64 = terms.iter().filter(|t| t.1 == e).map(|t| t.0).sum();
        if coef != 0.0 {
            return (coef, e);
        }
    }
    (0.0, 0.0)
}

fn branch(spec: &crate::model::CoefficientSpec, side: Side) -> Branch {
    match side {
        Side::Positive => spec.pos,
        Side::Negative => spec.neg,
    }
}

/// Checks `liminf_{c->+inf} h > 0` and `limsup_{c->-inf} h < 0`.
///
/// Every branch kind is a monomial in `|c|`, so the tails are decided exactly
/// from the leading monomial; the probe values are reported alongside.
pub fn stability_check(model: &MarketModel, probe_range: (f64, f64)) -> Result<StabilityVerdict> {
    check_range(probe_range)?;
    let p = model.params();
    let g_s = p.g_s;
    let h = |c: f64| {
        let k = model.eval_unchecked(c);
        k.alpha + g_s * (k.beta - 1.0)
    };
    let (liminf_pos, limsup_neg, _, _) = probe_extrema(&h, probe_range);
    let detail: Vec<TailCondition> = [Side::Positive, Side::Negative]
        .into_iter()
        .map(|side| {
            let (a, ea) = branch(&p.alpha, side).tail_monomial(side);
            let (b, eb) = branch(&p.beta, side).tail_monomial(side);
            let (coefficient, exponent) = leading(&[(a, ea), (g_s * b, eb)]);
            let satisfied = match side {
                Side::Positive => coefficient > 0.0,
                Side::Negative => coefficient < 0.0,
            };
            TailCondition { side, coefficient, exponent, satisfied }
        })
        .collect();
    let gamma_cap = match (p.alpha.as_linear(), p.beta.as_linear()) {
        (Some(mu), Some(gamma)) => Some(mu + g_s * gamma),
        _ => None,
    };
    let stable = if detail.iter().all(|d| d.satisfied) { Stability::Yes } else { Stability::No };
    Ok(StabilityVerdict {
        stable,
        method: if gamma_cap.is_some() { "linear" } else { "monomial-tails" }.into(),
        liminf_pos,
        limsup_neg,
        gamma_cap,
        detail,
    })
}

/// Probe-only check for an arbitrary `h`: signs over the outer decade of
/// each side must be uniform, otherwise the verdict is inconclusive.
pub fn stability_check_fn(h: impl Fn(f64) -> f64, probe_range: (f64, f64)) -> Result<StabilityVerdict> {
    check_range(probe_range)?;
    let (liminf_pos, limsup_neg, upos, uneg) = probe_extrema(&h, probe_range);
    let stable = if !(upos && uneg) || !liminf_pos.is_finite() || !limsup_neg.is_finite() {
        Stability::Inconclusive
    } else if liminf_pos > 0.0 && limsup_neg < 0.0 {
        Stability::Yes
    } else {
        Stability::No
    };
    Ok(StabilityVerdict {
        stable,
        method: "probe".into(),
        liminf_pos,
        limsup_neg,
        gamma_cap: None,
        detail: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDensity {
    pub grid: Vec<f64>,
    /// `s'(c)` with `s'` equal to 1 at the grid point nearest zero.
    pub s_prime: Vec<f64>,
    pub density: Vec<f64>,
    /// Trapezoid integral of `1 / (s' sigma~^2)` before normalization.
    pub normalization_constant: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Uniform grid from `lo` to `hi` (inclusive) with spacing close to `step`.
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(hi > lo) || !(step > 0.0) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Domain(format!("bad grid [{lo}, {hi}] with step {step}")));
    }
    let m = ((hi - lo) / step).round().max(2.0) as usize;
    let h = (hi - lo) / m as f64;
    Ok((0..=m).map(|i| if i == m { hi } else { lo + i as f64 * h }).collect())
}

fn trapezoid(h: f64, y: &[f64]) -> f64 {
    let inner: f64 = y[1..y.len() - 1].iter().sum();
    h * (inner + 0.5 * (y[0] + y[y.len() - 1]))
}

/// Default lower bound on `sigma~^2` over the grid.
pub const DIFFUSION_FLOOR: f64 = 1e-12;

pub fn stationary_density(model: &MarketModel, grid: &[f64]) -> Result<StationaryDensity> {
    stationary_density_from(
        |c| model.drift_tilde(c).unwrap_or(f64::NAN),
        |c| model.diffusion_tilde_sq(c).unwrap_or(f64::NAN),
        grid,
        DIFFUSION_FLOOR,
    )
}

/// Normalized speed density `1 / (s'(c) sigma~^2(c))` with
/// `s'(c) = exp(-2 int_0^c drift / diff_sq)` by cumulative trapezoid.
pub fn stationary_density_from(
    drift: impl Fn(f64) -> f64,
    diff_sq: impl Fn(f64) -> f64,
    grid: &[f64],
    floor: f64,
) -> Result<StationaryDensity> {
    let m = grid.len();
    if m < 3 {
        return Err(Error::Domain("grid needs at least 3 points".into()));
    }
    let h = (grid[m - 1] - grid[0]) / (m - 1) as f64;
    if !(h > 0.0) || grid.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0)) {
        return Err(Error::Domain("grid must be uniform and increasing".into()));
    }
    let d2: Vec<f64> = grid.iter().map(|&c| diff_sq(c)).collect();
    if let Some(i) = d2.iter().position(|v| !(*v >= floor)) {
        return Err(Error::Degenerate(format!(
            "diffusion coefficient squared {:e} at c = {} is below {floor:e}; the stationary law needs sigma bounded away from zero",
            d2[i], grid[i]
        )));
    }
    let f: Vec<f64> = grid.iter().zip(&d2).map(|(&c, s)| 2.0 * drift(c) / s).collect();
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("drift is not finite on the grid".into()));
    }
    // E(c) = int f, so s' = exp(-E), log density = E - ln sigma~^2.
    let mut e = vec![0.0; m];
    for i in 1..m {
        e[i] = e[i - 1] + 0.5 * h * (f[i - 1] + f[i]);
    }
    let zero = grid
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    let e0 = e[zero];
    e.iter_mut().for_each(|v| *v -= e0);
    let log_dens: Vec<f64> = e.iter().zip(&d2).map(|(ei, s)| ei - s.ln()).collect();
    let peak = log_dens.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_dens.iter().map(|l| (l - peak).exp()).collect();
    let edge = raw[0].max(raw[m - 1]);
    if edge >= 1e-8 {
        return Err(Error::Coverage(format!(
            "density at the grid boundary is {edge:e} of its peak; widen the grid (or the law is not normalizable)"
        )));
    }
    let mass = trapezoid(h, &raw);
    let density: Vec<f64> = raw.iter().map(|v| v / mass).collect();
    let mean = trapezoid(h, &grid.iter().zip(&density).map(|(c, p)| c * p).collect::<Vec<_>>());
    let variance = trapezoid(
        h,
        &grid.iter().zip(&density).map(|(c, p)| (c - mean).powi(2) * p).collect::<Vec<_>>(),
    );
    Ok(StationaryDensity {
        grid: grid.to_vec(),
        s_prime: e.iter().map(|v| (-v).exp()).collect(),
        density,
        normalization_constant: mass * peak.exp(),
        mean,
        variance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub variance: f64,
    /// Quantiles at 5, 25, 50, 75 and 95 percent.
    pub quantiles: [f64; 5],
}

fn summarize(mut v: Vec<f64>) -> Summary {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    let variance = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    v.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let (i, frac) = (pos.floor() as usize, pos.fract());
        if i + 1 < v.len() {
            v[i] + frac * (v[i + 1] - v[i])
        } else {
            v[i]
        }
    };
    Summary {
        mean,
        variance,
        quantiles: [q(0.05), q(0.25), q(0.5), q(0.75), q(0.95)],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailStats {
    pub t_from: f64,
    pub t_to: f64,
    pub points: usize,
    /// Weights `mu_0 ..= mu_n`.
    pub weights: Vec<Summary>,
    /// Sizes `C_1 ..= C_n`.
    pub sizes: Vec<Summary>,
}

fn tail_indices(ens: &SimulationEnsemble, t_from: f64, t_to: f64) -> Vec<usize> {
    let tol = 1e-9 * t_to.abs().max(1.0);
    (0..ens.times.len())
        .filter(|&i| ens.times[i] >= t_from - tol && ens.times[i] <= t_to + tol)
        .collect()
}

/// Statistics over all paths and stored times in `[t_from, t_to]`.
pub fn long_run_weight_stats(ens: &SimulationEnsemble, t_tail: (f64, f64)) -> Result<TailStats> {
    let idx = tail_indices(ens, t_tail.0, t_tail.1);
    if idx.is_empty() {
        return Err(Error::Domain(format!("no stored time in tail window {t_tail:?}")));
    }
    let n = ens.n();
    let mut weights = vec![Vec::new(); n + 1];
    let mut sizes = vec![Vec::new(); n];
    for p in &ens.paths {
        for &i in &idx {
            let c = p.c_at(i);
            for (k, w) in weights_from_sizes(c)?.into_iter().enumerate() {
                weights[k].push(w);
            }
            for k in 0..n {
                sizes[k].push(c[k]);
            }
        }
    }
    Ok(TailStats {
        t_from: t_tail.0,
        t_to: t_tail.1,
        points: idx.len() * ens.paths.len(),
        weights: weights.into_iter().map(summarize).collect(),
        sizes: sizes.into_iter().map(summarize).collect(),
    })
}

/// Mean of `C_k` over paths and stored times in each `[edges[i], edges[i+1])`.
pub fn window_means(ens: &SimulationEnsemble, k: usize, edges: &[f64]) -> Result<Vec<f64>> {
    edges
        .windows(2)
        .map(|w| {
            let idx: Vec<usize> = (0..ens.times.len())
                .filter(|&i| ens.times[i] >= w[0] && ens.times[i] < w[1])
                .collect();
            if idx.is_empty() {
                return Err(Error::Domain(format!("no stored time in [{}, {})", w[0], w[1])));
            }
            let sum: f64 = ens
                .paths
                .iter()
                .flat_map(|p| idx.iter().map(move |&i| p.c_at(i)[k]))
                .sum();
            Ok(sum / (idx.len() * ens.paths.len()) as f64)
        })
        .collect()
}

/// Per path and portfolio, the number of sign changes of `C_k` between
/// consecutive stored times (a zero value counts as no sign).
pub fn sign_changes(ens: &SimulationEnsemble) -> Vec<Vec<usize>> {
    ens.paths
        .iter()
        .map(|p| {
            (0..p.n)
                .map(|k| {
                    let mut last = 0.0f64;
                    let mut count = 0;
                    for i in 0..ens.times.len() {
                        let v = p.c_at(i)[k];
                        if v != 0.0 {
                            if last != 0.0 && v.signum() != last.signum() {
                                count += 1;
                            }
                            last = v;
                        }
                    }
                    count
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientSpec, MarketModelParams, NoiseCorrelation};
    use crate::simulate::{simulate, SimulationConfig};
    use proptest::prelude::*;

    #[test]
    fn weights_examples() {
        assert_eq!(market_weights(&[2.0, 1.0, 1.0]).unwrap(), vec![0.5, 0.25, 0.25]);
        assert!(market_weights(&[3.0; 5]).unwrap().iter().all(|w| (w - 0.2).abs() < 1e-15));
        assert!(market_weights(&[1.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn weights_sum_to_one_and_scale_free(caps in prop::collection::vec(1e-3f64..1e6, 1..30), s in 1e-3f64..1e3) {
            let w = market_weights(&caps).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let scaled: Vec<f64> = caps.iter().map(|c| c * s).collect();
            let w2 = market_weights(&scaled).unwrap();
            for (a, b) in w.iter().zip(&w2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn curves_are_monotone(c in prop::collection::vec(-5.0f64..5.0, 3..40)) {
            let m = curve_snapshot(0.0, &c, CurveKind::Modified, (1, 40)).unwrap();
            prop_assert!(m.points.windows(2).all(|w| w[0].1 <= w[1].1));
            let cl = curve_snapshot(0.0, &c, CurveKind::Classical, (1, 41)).unwrap();
            prop_assert!(cl.points.windows(2).all(|w| w[0].1 >= w[1].1));
        }

        #[test]
        fn linear_verdict_follows_gamma_cap(mu in -0.05f64..0.05, gamma in -0.05f64..0.05, g_s in -0.01f64..0.01) {
            let m = MarketModel::linear_case(2, mu, gamma, 0.1, g_s, 0.05).unwrap();
            let v = stability_check(&m, (-100.0, 100.0)).unwrap();
            let cap = mu + g_s * gamma;
            prop_assert_eq!(v.gamma_cap, Some(cap));
            prop_assert_eq!(v.stable == Stability::Yes, cap > 0.0);
        }
    }

    #[test]
    fn curve_examples() {
        let flat = curve_snapshot(1.0, &[0.3; 10], CurveKind::Modified, (1, 10)).unwrap();
        assert!(flat.fit.slope.abs() < 1e-15);
        assert_eq!(flat.fit.pearson_r, 0.0);
        let c: Vec<f64> = (1..=20).rev().map(|k| 0.7 * (k as f64).ln()).collect();
        let lin = curve_snapshot(1.0, &c, CurveKind::Modified, (1, 20)).unwrap();
        assert!((lin.fit.slope - 0.7).abs() < 1e-12);
        assert!((lin.fit.pearson_r - 1.0).abs() < 1e-12);
        assert!(curve_snapshot(1.0, &c, CurveKind::Modified, (15, 14)).is_err());
        assert!(curve_snapshot(1.0, &[1.0], CurveKind::Modified, (1, 1)).is_err());
    }

    #[test]
    fn stability_examples() {
        let m = MarketModel::linear_case(3, 0.0069, 0.0045, 0.052, 0.0044, 0.0541).unwrap();
        let v = stability_check(&m, (-50.0, 50.0)).unwrap();
        assert_eq!(v.stable, Stability::Yes);
        assert!((v.gamma_cap.unwrap() - 0.0069198).abs() < 1e-15);
        let bad = MarketModel::linear_case(3, -0.01, 0.0, 0.052, 0.0044, 0.0541).unwrap();
        assert_eq!(stability_check(&bad, (-50.0, 50.0)).unwrap().stable, Stability::No);
        assert!(stability_check(&m, (-10.0, 10.0)).is_err());
    }

    fn power_model(gamma_plus: f64, alpha_pm: (f64, f64), beta_pm: (f64, f64), g_s: f64) -> MarketModel {
        let alpha = CoefficientSpec::piecewise(
            Branch::Power { scale: alpha_pm.0, exponent: gamma_plus },
            Branch::Power { scale: -alpha_pm.1, exponent: 0.5 },
        );
        let beta = CoefficientSpec::piecewise(
            Branch::Linear { scale: beta_pm.0 },
            Branch::Linear { scale: beta_pm.1 },
        );
        MarketModel::new(MarketModelParams {
            n: 2,
            alpha,
            alpha_star: alpha,
            beta,
            sigma: CoefficientSpec::constant(0.1),
            g_s,
            g_v: g_s,
            sigma_s: 0.05,
            sigma_v: 0.05,
            rho_0: 1.0,
            noise_correlation: NoiseCorrelation::Identity,
        })
        .unwrap()
    }

    #[test]
    fn power_family_case_analysis() {
        // gamma_+ < 1: beta dominates, needs g_S beta_+ > 0.
        let v = stability_check(&power_model(0.5, (0.01, 0.01), (0.004, 0.004), 0.0044), (-100.0, 100.0)).unwrap();
        assert_eq!(v.stable, Stability::Yes);
        assert_eq!(v.detail[0].exponent, 1.0);
        let v = stability_check(&power_model(0.5, (0.01, 0.01), (0.004, 0.004), -0.0044), (-100.0, 100.0)).unwrap();
        assert_eq!(v.stable, Stability::No);
        // gamma_+ > 1: alpha dominates.
        let v = stability_check(&power_model(1.5, (0.01, 0.01), (0.004, 0.004), -0.0044), (-100.0, 100.0)).unwrap();
        assert!(v.detail[0].satisfied);
        // gamma_+ = 1: alpha_+ + g_S beta_+.
        let v = stability_check(&power_model(1.0, (0.01, 0.01), (0.004, 0.004), -5.0), (-100.0, 100.0)).unwrap();
        assert!(!v.detail[0].satisfied);
        assert!((v.detail[0].coefficient - (0.01 - 5.0 * 0.004)).abs() < 1e-15);
    }

    #[test]
    fn probe_check_is_inconclusive_on_oscillation() {
        let v = stability_check_fn(|c: f64| c.sin() * c, (-100.0, 100.0)).unwrap();
        assert_eq!(v.stable, Stability::Inconclusive);
        let v = stability_check_fn(|c: f64| c, (-100.0, 100.0)).unwrap();
        assert_eq!(v.stable, Stability::Yes);
        let v = stability_check_fn(|c: f64| -c, (-100.0, 100.0)).unwrap();
        assert_eq!(v.stable, Stability::No);
    }

    fn ou_error(step: f64) -> f64 {
        let grid = uniform_grid(-6.0, 6.0, step).unwrap();
        let d = stationary_density_from(|c| -c, |_| 1.0, &grid, 1e-12).unwrap();
        let pi = std::f64::consts::PI;
        grid.iter()
            .zip(&d.density)
            .map(|(c, p)| (p - (-c * c).exp() / pi.sqrt()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn ou_density_matches_gaussian() {
        assert!(ou_error(1e-3) < 1e-4);
        assert!(ou_error(1.0) < ou_error(2.0));
    }

    #[test]
    fn flat_and_degenerate_densities_rejected() {
        let grid = uniform_grid(-5.0, 5.0, 0.01).unwrap();
        assert!(matches!(
            stationary_density_from(|_| 0.0, |_| 1.0, &grid, 1e-12),
            Err(Error::Coverage(_))
        ));
        let m = MarketModel::linear_case(1, 0.0069, 0.0045, 0.0, 0.0044, 0.0541).unwrap();
        assert!(matches!(stationary_density(&m, &grid), Err(Error::Degenerate(_))));
    }

    #[test]
    fn symmetric_model_gives_even_density() {
        let grid = uniform_grid(-8.0, 8.0, 0.01).unwrap();
        let d = stationary_density_from(|c: f64| -c.powi(3) - c, |c: f64| 1.0 + 0.5 * c * c, &grid, 1e-12).unwrap();
        let m = grid.len();
        for i in 0..m {
            assert!((d.density[i] - d.density[m - 1 - i]).abs() < 1e-10);
        }
        assert!(d.mean.abs() < 1e-10);
        assert!(d.s_prime.iter().all(|s| *s > 0.0));
    }

    #[test]
    fn model_density_has_ou_shape() {
        // gamma = 0: drift -mu c, diffusion rho^2, variance rho^2 / (2 mu).
        let m = MarketModel::linear_case(1, 0.0069, 0.0, 0.1, 0.0044, 0.0541).unwrap();
        let grid = uniform_grid(-20.0, 20.0, 1e-3).unwrap();
        let d = stationary_density(&m, &grid).unwrap();
        assert!((d.variance - 0.01 / (2.0 * 0.0069)).abs() < 1e-6);
    }

    #[test]
    fn degenerate_tail_weights_are_uniform() {
        let m = MarketModel::new(MarketModelParams {
            sigma: CoefficientSpec::zero(),
            sigma_s: 0.0,
            ..MarketModel::linear_case(4, 0.0069, 0.0045, 0.0, 0.0044, 0.0).unwrap().params().clone()
        })
        .unwrap();
        let e = simulate(&SimulationConfig::new(m, 2, 10.0, 0.5, 1)).unwrap();
        let s = long_run_weight_stats(&e, (5.0, 10.0)).unwrap();
        for w in &s.weights {
            assert!((w.mean - 0.2).abs() < 1e-15 && w.variance.abs() < 1e-30, "{w:?}");
        }
        assert!(long_run_weight_stats(&e, (50.0, 60.0)).is_err());
    }

    #[test]
    fn sign_change_counter() {
        let m = MarketModel::linear_case(2, 0.0069, 0.0, 0.5, 0.0, 0.0).unwrap();
        let mut cfg = SimulationConfig::new(m, 3, 200.0, 0.1, 2);
        cfg.initial.c = vec![0.5, -0.5];
        let e = simulate(&cfg).unwrap();
        let s = sign_changes(&e);
        assert_eq!(s.len(), 3);
        assert!(s.iter().flatten().any(|&n| n > 0));
    }
}
