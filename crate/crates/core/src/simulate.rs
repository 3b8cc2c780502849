//! Monte Carlo engine for the relative-size and wealth SDEs.
//!
//! Each path owns a ChaCha8 stream: the generator is seeded with the run
//! seed and the stream id is the path index, so adding paths never changes
//! existing ones. Per time step the draws are, in order: two standard
//! normals for the benchmark `(W_S, W_V)`, then `n` for the idiosyncratic
//! motions. Both schemes consume identical draws.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MarketModel, NoiseCorrelation};

pub const RNG_DESCRIPTION: &str = "ChaCha8Rng::seed_from_u64(seed), stream = path index";
const BLOW_UP: f64 = 1e6;
const MAGIC: &[u8; 8] = b"CAPMENS1";
const BINARY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    Euler,
    ExactLinear,
}

/// Starting point shared by every path. Empty vectors mean all zeros.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialState {
    pub c: Vec<f64>,
    pub ln_s0: f64,
    pub ln_v0: f64,
    pub ln_vk: Vec<f64>,
}

impl InitialState {
    fn resolve(&self, n: usize) -> Result<PathState> {
        let vec_or_zero = |v: &Vec<f64>, name: &str| -> Result<Vec<f64>> {
            match v.len() {
                0 => Ok(vec![0.0; n]),
                l if l == n => Ok(v.clone()),
                l => Err(Error::Config(format!("initial {name} has {l} entries, model has n = {n}"))),
            }
        };
        let s = PathState {
            c: vec_or_zero(&self.c, "c")?,
            ln_s0: self.ln_s0,
            ln_v0: self.ln_v0,
            ln_vk: vec_or_zero(&self.ln_vk, "ln_vk")?,
        };
        if !s.is_finite() {
            return Err(Error::Domain("initial state is not finite".into()));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub model: MarketModel,
    pub n_paths: usize,
    /// Horizon in months.
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub scheme: Scheme,
    /// Spacing of stored time points; a multiple of `dt`.
    #[serde(default = "default_record_interval")]
    pub record_interval: f64,
}

fn default_record_interval() -> f64 {
    1.0
}

fn whole_multiple(total: f64, step: f64, what: &str) -> Result<usize> {
    let k = (total / step).round();
    if k < 1.0 || (k * step - total).abs() > 1e-9 * total.abs().max(1.0) {
        return Err(Error::Config(format!("{what}: {total} is not a whole multiple of {step}")));
    }
    Ok(k as usize)
}

impl SimulationConfig {
    pub fn new(model: MarketModel, n_paths: usize, t_end: f64, dt: f64, seed: u64) -> Self {
        Self {
            model,
            n_paths,
            t_end,
            dt,
            seed,
            initial: InitialState::default(),
            scheme: Scheme::Euler,
            record_interval: default_record_interval().min(t_end),
        }
    }

    /// `(steps, stride)`: total steps and steps between stored points.
    pub fn grid(&self) -> Result<(usize, usize)> {
        if !(self.dt > 0.0) || !(self.t_end > 0.0) || !self.dt.is_finite() || !self.t_end.is_finite() {
            return Err(Error::Config(format!("need dt > 0 and t_end > 0, got {} and {}", self.dt, self.t_end)));
        }
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be positive".into()));
        }
        let steps = whole_multiple(self.t_end, self.dt, "t_end / dt")?;
        let stride = whole_multiple(self.record_interval, self.dt, "record_interval / dt")?;
        if steps % stride != 0 {
            return Err(Error::Config(format!(
                "record_interval {} does not divide t_end {}",
                self.record_interval, self.t_end
            )));
        }
        Ok((steps, stride))
    }
}

/// State of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub c: Vec<f64>,
    pub ln_s0: f64,
    pub ln_v0: f64,
    pub ln_vk: Vec<f64>,
}

impl PathState {
    fn is_finite(&self) -> bool {
        self.ln_s0.is_finite()
            && self.ln_v0.is_finite()
            && self.c.iter().chain(&self.ln_vk).all(|v| v.is_finite())
    }

    fn summary(&self) -> String {
        let worst = self
            .c
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap_or(std::cmp::Ordering::Greater))
            .map(|(k, v)| format!("C_{} = {v:e}", k + 1))
            .unwrap_or_default();
        format!("{worst}, ln S_0 = {}, ln V_0 = {}", self.ln_s0, self.ln_v0)
    }
}

/// Joint law of `(d ln S_0, d ln V_0)` per unit time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkLaw {
    pub g_s: f64,
    pub g_v: f64,
    pub sigma_s: f64,
    pub sigma_v: f64,
    pub rho_0: f64,
}

/// One step's benchmark increments; `d_ws` is the `W_S` increment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkIncrement {
    pub d_ln_s0: f64,
    pub d_ln_v0: f64,
    pub d_ws: f64,
}

impl BenchmarkLaw {
    pub fn new(g_s: f64, g_v: f64, sigma_s: f64, sigma_v: f64, rho_0: f64) -> Result<Self> {
        if !(sigma_s >= 0.0 && sigma_v >= 0.0 && rho_0.abs() <= 1.0) {
            return Err(Error::Factorization(format!(
                "benchmark covariance with sigma_S = {sigma_s}, sigma_V = {sigma_v}, rho_0 = {rho_0} is not positive semidefinite"
            )));
        }
        Ok(Self { g_s, g_v, sigma_s, sigma_v, rho_0 })
    }

    pub fn from_model(m: &MarketModel) -> Self {
        Self {
            g_s: m.g_s(),
            g_v: m.g_v(),
            sigma_s: m.sigma_s(),
            sigma_v: m.sigma_v(),
            rho_0: m.rho_0(),
        }
    }

    /// Increments from two standard normals via the Cholesky factor of
    /// `[[1, rho_0], [rho_0, 1]]`.
    pub fn increment(&self, dt: f64, z_s: f64, z_v: f64) -> BenchmarkIncrement {
        let sq = dt.sqrt();
        let d_ws = sq * z_s;
        let d_wv = sq * (self.rho_0 * z_s + (1.0 - self.rho_0 * self.rho_0).max(0.0).sqrt() * z_v);
        BenchmarkIncrement {
            d_ln_s0: self.g_s * dt + self.sigma_s * d_ws,
            d_ln_v0: self.g_v * dt + self.sigma_v * d_wv,
            d_ws,
        }
    }
}

pub fn sample_benchmark_increments<R: Rng + ?Sized>(law: &BenchmarkLaw, dt: f64, rng: &mut R) -> BenchmarkIncrement {
    let z_s: f64 = rng.sample(StandardNormal);
    let z_v: f64 = rng.sample(StandardNormal);
    law.increment(dt, z_s, z_v)
}

/// Symmetric square root of the idiosyncratic correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseFactor {
    Identity(usize),
    Dense(DMatrix<f64>),
}

impl NoiseFactor {
    pub fn new(corr: &NoiseCorrelation, n: usize) -> Result<Self> {
        if matches!(corr, NoiseCorrelation::Identity) {
            return Ok(NoiseFactor::Identity(n));
        }
        Self::from_matrix(corr.to_matrix(n))
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        let eig = SymmetricEigen::new(m);
        let min = eig.eigenvalues.min();
        if min < -1e-10 * n as f64 {
            return Err(Error::Factorization(format!(
                "correlation matrix is not positive semidefinite (min eigenvalue {min:e})"
            )));
        }
        let root = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
        Ok(NoiseFactor::Dense(&eig.eigenvectors * root * eig.eigenvectors.transpose()))
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseFactor::Identity(n) => *n,
            NoiseFactor::Dense(m) => m.nrows(),
        }
    }
}

/// Fills `out` with one draw of `sqrt(dt) L z`, `z` standard normal.
pub fn sample_idiosyncratic<R: Rng + ?Sized>(factor: &NoiseFactor, dt: f64, rng: &mut R, out: &mut [f64]) {
    let sq = dt.sqrt();
    for v in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = sq * z;
    }
    if let NoiseFactor::Dense(l) = factor {
        let mixed = l * DVector::from_column_slice(out);
        out.copy_from_slice(mixed.as_slice());
    }
}

/// One explicit Euler–Maruyama step with coefficients at the pre-step state.
pub fn euler_step(
    model: &MarketModel,
    state: &mut PathState,
    inc: &BenchmarkIncrement,
    dw: &[f64],
    dt: f64,
) -> Result<()> {
    for k in 0..state.c.len() {
        let c = state.c[k];
        let co = model.eval_unchecked(c);
        let noise = co.sigma * dw[k];
        state.c[k] = c - co.alpha * dt + (1.0 - co.beta) * inc.d_ln_s0 + noise;
        state.ln_vk[k] += co.alpha_star * dt + co.beta * inc.d_ln_v0 + noise;
    }
    state.ln_s0 += inc.d_ln_s0;
    state.ln_v0 += inc.d_ln_v0;
    check_state(state)
}

fn check_state(state: &PathState) -> Result<()> {
    if !state.is_finite() || state.c.iter().any(|v| v.abs() > BLOW_UP) {
        return Err(Error::BlowUp {
            path: 0,
            step: 0,
            state: state.summary(),
        });
    }
    Ok(())
}

/// Stored trajectory of one path. Matrices are row-major `[time][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub n: usize,
    pub c: Vec<f64>,
    pub ln_s0: Vec<f64>,
    pub ln_v0: Vec<f64>,
    pub ln_vk: Vec<f64>,
}

impl PathRecord {
    fn with_capacity(n: usize, times: usize) -> Self {
        Self {
            n,
            c: Vec::with_capacity(n * times),
            ln_s0: Vec::with_capacity(times),
            ln_v0: Vec::with_capacity(times),
            ln_vk: Vec::with_capacity(n * times),
        }
    }

    fn push(&mut self, s: &PathState) {
        self.c.extend_from_slice(&s.c);
        self.ln_vk.extend_from_slice(&s.ln_vk);
        self.ln_s0.push(s.ln_s0);
        self.ln_v0.push(s.ln_v0);
    }

    pub fn c_at(&self, i: usize) -> &[f64] {
        &self.c[i * self.n..(i + 1) * self.n]
    }

    pub fn ln_vk_at(&self, i: usize) -> &[f64] {
        &self.ln_vk[i * self.n..(i + 1) * self.n]
    }

    /// `ln S_k = ln S_0 - C_k`.
    pub fn ln_sk_at(&self, i: usize) -> Vec<f64> {
        self.c_at(i).iter().map(|c| self.ln_s0[i] - c).collect()
    }
}

/// Seed, generator and configuration, embedded in every export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEcho {
    pub seed: u64,
    pub rng: String,
    pub config: SimulationConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationEnsemble {
    pub times: Vec<f64>,
    pub paths: Vec<PathRecord>,
    pub echo: EnsembleEcho,
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn run_paths<F>(cfg: &SimulationConfig, path_fn: F) -> Result<SimulationEnsemble>
where
    F: Fn(usize, &mut ChaCha8Rng, PathState, usize, usize) -> Result<PathRecord> + Sync,
{
    let (steps, stride) = cfg.grid()?;
    let start = cfg.initial.resolve(cfg.model.n())?;
    let results: Vec<Result<PathRecord>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p);
            path_fn(p, &mut rng, start.clone(), steps, stride)
        })
        .collect();
    let paths = results.into_iter().collect::<Result<Vec<_>>>()?;
    let times = (0..=steps / stride).map(|i| (i * stride) as f64 * cfg.dt).collect();
    Ok(SimulationEnsemble {
        times,
        paths,
        echo: EnsembleEcho {
            seed: cfg.seed,
            rng: RNG_DESCRIPTION.to_string(),
            config: cfg.clone(),
        },
    })
}

fn tag(e: Error, path: usize, step: usize) -> Error {
    match e {
        Error::BlowUp { state, .. } => Error::BlowUp { path, step, state },
        other => other,
    }
}

/// Runs the configured scheme.
pub fn simulate(cfg: &SimulationConfig) -> Result<SimulationEnsemble> {
    match cfg.scheme {
        Scheme::Euler => euler_paths(cfg),
        Scheme::ExactLinear => exact_linear_paths(cfg),
    }
}

pub fn euler_paths(cfg: &SimulationConfig) -> Result<SimulationEnsemble> {
    let model = &cfg.model;
    let law = BenchmarkLaw::from_model(model);
    let factor = NoiseFactor::new(model.noise_correlation(), model.n())?;
    let dt = cfg.dt;
    run_paths(cfg, |p, rng, mut state, steps, stride| {
        let mut rec = PathRecord::with_capacity(model.n(), steps / stride + 1);
        rec.push(&state);
        let mut dw = vec![0.0; model.n()];
        for step in 1..=steps {
            let inc = sample_benchmark_increments(&law, dt, rng);
            sample_idiosyncratic(&factor, dt, rng, &mut dw);
            euler_step(model, &mut state, &inc, &dw, dt).map_err(|e| tag(e, p, step))?;
            if step % stride == 0 {
                rec.push(&state);
            }
        }
        Ok(rec)
    })
}

/// Closed-form solution of the linear family
/// `C(t) = Z(t) [C(0) + rho int_0^t Z(u)^-1 dW_k(u)]`,
/// `Z(t) = exp(-(mu + gamma g_S) t - gamma sigma_S W_S(t) - gamma^2 sigma_S^2 t / 2)`,
/// with the stochastic integral taken at left points on the Euler grid and
/// the same random draws as [`euler_paths`]. `ln V_k` is accumulated with
/// coefficients at the exact `C` of each left point.
pub fn exact_linear_paths(cfg: &SimulationConfig) -> Result<SimulationEnsemble> {
    let model = &cfg.model;
    let (mu, gamma, rho) = model.linear_parameters().ok_or_else(|| {
        Error::Precondition("exact-linear scheme needs alpha = mu c, beta = 1 + gamma c, constant sigma".into())
    })?;
    let rho = rho.abs();
    let law = BenchmarkLaw::from_model(model);
    let factor = NoiseFactor::new(model.noise_correlation(), model.n())?;
    let (dt, n) = (cfg.dt, model.n());
    let a = mu + gamma * law.g_s;
    let b = gamma * law.sigma_s;
    run_paths(cfg, |p, rng, mut state, steps, stride| {
        let mut rec = PathRecord::with_capacity(n, steps / stride + 1);
        rec.push(&state);
        let c0 = state.c.clone();
        let mut integral = vec![0.0; n];
        let mut dw = vec![0.0; n];
        let mut w_s = 0.0_f64;
        let mut ln_z = 0.0_f64;
        for step in 1..=steps {
            let inc = sample_benchmark_increments(&law, dt, rng);
            sample_idiosyncratic(&factor, dt, rng, &mut dw);
            let z_inv = (-ln_z).exp();
            for k in 0..n {
                let co = model.eval_unchecked(state.c[k]);
                state.ln_vk[k] += co.alpha_star * dt + co.beta * inc.d_ln_v0 + co.sigma * dw[k];
                integral[k] += z_inv * rho * dw[k];
            }
            w_s += inc.d_ws;
            let t = step as f64 * dt;
            ln_z = -a * t - b * w_s - 0.5 * b * b * t;
            let z = ln_z.exp();
            for k in 0..n {
                state.c[k] = z * (c0[k] + integral[k]);
            }
            state.ln_s0 += inc.d_ln_s0;
            state.ln_v0 += inc.d_ln_v0;
            check_state(&state).map_err(|e| tag(e, p, step))?;
            if step % stride == 0 {
                rec.push(&state);
            }
        }
        Ok(rec)
    })
}

impl SimulationEnsemble {
    pub fn n(&self) -> usize {
        self.echo.config.model.n()
    }

    /// Index of the stored time closest to `t`, if within `1e-9`.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
    }

    /// `C_k(t_i)` across paths.
    pub fn c_across_paths(&self, i: usize, k: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p.c_at(i)[k]).collect()
    }

    /// Long CSV: comment lines with the JSON echo, then `path,t,series,value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<ensemble csv>", e);
        writeln!(out, "# {}", serde_json::to_string(&self.echo)?).map_err(io)?;
        writeln!(out, "path,t,series,value").map_err(io)?;
        for (p, rec) in self.paths.iter().enumerate() {
            for (i, t) in self.times.iter().enumerate() {
                writeln!(out, "{p},{t},ln_S0,{}", rec.ln_s0[i]).map_err(io)?;
                writeln!(out, "{p},{t},ln_V0,{}", rec.ln_v0[i]).map_err(io)?;
                let ln_sk = rec.ln_sk_at(i);
                for k in 0..rec.n {
                    writeln!(out, "{p},{t},C_{},{}", k + 1, rec.c_at(i)[k]).map_err(io)?;
                    writeln!(out, "{p},{t},ln_S{},{}", k + 1, ln_sk[k]).map_err(io)?;
                    writeln!(out, "{p},{t},ln_V{},{}", k + 1, rec.ln_vk_at(i)[k]).map_err(io)?;
                }
            }
        }
        Ok(())
    }

    /// Binary dump, little-endian: magic `CAPMENS1`, `u32` version, `u64`
    /// echo length and echo JSON, `u64` paths, times, n, `f64` times, then per
    /// path `ln_s0[T]`, `ln_v0[T]`, `c[T*n]`, `ln_vk[T*n]`.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<ensemble binary>", e);
        let echo = serde_json::to_vec(&self.echo)?;
        out.write_all(MAGIC).map_err(io)?;
        out.write_all(&BINARY_VERSION.to_le_bytes()).map_err(io)?;
        out.write_all(&(echo.len() as u64).to_le_bytes()).map_err(io)?;
        out.write_all(&echo).map_err(io)?;
        for v in [self.paths.len(), self.times.len(), self.n()] {
            out.write_all(&(v as u64).to_le_bytes()).map_err(io)?;
        }
        let mut put = |xs: &[f64]| -> Result<()> {
            let bytes: Vec<u8> = xs.iter().flat_map(|x| x.to_le_bytes()).collect();
            out.write_all(&bytes).map_err(io)
        };
        put(&self.times)?;
        for p in &self.paths {
            put(&p.ln_s0)?;
            put(&p.ln_v0)?;
            put(&p.c)?;
            put(&p.ln_vk)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let io = |e| Error::io("<ensemble binary>", e);
        let bad = |m: &str| Error::Serialization(format!("ensemble binary: {m}"));
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b4 = [0u8; 4];
        input.read_exact(&mut b4).map_err(io)?;
        if u32::from_le_bytes(b4) != BINARY_VERSION {
            return Err(bad("unsupported version"));
        }
        let read_u64 = |input: &mut R| -> Result<usize> {
            let mut b8 = [0u8; 8];
            input.read_exact(&mut b8).map_err(io)?;
            Ok(u64::from_le_bytes(b8) as usize)
        };
        let echo_len = read_u64(&mut input)?;
        let mut echo = vec![0u8; echo_len];
        input.read_exact(&mut echo).map_err(io)?;
        let echo: EnsembleEcho = serde_json::from_slice(&echo)?;
        let n_paths = read_u64(&mut input)?;
        let n_times = read_u64(&mut input)?;
        let n = read_u64(&mut input)?;
        let read_f64s = |input: &mut R, len: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; len * 8];
            input.read_exact(&mut buf).map_err(io)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let times = read_f64s(&mut input, n_times)?;
        let mut paths = Vec::with_capacity(n_paths);
        for _ in 0..n_paths {
            paths.push(PathRecord {
                n,
                ln_s0: read_f64s(&mut input, n_times)?,
                ln_v0: read_f64s(&mut input, n_times)?,
                c: read_f64s(&mut input, n_times * n)?,
                ln_vk: read_f64s(&mut input, n_times * n)?,
            });
        }
        Ok(Self { times, paths, echo })
    }
}
