//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use capmsize::analysis::{self, CurveKind, Stability};
use capmsize::estimate::{self, EstimateOptions, Target};
use capmsize::model::{presets, CoefficientSpec, MarketModel, MarketModelParams};
use capmsize::returns::{to_arithmetic, to_geometric};
use capmsize::simulate::{self, Scheme, SimulationConfig};
use capmsize::synthetic::{self, FundsDgp, PanelDgp};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

fn return_algebra() -> Outcome {
    let geo = 0.2 + 0.3;
    let a = to_arithmetic(to_geometric(0.2).unwrap() + to_geometric(0.3).unwrap());
    let compound = (1.0 + 0.2) * (1.0 + 0.3) - 1.0;
    let ok = (geo - 0.5_f64).abs() < 1e-12 && (a - 0.56).abs() < 1e-12 && (compound - 0.56_f64).abs() < 1e-12;
    check(ok, format!("geometric sum {geo}, arithmetic compound {a:.15}"))
}

fn stability_verdict() -> Outcome {
    let m = MarketModel::linear_case(10, 0.0069, 0.0045, 0.052, 0.0044, 0.0541).unwrap();
    let v = analysis::stability_check(&m, (-1000.0, 1000.0)).map_err(|e| e.to_string())?;
    let cap = v.gamma_cap.unwrap_or(f64::NAN);
    check(
        v.stable == Stability::Yes && (cap - 0.0069198).abs() < 1e-15,
        format!("verdict {:?}, Gamma = {cap}", v.stable),
    )
}

fn ou_oracle() -> Outcome {
    let (mu, rho) = (0.0069, 0.1);
    let m = MarketModel::linear_case(1, mu, 0.0, rho, presets::G_S, presets::SIGMA_S).unwrap();
    let mut cfg = SimulationConfig::new(m, 10_000, 100.0, 0.01, 20240601);
    cfg.record_interval = 10.0;
    let ens = simulate::simulate(&cfg).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut ok = true;
    for t in [10.0, 50.0, 100.0] {
        let i = ens.time_index(t).ok_or("missing time")?;
        let c = ens.c_across_paths(i, 0);
        let n = c.len() as f64;
        let (m, v) = mean_var(&c);
        let target = rho * rho * (1.0 - (-2.0 * mu * t).exp()) / (2.0 * mu);
        let se_mean = (v / n).sqrt();
        let se_var = target * (2.0 / (n - 1.0)).sqrt();
        let zm = m / se_mean;
        let zv = (v - target) / se_var;
        ok &= zm.abs() < 3.0 && zv.abs() < 3.0;
        parts.push(format!("t={t}: mean z={zm:+.2}, var z={zv:+.2}"));
    }
    check(ok, parts.join("; "))
}

fn density_oracle() -> Outcome {
    let exact = |c: f64| (-c * c).exp() / std::f64::consts::PI.sqrt();
    let err_at = |step: f64| -> Result<f64, String> {
        let grid = analysis::uniform_grid(-6.0, 6.0, step).map_err(|e| e.to_string())?;
        let d = analysis::stationary_density_from(|c| -c, |_| 1.0, &grid, analysis::DIFFUSION_FLOOR)
            .map_err(|e| e.to_string())?;
        Ok(d.grid.iter().zip(&d.density).map(|(c, p)| (p - exact(*c)).abs()).fold(0.0, f64::max))
    };
    let fine = err_at(1e-3)?;
    // With a linear drift the scale integral is exact under the trapezoid
    // rule, so the step only enters through normalization. That error is
    // visible at coarse steps and reaches round-off by 0.5.
    let coarse: Vec<f64> = [2.0, 1.0, 0.5].iter().map(|s| err_at(*s)).collect::<Result<_, _>>()?;
    let halving = coarse.windows(2).all(|w| w[1] < w[0]);
    check(
        fine < 1e-4 && halving,
        format!(
            "sup error {fine:.2e} at step 1e-3; steps 2/1/0.5 give {:.2e}/{:.2e}/{:.2e}",
            coarse[0], coarse[1], coarse[2]
        ),
    )
}

/// Pinned from a pilot: the smallest |r| over seeds 1..=200 was 0.906.
const CURVE_R_THRESHOLD: f64 = 0.9;

fn capital_curve() -> Outcome {
    let m = presets::curve_model(100).unwrap();
    let mut rs = Vec::new();
    for seed in 1..=20 {
        let mut cfg = SimulationConfig::new(m.clone(), 1, 100.0, 0.1, seed);
        cfg.record_interval = 100.0;
        let ens = simulate::simulate(&cfg).map_err(|e| e.to_string())?;
        let i = ens.time_index(100.0).ok_or("missing time")?;
        let snap = analysis::curve_snapshot(100.0, ens.paths[0].c_at(i), CurveKind::Modified, (10, 90))
            .map_err(|e| e.to_string())?;
        let monotone = snap.points.windows(2).all(|w| w[1].1 >= w[0].1);
        if !monotone {
            return Err(format!("seed {seed}: curve not monotone"));
        }
        rs.push(snap.fit.pearson_r.abs());
    }
    let min = rs.iter().cloned().fold(f64::INFINITY, f64::min);
    check(
        min > CURVE_R_THRESHOLD,
        format!(
            "min |r| over 20 seeds = {min:.4}, mean {:.4} (threshold {CURVE_R_THRESHOLD})",
            rs.iter().sum::<f64>() / rs.len() as f64
        ),
    )
}

fn degenerate_case() -> Outcome {
    let base = MarketModel::linear_case(10, 0.0069, 0.0045, 0.052, presets::G_S, 0.0).unwrap();
    let m = MarketModel::new(MarketModelParams {
        sigma: CoefficientSpec::linear(0.052),
        ..base.params().clone()
    })
    .map_err(|e| e.to_string())?;
    let mut cfg = SimulationConfig::new(m, 1, 100.0, 0.01, 11);
    cfg.initial.c = (1..=10).map(|k| 0.2 * k as f64).collect();
    let ens = simulate::simulate(&cfg).map_err(|e| e.to_string())?;
    let devs: Vec<f64> = [25.0, 50.0, 75.0, 100.0]
        .iter()
        .map(|t| analysis::max_weight_deviation(ens.paths[0].c_at(ens.time_index(*t).unwrap())).unwrap())
        .collect();
    check(
        devs.windows(2).all(|w| w[1] < w[0]),
        format!("max deviation at t=25/50/75/100: {devs:.5?}"),
    )
}

fn estimation_oracle() -> Outcome {
    let dgp = PanelDgp::default();
    let sp = synthetic::synthetic_panel(&dgp, 2024).map_err(|e| e.to_string())?;
    let opts = EstimateOptions::default();
    let r = estimate::estimate_panel(&sp.panel, Target::Price, &opts).map_err(|e| e.to_string())?;
    // Standard errors from the generating process: each (beta - 1)/C has
    // variance rho^2 / (K Sxx) with Sxx the window's benchmark sum of squares.
    let k = dgp.window as f64;
    let rows = dgp.deciles - 1;
    let q1 = &sp.panel.price_returns[0];
    let mut var_sum = 0.0;
    let mut q_bar = 0.0;
    let windows = dgp.months / dgp.window;
    for n in 0..windows {
        let w = &q1[n * dgp.window..(n + 1) * dgp.window];
        let m = w.iter().sum::<f64>() / k;
        let sxx: f64 = w.iter().map(|v| (v - m).powi(2)).sum();
        var_sum += rows as f64 * dgp.rho * dgp.rho / (k * sxx);
        q_bar += w.iter().sum::<f64>();
    }
    let cells = (rows * windows) as f64;
    q_bar /= windows as f64;
    let se_gamma = var_sum.sqrt() / cells;
    let se_mu = (dgp.rho * dgp.rho / cells + se_gamma * se_gamma * q_bar * q_bar).sqrt();
    let se_rho = dgp.rho / (2.0 * (cells - 1.0)).sqrt();
    let z = [
        (r.noise.gamma - dgp.gamma) / se_gamma,
        (r.noise.mu - dgp.mu) / se_mu,
        (r.noise.rho - dgp.rho) / se_rho,
    ];
    check(
        z.iter().all(|v| v.abs() < 3.0),
        format!(
            "gamma {:.5} (z={:+.2}), mu {:.5} (z={:+.2}), rho {:.5} (z={:+.2})",
            r.noise.gamma, z[0], r.noise.mu, z[1], r.noise.rho, z[2]
        ),
    )
}

fn fund_regression() -> Outcome {
    let dgp = FundsDgp::default();
    let mut covered = 0;
    let mut betas = Vec::new();
    for seed in 0..200 {
        let f = synthetic::synthetic_funds(&dgp, 1000 + seed);
        let r = estimate::funds_regression(&f.small, &f.mid, &f.large).map_err(|e| e.to_string())?;
        covered += r.small.alpha_ci_contains(0.0) as usize;
        betas.push(r.small.beta);
    }
    let (m, v) = mean_var(&betas);
    let z = (m - dgp.beta_s) / (v / betas.len() as f64).sqrt();
    check(
        covered >= 180 && z.abs() < 3.0,
        format!("alpha CI covers 0 in {covered}/200; mean beta {m:.4} (z={z:+.2})"),
    )
}

fn run_cli(bin: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let bin = PathBuf::from(env!("CARGO_BIN_EXE_capmsize"));
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut compared = 0;
    for cmd in ["estimate", "simulate", "curve", "stability", "funds"] {
        let cfg = configs.join(format!("{cmd}.toml"));
        let mut runs = Vec::new();
        for rep in 0..2 {
            let dir = tmp.path().join(format!("{cmd}-{rep}"));
            let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--run-dir", dir.to_str().unwrap()];
            let small = ["--set", "simulate.n_paths=20", "--set", "curve.n_paths=2"];
            if cmd == "simulate" || cmd == "curve" {
                args.extend_from_slice(&small[if cmd == "simulate" { 0..2 } else { 2..4 }]);
            }
            run_cli(&bin, &args)?;
            runs.push(dir_bytes(&dir));
        }
        if runs[0] != runs[1] {
            return Err(format!("{cmd}: outputs differ between identical runs"));
        }
        compared += runs[0].len();
    }
    Ok(format!("{compared} output files byte-identical across reruns of 5 commands"))
}

fn exact_vs_euler() -> Outcome {
    let m = presets::curve_model(10).unwrap();
    let mut gaps = Vec::new();
    for dt in [0.2, 0.1, 0.05, 0.025] {
        let mut cfg = SimulationConfig::new(m.clone(), 200, 20.0, dt, 77);
        cfg.record_interval = 20.0;
        cfg.initial.c = (0..10).map(|k| 0.3 * k as f64 - 1.0).collect();
        let euler = simulate::euler_paths(&cfg).map_err(|e| e.to_string())?;
        cfg.scheme = Scheme::ExactLinear;
        let exact = simulate::exact_linear_paths(&cfg).map_err(|e| e.to_string())?;
        let last = euler.times.len() - 1;
        let mut ss = 0.0;
        let mut count = 0.0;
        for (a, b) in euler.paths.iter().zip(&exact.paths) {
            for (x, y) in a.c_at(last).iter().zip(b.c_at(last)) {
                ss += (x - y).powi(2);
                count += 1.0;
            }
        }
        gaps.push((ss / count).sqrt());
    }
    check(
        gaps.windows(2).all(|w| w[1] < w[0]),
        format!(
            "RMS terminal gap at dt=0.2/0.1/0.05/0.025: {}",
            gaps.iter().map(|g| format!("{g:.3e}")).collect::<Vec<_>>().join(" / ")
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 return algebra", return_algebra),
        ("2 stability verdict", stability_verdict),
        ("3 OU oracle for the SDE engine", ou_oracle),
        ("4 scale-density oracle", density_oracle),
        ("5 capital distribution curve", capital_curve),
        ("6 degenerate case", degenerate_case),
        ("7 estimation oracle", estimation_oracle),
        ("8 fund regression", fund_regression),
        ("9 determinism", determinism),
        ("10 exact vs Euler convergence", exact_vs_euler),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS  criterion {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL  criterion {name}: {d} [{secs:.1}s]")
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
