//! Command-line front end. Each run reads one TOML config, applies `--set`
//! overrides, and writes its outputs plus a config echo into a fresh run
//! directory.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{self, CurveKind};
use crate::error::{Error, Result};
use crate::estimate::{self, EstimateOptions};
use crate::ingest::{self, DecileCsvOptions, DecileField, PanelSpec, RateTable, ReturnPanel};
use crate::model::MarketModel;
use crate::returns::{Month, RateBasis};
use crate::simulate::{self, InitialState, Scheme, SimulationConfig};
use crate::synthetic::{self, FundsDgp, PanelDgp};

#[derive(Debug, Parser)]
#[command(name = "capmsize", version, about = "Size-dependent CAPM market model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    pub config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parent directory for the run directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write directly into this directory instead of a timestamped one.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Override a config key, e.g. `--set simulate.n_paths=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Windowed beta estimation and noise fit for a decile panel.
    Estimate(RunArgs),
    /// Monte Carlo ensemble of the SDE system.
    Simulate(RunArgs),
    /// Capital distribution curves from simulated states.
    Curve(RunArgs),
    /// Stability verdict and optional stationary density.
    Stability(RunArgs),
    /// Joint regression of two fund premia on a third.
    Funds(RunArgs),
    /// Write the synthetic fixture files.
    MakeFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Estimate(_) => "estimate",
            Command::Simulate(_) => "simulate",
            Command::Curve(_) => "curve",
            Command::Stability(_) => "stability",
            Command::Funds(_) => "funds",
            Command::MakeFixture { .. } => "make-fixture",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub estimate: Option<EstimateSection>,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub curve: Option<CurveSection>,
    #[serde(default)]
    pub stability: Option<StabilitySection>,
    #[serde(default)]
    pub funds: Option<FundsSection>,
}

fn default_basis() -> RateBasis {
    RateBasis::Percent
}

fn default_deciles() -> Vec<usize> {
    (1..=8).collect()
}

/// Either a canonical panel CSV or the four library files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub panel: Option<PathBuf>,
    #[serde(default)]
    pub price: Option<PathBuf>,
    #[serde(default)]
    pub total: Option<PathBuf>,
    #[serde(default)]
    pub caps: Option<PathBuf>,
    #[serde(default)]
    pub price_section: Option<String>,
    #[serde(default)]
    pub total_section: Option<String>,
    #[serde(default)]
    pub caps_section: Option<String>,
    /// Rate files, spliced in order (later files win on overlap).
    #[serde(default)]
    pub rates: Vec<PathBuf>,
    #[serde(default = "default_basis")]
    pub rate_basis: RateBasis,
    #[serde(default)]
    pub start: Option<Month>,
    #[serde(default)]
    pub end: Option<Month>,
    #[serde(default = "default_deciles")]
    pub deciles: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    pub data: DataSection,
    #[serde(default)]
    pub options: EstimateOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleFormat {
    Csv,
    Binary,
}

fn default_formats() -> Vec<EnsembleFormat> {
    vec![EnsembleFormat::Csv]
}

fn default_one() -> usize {
    1
}

fn default_record() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub model: MarketModel,
    pub n_paths: usize,
    pub t_end: f64,
    pub dt: f64,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_record")]
    pub record_interval: f64,
    #[serde(default = "default_formats")]
    pub formats: Vec<EnsembleFormat>,
}

fn default_fit_range() -> (usize, usize) {
    (10, 90)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSection {
    pub model: MarketModel,
    pub t_end: f64,
    pub dt: f64,
    #[serde(default = "default_one")]
    pub n_paths: usize,
    /// Snapshot times; defaults to `[t_end]`.
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub kind: CurveKind,
    #[serde(default = "default_fit_range")]
    pub fit_range: (usize, usize),
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub scheme: Scheme,
    /// Spacing of stored states; every snapshot time must lie on it.
    #[serde(default = "default_record")]
    pub record_interval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

fn default_probe() -> (f64, f64) {
    (-1000.0, 1000.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    pub model: MarketModel,
    #[serde(default = "default_probe")]
    pub probe_range: (f64, f64),
    #[serde(default)]
    pub density: Option<DensityGrid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FundsSection {
    pub funds: PathBuf,
    pub rates: Vec<PathBuf>,
    #[serde(default = "default_basis")]
    pub rate_basis: RateBasis,
    pub small: String,
    pub mid: String,
    pub large: String,
}

/// Apply one `a.b.c=value` override; the value is parsed as a TOML value
/// and falls back to a string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not KEY=VALUE")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key '{key}': '{p}' is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parse config text with overrides applied.
pub fn load_config_str(text: &str, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    if let Some(s) = seed {
        table.insert("seed".into(), toml::Value::Integer(s as i64));
    }
    RunConfig::deserialize(table).map_err(|e| Error::Config(format!("{e}")))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Coverage(format!("data file {} not found", path.display())))
    }
}

fn read_rates(base: &Path, files: &[PathBuf]) -> Result<RateTable> {
    if files.is_empty() {
        return Err(Error::Config("no rate files given".into()));
    }
    let tables = files
        .iter()
        .map(|f| {
            let p = resolve(base, f);
            require(&p)?;
            ingest::parse_rate_csv(&p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RateTable::splice(&tables))
}

/// Load the panel described by a data section.
pub fn load_panel(base: &Path, d: &DataSection) -> Result<ReturnPanel> {
    if let Some(p) = &d.panel {
        let p = resolve(base, p);
        require(&p)?;
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        return ReturnPanel::read_csv_str(&text, &p.display().to_string());
    }
    let table = |f: &Option<PathBuf>, section: &Option<String>, field: DecileField, name: &str| {
        let f = f
            .as_ref()
            .ok_or_else(|| Error::Config(format!("data.{name} is required without data.panel")))?;
        let p = resolve(base, f);
        require(&p)?;
        ingest::parse_decile_csv(&p, field, &DecileCsvOptions { section: section.clone() })
    };
    let price = table(&d.price, &d.price_section, DecileField::Price, "price")?;
    let total = table(&d.total, &d.total_section, DecileField::Total, "total")?;
    let caps = table(&d.caps, &d.caps_section, DecileField::Cap, "caps")?;
    let rates = read_rates(base, &d.rates)?;
    let start = d.start.unwrap_or(price.months[0]);
    let end = d.end.unwrap_or(*price.months.last().expect("parsed table has rows"));
    let spec = PanelSpec {
        start,
        end,
        deciles: d.deciles.clone(),
        rate_basis: d.rate_basis,
    };
    ingest::build_panel(&price, &total, &caps, &rates, &spec)
}

struct Run {
    dir: PathBuf,
    seed: u64,
    command: &'static str,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<fs::File>> {
        let p = self.path(name);
        Ok(BufWriter::new(fs::File::create(&p).map_err(|e| Error::io(&p, e))?))
    }

    fn write_json<T: Serialize>(&self, name: &str, config: &RunConfig, payload: &T) -> Result<()> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            command: &'a str,
            seed: u64,
            config: &'a RunConfig,
            result: &'a T,
        }
        let w = Wrapped {
            command: self.command,
            seed: self.seed,
            config,
            result: payload,
        };
        let mut text = serde_json::to_string_pretty(&w)?;
        text.push('\n');
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    fn csv_comment(&self) -> String {
        format!("# command={} seed={} config=config.toml\n", self.command, self.seed)
    }
}

fn open_run(cmd: &'static str, args: &RunArgs, cfg: &RunConfig, base: &Path) -> Result<Run> {
    let dir = match &args.run_dir {
        Some(d) => d.clone(),
        None => {
            let parent = args
                .out
                .clone()
                .or_else(|| cfg.out_dir.as_ref().map(|o| resolve(base, o)))
                .unwrap_or_else(|| PathBuf::from("runs"));
            let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
            parent.join(format!("{cmd}-{stamp}-seed{}", cfg.seed))
        }
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let echo = toml::to_string(cfg).map_err(|e| Error::Serialization(e.to_string()))?;
    let p = dir.join("config.toml");
    fs::write(&p, echo).map_err(|e| Error::io(&p, e))?;
    Ok(Run {
        dir,
        seed: cfg.seed,
        command: cmd,
    })
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T> {
    s.as_ref()
        .ok_or_else(|| Error::Config(format!("config has no [{name}] section")))
}

fn with_comment(run: &Run, body: Vec<u8>) -> Vec<u8> {
    let mut out = run.csv_comment().into_bytes();
    out.extend(body);
    out
}

fn write_bytes(run: &Run, name: &str, bytes: &[u8]) -> Result<()> {
    let p = run.path(name);
    fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
}

fn cmd_estimate(cfg: &RunConfig, base: &Path, run: &Run) -> Result<()> {
    let sec = section(&cfg.estimate, "estimate")?;
    let panel = load_panel(base, &sec.data)?;
    let (price, premium) = estimate::run_pipeline(&panel, &sec.options)?;
    for (name, report) in [("price", &price), ("premium", &premium)] {
        run.write_json(&format!("report_{name}.json"), cfg, report)?;
        let mut buf = Vec::new();
        report.write_windows_csv(&mut buf)?;
        write_bytes(run, &format!("windows_{name}.csv"), &with_comment(run, buf))?;
    }
    log::info!(
        "price: gamma {:.6} mu {:.6} rho {:.6}",
        price.noise.gamma,
        price.noise.mu,
        price.noise.rho
    );
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, run: &Run) -> Result<()> {
    let s = section(&cfg.simulate, "simulate")?;
    let sim = SimulationConfig {
        model: s.model.clone(),
        n_paths: s.n_paths,
        t_end: s.t_end,
        dt: s.dt,
        seed: cfg.seed,
        initial: s.initial.clone(),
        scheme: s.scheme,
        record_interval: s.record_interval,
    };
    let ens = simulate::simulate(&sim)?;
    for f in &s.formats {
        match f {
            EnsembleFormat::Csv => ens.write_csv(run.create("ensemble.csv")?)?,
            EnsembleFormat::Binary => ens.write_binary(run.create("ensemble.bin")?)?,
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CurveFitRecord {
    path: usize,
    t: f64,
    fit: analysis::CurveFit,
}

fn cmd_curve(cfg: &RunConfig, run: &Run) -> Result<()> {
    let s = section(&cfg.curve, "curve")?;
    let times = if s.times.is_empty() { vec![s.t_end] } else { s.times.clone() };
    let mut sim = SimulationConfig::new(s.model.clone(), s.n_paths, s.t_end, s.dt, cfg.seed);
    sim.initial = s.initial.clone();
    sim.scheme = s.scheme;
    sim.record_interval = s.record_interval;
    let ens = simulate::simulate(&sim)?;
    let mut csv = String::from("path,t,rank,ln_rank,value\n");
    let mut fits = Vec::new();
    for (p, rec) in ens.paths.iter().enumerate() {
        for &t in &times {
            let i = ens
                .time_index(t)
                .ok_or_else(|| Error::Config(format!("snapshot time {t} is not on the stored grid")))?;
            let snap = analysis::curve_snapshot(t, rec.c_at(i), s.kind, s.fit_range)?;
            for (r, (lx, v)) in snap.points.iter().enumerate() {
                csv.push_str(&format!("{p},{t},{},{lx},{v}\n", r + 1));
            }
            fits.push(CurveFitRecord { path: p, t, fit: snap.fit });
        }
    }
    write_bytes(run, "curve.csv", &with_comment(run, csv.into_bytes()))?;
    run.write_json("curve_fit.json", cfg, &fits)
}

#[derive(Serialize)]
struct StabilityOutput {
    verdict: analysis::StabilityVerdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    density_summary: Option<DensitySummary>,
}

#[derive(Serialize)]
struct DensitySummary {
    points: usize,
    mean: f64,
    variance: f64,
    normalization_constant: f64,
}

fn cmd_stability(cfg: &RunConfig, run: &Run) -> Result<()> {
    let s = section(&cfg.stability, "stability")?;
    let verdict = analysis::stability_check(&s.model, s.probe_range)?;
    let mut density_summary = None;
    if let Some(g) = &s.density {
        let grid = analysis::uniform_grid(g.lo, g.hi, g.step)?;
        let d = analysis::stationary_density(&s.model, &grid)?;
        let mut csv = String::from("c,s_prime,density\n");
        for i in 0..d.grid.len() {
            csv.push_str(&format!("{},{},{}\n", d.grid[i], d.s_prime[i], d.density[i]));
        }
        write_bytes(run, "density.csv", &with_comment(run, csv.into_bytes()))?;
        density_summary = Some(DensitySummary {
            points: d.grid.len(),
            mean: d.mean,
            variance: d.variance,
            normalization_constant: d.normalization_constant,
        });
    }
    run.write_json("stability.json", cfg, &StabilityOutput { verdict, density_summary })
}

fn cmd_funds(cfg: &RunConfig, base: &Path, run: &Run) -> Result<()> {
    let s = section(&cfg.funds, "funds")?;
    let fp = resolve(base, &s.funds);
    require(&fp)?;
    let table = ingest::parse_fund_csv(&fp)?;
    let rates = read_rates(base, &s.rates)?;
    let premia = ingest::fund_premia(&table, &rates, s.rate_basis)?;
    let col = |name: &str| {
        table
            .names
            .iter()
            .position(|n| n == name)
            .map(|i| premia[i].as_slice())
            .ok_or_else(|| Error::Config(format!("fund '{name}' not in {:?}", table.names)))
    };
    let report = estimate::funds_regression(col(&s.small)?, col(&s.mid)?, col(&s.large)?)?;
    run.write_json("funds.json", cfg, &report)
}

/// Writes the synthetic fixture set used by the shipped configs.
pub fn make_fixture(out: &Path, seed: u64) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let file = |name: &str| -> Result<BufWriter<fs::File>> {
        let p = out.join(name);
        Ok(BufWriter::new(fs::File::create(&p).map_err(|e| Error::io(&p, e))?))
    };
    let sp = synthetic::synthetic_panel(&PanelDgp::default(), seed)?;
    let p = &sp.panel;
    ingest::write_decile_csv(file("deciles_price.csv")?, "Equal Weight Returns -- Monthly", p, DecileField::Price)?;
    ingest::write_decile_csv(file("deciles_total.csv")?, "Equal Weight Returns -- Monthly", p, DecileField::Total)?;
    ingest::write_decile_csv(file("deciles_caps.csv")?, "Average Firm Size", p, DecileField::Cap)?;
    ingest::write_rate_csv(file("rates.csv")?, "TB3MS", &p.months, &sp.rate_pct)?;
    p.write_csv(file("panel.csv")?)?;

    let dgp = FundsDgp::default();
    let f = synthetic::synthetic_funds(&dgp, seed);
    let start = Month::new(2004, 7)?;
    let months: Vec<Month> = (0..dgp.months).map(|i| start.offset(i as i64)).collect();
    // Rates observed at the end of the previous month, in percent.
    let rate_months: Vec<Month> = (0..dgp.months).map(|i| start.offset(i as i64 - 1)).collect();
    let rate_pct: Vec<f64> = (0..dgp.months).map(|i| 1.0 + 0.5 * (i as f64 / 24.0).sin()).collect();
    let rf: Vec<f64> = rate_pct.iter().map(|r| (r / 1200.0).ln_1p()).collect();
    let total = |prem: &[f64]| -> Vec<f64> { prem.iter().zip(&rf).map(|(p, r)| p + r).collect() };
    ingest::write_fund_csv(
        file("funds.csv")?,
        &months,
        &["JKJ", "JKG", "JKD"],
        &[total(&f.small), total(&f.mid), total(&f.large)],
    )?;
    ingest::write_rate_csv(file("funds_rates.csv")?, "DGS1MO", &rate_months, &rate_pct)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let name = cli.command.name();
    let args = match &cli.command {
        Command::MakeFixture { out, seed } => return make_fixture(out, *seed),
        Command::Estimate(a)
        | Command::Simulate(a)
        | Command::Curve(a)
        | Command::Stability(a)
        | Command::Funds(a) => a,
    };
    let text = fs::read_to_string(&args.config).map_err(|e| Error::io(&args.config, e))?;
    let cfg = load_config_str(&text, &args.overrides, args.seed)?;
    let base = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let run = open_run(name, args, &cfg, &base)?;
    match &cli.command {
        Command::Estimate(_) => cmd_estimate(&cfg, &base, &run)?,
        Command::Simulate(_) => cmd_simulate(&cfg, &run)?,
        Command::Curve(_) => cmd_curve(&cfg, &run)?,
        Command::Stability(_) => cmd_stability(&cfg, &run)?,
        Command::Funds(_) => cmd_funds(&cfg, &base, &run)?,
        Command::MakeFixture { .. } => unreachable!(),
    }
    println!("{}", run.dir.display());
    Ok(())
}

/// Process entry point; returns the exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
