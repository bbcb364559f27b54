//! Command-line front end.
//!
//! Exit codes: 0 success (including a monitoring alarm), 1 statistical
//! failure such as a non-converged fit or a flagged experiment, 2 usage or
//! I/O error, 3 monitoring finished without an alarm.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dpdmon::critval::{self, RetroCache, RetroKey};
use dpdmon::retro::{self, RetroOptions};
use dpdmon::series::{log_returns, read_series};
use dpdmon::simlab::{self, Scenario};
use dpdmon::{fit, run_monitor, Alpha, BoundaryFn, Engine, Error, FitOptions, FitResult, NormKind};

const EXIT_STAT: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NO_ALARM: u8 = 3;

#[derive(Parser)]
#[command(name = "dpdmon", version, about = "Robust sequential parameter-change monitoring")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Critical value for the sequential or the retrospective test.
    Critval(CritvalArgs),
    /// Fit an engine to a series and report the estimate.
    Fit(FitArgs),
    /// Monitor a stream against a fit of the historical series.
    Monitor(MonitorArgs),
    /// Retrospective change-point test on one series.
    Retro(RetroArgs),
    /// Run a Monte Carlo scenario from a config file.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Sequential,
    Retro,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Normal,
    Garch,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Max,
    Euclidean,
}

fn parse_level(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("level must lie in (0, 1), got {v}"))
    }
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    Alpha::new(v).map(|a| a.value()).map_err(|e| e.to_string())
}

#[derive(Args)]
struct CritvalArgs {
    /// Parameter dimension.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    d: u64,
    #[arg(long, value_parser = parse_level)]
    level: f64,
    #[arg(long, value_enum, default_value = "sequential")]
    kind: Kind,
    /// Grid points per simulated bridge (retro only).
    #[arg(long, default_value_t = critval::RETRO_DEFAULT_GRID)]
    grid: usize,
    /// Monte Carlo replications (retro only).
    #[arg(long, default_value_t = critval::RETRO_DEFAULT_REPS)]
    reps: usize,
    /// Required for `--kind retro`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "garch")]
    engine: EngineArg,
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long, default_value_t = 1)]
    q: usize,
    /// Divergence tuning parameter in [0, 1]; 0 is the likelihood.
    #[arg(long, value_parser = parse_alpha)]
    alpha: f64,
}

impl ModelArgs {
    fn engine(&self) -> Engine {
        match self.engine {
            EngineArg::Normal => Engine::Normal,
            EngineArg::Garch => Engine::Garch { p: self.p, q: self.q },
        }
    }
    fn alpha(&self) -> Alpha {
        Alpha::new(self.alpha).expect("validated by the parser")
    }
}

#[derive(Args)]
struct InputArgs {
    /// Inputs are prices; convert to log returns.
    #[arg(long)]
    prices: bool,
    /// With `--prices`, keep raw log returns instead of multiplying by 100.
    #[arg(long, requires = "prices")]
    no_scale: bool,
}

impl InputArgs {
    fn load(&self, path: &Path) -> Result<Vec<f64>, Error> {
        let s = read_series(path).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        if self.prices {
            log_returns(&s.values, !self.no_scale)
        } else {
            Ok(s.values)
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    series: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    input: InputArgs,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MonitorArgs {
    /// Historical (change-free) series.
    #[arg(long)]
    hist: PathBuf,
    /// Monitoring series.
    #[arg(long)]
    stream: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    input: InputArgs,
    /// Significance level for the tabulated constant boundary.
    #[arg(long, value_parser = parse_level, conflicts_with = "b")]
    level: Option<f64>,
    /// Constant boundary.
    #[arg(long)]
    b: Option<f64>,
    /// Largest monitoring step; defaults to the stream length.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, value_enum, default_value = "max")]
    norm: NormArg,
    /// Detector path CSV (`k,detector,boundary,alarm`).
    #[arg(long)]
    path_out: Option<PathBuf>,
}

#[derive(Args)]
struct RetroArgs {
    #[arg(long)]
    series: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_parser = parse_level, default_value = "0.05")]
    level: f64,
    /// Use this critical value instead of simulating one.
    #[arg(long)]
    critical: Option<f64>,
    /// Seed of the critical-value simulation; required unless `--critical`.
    #[arg(long, required_unless_present = "critical")]
    seed: Option<u64>,
    #[arg(long, default_value_t = critval::RETRO_DEFAULT_GRID)]
    grid: usize,
    #[arg(long, default_value_t = critval::RETRO_DEFAULT_REPS)]
    reps: usize,
    /// Statistic path CSV (`k,statistic`).
    #[arg(long)]
    path_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory for the CSV outputs.
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the replication count.
    #[arg(long)]
    reps: Option<usize>,
}

/// 17 significant digits, which round-trips every `f64`.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

struct Report(Vec<(String, String)>);

impl Report {
    fn new() -> Self {
        Report(Vec::new())
    }
    fn put(&mut self, k: impl Into<String>, v: impl ToString) {
        self.0.push((k.into(), v.to_string()));
    }
    fn num(&mut self, k: impl Into<String>, v: f64) {
        self.put(k, num(v));
    }
    fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

enum Failure {
    Usage(String),
    Stat(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::OptimizationFailure { .. }
            | Error::SingularInformation { .. }
            | Error::DegenerateSample(_)
            | Error::UndefinedRatio(_) => Failure::Stat(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = Result<u8, Failure>;

fn emit(report: &Report, out: Option<&Path>) -> Result<(), Failure> {
    let text = report.render();
    io::stdout().write_all(text.as_bytes())?;
    if let Some(p) = out {
        fs::write(p, &text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn cmd_critval(a: &CritvalArgs) -> CmdResult {
    let d = a.d as usize;
    let mut r = Report::new();
    match a.kind {
        Kind::Sequential => {
            let b = critval::critical_value_sequential(d, a.level)?;
            r.put("kind", "sequential");
            r.put("d", d);
            r.put("level", a.level);
            r.num("b", b);
        }
        Kind::Retro => {
            let seed = a
                .seed
                .ok_or_else(|| Failure::Usage("--seed is required for --kind retro".into()))?;
            let key = RetroKey {
                d,
                level: a.level,
                grid_n: a.grid,
                n_mc: a.reps,
                seed,
            };
            let c = critval::critical_value_retro_cached(&key, RetroCache::from_env().as_ref())?;
            r.put("kind", "retro");
            r.put("d", d);
            r.put("level", a.level);
            r.put("grid", a.grid);
            r.put("reps", a.reps);
            r.put("seed", seed);
            r.num("c", c);
        }
    }
    emit(&r, None)?;
    Ok(0)
}

fn fit_lines(r: &mut Report, f: &FitResult) {
    r.put("engine", f.engine);
    r.put("alpha", f.alpha);
    r.put("n", f.n_used);
    for (name, v) in f.theta.names().iter().zip(f.theta.to_vec()) {
        r.num(format!("theta.{name}"), v);
    }
    r.num("objective", f.objective);
    r.num("grad_norm", f.grad_norm);
    r.put("converged", f.converged);
    let d = f.info_hat.nrows();
    for i in 0..d {
        for j in 0..d {
            r.num(format!("info_hat.{}.{}", i + 1, j + 1), f.info_hat[(i, j)]);
        }
    }
}

fn fit_checked(data: &[f64], a: &ModelArgs) -> Result<FitResult, Failure> {
    let f = fit(data, a.engine(), a.alpha(), &FitOptions::default())?;
    if !f.converged {
        return Err(Failure::Stat(format!(
            "fit did not converge (projected gradient norm {:e})",
            f.grad_norm
        )));
    }
    Ok(f)
}

fn cmd_fit(a: &FitArgs) -> CmdResult {
    let data = a.input.load(&a.series)?;
    let f = fit_checked(&data, &a.model)?;
    let mut r = Report::new();
    fit_lines(&mut r, &f);
    emit(&r, a.out.as_deref())?;
    Ok(0)
}

fn cmd_monitor(a: &MonitorArgs) -> CmdResult {
    let hist = a.input.load(&a.hist)?;
    let stream = a.input.load(&a.stream)?;
    let engine = a.model.engine();
    let norm = match a.norm {
        NormArg::Max => NormKind::Max,
        NormArg::Euclidean => NormKind::Euclidean,
    };
    let b = match (a.b, a.level) {
        (Some(b), _) => b,
        (None, level) => {
            if matches!(norm, NormKind::Euclidean) {
                return Err(Failure::Usage(
                    "tabulated boundaries assume the max norm; pass --b with --norm euclidean".into(),
                ));
            }
            critval::critical_value_sequential(engine.dim(), level.unwrap_or(0.05))?
        }
    };
    let boundary = BoundaryFn::constant(b)?;
    let horizon = a.horizon.unwrap_or(stream.len());
    let f = fit_checked(&hist, &a.model)?;
    let out = run_monitor(&f, &hist, &stream, &boundary, norm, horizon)?;

    if let Some(p) = &a.path_out {
        let mut csv = String::from("k,detector,boundary,alarm\n");
        for (i, d) in out.detector_path.iter().enumerate() {
            let k = i + 1;
            let alarm = out.stop_k == Some(k);
            csv.push_str(&format!("{k},{},{},{}\n", num(*d), num(b), u8::from(alarm)));
        }
        write_file(p, &csv)?;
    }

    let mut r = Report::new();
    r.put("verdict", if out.stop_k.is_some() { "change" } else { "no_change" });
    r.put("stop_k", out.stop_k.map_or("none".to_string(), |k| k.to_string()));
    r.put("engine", engine);
    r.put("alpha", f.alpha);
    r.put("n", hist.len());
    r.put("steps", out.detector_path.len());
    r.put("horizon", horizon);
    r.num("boundary", b);
    let max = out.detector_path.iter().copied().fold(0.0, f64::max);
    r.num("max_detector", max);
    for (name, v) in f.theta.names().iter().zip(f.theta.to_vec()) {
        r.num(format!("theta.{name}"), v);
    }
    emit(&r, None)?;
    Ok(if out.stop_k.is_some() { 0 } else { EXIT_NO_ALARM })
}

fn cmd_retro(a: &RetroArgs) -> CmdResult {
    let data = a.input.load(&a.series)?;
    let opts = RetroOptions {
        grid_n: a.grid,
        n_mc: a.reps,
        seed: a.seed.unwrap_or(0),
        critical: a.critical,
        cache: RetroCache::from_env(),
        ..Default::default()
    };
    let res = retro::retro_test(&data, a.model.alpha(), a.model.engine(), a.level, &opts)?;
    if let Some(p) = &a.path_out {
        let mut csv = String::from("k,statistic\n");
        for (i, v) in res.path.iter().enumerate() {
            csv.push_str(&format!("{},{}\n", i + 1, num(*v)));
        }
        write_file(p, &csv)?;
    }
    let mut r = Report::new();
    r.put("verdict", if res.reject { "change" } else { "no_change" });
    r.put("reject", res.reject);
    r.num("statistic", res.statistic);
    r.put("change_point", res.change_point);
    r.num("critical", res.critical);
    r.put("critical_source", if a.critical.is_some() { "given" } else { "simulated" });
    r.put("level", a.level);
    fit_lines(&mut r, &res.fit);
    emit(&r, None)?;
    Ok(0)
}

fn cmd_experiment(a: &ExperimentArgs) -> CmdResult {
    let mut sc = Scenario::from_file(&a.config)?;
    if let Some(s) = a.seed {
        sc.seed = s;
    }
    if let Some(n) = a.reps {
        sc.reps = n;
    }
    sc.validate()?;
    let rep = simlab::run_scenario(&sc)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Failure::Usage(format!("{}: {e}", a.out_dir.display())))?;

    let mut rej = String::from("alpha,k,rejection_rate\n");
    for s in &rep.summaries {
        for (i, v) in s.rejection_curve.iter().enumerate() {
            rej.push_str(&format!("{},{},{}\n", s.alpha, i + 1, num(*v)));
        }
    }
    write_file(&a.out_dir.join("rejection.csv"), &rej)?;

    let mut del = String::from("alpha,successes,failures,mean,q1,median,q3,censored\n");
    for s in &rep.summaries {
        if let Some(d) = &s.delay {
            del.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                s.alpha,
                s.successes(),
                s.failures,
                num(d.mean),
                num(d.q1),
                num(d.median),
                num(d.q3),
                d.censored
            ));
        }
    }
    if sc.is_power() {
        write_file(&a.out_dir.join("delay.csv"), &del)?;
    }
    let ratios = if sc.is_power() && sc.paired_clean {
        let r = rep.delay_ratios()?;
        let mut csv = String::from("alpha,d_alpha\n");
        for (al, v) in &r {
            csv.push_str(&format!("{al},{}\n", num(*v)));
        }
        write_file(&a.out_dir.join("delay_ratio.csv"), &csv)?;
        Some(r)
    } else {
        None
    };

    let mut r = Report::new();
    r.put("config", a.config.display());
    r.put("seed", sc.seed);
    r.put("reps", sc.reps);
    r.put("kind", if sc.is_power() { "power" } else { "size" });
    r.num("boundary", rep.critical_value);
    for s in &rep.summaries {
        r.num(format!("terminal_rate.{}", s.alpha), s.terminal_rate());
        r.put(format!("failures.{}", s.alpha), s.failures);
        if let Some(d) = &s.delay {
            r.num(format!("mean_delay.{}", s.alpha), d.mean);
        }
    }
    for (al, v) in ratios.iter().flatten() {
        r.num(format!("d_alpha.{al}"), *v);
    }
    r.put("flagged", rep.flagged());
    r.put("out_dir", a.out_dir.display());
    write_file(&a.out_dir.join("report.txt"), &(r.render() + "\n# scenario\n" + &sc.to_toml()))?;
    emit(&r, None)?;
    Ok(if rep.flagged() { EXIT_STAT } else { 0 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Command::Critval(a) => cmd_critval(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Monitor(a) => cmd_monitor(a),
        Command::Retro(a) => cmd_retro(a),
        Command::Experiment(a) => cmd_experiment(a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Stat(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_STAT)
        }
    }
}
