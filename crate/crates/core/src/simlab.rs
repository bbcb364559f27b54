//! Simulation harness: GARCH path generation, outlier contamination and
//! Monte Carlo aggregation of first-crossing times.

use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critval::critical_value_sequential;
use crate::dpd::{Alpha, BoundaryFn, NormKind};
use crate::error::{Error, Result};
use crate::garch::{GarchParams, VolState};
use crate::model::{fit, Engine, FitOptions};
use crate::monitor::run_monitor;

pub const DEFAULT_BURN_IN: usize = 500;
/// Substreams per replication: path innovations and outlier indicators.
const STREAM_PATH: u64 = 0;
const STREAM_OUTLIER: u64 = 1;
const STREAMS_PER_REP: u64 = 8;

/// Per-replication RNG substream derived from the master seed.
pub fn substream(master: u64, rep: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(rep as u64 * STREAMS_PER_REP + purpose);
    rng
}

fn stationary_state(theta: &GarchParams) -> Result<VolState> {
    let v = theta.unconditional_variance().ok_or_else(|| {
        Error::Config(format!(
            "parameters are not stationary (persistence {})",
            theta.persistence()
        ))
    })?;
    VolState::from_lags(vec![v; theta.p()], vec![v; theta.q()])
}

fn advance<R: Rng + ?Sized>(state: &mut VolState, theta: &GarchParams, rng: &mut R) -> f64 {
    let s2 = state.next_sigma2(theta);
    let eps: f64 = rng.sample(StandardNormal);
    let x = s2.sqrt() * eps;
    state.push(x, s2);
    x
}

/// `X_t = σ_t ε_t` with Gaussian innovations, started at the unconditional
/// variance; the first `burn_in` values are discarded.
pub fn simulate_garch_path<R: Rng + ?Sized>(
    theta: &GarchParams,
    n: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut state = stationary_state(theta)?;
    for _ in 0..burn_in {
        advance(&mut state, theta, rng);
    }
    Ok((0..n).map(|_| advance(&mut state, theta, rng)).collect())
}

/// `n_pre` values under `theta0`, then `n_post` values under `theta1`
/// continuing the same volatility recursion.
pub fn simulate_regime_switch<R: Rng + ?Sized>(
    theta0: &GarchParams,
    theta1: &GarchParams,
    n_pre: usize,
    n_post: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if (theta0.p(), theta0.q()) != (theta1.p(), theta1.q()) {
        return Err(Error::Config("pre- and post-change orders differ".into()));
    }
    if !theta1.is_stationary() {
        return Err(Error::Config("post-change parameters are not stationary".into()));
    }
    let mut state = stationary_state(theta0)?;
    for _ in 0..burn_in {
        advance(&mut state, theta0, rng);
    }
    let mut out = Vec::with_capacity(n_pre + n_post);
    for _ in 0..n_pre {
        out.push(advance(&mut state, theta0, rng));
    }
    for _ in 0..n_post {
        out.push(advance(&mut state, theta1, rng));
    }
    Ok(out)
}

/// Outlier size `5·√(ω / (1 − Σα − Σβ))`: five unconditional standard deviations.
pub fn default_outlier_scale(theta: &GarchParams) -> Result<f64> {
    theta
        .unconditional_variance()
        .map(|v| 5.0 * v.sqrt())
        .ok_or_else(|| Error::Config("parameters are not stationary".into()))
}

fn check_p(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("outlier probability must lie in [0, 1), got {p}")))
    }
}

/// Independent Bernoulli(`p`) indicators, one uniform draw per index.
pub fn outlier_indicators<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Result<Vec<bool>> {
    check_p(p)?;
    Ok((0..len).map(|_| rng.random::<f64>() < p).collect())
}

/// Shifts `x` outward by `s`; zero counts as positive.
#[inline]
pub fn shift_outward(x: f64, s: f64) -> f64 {
    if x >= 0.0 {
        x + s
    } else {
        x - s
    }
}

/// `X_t + s·p_t·sign(X_t)` with `p_t` independent Bernoulli(`p`).
pub fn contaminate<R: Rng + ?Sized>(path: &[f64], p: f64, s: f64, rng: &mut R) -> Result<Vec<f64>> {
    let flags = outlier_indicators(path.len(), p, rng)?;
    Ok(path
        .iter()
        .zip(&flags)
        .map(|(&x, &f)| if f { shift_outward(x, s) } else { x })
        .collect())
}

/// Where outliers are injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Contamination {
    #[default]
    #[serde(rename = "none", alias = "None")]
    None,
    /// Historical window only.
    #[serde(rename = "H", alias = "h")]
    H,
    /// First monitoring steps only.
    #[serde(rename = "M", alias = "m")]
    M,
    #[serde(rename = "HM", alias = "hm")]
    HM,
}

impl Contamination {
    /// Index ranges of the combined series that receive outliers.
    pub fn windows(self, n_hist: usize, m_window: usize) -> Vec<Range<usize>> {
        let h = 0..n_hist;
        let m = n_hist..n_hist + m_window;
        match self {
            Contamination::None => vec![],
            Contamination::H => vec![h],
            Contamination::M => vec![m],
            Contamination::HM => vec![h, m],
        }
    }
}

fn default_order() -> usize {
    1
}
fn default_k_star() -> usize {
    250
}
fn default_horizon() -> usize {
    2000
}
fn default_m_window() -> usize {
    200
}
fn default_level() -> f64 {
    0.05
}
fn default_reps() -> usize {
    200
}
fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

/// Monte Carlo experiment description, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// `(ω, α_1..α_p, β_1..β_q)` of the historical regime.
    pub theta0: Vec<f64>,
    /// Post-change parameters; absent for a size experiment.
    #[serde(default)]
    pub theta1: Option<Vec<f64>>,
    #[serde(default = "default_order")]
    pub p: usize,
    #[serde(default = "default_order")]
    pub q: usize,
    /// Number of monitoring observations before the change.
    #[serde(default = "default_k_star")]
    pub k_star: usize,
    pub n_hist: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub contamination: Contamination,
    #[serde(default)]
    pub p_outlier: f64,
    /// Outlier size; defaults to five unconditional standard deviations.
    #[serde(default)]
    pub s_scale: Option<f64>,
    /// Monitoring steps `1..=m_window` receive M-type outliers.
    #[serde(default = "default_m_window")]
    pub m_window: usize,
    pub alpha_grid: Vec<f64>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    pub seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Also monitor the uncontaminated series of each replication, for
    /// delay ratios.
    #[serde(default)]
    pub paired_clean: bool,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn theta0_params(&self) -> Result<GarchParams> {
        GarchParams::from_vec(self.theta0.clone(), self.p, self.q)
    }

    pub fn theta1_params(&self) -> Result<Option<GarchParams>> {
        self.theta1
            .as_ref()
            .map(|t| GarchParams::from_vec(t.clone(), self.p, self.q))
            .transpose()
    }

    pub fn alphas(&self) -> Result<Vec<Alpha>> {
        self.alpha_grid.iter().map(|&a| Alpha::new(a)).collect()
    }

    pub fn outlier_scale(&self) -> Result<f64> {
        match self.s_scale {
            Some(s) => Ok(s),
            None => default_outlier_scale(&self.theta0_params()?),
        }
    }

    pub fn is_power(&self) -> bool {
        self.theta1.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let t0 = self.theta0_params()?;
        if !t0.is_stationary() {
            return Err(Error::Config("theta0 is not stationary".into()));
        }
        if let Some(t1) = self.theta1_params()? {
            if !t1.is_stationary() {
                return Err(Error::Config("theta1 is not stationary".into()));
            }
            if self.k_star >= self.horizon {
                return Err(Error::Config(format!(
                    "k_star = {} must be below horizon = {}",
                    self.k_star, self.horizon
                )));
            }
        }
        check_p(self.p_outlier)?;
        if let Some(s) = self.s_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Config(format!("s_scale must be positive, got {s}")));
            }
        }
        if self.alpha_grid.is_empty() {
            return Err(Error::Config("alpha_grid is empty".into()));
        }
        self.alphas()?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if self.reps == 0 || self.horizon == 0 {
            return Err(Error::Config("reps and horizon must be positive".into()));
        }
        if self.n_hist < 100 {
            return Err(Error::Config("n_hist must be at least 100".into()));
        }
        if self.m_window > self.horizon {
            return Err(Error::Config("m_window exceeds the horizon".into()));
        }
        Ok(())
    }
}

/// Replication series: the clean path and, when outliers apply, the
/// contaminated copy. Both come from fixed substreams, so the clean path does
/// not depend on the contamination settings.
pub fn replication_series(sc: &Scenario, rep: usize) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let t0 = sc.theta0_params()?;
    let mut prng = substream(sc.seed, rep, STREAM_PATH);
    let total = sc.n_hist + sc.horizon;
    let clean = match sc.theta1_params()? {
        Some(t1) => {
            let pre = sc.n_hist + sc.k_star;
            simulate_regime_switch(&t0, &t1, pre, total - pre, sc.burn_in, &mut prng)?
        }
        None => simulate_garch_path(&t0, total, sc.burn_in, &mut prng)?,
    };
    if sc.contamination == Contamination::None || sc.p_outlier == 0.0 {
        return Ok((clean, None));
    }
    let mut orng = substream(sc.seed, rep, STREAM_OUTLIER);
    let flags = outlier_indicators(total, sc.p_outlier, &mut orng)?;
    let s = sc.outlier_scale()?;
    let mut dirty = clean.clone();
    for w in sc.contamination.windows(sc.n_hist, sc.m_window) {
        for t in w {
            if flags[t] {
                dirty[t] = shift_outward(clean[t], s);
            }
        }
    }
    Ok((clean, Some(dirty)))
}

/// First crossing per tuning parameter; `Err(())` marks a failed fit.
type RepOutcome = Vec<std::result::Result<Option<usize>, ()>>;
type Picker = dyn Fn(&(RepOutcome, Option<RepOutcome>)) -> Option<&RepOutcome>;

fn monitor_all(series: &[f64], sc: &Scenario, alphas: &[Alpha], b: &BoundaryFn) -> RepOutcome {
    let (hist, stream) = series.split_at(sc.n_hist);
    let engine = Engine::Garch { p: sc.p, q: sc.q };
    alphas
        .iter()
        .map(|&a| {
            let f = fit(hist, engine, a, &FitOptions::default()).map_err(|_| ())?;
            run_monitor(&f, hist, stream, b, NormKind::Max, sc.horizon)
                .map(|o| o.stop_k)
                .map_err(|_| ())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayStats {
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Replications without a crossing, counted at `horizon + 1`.
    pub censored: usize,
}

/// Linear-interpolation sample quantile of sorted data.
fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Delays `stop − k*`, with undetected replications stopped at `horizon + 1`.
pub fn delay_stats(stops: &[Option<usize>], k_star: usize, horizon: usize) -> Option<DelayStats> {
    if stops.is_empty() {
        return None;
    }
    let mut d: Vec<f64> = stops
        .iter()
        .map(|s| s.unwrap_or(horizon + 1) as f64 - k_star as f64)
        .collect();
    d.sort_by(f64::total_cmp);
    Some(DelayStats {
        mean: d.iter().sum::<f64>() / d.len() as f64,
        q1: sorted_quantile(&d, 0.25),
        median: sorted_quantile(&d, 0.5),
        q3: sorted_quantile(&d, 0.75),
        censored: stops.iter().filter(|s| s.is_none()).count(),
    })
}

/// Results for one tuning parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSummary {
    pub alpha: f64,
    /// First crossing of each successful replication, in replication order.
    pub stops: Vec<Option<usize>>,
    pub failures: usize,
    /// `rejection_curve[k − 1]` is the share of successful replications that
    /// crossed by monitoring step `k`.
    pub rejection_curve: Vec<f64>,
    pub delay: Option<DelayStats>,
}

impl AlphaSummary {
    fn build(alpha: f64, outcomes: Vec<std::result::Result<Option<usize>, ()>>, sc: &Scenario) -> Self {
        let failures = outcomes.iter().filter(|o| o.is_err()).count();
        let stops: Vec<Option<usize>> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
        let mut hits = vec![0usize; sc.horizon + 1];
        for k in stops.iter().flatten() {
            hits[*k] += 1;
        }
        let m = stops.len().max(1) as f64;
        let mut acc = 0;
        let rejection_curve = (1..=sc.horizon)
            .map(|k| {
                acc += hits[k];
                acc as f64 / m
            })
            .collect();
        let delay = if sc.is_power() {
            delay_stats(&stops, sc.k_star, sc.horizon)
        } else {
            None
        };
        Self {
            alpha,
            stops,
            failures,
            rejection_curve,
            delay,
        }
    }

    pub fn terminal_rate(&self) -> f64 {
        self.rejection_curve.last().copied().unwrap_or(0.0)
    }

    pub fn successes(&self) -> usize {
        self.stops.len()
    }

    /// Failed fits at 2% of replications or more.
    pub fn flagged(&self) -> bool {
        let total = self.failures + self.stops.len();
        self.failures * 50 >= total.max(1) && self.failures > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub scenario: Scenario,
    pub critical_value: f64,
    pub summaries: Vec<AlphaSummary>,
    /// Same replications without outliers, when `paired_clean` is set.
    pub clean: Option<Vec<AlphaSummary>>,
}

impl ExperimentReport {
    pub fn flagged(&self) -> bool {
        self.summaries
            .iter()
            .chain(self.clean.iter().flatten())
            .any(AlphaSummary::flagged)
    }

    /// Contaminated-to-clean mean delay ratios of a paired run.
    pub fn delay_ratios(&self) -> Result<Vec<(f64, f64)>> {
        let clean = self
            .clean
            .as_ref()
            .ok_or_else(|| Error::UndefinedRatio("no paired clean run".into()))?;
        ratios(&self.summaries, clean)
    }
}

fn ratios(dirty: &[AlphaSummary], clean: &[AlphaSummary]) -> Result<Vec<(f64, f64)>> {
    if dirty.len() != clean.len() {
        return Err(Error::Config("reports have different alpha grids".into()));
    }
    dirty
        .iter()
        .zip(clean)
        .map(|(d, c)| {
            if d.alpha != c.alpha {
                return Err(Error::Config(format!("alpha mismatch: {} vs {}", d.alpha, c.alpha)));
            }
            let (Some(dd), Some(cd)) = (&d.delay, &c.delay) else {
                return Err(Error::UndefinedRatio(format!(
                    "no delay statistics at alpha = {}",
                    d.alpha
                )));
            };
            if cd.mean == 0.0 {
                return Err(Error::UndefinedRatio(format!("clean mean delay is zero at alpha = {}", d.alpha)));
            }
            Ok((d.alpha, dd.mean / cd.mean))
        })
        .collect()
}

/// `d_α`: ratio of mean delays, contaminated over clean, per tuning parameter.
pub fn delay_ratio_table(contaminated: &ExperimentReport, clean: &ExperimentReport) -> Result<Vec<(f64, f64)>> {
    let (a, b) = (&contaminated.scenario, &clean.scenario);
    if (a.n_hist, a.horizon, a.k_star, a.p, a.q) != (b.n_hist, b.horizon, b.k_star, b.p, b.q) {
        return Err(Error::Config("reports come from differently shaped scenarios".into()));
    }
    ratios(&contaminated.summaries, &clean.summaries)
}

/// Runs every replication in parallel; the report does not depend on the
/// number of threads.
pub fn run_scenario(sc: &Scenario) -> Result<ExperimentReport> {
    sc.validate()?;
    let alphas = sc.alphas()?;
    let b = critical_value_sequential(1 + sc.p + sc.q, sc.level)?;
    let boundary = BoundaryFn::constant(b)?;
    let per_rep: Vec<(RepOutcome, Option<RepOutcome>)> = (0..sc.reps)
        .into_par_iter()
        .map(|rep| -> Result<_> {
            let (clean, dirty) = replication_series(sc, rep)?;
            Ok(match dirty {
                Some(d) => {
                    let main = monitor_all(&d, sc, &alphas, &boundary);
                    let paired = sc.paired_clean.then(|| monitor_all(&clean, sc, &alphas, &boundary));
                    (main, paired)
                }
                None => {
                    let main = monitor_all(&clean, sc, &alphas, &boundary);
                    let paired = sc.paired_clean.then(|| main.clone());
                    (main, paired)
                }
            })
        })
        .collect::<Result<_>>()?;
    let collect = |pick: &Picker| {
        alphas
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let outcomes = per_rep.iter().filter_map(|r| pick(r).map(|o| o[i])).collect();
                AlphaSummary::build(a.value(), outcomes, sc)
            })
            .collect::<Vec<_>>()
    };
    let summaries = collect(&|r| Some(&r.0));
    let clean = sc.paired_clean.then(|| collect(&|r| r.1.as_ref()));
    Ok(ExperimentReport {
        scenario: sc.clone(),
        critical_value: b,
        summaries,
        clean,
    })
}
