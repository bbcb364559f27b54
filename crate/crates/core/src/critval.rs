//! Critical values.
//!
//! The sequential detector with the max norm and a constant boundary rejects
//! when `sup_{0<s<1} |W_i(s)| > b` for some of `d` independent Wiener
//! processes, so `b` solves `F(b)^d = 1 − level` with `F` the distribution
//! function of `sup |W|`. The retrospective statistic has the limit
//! `sup_s Σ_i B_i(s)²` over independent Brownian bridges, whose quantiles are
//! simulated.

use std::f64::consts::PI;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_SERIES_TOL: f64 = 1e-14;
pub const RETRO_DEFAULT_GRID: usize = 1 << 12;
pub const RETRO_DEFAULT_REPS: usize = 100_000;
pub const RETRO_MIN_GRID: usize = 1_000;
pub const RETRO_MIN_REPS: usize = 10_000;
/// Environment variable naming the directory of the retrospective cache.
pub const CACHE_DIR_ENV: &str = "DPD_CACHE_DIR";
const CACHE_FILE: &str = "retro_critval.txt";
const CACHE_HEADER: &str = "# dpdmon retro critical values v1: d level grid_n n_mc seed c";

/// Partial sums around the truncation point of the alternating series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesEval {
    /// Returned probability, clamped to `[0, 1]`.
    pub value: f64,
    /// Partial sum before and after adding the last retained term.
    pub bracket: (f64, f64),
    pub terms: usize,
}

fn series_term(b: f64, k: usize) -> f64 {
    let m = (2 * k + 1) as f64;
    4.0 / PI / m * (-PI * PI * m * m / (8.0 * b * b)).exp()
}

/// `P(sup_{0<s<1} |W(s)| ≤ b)`, summing terms until one falls below `tol`.
pub fn sup_abs_bm_cdf(b: f64, tol: f64) -> Result<f64> {
    sup_abs_bm_cdf_detail(b, tol).map(|e| e.value)
}

pub fn sup_abs_bm_cdf_detail(b: f64, tol: f64) -> Result<SeriesEval> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::Domain(format!("b must be finite and positive, got {b}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let (mut sum, mut prev, mut k) = (0.0, 0.0, 0);
    loop {
        let t = series_term(b, k);
        if t < tol {
            break;
        }
        prev = sum;
        sum += if k % 2 == 0 { t } else { -t };
        k += 1;
    }
    Ok(SeriesEval {
        value: sum.clamp(0.0, 1.0),
        bracket: (prev.min(sum), prev.max(sum)),
        terms: k,
    })
}

fn sup_abs_bm_pdf(b: f64) -> f64 {
    let mut s = 0.0_f64;
    for k in 0.. {
        let m = (2 * k + 1) as f64;
        let t = m * (-PI * PI * m * m / (8.0 * b * b)).exp();
        if t < 1e-300 || (k > 0 && t < 1e-16 * s.abs()) {
            break;
        }
        s += if k % 2 == 0 { t } else { -t };
    }
    PI / (b * b * b) * s
}

/// Constant boundary `b` for the max-norm detector in dimension `d`:
/// the root of `1 − F(b)^d = level` on `[0.1, 10]`.
pub fn critical_value_sequential(d: usize, level: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::Config("dimension must be at least 1".into()));
    }
    check_level(level)?;
    let target = 1.0 - level;
    let g = |b: f64| -> f64 { sup_abs_bm_cdf(b, DEFAULT_SERIES_TOL).expect("b > 0").powi(d as i32) - target };
    let (mut lo, mut hi) = (0.1, 10.0);
    if g(lo) > 0.0 || g(hi) < 0.0 {
        return Err(Error::Domain(format!(
            "no critical value in [0.1, 10] for d = {d}, level = {level}"
        )));
    }
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    let f = sup_abs_bm_cdf(b, DEFAULT_SERIES_TOL)?;
    let slope = d as f64 * f.powi(d as i32 - 1) * sup_abs_bm_pdf(b);
    let gb = g(b);
    if slope > 0.0 {
        let polished = b - gb / slope;
        if polished > lo - 1e-8 && polished < hi + 1e-8 && g(polished).abs() <= gb.abs() {
            return Ok(polished);
        }
    }
    Ok(b)
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("level must lie in (0, 1), got {level}")))
    }
}

/// Cache key and Monte Carlo settings of a retrospective critical value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetroKey {
    pub d: usize,
    pub level: f64,
    pub grid_n: usize,
    pub n_mc: usize,
    pub seed: u64,
}

impl RetroKey {
    pub fn new(d: usize, level: f64, seed: u64) -> Self {
        Self {
            d,
            level,
            grid_n: RETRO_DEFAULT_GRID,
            n_mc: RETRO_DEFAULT_REPS,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        check_level(self.level)?;
        if self.grid_n < RETRO_MIN_GRID {
            return Err(Error::Config(format!("grid must have at least {RETRO_MIN_GRID} points")));
        }
        if self.n_mc < RETRO_MIN_REPS {
            return Err(Error::Config(format!("need at least {RETRO_MIN_REPS} replications")));
        }
        Ok(())
    }
}

/// Supremum over the grid of `Σ_i B_i(s)²` for one replication.
fn bridge_sup(d: usize, grid_n: usize, rng: &mut ChaCha8Rng, paths: &mut [f64]) -> f64 {
    let h = (1.0 / grid_n as f64).sqrt();
    for i in 0..d {
        let row = &mut paths[i * grid_n..(i + 1) * grid_n];
        let mut w = 0.0;
        for v in row.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            w += h * z;
            *v = w;
        }
    }
    let mut best = 0.0_f64;
    for j in 0..grid_n {
        let s = (j + 1) as f64 / grid_n as f64;
        let mut acc = 0.0;
        for i in 0..d {
            let row = &paths[i * grid_n..(i + 1) * grid_n];
            let b = row[j] - s * row[grid_n - 1];
            acc += b * b;
        }
        best = best.max(acc);
    }
    best
}

/// Simulated supremum draws, one per replication, in replication order.
pub fn retro_sup_draws(key: &RetroKey) -> Result<Vec<f64>> {
    key.validate()?;
    let draws = (0..key.n_mc)
        .into_par_iter()
        .map_init(
            || vec![0.0; key.d * key.grid_n],
            |buf, rep| {
                let mut rng = ChaCha8Rng::seed_from_u64(key.seed);
                rng.set_stream(rep as u64);
                bridge_sup(key.d, key.grid_n, &mut rng, buf)
            },
        )
        .collect();
    Ok(draws)
}

/// Empirical quantile: the `⌈p·m⌉`-th order statistic.
pub fn empirical_quantile(values: &mut [f64], p: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    let idx = ((p * m as f64).ceil() as usize).clamp(1, m) - 1;
    values[idx]
}

/// Monte Carlo `(1 − level)` quantile of `sup_s ‖W°_d(s)‖²`.
///
/// The supremum is taken over a uniform grid, which biases the quantile
/// slightly downward.
pub fn critical_value_retro(d: usize, level: f64, grid_n: usize, n_mc: usize, seed: u64) -> Result<f64> {
    let key = RetroKey {
        d,
        level,
        grid_n,
        n_mc,
        seed,
    };
    let mut draws = retro_sup_draws(&key)?;
    Ok(empirical_quantile(&mut draws, 1.0 - level))
}

/// Text cache of retrospective critical values, one record per line.
#[derive(Debug, Clone)]
pub struct RetroCache {
    path: PathBuf,
}

impl RetroCache {
    pub fn at(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    /// Cache file inside `$DPD_CACHE_DIR`, if the variable is set.
    pub fn from_env() -> Option<Self> {
        std::env::var_os(CACHE_DIR_ENV).map(|dir| Self::at(Path::new(&dir).join(CACHE_FILE)))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn lookup(&self, key: &RetroKey) -> Result<Option<f64>> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, c) = parse_record(line).map_err(|message| Error::Parse {
                line: i as u64 + 1,
                message,
            })?;
            if k == *key {
                return Ok(Some(c));
            }
        }
        Ok(None)
    }

    pub fn store(&self, key: &RetroKey, c: f64) -> Result<()> {
        if let Some(dir) = self.path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let fresh = !self.path.exists();
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        if fresh {
            writeln!(f, "{CACHE_HEADER}")?;
        }
        writeln!(
            f,
            "{} {:?} {} {} {} {:?}",
            key.d, key.level, key.grid_n, key.n_mc, key.seed, c
        )?;
        Ok(())
    }
}

fn parse_record(line: &str) -> std::result::Result<(RetroKey, f64), String> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 6 {
        return Err(format!("expected 6 fields, found {}", f.len()));
    }
    let bad = |name: &str, v: &str| format!("invalid {name} `{v}`");
    Ok((
        RetroKey {
            d: f[0].parse().map_err(|_| bad("d", f[0]))?,
            level: f[1].parse().map_err(|_| bad("level", f[1]))?,
            grid_n: f[2].parse().map_err(|_| bad("grid_n", f[2]))?,
            n_mc: f[3].parse().map_err(|_| bad("n_mc", f[3]))?,
            seed: f[4].parse().map_err(|_| bad("seed", f[4]))?,
        },
        f[5].parse().map_err(|_| bad("c", f[5]))?,
    ))
}

/// [`critical_value_retro`] behind an optional cache.
pub fn critical_value_retro_cached(key: &RetroKey, cache: Option<&RetroCache>) -> Result<f64> {
    key.validate()?;
    if let Some(cache) = cache {
        if let Some(c) = cache.lookup(key)? {
            return Ok(c);
        }
    }
    let c = critical_value_retro(key.d, key.level, key.grid_n, key.n_mc, key.seed)?;
    if let Some(cache) = cache {
        cache.store(key, c)?;
    }
    Ok(c)
}
