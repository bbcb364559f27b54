//! Retrospective change-point test
//!
//! ```text
//! T = max_{1≤k≤n} (1/n) S_kᵀ Î⁻¹ S_k,    S_k = Σ_{t≤k} ∂θ l̃_α(X_t; θ̂)
//! ```
//!
//! with `θ̂` fitted on the whole window. The change point estimate is the
//! smallest maximizing `k`.

use nalgebra::DMatrix;

use crate::critval::{critical_value_retro_cached, RetroCache, RetroKey, RETRO_DEFAULT_GRID, RETRO_DEFAULT_REPS};
use crate::dpd::{inv_sqrt_spd, Alpha, BoundaryFn, NormKind};
use crate::error::{Error, Result};
use crate::model::{fit, Engine, FitOptions, FitResult, ScoreSource, ScoreStream};
use crate::monitor::{run_monitor, MonitorOutcome};

/// Cumulative partial scores `S_k` and the per-observation scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePath {
    pub dim: usize,
    /// Row `k − 1` holds `S_k`; row-major.
    pub cumulative: Vec<f64>,
    /// Row `t − 1` holds the score of observation `t`.
    pub increments: Vec<f64>,
}

impl ScorePath {
    pub fn len(&self) -> usize {
        self.cumulative.len() / self.dim
    }
    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }
    /// `S_k` for `k ≥ 1`.
    pub fn partial(&self, k: usize) -> &[f64] {
        &self.cumulative[(k - 1) * self.dim..k * self.dim]
    }
    pub fn score(&self, t: usize) -> &[f64] {
        &self.increments[(t - 1) * self.dim..t * self.dim]
    }
}

/// Partial score sums at the fitted parameters, using the same score stream
/// as the monitor (single recursion started from the window).
pub fn partial_score_path(data: &[f64], fit: &FitResult) -> Result<ScorePath> {
    let mut stream = ScoreStream::at_start(fit, data)?;
    let d = stream.dim();
    let mut increments = vec![0.0; data.len() * d];
    let mut cumulative = vec![0.0; data.len() * d];
    let mut acc = vec![0.0; d];
    for (t, &x) in data.iter().enumerate() {
        let g = &mut increments[t * d..(t + 1) * d];
        stream.next_score(x, g);
        for (a, v) in acc.iter_mut().zip(g.iter()) {
            *a += v;
        }
        cumulative[t * d..(t + 1) * d].copy_from_slice(&acc);
    }
    Ok(ScorePath {
        dim: d,
        cumulative,
        increments,
    })
}

/// `(1/n) S_kᵀ Î⁻¹ S_k` for every `k`, computed as `‖Î^{-1/2} S_k‖² / n`.
pub fn statistic_path(path: &ScorePath, info_hat: &DMatrix<f64>, n: usize) -> Result<Vec<f64>> {
    let w = inv_sqrt_spd(info_hat, None)?;
    if w.nrows() != path.dim {
        return Err(Error::Dimension("information matrix does not match the score dimension".into()));
    }
    let d = path.dim;
    let mut out = Vec::with_capacity(path.len());
    for k in 1..=path.len() {
        let s = path.partial(k);
        let mut q = 0.0;
        for i in 0..d {
            let mut r = 0.0;
            for j in 0..d {
                r += w[(i, j)] * s[j];
            }
            q += r * r;
        }
        out.push(q / n as f64);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RetroOptions {
    pub fit: FitOptions,
    pub grid_n: usize,
    pub n_mc: usize,
    pub seed: u64,
    /// Skips the simulation when set.
    pub critical: Option<f64>,
    pub cache: Option<RetroCache>,
}

impl Default for RetroOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            grid_n: RETRO_DEFAULT_GRID,
            n_mc: RETRO_DEFAULT_REPS,
            seed: 0,
            critical: None,
            cache: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RetroResult {
    pub statistic: f64,
    /// `path[k − 1]` is the statistic at `k`.
    pub path: Vec<f64>,
    /// Smallest maximizing `k` (1-based).
    pub change_point: usize,
    pub critical: f64,
    pub reject: bool,
    pub fit: FitResult,
}

/// Maximum of `path` and the smallest 1-based index attaining it.
pub fn argmax_first(path: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in path.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i + 1, v));
        }
    }
    best
}

pub fn retro_test(data: &[f64], alpha: Alpha, engine: Engine, level: f64, opts: &RetroOptions) -> Result<RetroResult> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("level must lie in (0, 1), got {level}")));
    }
    let f = fit(data, engine, alpha, &opts.fit)?;
    if !f.converged {
        return Err(Error::OptimizationFailure {
            theta: f.theta.to_vec(),
            objective: f.objective,
            grad_norm: f.grad_norm,
        });
    }
    let scores = partial_score_path(data, &f)?;
    let path = statistic_path(&scores, &f.info_hat, data.len())?;
    let (change_point, statistic) = argmax_first(&path).ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    let critical = match opts.critical {
        Some(c) => c,
        None => {
            let key = RetroKey {
                d: engine.dim(),
                level,
                grid_n: opts.grid_n,
                n_mc: opts.n_mc,
                seed: opts.seed,
            };
            critical_value_retro_cached(&key, opts.cache.as_ref())?
        }
    };
    Ok(RetroResult {
        statistic,
        path,
        change_point,
        critical,
        reject: statistic > critical,
        fit: f,
    })
}

/// Sequential monitoring followed, after an alarm at `k̃`, by the
/// retrospective test on the first `n + k̃` observations.
#[allow(clippy::too_many_arguments)]
pub fn monitor_then_locate(
    historical: &[f64],
    stream: &[f64],
    engine: Engine,
    alpha: Alpha,
    boundary: &BoundaryFn,
    horizon: usize,
    level: f64,
    opts: &RetroOptions,
) -> Result<(MonitorOutcome, Option<RetroResult>)> {
    let f = fit(historical, engine, alpha, &opts.fit)?;
    let mon = run_monitor(&f, historical, stream, boundary, NormKind::Max, horizon)?;
    let located = match mon.stop_k {
        Some(k) => {
            let mut window = historical.to_vec();
            window.extend_from_slice(&stream[..k]);
            Some(retro_test(&window, alpha, engine, level, opts)?)
        }
        None => None,
    };
    Ok((mon, located))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::garch::GarchParams;
    use crate::model::Theta;
    use crate::normal::NormalTheta;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn cumulative_contract_and_first_order_condition() {
        let theta = GarchParams::new(0.2, &[0.2], &[0.6]).unwrap();
        let data = crate::simlab::simulate_garch_path(&theta, 600, 500, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        for a in [0.0, 0.3] {
            let f = fit(&data, Engine::Garch { p: 1, q: 1 }, Alpha::new(a).unwrap(), &FitOptions::default()).unwrap();
            let p = partial_score_path(&data, &f).unwrap();
            assert_eq!(p.len(), 600);
            for k in 2..=600 {
                for i in 0..3 {
                    assert_eq!(p.partial(k)[i], p.partial(k - 1)[i] + p.score(k)[i]);
                }
            }
            let stat = statistic_path(&p, &f.info_hat, 600).unwrap();
            assert!(stat.iter().all(|&v| v >= 0.0));
            assert!(stat[599] < 1e-6, "{}", stat[599]);
        }
    }

    #[test]
    fn scores_match_monitor_stream() {
        let data = normals(300, 4);
        let f = fit(&data, Engine::Normal, Alpha::new(0.2).unwrap(), &FitOptions::default()).unwrap();
        let p = partial_score_path(&data, &f).unwrap();
        let mut s = ScoreStream::at_start(&f, &data).unwrap();
        let mut g = [0.0; 2];
        for (t, &x) in data.iter().enumerate() {
            s.next_score(x, &mut g);
            assert_eq!(&g[..], p.score(t + 1));
        }
    }

    #[test]
    fn sign_symmetry_of_mean_component() {
        let data = normals(200, 5);
        let f = fit(&data, Engine::Normal, Alpha::new(0.3).unwrap(), &FitOptions::default()).unwrap();
        let Theta::Normal(t) = f.theta else { unreachable!() };
        let neg: Vec<f64> = data.iter().map(|x| -x).collect();
        let mut g = f.clone();
        g.theta = Theta::Normal(NormalTheta::new(-t.mu, t.sigma).unwrap());
        let a = partial_score_path(&data, &f).unwrap();
        let b = partial_score_path(&neg, &g).unwrap();
        for k in 1..=200 {
            assert_eq!(a.partial(k)[0], -b.partial(k)[0]);
            assert_eq!(a.partial(k)[1], b.partial(k)[1]);
        }
    }

    #[test]
    fn argmax_takes_first() {
        assert_eq!(argmax_first(&[1.0, 3.0, 2.0, 3.0]), Some((2, 3.0)));
        assert_eq!(argmax_first(&[]), None);
    }

    #[test]
    fn locates_mean_shift() {
        let mut data = normals(400, 6);
        for x in &mut data[200..] {
            *x += 1.0;
        }
        let opts = RetroOptions {
            critical: Some(2.5),
            ..Default::default()
        };
        let r = retro_test(&data, Alpha::new(0.2).unwrap(), Engine::Normal, 0.05, &opts).unwrap();
        assert!(r.reject);
        assert!((r.change_point as i64 - 200).abs() <= 20, "{}", r.change_point);
        assert_eq!(r.path.len(), 400);
        assert_eq!(r.statistic, r.path[r.change_point - 1]);
        assert!(retro_test(&data, Alpha::ZERO, Engine::Normal, 1.5, &opts).is_err());
    }

    #[test]
    fn monitor_then_locate_composes() {
        let hist = normals(300, 7);
        let mut stream = normals(600, 8);
        for x in &mut stream[100..] {
            *x *= 3.0;
        }
        let opts = RetroOptions {
            critical: Some(2.5),
            ..Default::default()
        };
        let b = BoundaryFn::constant(2.493).unwrap();
        let (mon, loc) =
            monitor_then_locate(&hist, &stream, Engine::Normal, Alpha::new(0.1).unwrap(), &b, 600, 0.05, &opts).unwrap();
        let k = mon.stop_k.unwrap();
        let loc = loc.unwrap();
        assert_eq!(loc.path.len(), 300 + k);
        assert!(loc.reject);
    }
}
