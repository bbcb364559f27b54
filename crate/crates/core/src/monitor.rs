//! Sequential monitoring: the standardized cumulative score detector
//!
//! ```text
//! D(k) = ‖Î^{-1/2} Σ_{t=n+1}^{n+k} ∂θ l̃_α(X_t; θ̂)‖ / (√n (1 + k/n))
//! ```
//!
//! and the stopping rule `min{k ≥ 1 : D(k) > b(k/n)}`. Both `θ̂` and `Î`
//! come from the historical window and stay frozen.

use nalgebra::DMatrix;

use crate::dpd::{norm_unchecked, Alpha, BoundaryFn, CompensatedVec, NormKind};
use crate::error::{Error, Result};
use crate::model::{standardizer, FitResult, ScoreSource, ScoreStream};

#[derive(Debug, Clone)]
pub struct MonitorState<S = ScoreStream> {
    source: S,
    inv_sqrt_info: DMatrix<f64>,
    score_sum: CompensatedVec,
    n: usize,
    k: usize,
    alpha: Alpha,
    last_score: Vec<f64>,
    sum_buf: Vec<f64>,
    std_buf: Vec<f64>,
}

/// Result of consuming one monitoring observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub k: usize,
    pub detector: f64,
    pub boundary: f64,
    pub alarm: bool,
}

impl MonitorState<ScoreStream> {
    /// Freezes `θ̂` and `Î^{-1/2}` from `fit`; the score stream continues the
    /// recursion from the end of `historical`.
    pub fn init(fit: &FitResult, historical: &[f64]) -> Result<Self> {
        if !fit.converged {
            return Err(Error::Config("monitoring requires a converged fit".into()));
        }
        if historical.len() != fit.n_used {
            return Err(Error::Dimension(format!(
                "fit used {} observations but {} historical values were supplied",
                fit.n_used,
                historical.len()
            )));
        }
        let s = standardizer(fit)?;
        let source = ScoreStream::after_history(fit, historical)?;
        Self::from_parts(source, s, historical.len(), fit.alpha)
    }
}

impl<S: ScoreSource> MonitorState<S> {
    pub fn from_parts(source: S, inv_sqrt_info: DMatrix<f64>, n: usize, alpha: Alpha) -> Result<Self> {
        let d = source.dim();
        if inv_sqrt_info.nrows() != d || inv_sqrt_info.ncols() != d {
            return Err(Error::Dimension(format!(
                "standardizer is {}x{}, score dimension is {d}",
                inv_sqrt_info.nrows(),
                inv_sqrt_info.ncols()
            )));
        }
        if n == 0 {
            return Err(Error::Config("historical length must be positive".into()));
        }
        Ok(Self {
            source,
            inv_sqrt_info,
            score_sum: CompensatedVec::zeros(d),
            n,
            k: 0,
            alpha,
            last_score: vec![0.0; d],
            sum_buf: vec![0.0; d],
            std_buf: vec![0.0; d],
        })
    }

    pub fn dim(&self) -> usize {
        self.score_sum.dim()
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn alpha(&self) -> Alpha {
        self.alpha
    }
    pub fn inv_sqrt_info(&self) -> &DMatrix<f64> {
        &self.inv_sqrt_info
    }
    pub fn score_sum(&self) -> Vec<f64> {
        self.score_sum.value()
    }
    /// Score of the most recently consumed observation.
    pub fn last_score(&self) -> &[f64] {
        &self.last_score
    }

    /// Detector value at the current `k` (zero before any observation).
    pub fn detector(&mut self, norm: NormKind) -> f64 {
        if self.k == 0 {
            return 0.0;
        }
        self.score_sum.value_into(&mut self.sum_buf);
        let d = self.dim();
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += self.inv_sqrt_info[(i, j)] * self.sum_buf[j];
            }
            self.std_buf[i] = acc;
        }
        let n = self.n as f64;
        norm_unchecked(&self.std_buf, norm) / (n.sqrt() * (1.0 + self.k as f64 / n))
    }

    /// Consumes one observation; the alarm uses a strict inequality.
    pub fn step(&mut self, x: f64, boundary: &BoundaryFn, norm: NormKind) -> StepOutcome {
        self.source.next_score(x, &mut self.last_score);
        self.score_sum.add(&self.last_score);
        self.k += 1;
        let detector = self.detector(norm);
        let b = boundary.eval(self.k as f64 / self.n as f64);
        StepOutcome {
            k: self.k,
            detector,
            boundary: b,
            alarm: detector > b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorOutcome {
    /// `detector_path[i]` is `D(i + 1)`.
    pub detector_path: Vec<f64>,
    /// First `k` (1-based) with `D(k) > b(k/n)`.
    pub stop_k: Option<usize>,
    pub boundary: BoundaryFn,
    /// Largest `k` the scan was allowed to reach.
    pub horizon: usize,
    pub n: usize,
}

impl MonitorOutcome {
    pub fn detector(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.detector_path[k - 1]
        }
    }
}

/// Scans `stream` until the first crossing or `horizon` steps.
pub fn run_monitor(
    fit: &FitResult,
    historical: &[f64],
    stream: &[f64],
    boundary: &BoundaryFn,
    norm: NormKind,
    horizon: usize,
) -> Result<MonitorOutcome> {
    let state = MonitorState::init(fit, historical)?;
    run_with_state(state, stream, boundary, norm, horizon)
}

pub fn run_with_state<S: ScoreSource>(
    mut state: MonitorState<S>,
    stream: &[f64],
    boundary: &BoundaryFn,
    norm: NormKind,
    horizon: usize,
) -> Result<MonitorOutcome> {
    boundary.validate()?;
    if stream.is_empty() {
        return Err(Error::Config("monitoring stream is empty".into()));
    }
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let mut path = Vec::with_capacity(horizon.min(stream.len()));
    let mut stop_k = None;
    for &x in stream.iter().take(horizon) {
        let out = state.step(x, boundary, norm);
        path.push(out.detector);
        if out.alarm {
            stop_k = Some(out.k);
            break;
        }
    }
    Ok(MonitorOutcome {
        detector_path: path,
        stop_k,
        boundary: *boundary,
        horizon,
        n: state.n,
    })
}
