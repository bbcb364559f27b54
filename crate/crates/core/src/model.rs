//! Engine-independent fit results and per-observation score streams.

use std::fmt;

use nalgebra::DMatrix;

use crate::dpd::{self, Alpha};
use crate::error::{Error, Result};
use crate::garch::{self, GarchFitOptions, GarchParams, VolGradState, VolState};
use crate::normal::{self, NormalFitOptions, NormalTheta};

/// Model family used for fitting and scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Normal,
    Garch { p: usize, q: usize },
}

impl Engine {
    pub fn dim(&self) -> usize {
        match *self {
            Engine::Normal => 2,
            Engine::Garch { p, q } => 1 + p + q,
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Engine::Normal => write!(f, "normal"),
            Engine::Garch { p, q } => write!(f, "garch({p},{q})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Theta {
    Normal(NormalTheta),
    Garch(GarchParams),
}

impl Theta {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Theta::Normal(t) => t.to_vec(),
            Theta::Garch(g) => g.as_slice().to_vec(),
        }
    }

    /// Parameter names in vector order.
    pub fn names(&self) -> Vec<String> {
        match self {
            Theta::Normal(_) => vec!["mu".into(), "sigma".into()],
            Theta::Garch(g) => {
                let mut v = vec!["omega".to_string()];
                v.extend((1..=g.p()).map(|i| format!("alpha{i}")));
                v.extend((1..=g.q()).map(|j| format!("beta{j}")));
                v
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub normal: NormalFitOptions,
    pub garch: GarchFitOptions,
}

/// Fitted parameters with the information estimate used for standardization.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub engine: Engine,
    pub alpha: Alpha,
    pub theta: Theta,
    pub objective: f64,
    pub info_hat: DMatrix<f64>,
    pub grad_norm: f64,
    pub converged: bool,
    pub n_used: usize,
}

impl FitResult {
    pub fn dim(&self) -> usize {
        self.engine.dim()
    }
}

/// Fits `engine` to `data` and attaches the information estimate.
pub fn fit(data: &[f64], engine: Engine, alpha: Alpha, opts: &FitOptions) -> Result<FitResult> {
    match engine {
        Engine::Normal => {
            let f = normal::fit(data, alpha, &opts.normal)?;
            let info = normal::info_hat(data, f.theta, alpha);
            Ok(FitResult {
                engine,
                alpha,
                theta: Theta::Normal(f.theta),
                objective: f.objective,
                info_hat: info,
                grad_norm: f.grad_norm,
                converged: f.converged,
                n_used: data.len(),
            })
        }
        Engine::Garch { p, q } => {
            let f = garch::fit(data, alpha, p, q, &opts.garch)?;
            let info = garch::info_hat(data, &f.params, alpha, &f.init)?;
            Ok(FitResult {
                engine,
                alpha,
                theta: Theta::Garch(f.params),
                objective: f.objective,
                info_hat: info,
                grad_norm: f.grad_norm,
                converged: f.converged,
                n_used: data.len(),
            })
        }
    }
}

/// Produces `∂θ l̃_α(X_t; θ̂)` for successive observations.
pub trait ScoreSource {
    fn dim(&self) -> usize;
    /// Consumes `x` and writes its score into `out`.
    fn next_score(&mut self, x: f64, out: &mut [f64]);
}

/// Score stream at frozen parameters. For GARCH it carries the volatility
/// recursion, started from the mean of squares of the fitting window and
/// continued without re-initialization.
#[derive(Debug, Clone)]
pub struct ScoreStream {
    inner: Inner,
}

#[derive(Debug, Clone)]
enum Inner {
    Normal {
        theta: NormalTheta,
        alpha: Alpha,
    },
    Garch {
        params: GarchParams,
        kernel: garch::LossKernel,
        state: VolGradState,
        ds2: Vec<f64>,
    },
}

impl ScoreStream {
    /// Stream positioned before the first observation of `window`, with the
    /// same initialization the fit used.
    pub fn at_start(fit: &FitResult, window: &[f64]) -> Result<Self> {
        match (&fit.theta, fit.engine) {
            (Theta::Normal(t), Engine::Normal) => Ok(ScoreStream {
                inner: Inner::Normal {
                    theta: *t,
                    alpha: fit.alpha,
                },
            }),
            (Theta::Garch(params), Engine::Garch { p, q }) => {
                let init = garch::vol_init(window, p, q)?;
                Ok(Self::garch_from_state(params.clone(), fit.alpha, init))
            }
            _ => Err(Error::Config("fit result engine and parameters disagree".into())),
        }
    }

    pub fn garch_from_state(params: GarchParams, alpha: Alpha, init: VolState) -> Self {
        let d = params.dim();
        ScoreStream {
            inner: Inner::Garch {
                params,
                kernel: garch::LossKernel::new(alpha),
                state: VolGradState::new(init),
                ds2: vec![0.0; d],
            },
        }
    }

    /// Stream positioned right after the historical window: the recursion has
    /// consumed every historical observation.
    pub fn after_history(fit: &FitResult, historical: &[f64]) -> Result<Self> {
        let mut s = Self::at_start(fit, historical)?;
        if let Inner::Garch { params, state, ds2, .. } = &mut s.inner {
            for &x in historical {
                state.step(params, x, ds2);
            }
        }
        Ok(s)
    }
}

impl ScoreSource for ScoreStream {
    fn dim(&self) -> usize {
        match &self.inner {
            Inner::Normal { .. } => 2,
            Inner::Garch { params, .. } => params.dim(),
        }
    }

    #[inline]
    fn next_score(&mut self, x: f64, out: &mut [f64]) {
        match &mut self.inner {
            Inner::Normal { theta, alpha } => {
                let g = normal::grad_l_alpha(x, *theta, *alpha);
                out[0] = g[0];
                out[1] = g[1];
            }
            Inner::Garch {
                params,
                kernel,
                state,
                ds2,
            } => {
                let s2 = state.step(params, x, ds2);
                let slope = kernel.dloss_ds2(x, s2);
                for (o, d) in out.iter_mut().zip(ds2.iter()) {
                    *o = slope * d;
                }
            }
        }
    }
}

/// Frozen `Î^{-1/2}` with the default eigenvalue floor.
pub fn standardizer(fit: &FitResult) -> Result<DMatrix<f64>> {
    dpd::inv_sqrt_spd(&fit.info_hat, None)
}
