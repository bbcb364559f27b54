//! Minimum density power divergence estimation for i.i.d. `N(μ, σ²)` data.
//!
//! Parameters are `(μ, σ)` with `σ` bounded below by a floor, which keeps the
//! density bounded over the parameter space.

use nalgebra::DMatrix;

use crate::dpd::Alpha;
use crate::error::{Error, Result};
use crate::optim::{self, Constraints};

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-4;
pub const MIN_SAMPLE: usize = 10;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalTheta {
    pub mu: f64,
    pub sigma: f64,
}

impl NormalTheta {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        Self::with_floor(mu, sigma, DEFAULT_SIGMA_FLOOR)
    }

    pub fn with_floor(mu: f64, sigma: f64, floor: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() || sigma < floor {
            return Err(Error::Config(format!(
                "normal parameters need finite mu and sigma >= {floor}, got ({mu}, {sigma})"
            )));
        }
        Ok(Self { mu, sigma })
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.mu, self.sigma]
    }
}

/// Per-observation divergence loss.
///
/// `α > 0`: `∫f^{1+α} − (1 + 1/α) f^α(x)`, with the closed form
/// `∫f^{1+α} = σ^{-α} (2π)^{-α/2} (1+α)^{-1/2}`. `α = 0`: `−log f(x)`.
pub fn l_alpha(x: f64, theta: NormalTheta, alpha: Alpha) -> f64 {
    let a = alpha.value();
    let z = (x - theta.mu) / theta.sigma;
    if a == 0.0 {
        0.5 * LN_2PI + theta.sigma.ln() + 0.5 * z * z
    } else {
        let c = (-0.5 * a * LN_2PI).exp() * theta.sigma.powf(-a);
        c * ((1.0 + a).powf(-0.5) - (1.0 + 1.0 / a) * (-0.5 * a * z * z).exp())
    }
}

/// Analytic gradient `(∂/∂μ, ∂/∂σ)` of [`l_alpha`].
pub fn grad_l_alpha(x: f64, theta: NormalTheta, alpha: Alpha) -> [f64; 2] {
    let a = alpha.value();
    let s = theta.sigma;
    let z = (x - theta.mu) / s;
    if a == 0.0 {
        [-z / s, (1.0 - z * z) / s]
    } else {
        let c = (-0.5 * a * LN_2PI).exp() * s.powf(-a - 1.0);
        let e = (-0.5 * a * z * z).exp();
        let d_mu = -c * (1.0 + a) * z * e;
        let d_sigma = c * (-a * (1.0 + a).powf(-0.5) + (1.0 + a) * (1.0 - z * z) * e);
        [d_mu, d_sigma]
    }
}

/// Mean loss and its gradient over a sample.
pub fn objective(data: &[f64], theta: NormalTheta, alpha: Alpha, grad: &mut [f64]) -> f64 {
    let n = data.len() as f64;
    let mut f = 0.0;
    grad[0] = 0.0;
    grad[1] = 0.0;
    for &x in data {
        f += l_alpha(x, theta, alpha);
        let g = grad_l_alpha(x, theta, alpha);
        grad[0] += g[0];
        grad[1] += g[1];
    }
    grad[0] /= n;
    grad[1] /= n;
    f / n
}

/// `(1/n) Σ g_t g_tᵀ` with `g_t` the per-observation gradient at `theta`.
pub fn info_hat(data: &[f64], theta: NormalTheta, alpha: Alpha) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2, 2);
    for &x in data {
        let g = grad_l_alpha(x, theta, alpha);
        m[(0, 0)] += g[0] * g[0];
        m[(0, 1)] += g[0] * g[1];
        m[(1, 1)] += g[1] * g[1];
    }
    m /= data.len() as f64;
    m[(1, 0)] = m[(0, 1)];
    m
}

#[derive(Debug, Clone)]
pub struct NormalFitOptions {
    pub sigma_floor: f64,
    pub optim: optim::Options,
}

impl Default for NormalFitOptions {
    fn default() -> Self {
        Self {
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            optim: optim::Options {
                grad_tol: 1e-10,
                accept_tol: 1e-8,
                ..optim::Options::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct NormalFit {
    pub theta: NormalTheta,
    pub objective: f64,
    pub grad_norm: f64,
    pub converged: bool,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub(crate) fn sample_moments(data: &[f64]) -> (f64, f64) {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Minimizes the mean divergence loss over `(μ, σ ≥ floor)` from three starts:
/// `(median, 1.4826·MAD)`, `(mean, sd)` and a perturbed point.
pub fn fit(data: &[f64], alpha: Alpha, opts: &NormalFitOptions) -> Result<NormalFit> {
    if data.len() < MIN_SAMPLE {
        return Err(Error::InsufficientData {
            needed: MIN_SAMPLE,
            got: data.len(),
        });
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("sample has non-finite values".into()));
    }
    let (mean, var) = sample_moments(data);
    if !(var > 0.0) {
        return Err(Error::DegenerateSample("sample variance is zero".into()));
    }
    let sd = var.sqrt();
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let med = median(&sorted);
    let mut dev: Vec<f64> = sorted.iter().map(|x| (x - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mad = 1.4826 * median(&dev);
    let floor = opts.sigma_floor;

    let starts = [
        [med, if mad > floor { mad } else { sd }],
        [mean, sd],
        [mean + 0.25 * sd, 0.75 * sd],
    ];
    let cons = Constraints::boxed(vec![f64::NEG_INFINITY, floor], vec![f64::INFINITY, f64::INFINITY]);

    let mut best: Option<optim::Outcome> = None;
    for start in starts {
        let out = optim::minimize(
            |x, g| {
                objective(
                    data,
                    NormalTheta {
                        mu: x[0],
                        sigma: x[1],
                    },
                    alpha,
                    g,
                )
            },
            &start,
            &cons,
            &opts.optim,
        );
        best = Some(match best {
            None => out,
            Some(b) => pick_better(b, out),
        });
    }
    let best = best.expect("at least one start");
    if !best.converged {
        return Err(Error::OptimizationFailure {
            theta: best.x,
            objective: best.f,
            grad_norm: best.grad_norm,
        });
    }
    Ok(NormalFit {
        theta: NormalTheta {
            mu: best.x[0],
            sigma: best.x[1],
        },
        objective: best.f,
        grad_norm: best.grad_norm,
        converged: true,
    })
}

/// Converged outcomes beat unconverged ones; then the lower objective wins.
pub(crate) fn pick_better(a: optim::Outcome, b: optim::Outcome) -> optim::Outcome {
    match (a.converged, b.converged) {
        (true, false) => a,
        (false, true) => b,
        _ => {
            if b.f < a.f {
                b
            } else {
                a
            }
        }
    }
}
