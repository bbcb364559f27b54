//! GARCH(p, q) volatility recursion, its parameter gradients, the density
//! power divergence loss for Gaussian innovations and its minimizer.
//!
//! Parameter vectors are laid out as `[ω, α_1..α_p, β_1..β_q]`.

use nalgebra::DMatrix;

use crate::dpd::{default_eig_floor, min_eigenvalue, Alpha};
use crate::error::{Error, Result};
use crate::normal::{pick_better, sample_moments};
use crate::optim::{self, Constraints};

pub const MAX_ORDER: usize = 5;
pub const OMEGA_MIN: f64 = 1e-6;
pub const COEF_MAX: f64 = 0.9999;
pub const BETA_SUM_MAX: f64 = 1.0 - 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GarchParams {
    theta: Vec<f64>,
    p: usize,
    q: usize,
}

fn check_order(p: usize, q: usize) -> Result<()> {
    if !(1..=MAX_ORDER).contains(&p) || q > MAX_ORDER {
        return Err(Error::Config(format!(
            "GARCH order must satisfy 1 <= p <= {MAX_ORDER}, 0 <= q <= {MAX_ORDER}; got ({p}, {q})"
        )));
    }
    Ok(())
}

impl GarchParams {
    pub fn new(omega: f64, alphas: &[f64], betas: &[f64]) -> Result<Self> {
        let mut theta = Vec::with_capacity(1 + alphas.len() + betas.len());
        theta.push(omega);
        theta.extend_from_slice(alphas);
        theta.extend_from_slice(betas);
        Self::from_vec(theta, alphas.len(), betas.len())
    }

    pub fn from_vec(theta: Vec<f64>, p: usize, q: usize) -> Result<Self> {
        check_order(p, q)?;
        if theta.len() != 1 + p + q {
            return Err(Error::Dimension(format!(
                "GARCH({p},{q}) needs {} parameters, got {}",
                1 + p + q,
                theta.len()
            )));
        }
        let params = Self { theta, p, q };
        params.validate()?;
        Ok(params)
    }

    pub(crate) fn from_raw(theta: &[f64], p: usize, q: usize) -> Self {
        Self {
            theta: theta.to_vec(),
            p,
            q,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("GARCH parameters must be finite".into()));
        }
        if self.omega() < OMEGA_MIN {
            return Err(Error::Config(format!("omega must be >= {OMEGA_MIN}, got {}", self.omega())));
        }
        for &c in self.alphas().iter().chain(self.betas()) {
            if !(0.0..=COEF_MAX).contains(&c) {
                return Err(Error::Config(format!("GARCH coefficients must lie in [0, {COEF_MAX}], got {c}")));
            }
        }
        let bsum: f64 = self.betas().iter().sum();
        if bsum > BETA_SUM_MAX {
            return Err(Error::Config(format!("sum of betas must be <= {BETA_SUM_MAX}, got {bsum}")));
        }
        Ok(())
    }

    #[inline]
    pub fn omega(&self) -> f64 {
        self.theta[0]
    }
    #[inline]
    pub fn alphas(&self) -> &[f64] {
        &self.theta[1..1 + self.p]
    }
    #[inline]
    pub fn betas(&self) -> &[f64] {
        &self.theta[1 + self.p..]
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn dim(&self) -> usize {
        self.theta.len()
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn persistence(&self) -> f64 {
        self.alphas().iter().sum::<f64>() + self.betas().iter().sum::<f64>()
    }

    /// Second-moment stationarity, required for simulation.
    pub fn is_stationary(&self) -> bool {
        self.persistence() < 1.0
    }

    pub fn unconditional_variance(&self) -> Option<f64> {
        self.is_stationary().then(|| self.omega() / (1.0 - self.persistence()))
    }
}

/// Lagged squared observations and fitted variances, most recent first.
#[derive(Debug, Clone, PartialEq)]
pub struct VolState {
    x2: Vec<f64>,
    s2: Vec<f64>,
    consumed: usize,
}

impl VolState {
    pub fn lagged_x2(&self) -> &[f64] {
        &self.x2
    }
    pub fn lagged_sigma2(&self) -> &[f64] {
        &self.s2
    }
    pub fn consumed(&self) -> usize {
        self.consumed
    }

    /// Builds a state from explicit lags (most recent first).
    pub fn from_lags(x2: Vec<f64>, s2: Vec<f64>) -> Result<Self> {
        if x2.is_empty() || x2.len() > MAX_ORDER || s2.len() > MAX_ORDER {
            return Err(Error::Dimension("lag vectors must have 1..=5 and 0..=5 entries".into()));
        }
        if x2.iter().chain(&s2).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Domain("lag entries must be finite and strictly positive".into()));
        }
        Ok(Self { x2, s2, consumed: 0 })
    }

    #[inline]
    pub(crate) fn next_sigma2(&self, params: &GarchParams) -> f64 {
        let mut s = params.omega();
        for (a, x2) in params.alphas().iter().zip(&self.x2) {
            s += a * x2;
        }
        for (b, s2) in params.betas().iter().zip(&self.s2) {
            s += b * s2;
        }
        s
    }

    #[inline]
    pub(crate) fn push(&mut self, x: f64, sigma2: f64) {
        if !self.x2.is_empty() {
            self.x2.rotate_right(1);
            self.x2[0] = x * x;
        }
        if !self.s2.is_empty() {
            self.s2.rotate_right(1);
            self.s2[0] = sigma2;
        }
        self.consumed += 1;
    }

    /// Computes `σ̃_t² = ω + Σ α_i X²_{t-i} + Σ β_j σ̃²_{t-j}` from the lags,
    /// then shifts `x_new²` and `σ̃_t²` into them.
    #[inline]
    pub fn step(&mut self, params: &GarchParams, x_new: f64) -> f64 {
        debug_assert_eq!((self.x2.len(), self.s2.len()), (params.p, params.q));
        let s = self.next_sigma2(params);
        self.push(x_new, s);
        s
    }
}

/// Pre-sample lags set to the mean of squared observations of `window`.
pub fn vol_init(window: &[f64], p: usize, q: usize) -> Result<VolState> {
    check_order(p, q)?;
    let needed = p.max(q).max(1);
    if window.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            got: window.len(),
        });
    }
    let m = window.iter().map(|x| x * x).sum::<f64>() / window.len() as f64;
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::DegenerateSample(
            "mean of squared observations must be finite and positive".into(),
        ));
    }
    Ok(VolState {
        x2: vec![m; p],
        s2: vec![m; q],
        consumed: 0,
    })
}

/// [`VolState`] plus the lagged gradients `∂σ̃²_{t-j}/∂θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolGradState {
    vol: VolState,
    ds2: Vec<f64>,
    dim: usize,
}

impl VolGradState {
    /// Gradient lags start at zero.
    pub fn new(vol: VolState) -> Self {
        let dim = 1 + vol.x2.len() + vol.s2.len();
        Self {
            ds2: vec![0.0; vol.s2.len() * dim],
            vol,
            dim,
        }
    }

    pub fn vol(&self) -> &VolState {
        &self.vol
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Advances the recursion; writes `∂σ̃_t²/∂θ` into `grad` and returns `σ̃_t²`.
    #[inline]
    pub fn step(&mut self, params: &GarchParams, x_new: f64, grad: &mut [f64]) -> f64 {
        let (p, q, d) = (params.p, params.q, self.dim);
        debug_assert_eq!(grad.len(), d);
        let s = self.vol.next_sigma2(params);
        grad[0] = 1.0;
        grad[1..1 + p].copy_from_slice(&self.vol.x2);
        grad[1 + p..].copy_from_slice(&self.vol.s2);
        for (j, b) in params.betas().iter().enumerate() {
            let lag = &self.ds2[j * d..(j + 1) * d];
            for (g, l) in grad.iter_mut().zip(lag) {
                *g += b * l;
            }
        }
        if q > 0 {
            self.ds2.rotate_right(d);
            self.ds2[..d].copy_from_slice(grad);
        }
        self.vol.push(x_new, s);
        s
    }
}

/// Fitted variances and their gradients along a path.
#[derive(Debug, Clone)]
pub struct VolPath {
    pub sigma2: Vec<f64>,
    /// Row-major, one row of length `dim` per observation.
    pub grads: Vec<f64>,
    pub dim: usize,
}

impl VolPath {
    pub fn grad(&self, t: usize) -> &[f64] {
        &self.grads[t * self.dim..(t + 1) * self.dim]
    }
}

pub fn vol_path_with_grads(params: &GarchParams, data: &[f64], init: &VolState) -> VolPath {
    let mut state = VolGradState::new(init.clone());
    let d = params.dim();
    let mut sigma2 = Vec::with_capacity(data.len());
    let mut grads = vec![0.0; data.len() * d];
    for (t, &x) in data.iter().enumerate() {
        sigma2.push(state.step(params, x, &mut grads[t * d..(t + 1) * d]));
    }
    VolPath { sigma2, grads, dim: d }
}

/// Loss constants for one value of the tuning parameter.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LossKernel {
    a: f64,
    inv_sqrt_1pa: f64,
    weight: f64,
}

impl LossKernel {
    pub(crate) fn new(alpha: Alpha) -> Self {
        let a = alpha.value();
        Self {
            a,
            inv_sqrt_1pa: (1.0 + a).powf(-0.5),
            weight: if a > 0.0 { 1.0 + 1.0 / a } else { 0.0 },
        }
    }

    #[inline]
    pub(crate) fn loss(&self, x: f64, s2: f64) -> f64 {
        let u = x * x / s2;
        if self.a == 0.0 {
            u + s2.ln()
        } else {
            (-0.5 * self.a * s2.ln()).exp() * (self.inv_sqrt_1pa - self.weight * (-0.5 * self.a * u).exp())
        }
    }

    /// Scalar `∂l/∂σ²`; the parameter gradient is this times `∂σ²/∂θ`.
    #[inline]
    pub(crate) fn dloss_ds2(&self, x: f64, s2: f64) -> f64 {
        let u = x * x / s2;
        if self.a == 0.0 {
            (1.0 - u) / s2
        } else {
            let pw = (-0.5 * self.a * s2.ln()).exp();
            let h = -0.5 * self.a * self.inv_sqrt_1pa + 0.5 * (1.0 + self.a) * (1.0 - u) * (-0.5 * self.a * u).exp();
            h * pw / s2
        }
    }

    /// Loss and `∂l/∂σ²` together.
    #[inline]
    pub(crate) fn loss_and_slope(&self, x: f64, s2: f64) -> (f64, f64) {
        let u = x * x / s2;
        if self.a == 0.0 {
            (u + s2.ln(), (1.0 - u) / s2)
        } else {
            let ln_s2 = s2.ln();
            let pw = (-0.5 * self.a * ln_s2).exp();
            let e = (-0.5 * self.a * u).exp();
            let l = pw * (self.inv_sqrt_1pa - self.weight * e);
            let h = -0.5 * self.a * self.inv_sqrt_1pa + 0.5 * (1.0 + self.a) * (1.0 - u) * e;
            (l, h * pw / s2)
        }
    }
}

/// Per-observation loss given the fitted variance.
///
/// `α > 0`: `(σ²)^{-α/2} {(1+α)^{-1/2} − (1 + 1/α) exp(−α X² / (2σ²))}`;
/// `α = 0`: `X²/σ² + log σ²`. The `(2π)^{-α/2}` factor is omitted; it cancels
/// in the standardized detector.
pub fn l_alpha(x: f64, sigma2: f64, alpha: Alpha) -> f64 {
    LossKernel::new(alpha).loss(x, sigma2)
}

/// Parameter gradient of [`l_alpha`] given `∂σ²/∂θ`.
pub fn grad_l_alpha(x: f64, sigma2: f64, dsigma2: &[f64], alpha: Alpha, out: &mut [f64]) {
    let slope = LossKernel::new(alpha).dloss_ds2(x, sigma2);
    for (o, d) in out.iter_mut().zip(dsigma2) {
        *o = slope * d;
    }
}

/// Mean loss over `data` with the recursion started from `init`; the mean
/// gradient goes to `grad`.
pub fn objective(data: &[f64], params: &GarchParams, alpha: Alpha, init: &VolState, grad: &mut [f64]) -> f64 {
    let kernel = LossKernel::new(alpha);
    let d = params.dim();
    let mut state = VolGradState::new(init.clone());
    let mut ds2 = vec![0.0; d];
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut f = 0.0;
    for &x in data {
        let s2 = state.step(params, x, &mut ds2);
        let (l, slope) = kernel.loss_and_slope(x, s2);
        f += l;
        for (g, v) in grad.iter_mut().zip(&ds2) {
            *g += slope * v;
        }
    }
    let n = data.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    f / n
}

/// `(1/n) Σ ∂θ l̃_t ∂θ' l̃_t`, rejected when its smallest eigenvalue falls
/// below `1e-10 · trace / d`.
pub fn info_hat(data: &[f64], params: &GarchParams, alpha: Alpha, init: &VolState) -> Result<DMatrix<f64>> {
    let kernel = LossKernel::new(alpha);
    let d = params.dim();
    let mut state = VolGradState::new(init.clone());
    let mut ds2 = vec![0.0; d];
    let mut m = DMatrix::<f64>::zeros(d, d);
    for &x in data {
        let s2 = state.step(params, x, &mut ds2);
        let slope = kernel.dloss_ds2(x, s2);
        for i in 0..d {
            let gi = slope * ds2[i];
            for j in i..d {
                m[(i, j)] += gi * slope * ds2[j];
            }
        }
    }
    m /= data.len() as f64;
    for i in 0..d {
        for j in 0..i {
            m[(i, j)] = m[(j, i)];
        }
    }
    let floor = default_eig_floor(&m);
    let min = min_eigenvalue(&m)?;
    if !(min >= floor) || min <= 0.0 {
        return Err(Error::SingularInformation {
            min_eigenvalue: min,
            floor,
        });
    }
    Ok(m)
}

/// Closed forms `(k(α), g(α))` with `I_α = k(α) E[(σ²)^{-α-2} ∂σ² ∂σ²']` and
/// `J_α = g(α) E[(σ²)^{-α/2-2} ∂σ² ∂σ²']`, for the `α > 0` loss form
/// (at `α = 0` this is half the `X²/σ² + log σ²` gradient).
pub fn k_g_constants(alpha: Alpha) -> (f64, f64) {
    let a = alpha.value();
    let k = (1.0 + a).powi(2) * (1.0 + 2.0 * a * a) / (2.0 * (1.0 + 2.0 * a).powf(2.5)) - a * a / (4.0 * (1.0 + a));
    let g = (a * a + 2.0) / (4.0 * (1.0 + a).powf(1.5));
    (k, g)
}

#[derive(Debug, Clone)]
pub struct GarchFitOptions {
    pub min_len: usize,
    pub optim: optim::Options,
}

impl Default for GarchFitOptions {
    fn default() -> Self {
        Self {
            min_len: 100,
            optim: optim::Options {
                grad_tol: 1e-10,
                accept_tol: 1e-6,
                ..optim::Options::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct GarchFit {
    pub params: GarchParams,
    pub objective: f64,
    pub grad_norm: f64,
    pub converged: bool,
    /// Pre-sample state the objective was evaluated from.
    pub init: VolState,
}

pub fn constraints(p: usize, q: usize) -> Constraints {
    let d = 1 + p + q;
    let mut lower = vec![0.0; d];
    lower[0] = OMEGA_MIN;
    let mut upper = vec![COEF_MAX; d];
    upper[0] = f64::INFINITY;
    Constraints {
        lower,
        upper,
        sum_cap: (q > 1).then(|| (1 + p..d, BETA_SUM_MAX)),
    }
}

fn autocorr(y: &[f64], lag: usize) -> f64 {
    let n = y.len();
    let m = y.iter().sum::<f64>() / n as f64;
    let var: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    if var <= 0.0 || n <= lag {
        return 0.0;
    }
    let cov: f64 = (lag..n).map(|t| (y[t] - m) * (y[t - lag] - m)).sum();
    cov / var
}

/// GARCH(1,1)-style moment seed from the autocorrelations of `X²`.
fn moment_seed(data: &[f64], var: f64) -> (f64, f64, f64) {
    let x2: Vec<f64> = data.iter().map(|x| x * x).collect();
    let r1 = autocorr(&x2, 1);
    let r2 = autocorr(&x2, 2);
    let phi = if r1 > 1e-3 { (r2 / r1).clamp(0.05, 0.98) } else { 0.5 };
    let acf1 = |a: f64| {
        let b = phi - a;
        a * (1.0 - a * b - b * b) / (1.0 - 2.0 * a * b - b * b)
    };
    let target = r1.clamp(1e-3, 0.999 * phi);
    let (mut lo, mut hi) = (0.0, phi);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if acf1(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = (0.5 * (lo + hi)).clamp(0.01, phi - 0.01).max(0.01);
    let b = (phi - a).max(0.0);
    ((var * (1.0 - phi)).max(OMEGA_MIN), a, b)
}

fn spread(omega: f64, a_total: f64, b_total: f64, p: usize, q: usize) -> Vec<f64> {
    let mut x = vec![omega];
    x.extend(std::iter::repeat_n(a_total / p as f64, p));
    if q > 0 {
        x.extend(std::iter::repeat_n(b_total / q as f64, q));
    }
    x
}

/// Minimizes the mean loss over the constraint box.
///
/// The recursion starts from [`vol_init`] over `data`. Starts:
/// `(0.1·v̂, 0.1, 0.8)`, `(0.5·v̂, 0.2, 0.2)` and a moment-based seed, with
/// `v̂` the sample variance; the lowest converged objective wins.
pub fn fit(data: &[f64], alpha: Alpha, p: usize, q: usize, opts: &GarchFitOptions) -> Result<GarchFit> {
    check_order(p, q)?;
    if data.len() < opts.min_len.max(p.max(q).max(1)) {
        return Err(Error::InsufficientData {
            needed: opts.min_len,
            got: data.len(),
        });
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("series has non-finite values".into()));
    }
    let (_, var) = sample_moments(data);
    if !(var > 0.0) {
        return Err(Error::DegenerateSample("series is constant".into()));
    }
    let init = vol_init(data, p, q)?;
    let cons = constraints(p, q);
    let (mw, ma, mb) = moment_seed(data, var);
    let starts = [
        spread(0.1 * var, 0.1, 0.8, p, q),
        spread(0.5 * var, 0.2, 0.2, p, q),
        spread(mw, ma, mb, p, q),
    ];
    let mut best: Option<optim::Outcome> = None;
    for start in starts {
        let out = optim::minimize(
            |x, g| objective(data, &GarchParams::from_raw(x, p, q), alpha, &init, g),
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
    Ok(GarchFit {
        params: GarchParams::from_raw(&best.x, p, q),
        objective: best.f,
        grad_norm: best.grad_norm,
        converged: true,
        init,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn params(v: &[f64]) -> GarchParams {
        GarchParams::from_vec(v.to_vec(), 1, 1).unwrap()
    }

    fn a(v: f64) -> Alpha {
        Alpha::new(v).unwrap()
    }

    fn sim(theta: &GarchParams, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        crate::simlab::simulate_garch_path(theta, n, 500, &mut rng).unwrap()
    }

    #[test]
    fn param_validation() {
        assert!(GarchParams::new(0.2, &[0.2], &[0.6]).is_ok());
        assert!(GarchParams::new(1e-7, &[0.2], &[0.6]).is_err());
        assert!(GarchParams::new(0.2, &[1.0], &[0.6]).is_err());
        assert!(GarchParams::new(0.2, &[0.2], &[0.6, 0.5]).is_err());
        assert!(GarchParams::new(0.2, &[], &[0.6]).is_err());
        assert!(GarchParams::new(0.2, &[0.1; 6], &[]).is_err());
        let p = GarchParams::new(0.2, &[0.2], &[0.6]).unwrap();
        assert_relative_eq!(p.unconditional_variance().unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn init_examples() {
        let s = vol_init(&[1.0, -1.0], 1, 1).unwrap();
        assert_eq!(s.lagged_x2(), &[1.0]);
        assert_eq!(s.lagged_sigma2(), &[1.0]);
        let s = vol_init(&[2.0], 1, 1).unwrap();
        assert_eq!((s.lagged_x2()[0], s.lagged_sigma2()[0]), (4.0, 4.0));
        assert!(matches!(vol_init(&[0.0, 0.0], 1, 1), Err(Error::DegenerateSample(_))));
        assert!(matches!(vol_init(&[1.0], 2, 1), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn step_examples() {
        let mut s = VolState::from_lags(vec![1.0], vec![0.4]).unwrap();
        let v = s.step(&params(&[0.2, 0.3, 0.2]), 1.5);
        assert_relative_eq!(v, 0.58, epsilon = 1e-15);
        // second step, unrolled by hand: 0.2 + 0.3·1.5² + 0.2·0.58
        let v2 = s.step(&params(&[0.2, 0.3, 0.2]), -0.5);
        assert_relative_eq!(v2, 0.2 + 0.3 * 2.25 + 0.2 * 0.58, epsilon = 1e-15);

        let mut s = VolState::from_lags(vec![7.0], vec![3.0]).unwrap();
        assert_eq!(s.step(&params(&[0.3, 0.0, 0.0]), 9.0), 0.3);
    }

    #[test]
    fn gradient_recursion_unrolled_by_hand() {
        let p = params(&[0.2, 0.3, 0.5]);
        let init = VolState::from_lags(vec![1.0], vec![0.4]).unwrap();
        let path = vol_path_with_grads(&p, &[1.5, -0.5, 2.0], &init);
        // t=1: s1 = ω + α·1 + β·0.4 ; ∂s1 = (1, 1, 0.4)
        let s1 = 0.2 + 0.3 * 1.0 + 0.5 * 0.4;
        assert_eq!(path.sigma2[0], s1);
        assert_eq!(path.grad(0), &[1.0, 1.0, 0.4]);
        // t=2: s2 = ω + α·2.25 + β·s1 ; ∂s2 = (1, 2.25, s1) + β·∂s1
        let s2 = 0.2 + 0.3 * 2.25 + 0.5 * s1;
        assert_eq!(path.sigma2[1], s2);
        assert_eq!(path.grad(1), &[1.0 + 0.5 * 1.0, 2.25 + 0.5 * 1.0, s1 + 0.5 * 0.4]);
        // t=3: ∂s3 = (1, 0.25, s2) + β·∂s2
        let g2 = [1.5, 2.75, s1 + 0.2];
        assert_eq!(path.grad(2), &[1.0 + 0.5 * g2[0], 0.25 + 0.5 * g2[1], s2 + 0.5 * g2[2]]);
    }

    #[test]
    fn zero_coefficient_gradients() {
        let p = params(&[0.7, 0.0, 0.0]);
        let data = [0.5, -1.0, 2.0, 0.1];
        let init = vol_init(&data, 1, 1).unwrap();
        let path = vol_path_with_grads(&p, &data, &init);
        let m = init.lagged_x2()[0];
        let mut prev_x2 = m;
        let mut prev_s2 = init.lagged_sigma2()[0];
        for (t, &x) in data.iter().enumerate() {
            assert_eq!(path.sigma2[t], 0.7);
            assert_eq!(path.grad(t), &[1.0, prev_x2, prev_s2]);
            prev_x2 = x * x;
            prev_s2 = path.sigma2[t];
        }
        // first-step β-gradient equals the initial σ̃² lag
        assert_eq!(path.grad(0)[2], m);
    }

    #[test]
    fn path_matches_iterated_steps_bitwise() {
        let p = GarchParams::new(0.1, &[0.1, 0.05], &[0.5, 0.2]).unwrap();
        let data = sim(&GarchParams::new(0.2, &[0.2], &[0.6]).unwrap(), 500, 4);
        let init = vol_init(&data, 2, 2).unwrap();
        let path = vol_path_with_grads(&p, &data, &init);
        let mut s = init.clone();
        for (t, &x) in data.iter().enumerate() {
            assert_eq!(s.step(&p, x).to_bits(), path.sigma2[t].to_bits());
        }
    }

    #[test]
    fn path_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data = sim(&GarchParams::new(0.2, &[0.2], &[0.6]).unwrap(), 300, 9);
        for _ in 0..10 {
            let theta = vec![rng.random_range(0.05..0.5), rng.random_range(0.02..0.4), rng.random_range(0.1..0.7)];
            let p = params(&theta);
            let init = vol_init(&data, 1, 1).unwrap();
            let path = vol_path_with_grads(&p, &data, &init);
            for i in 0..3 {
                let h = 1e-6;
                let mut up = theta.clone();
                up[i] += h;
                let mut dn = theta.clone();
                dn[i] -= h;
                let (mut su, mut sd) = (init.clone(), init.clone());
                for (t, &x) in data.iter().enumerate() {
                    let fd = (su.step(&params(&up), x) - sd.step(&params(&dn), x)) / (2.0 * h);
                    let an = path.grad(t)[i];
                    assert!((an - fd).abs() <= 1e-5 * an.abs().max(1e-3), "t={t} i={i}: {an} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(l_alpha(1.0, 1.0, Alpha::ZERO), 1.0);
        assert_relative_eq!(l_alpha(0.0, 1.0, a(1.0)), 1.0 / 2f64.sqrt() - 2.0, epsilon = 1e-15);
        for &al in &[0.1, 0.3, 0.5] {
            let (x, s2, c) = (0.7, 1.3, 2.9_f64);
            let base = l_alpha(x, s2, a(al));
            let scaled = l_alpha(x * c.sqrt(), s2 * c, a(al));
            assert_relative_eq!(scaled, base * c.powf(-al / 2.0), max_relative = 1e-13);
        }
    }

    #[test]
    fn gradient_examples() {
        let mut out = [0.0; 3];
        grad_l_alpha(1.2, 1.44, &[1.0, 2.0, 3.0], Alpha::ZERO, &mut out);
        assert_eq!(out, [0.0; 3]);
        let ds = [1.0, 0.5, -2.0];
        grad_l_alpha(0.0, 1.0, &ds, a(1.0), &mut out);
        let h1 = -1.0 / (2.0 * 2f64.sqrt()) + 1.0;
        assert_relative_eq!(h1, 0.646_446_609_4, epsilon = 1e-10);
        for i in 0..3 {
            assert_relative_eq!(out[i], h1 * ds[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn slope_matches_finite_difference_in_sigma2() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let x: f64 = rng.sample::<f64, _>(StandardNormal) * 2.0;
            let s2: f64 = rng.random_range(0.2..4.0);
            let al = a(rng.random_range(0.0..1.0));
            let k = LossKernel::new(al);
            let h = 1e-6;
            let fd = (k.loss(x, s2 + h) - k.loss(x, s2 - h)) / (2.0 * h);
            let an = k.dloss_ds2(x, s2);
            assert!((an - fd).abs() <= 1e-5 * an.abs().max(1e-3));
            let (l, sl) = k.loss_and_slope(x, s2);
            assert_relative_eq!(l, k.loss(x, s2), max_relative = 1e-14);
            assert_eq!(sl, an);
        }
    }

    #[test]
    fn constants_match_gaussian_quadrature() {
        assert_eq!(k_g_constants(Alpha::ZERO), (0.5, 0.5));
        // oracle: with u = ε², k = E[h_α²] and g = E[s·∂h/∂s] over ε ~ N(0,1)
        for &al in &[0.05_f64, 0.1, 0.3, 0.5, 1.0] {
            let h = |e: f64| {
                let u = e * e;
                -al / (2.0 * (1.0 + al).sqrt()) + 0.5 * (1.0 + al) * (1.0 - u) * (-0.5 * al * u).exp()
            };
            let sdh = |e: f64| {
                let u = e * e;
                0.5 * (1.0 + al) * (u + (1.0 - u) * 0.5 * al * u) * (-0.5 * al * u).exp()
            };
            let phi = |e: f64| (-0.5 * e * e).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let (n, lo, hi) = (40_000, -14.0, 14.0);
            let step = (hi - lo) / n as f64;
            let (mut k_num, mut g_num) = (0.0, 0.0);
            for i in 0..=n {
                let e = lo + step * i as f64;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                k_num += w * h(e).powi(2) * phi(e);
                g_num += w * sdh(e) * phi(e);
            }
            let (k, g) = k_g_constants(a(al));
            assert_relative_eq!(k, k_num * step, max_relative = 1e-10);
            assert_relative_eq!(g, g_num * step, max_relative = 1e-10);
        }
    }

    #[test]
    fn info_hat_matches_closed_form_constant() {
        let theta = GarchParams::new(0.2, &[0.2], &[0.6]).unwrap();
        let data = sim(&theta, 100_000, 77);
        let init = vol_init(&data, 1, 1).unwrap();
        for &al in &[0.0, 0.3] {
            let alpha = a(al);
            let m = info_hat(&data, &theta, alpha, &init).unwrap();
            let path = vol_path_with_grads(&theta, &data, &init);
            let mut e = DMatrix::<f64>::zeros(3, 3);
            for t in 0..data.len() {
                let w = path.sigma2[t].powf(-al - 2.0);
                let g = path.grad(t);
                for i in 0..3 {
                    for j in 0..3 {
                        e[(i, j)] += w * g[i] * g[j];
                    }
                }
            }
            e /= data.len() as f64;
            let (k, _) = k_g_constants(alpha);
            // the likelihood branch gradient is twice the h-form gradient
            let scale = if al == 0.0 { 4.0 * k } else { k };
            for i in 0..3 {
                let r = m[(i, i)] / (scale * e[(i, i)]);
                assert!((r - 1.0).abs() < 0.05, "alpha={al} i={i}: ratio {r}");
            }
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = GarchParams::new(0.2, &[0.2], &[0.6]).unwrap();
        for inst in 0..20 {
            let data = sim(&truth, 400, 100 + inst);
            let init = vol_init(&data, 1, 1).unwrap();
            let theta = [rng.random_range(0.1..0.4), rng.random_range(0.05..0.4), rng.random_range(0.2..0.7)];
            for &al in &[0.0, 0.1, 0.3, 0.5] {
                let mut g = [0.0; 3];
                objective(&data, &params(&theta), a(al), &init, &mut g);
                for i in 0..3 {
                    let h = 1e-6;
                    let mut up = theta;
                    up[i] += h;
                    let mut dn = theta;
                    dn[i] -= h;
                    let mut scratch = [0.0; 3];
                    let fd = (objective(&data, &params(&up), a(al), &init, &mut scratch)
                        - objective(&data, &params(&dn), a(al), &init, &mut scratch))
                        / (2.0 * h);
                    assert!((g[i] - fd).abs() <= 1e-5 * g[i].abs().max(1e-3), "{} vs {fd}", g[i]);
                }
            }
        }
    }

    #[test]
    fn fit_recovers_parameters() {
        let truth = GarchParams::new(0.2, &[0.2], &[0.6]).unwrap();
        let reps = 50;
        let mut sum = [0.0; 3];
        for r in 0..reps {
            let data = sim(&truth, 2000, 1000 + r);
            let f = fit(&data, Alpha::ZERO, 1, 1, &GarchFitOptions::default()).unwrap();
            for (s, v) in sum.iter_mut().zip(f.params.as_slice()) {
                *s += v;
            }
        }
        for (i, (s, t)) in sum.iter().zip(truth.as_slice()).enumerate() {
            let mean = s / reps as f64;
            assert!((mean - t).abs() < 0.08, "component {i}: {mean}");
        }
    }

    #[test]
    fn fit_reaches_first_order_condition() {
        let truth = GarchParams::new(0.2, &[0.2], &[0.6]).unwrap();
        let data = sim(&truth, 1000, 3);
        for &al in &[0.0, 0.2, 0.5] {
            let f = fit(&data, a(al), 1, 1, &GarchFitOptions::default()).unwrap();
            let mut g = [0.0; 3];
            objective(&data, &f.params, a(al), &f.init, &mut g);
            assert!(g.iter().all(|v| v.abs() < 1e-8), "{g:?}");
        }
    }

    #[test]
    fn fit_higher_order() {
        let truth = GarchParams::new(0.1, &[0.1, 0.05], &[0.4, 0.3]).unwrap();
        let data = sim(&truth, 3000, 12);
        let f = fit(&data, a(0.1), 2, 2, &GarchFitOptions::default()).unwrap();
        assert!(f.converged);
        assert!(f.params.betas().iter().sum::<f64>() <= BETA_SUM_MAX);
    }

    #[test]
    fn constant_series_is_degenerate() {
        assert!(matches!(
            fit(&[0.5; 200], Alpha::ZERO, 1, 1, &GarchFitOptions::default()),
            Err(Error::DegenerateSample(_))
        ));
        assert!(matches!(
            fit(&[0.5, -0.5], Alpha::ZERO, 1, 1, &GarchFitOptions::default()),
            Err(Error::InsufficientData { .. })
        ));
    }
}
