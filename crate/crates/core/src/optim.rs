//! Projected quasi-Newton minimization over a box, optionally intersected with
//! one `sum(x[group]) <= cap` constraint (the GARCH `Σβ < 1` requirement).
//!
//! BFGS on the free variables with a projected Armijo search, followed by a
//! short Newton polish whose Hessian is a central difference of the analytic
//! gradient. The polish accepts steps on gradient decrease alone, so it keeps
//! making progress after objective differences fall below machine precision.

use std::ops::Range;

#[derive(Debug, Clone)]
pub struct Constraints {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub sum_cap: Option<(Range<usize>, f64)>,
}

impl Constraints {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self {
            lower,
            upper,
            sum_cap: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((xi, &l), &u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(l, u);
        }
        if let Some((range, cap)) = &self.sum_cap {
            let cap = *cap;
            let sum: f64 = x[range.clone()].iter().sum();
            if sum > cap {
                // shift by λ ≥ 0 so that Σ clamp(x_j − λ) = cap
                let (mut lo, mut hi) = (0.0_f64, 0.0_f64);
                for j in range.clone() {
                    hi = hi.max(x[j] - self.lower[j]);
                }
                let shifted = |lam: f64| -> f64 {
                    range
                        .clone()
                        .map(|j| (x[j] - lam).clamp(self.lower[j], self.upper[j]))
                        .sum()
                };
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if shifted(mid) > cap {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-16 * (1.0 + hi) {
                        break;
                    }
                }
                for j in range.clone() {
                    x[j] = (x[j] - hi).clamp(self.lower[j], self.upper[j]);
                }
            }
        }
    }

    fn sum_cap_active(&self, x: &[f64]) -> Option<Range<usize>> {
        let (range, cap) = self.sum_cap.as_ref()?;
        let sum: f64 = x[range.clone()].iter().sum();
        (sum >= cap - 1e-12).then(|| range.clone())
    }

    /// Indices strictly inside their box (and outside an active sum cap).
    fn free_indices(&self, x: &[f64]) -> Vec<usize> {
        let capped = self.sum_cap_active(x);
        (0..x.len())
            .filter(|&i| {
                let (l, u) = (self.lower[i], self.upper[i]);
                let above = l == f64::NEG_INFINITY || x[i] > l + 1e-12 * (1.0 + l.abs());
                let below = u == f64::INFINITY || x[i] < u - 1e-12 * (1.0 + u.abs());
                above
                    && below
                    && capped.as_ref().is_none_or(|r| !r.contains(&i))
            })
            .collect()
    }

    /// `‖x − P(x − g)‖∞`, the first-order optimality measure.
    pub fn projected_grad_norm(&self, x: &[f64], g: &[f64]) -> f64 {
        let mut y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
        self.project(&mut y);
        x.iter()
            .zip(&y)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Debug, Clone)]
pub struct Options {
    /// Stop the quasi-Newton phase once the projected gradient is this small.
    pub grad_tol: f64,
    /// Outcome counts as converged when the final projected gradient is below this.
    pub accept_tol: f64,
    pub max_iter: usize,
    pub polish_iters: usize,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            accept_tol: 1e-6,
            max_iter: 1000,
            polish_iters: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Minimizes `f` over `cons` starting from `x0` (projected first).
///
/// `f(x, grad)` returns the objective and writes the gradient. A non-finite
/// return value is treated as an infeasible trial point.
pub fn minimize<F>(mut f: F, x0: &[f64], cons: &Constraints, opts: &Options) -> Outcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let d = x0.len();
    assert_eq!(d, cons.dim());
    let mut x = x0.to_vec();
    cons.project(&mut x);
    let mut g = vec![0.0; d];
    let mut fx = f(&x, &mut g);

    let mut h = identity(d);
    let mut fresh = true;
    let mut iterations = 0;
    let mut x_new = vec![0.0; d];
    let mut g_new = vec![0.0; d];
    let mut dir = vec![0.0; d];
    let mut stalled = 0;

    if fx.is_finite() {
        while iterations < opts.max_iter {
            if cons.projected_grad_norm(&x, &g) <= opts.grad_tol {
                break;
            }
            iterations += 1;
            let free = active_free(cons, &x, &g);
            if free.is_empty() {
                break;
            }
            search_direction(&h, &g, &free, &mut dir);
            if dot(&dir, &g) >= 0.0 {
                h = identity(d);
                fresh = true;
                search_direction(&h, &g, &free, &mut dir);
            }
            let mut t = 1.0;
            if fresh {
                let scale = inf_norm(&x).max(1e-8);
                t = (0.1 * scale / inf_norm(&dir)).min(1.0);
            }
            let mut accepted = false;
            for _ in 0..80 {
                for i in 0..d {
                    x_new[i] = x[i] + t * dir[i];
                }
                cons.project(&mut x_new);
                let f_new = f(&x_new, &mut g_new);
                let decrease: f64 = g.iter().zip(&x_new).zip(&x).map(|((gi, a), b)| gi * (a - b)).sum();
                if f_new.is_finite() && f_new <= fx + 1e-4 * decrease {
                    accepted = true;
                    let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                    let sy = dot(&s, &y);
                    if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                        if fresh {
                            let gamma = sy / dot(&y, &y);
                            h = identity(d);
                            h.iter_mut().for_each(|v| *v *= gamma);
                            fresh = false;
                        }
                        bfgs_update(&mut h, &s, &y, sy);
                    }
                    // progress at rounding level: leave the rest to the polish
                    if fx - f_new <= 1e-14 * fx.abs().max(1e-300) {
                        stalled += 1;
                    } else {
                        stalled = 0;
                    }
                    std::mem::swap(&mut x, &mut x_new);
                    std::mem::swap(&mut g, &mut g_new);
                    fx = f_new;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                if fresh {
                    break;
                }
                h = identity(d);
                fresh = true;
            }
            if stalled >= 3 {
                break;
            }
        }
        polish(&mut f, cons, opts.polish_iters, &mut x, &mut fx, &mut g);
    }

    let grad_norm = if fx.is_finite() {
        cons.projected_grad_norm(&x, &g)
    } else {
        f64::INFINITY
    };
    Outcome {
        converged: grad_norm <= opts.accept_tol,
        x,
        f: fx,
        grad: g,
        grad_norm,
        iterations,
    }
}

fn identity(d: usize) -> Vec<f64> {
    let mut h = vec![0.0; d * d];
    for i in 0..d {
        h[i * d + i] = 1.0;
    }
    h
}

/// Variables not pinned at a bound by a gradient pushing outward.
fn active_free(cons: &Constraints, x: &[f64], g: &[f64]) -> Vec<usize> {
    let capped = cons.sum_cap_active(x);
    (0..x.len())
        .filter(|&i| {
            let at_l = x[i] <= cons.lower[i] && g[i] > 0.0;
            let at_u = x[i] >= cons.upper[i] && g[i] < 0.0;
            let at_cap = capped.as_ref().is_some_and(|r| r.contains(&i)) && g[i] < 0.0;
            !(at_l || at_u || at_cap)
        })
        .collect()
}

fn search_direction(h: &[f64], g: &[f64], free: &[usize], dir: &mut [f64]) {
    let d = g.len();
    dir.iter_mut().for_each(|v| *v = 0.0);
    for &i in free {
        let mut acc = 0.0;
        for &j in free {
            acc += h[i * d + j] * g[j];
        }
        dir[i] = -acc;
    }
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let d = s.len();
    let rho = 1.0 / sy;
    let mut hy = vec![0.0; d];
    for i in 0..d {
        hy[i] = (0..d).map(|j| h[i * d + j] * y[j]).sum();
    }
    let yhy = dot(y, &hy);
    for i in 0..d {
        for j in 0..d {
            h[i * d + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

fn polish<F>(f: &mut F, cons: &Constraints, iters: usize, x: &mut [f64], fx: &mut f64, g: &mut [f64])
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let d = x.len();
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    let mut xt = vec![0.0; d];
    for _ in 0..iters {
        let pg = cons.projected_grad_norm(x, g);
        if pg < 1e-15 {
            break;
        }
        let free = cons.free_indices(x);
        if free.is_empty() {
            break;
        }
        let m = free.len();
        let mut hess = nalgebra::DMatrix::<f64>::zeros(m, m);
        let mut ok = true;
        for (cj, &j) in free.iter().enumerate() {
            let step = 1e-5 * x[j].abs().max(1e-4);
            let up = (x[j] + step).min(cons.upper[j]) - x[j];
            let dn = x[j] - (x[j] - step).max(cons.lower[j]);
            if up <= 0.0 || dn <= 0.0 {
                ok = false;
                break;
            }
            xt.copy_from_slice(x);
            xt[j] = x[j] + up;
            let fp = f(&xt, &mut gp);
            xt[j] = x[j] - dn;
            let fm = f(&xt, &mut gm);
            if !fp.is_finite() || !fm.is_finite() {
                ok = false;
                break;
            }
            for (ci, &i) in free.iter().enumerate() {
                hess[(ci, cj)] = (gp[i] - gm[i]) / (up + dn);
            }
        }
        if !ok {
            break;
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        let rhs = nalgebra::DVector::from_iterator(m, free.iter().map(|&i| -g[i]));
        let Some(chol) = hess.cholesky() else { break };
        let delta = chol.solve(&rhs);
        xt.copy_from_slice(x);
        for (ci, &i) in free.iter().enumerate() {
            xt[i] += delta[ci];
        }
        cons.project(&mut xt);
        let f_new = f(&xt, &mut gp);
        if !f_new.is_finite() {
            break;
        }
        let pg_new = cons.projected_grad_norm(&xt, &gp);
        let tol_f = 1e-12 * fx.abs().max(1.0);
        if pg_new < pg && f_new <= *fx + tol_f {
            x.copy_from_slice(&xt);
            g.copy_from_slice(&gp);
            *fx = f_new;
        } else {
            break;
        }
    }
}
