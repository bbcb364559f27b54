//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

/// Gaussian quasi-likelihood of a GARCH(1,1), coded from scratch: mean of
/// `x²/s + ln s` with the pre-sample lags set to the mean of squares.
pub fn qmle_objective(x: &[f64], w: f64, a: f64, b: f64) -> f64 {
    if !(w > 0.0 && a >= 0.0 && b >= 0.0 && a + b < 1.0) {
        return f64::INFINITY;
    }
    let m = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let (mut prev_x2, mut prev_s) = (m, m);
    let mut total = 0.0;
    for &v in x {
        let s = w + a * prev_x2 + b * prev_s;
        total += v * v / s + s.ln();
        prev_x2 = v * v;
        prev_s = s;
    }
    total / x.len() as f64
}

/// Nelder–Mead with restarts from the best vertex.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, start: &[f64], step: f64, tol: f64) -> Vec<f64> {
    let d = start.len();
    let mut best = start.to_vec();
    for _ in 0..6 {
        let mut simplex: Vec<Vec<f64>> = vec![best.clone()];
        for i in 0..d {
            let mut v = best.clone();
            v[i] += step * best[i].abs().max(0.05);
            simplex.push(v);
        }
        let mut vals: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
        for _ in 0..20_000 {
            let mut idx: Vec<usize> = (0..=d).collect();
            idx.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
            simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
            vals = idx.iter().map(|&i| vals[i]).collect();
            let diam = simplex[1..]
                .iter()
                .map(|v| v.iter().zip(&simplex[0]).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if diam < tol {
                break;
            }
            let centroid: Vec<f64> = (0..d).map(|j| simplex[..d].iter().map(|v| v[j]).sum::<f64>() / d as f64).collect();
            let along = |t: f64| -> Vec<f64> { (0..d).map(|j| centroid[j] + t * (simplex[d][j] - centroid[j])).collect() };
            let xr = along(-1.0);
            let fr = f(&xr);
            if fr < vals[0] {
                let xe = along(-2.0);
                let fe = f(&xe);
                if fe < fr {
                    simplex[d] = xe;
                    vals[d] = fe;
                } else {
                    simplex[d] = xr;
                    vals[d] = fr;
                }
            } else if fr < vals[d - 1] {
                simplex[d] = xr;
                vals[d] = fr;
            } else {
                let xc = if fr < vals[d] { along(-0.5) } else { along(0.5) };
                let fc = f(&xc);
                if fc < vals[d].min(fr) {
                    simplex[d] = xc;
                    vals[d] = fc;
                } else {
                    for i in 1..=d {
                        simplex[i] = (0..d).map(|j| 0.5 * (simplex[0][j] + simplex[i][j])).collect();
                        vals[i] = f(&simplex[i]);
                    }
                }
            }
        }
        let i = (0..=d).min_by(|&i, &j| vals[i].total_cmp(&vals[j])).unwrap();
        best = simplex[i].clone();
    }
    best
}

/// Gaussian QMLE of a GARCH(1,1) by direct search.
pub fn qmle_garch11(x: &[f64]) -> [f64; 3] {
    let v = x.iter().map(|t| t * t).sum::<f64>() / x.len() as f64;
    let p = nelder_mead(|t| qmle_objective(x, t[0], t[1], t[2]), &[0.2 * v, 0.1, 0.7], 0.3, 1e-11);
    [p[0], p[1], p[2]]
}
