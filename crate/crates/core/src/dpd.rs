//! Primitives shared by the estimators and the monitor: the divergence
//! tuning parameter, boundary functions, vector norms, the symmetric inverse
//! square root of an information matrix, and compensated accumulation.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest tuning parameter accepted without an explicit override.
pub const ALPHA_POLICY_MAX: f64 = 1.0;

/// Tuning parameter of the density power divergence.
///
/// `0` selects the log-likelihood branch of every objective; larger values
/// trade efficiency for robustness against outliers.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Alpha(f64);

impl Alpha {
    pub const ZERO: Alpha = Alpha(0.0);

    /// Accepts values in `[0, 1]`.
    pub fn new(value: f64) -> Result<Self> {
        Self::with_policy(value, false)
    }

    /// Like [`Alpha::new`], but `allow_large` lifts the upper cap of 1.
    pub fn with_policy(value: f64, allow_large: bool) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::Config(format!(
                "alpha must be a finite nonnegative number, got {value}"
            )));
        }
        if value > ALPHA_POLICY_MAX && !allow_large {
            return Err(Error::Config(format!(
                "alpha = {value} exceeds {ALPHA_POLICY_MAX}; pass an explicit override to use it"
            )));
        }
        Ok(Alpha(value))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn is_likelihood(self) -> bool {
        self.0 == 0.0
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Boundary function `b(t)`, `t = k / n`, against which the detector is compared.
///
/// Must be continuous on `(0, ∞)` with a strictly positive infimum.
#[derive(Debug, Clone, Copy, PartialEq)]
#[non_exhaustive]
pub enum BoundaryFn {
    Constant(f64),
}

impl BoundaryFn {
    pub fn constant(b: f64) -> Result<Self> {
        let bf = BoundaryFn::Constant(b);
        bf.validate()?;
        Ok(bf)
    }

    /// Checks the positivity requirement; the enum variant is public, so a
    /// hand-built value may still be invalid.
    pub fn validate(&self) -> Result<()> {
        match *self {
            BoundaryFn::Constant(b) if b.is_finite() && b > 0.0 => Ok(()),
            BoundaryFn::Constant(b) => Err(Error::Config(format!(
                "constant boundary must be finite and strictly positive, got {b}"
            ))),
        }
    }

    #[inline]
    pub fn eval(&self, _t: f64) -> f64 {
        match *self {
            BoundaryFn::Constant(b) => b,
        }
    }
}

/// Vector norm applied to the standardized score sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormKind {
    #[default]
    Max,
    Euclidean,
}

pub fn vector_norm(v: &[f64], kind: NormKind) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Dimension("norm of an empty vector".into()));
    }
    Ok(norm_unchecked(v, kind))
}

#[inline]
pub(crate) fn norm_unchecked(v: &[f64], kind: NormKind) -> f64 {
    match kind {
        NormKind::Max => v.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
        NormKind::Euclidean => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
    }
}

/// Default eigenvalue floor: `1e-10 · trace(M) / d`.
pub fn default_eig_floor(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows().max(1) as f64;
    1e-10 * m.trace().abs() / d
}

fn symmetric_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "expected a nonempty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::Domain(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let sym = (m + m.transpose()) * 0.5;
    Ok(sym.symmetric_eigen())
}

fn spectral_map(m: &DMatrix<f64>, eps: Option<f64>, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let eig = symmetric_eigen(m)?;
    let floor = eps.unwrap_or_else(|| default_eig_floor(m));
    let min = eig.eigenvalues.min();
    if !(min >= floor) || min <= 0.0 {
        return Err(Error::SingularInformation {
            min_eigenvalue: min,
            floor,
        });
    }
    let v = &eig.eigenvectors;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    let s = v * d * v.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

/// Symmetric inverse square root `M^{-1/2}` by spectral decomposition.
///
/// `eps` is the smallest admissible eigenvalue; `None` uses
/// [`default_eig_floor`].
pub fn inv_sqrt_spd(m: &DMatrix<f64>, eps: Option<f64>) -> Result<DMatrix<f64>> {
    spectral_map(m, eps, |l| 1.0 / l.sqrt())
}

/// Symmetric inverse `M^{-1}` with the same eigenvalue floor as [`inv_sqrt_spd`].
pub fn inv_spd(m: &DMatrix<f64>, eps: Option<f64>) -> Result<DMatrix<f64>> {
    spectral_map(m, eps, |l| 1.0 / l)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    Ok(symmetric_eigen(m)?.eigenvalues.min())
}

/// Neumaier-compensated running sum of a fixed-length vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensatedVec {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl CompensatedVec {
    pub fn zeros(dim: usize) -> Self {
        Self {
            sum: vec![0.0; dim],
            comp: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, v: &[f64]) {
        debug_assert_eq!(v.len(), self.sum.len());
        for ((s, c), &x) in self.sum.iter_mut().zip(self.comp.iter_mut()).zip(v) {
            let t = *s + x;
            if s.abs() >= x.abs() {
                *c += (*s - t) + x;
            } else {
                *c += (x - t) + *s;
            }
            *s = t;
        }
    }

    pub fn value(&self) -> Vec<f64> {
        self.sum.iter().zip(&self.comp).map(|(s, c)| s + c).collect()
    }

    pub fn value_into(&self, out: &mut [f64]) {
        for ((o, s), c) in out.iter_mut().zip(&self.sum).zip(&self.comp) {
            *o = s + c;
        }
    }

    pub fn dim(&self) -> usize {
        self.sum.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn norms() {
        assert_eq!(vector_norm(&[1.0, -3.0, 2.0], NormKind::Max).unwrap(), 3.0);
        assert_eq!(vector_norm(&[3.0, 4.0], NormKind::Euclidean).unwrap(), 5.0);
        assert_eq!(vector_norm(&[0.0, 0.0], NormKind::Max).unwrap(), 0.0);
        assert!(matches!(
            vector_norm(&[], NormKind::Max),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn alpha_policy() {
        assert!(Alpha::new(0.0).unwrap().is_likelihood());
        assert!(Alpha::new(0.5).is_ok());
        assert!(Alpha::new(1.0).is_ok());
        assert!(Alpha::new(1.5).is_err());
        assert!(Alpha::with_policy(1.5, true).is_ok());
        assert!(Alpha::new(-0.1).is_err());
        assert!(Alpha::new(f64::NAN).is_err());
    }

    #[test]
    fn boundary_must_be_positive() {
        assert!(BoundaryFn::constant(0.0).is_err());
        assert!(BoundaryFn::constant(-1.0).is_err());
        assert!(BoundaryFn::constant(f64::INFINITY).is_err());
        let b = BoundaryFn::constant(2.632).unwrap();
        assert_eq!(b.eval(0.001), 2.632);
        assert_eq!(b.eval(1e6), 2.632);
    }

    #[test]
    fn inv_sqrt_identity_and_diagonal() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        let s = inv_sqrt_spd(&i3, Some(1e-10)).unwrap();
        assert_abs_diff_eq!(s, i3, epsilon = 1e-14);

        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0]));
        let s = inv_sqrt_spd(&m, None).unwrap();
        assert_abs_diff_eq!(s[(0, 0)], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(s[(1, 1)], 1.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn singular_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            inv_sqrt_spd(&m, None),
            Err(Error::SingularInformation { .. })
        ));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0]);
        assert!(matches!(inv_sqrt_spd(&m, None), Err(Error::Domain(_))));
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut acc = CompensatedVec::zeros(1);
        acc.add(&[1e16]);
        for _ in 0..10 {
            acc.add(&[1.0]);
        }
        acc.add(&[-1e16]);
        assert_eq!(acc.value()[0], 10.0);
    }

    fn spd_strategy() -> impl Strategy<Value = DMatrix<f64>> {
        (2usize..6).prop_flat_map(|d| {
            prop::collection::vec(-1.0f64..1.0, d * d).prop_map(move |a| {
                let a = DMatrix::from_vec(d, d, a);
                &a * a.transpose() + DMatrix::identity(d, d) * 0.1
            })
        })
    }

    proptest! {
        #[test]
        fn inv_sqrt_whitens(m in spd_strategy()) {
            let s = inv_sqrt_spd(&m, None).unwrap();
            let d = m.nrows();
            let w = &s * &m * &s;
            prop_assert!((w - DMatrix::identity(d, d)).amax() < 1e-8);
            prop_assert!((&s - s.transpose()).amax() == 0.0);
            // oracle: solve via Cholesky, M^{-1} = S·S
            let inv = m.clone().cholesky().unwrap().inverse();
            prop_assert!((&s * &s - inv).amax() < 1e-8);
        }

        #[test]
        fn inv_sqrt_scales(m in spd_strategy(), c in 0.1f64..50.0) {
            let s = inv_sqrt_spd(&m, None).unwrap();
            let sc = inv_sqrt_spd(&(&m * c), None).unwrap();
            let expected = s * c.powf(-0.5);
            prop_assert!((&sc - &expected).amax() <= 1e-10 * expected.amax());
        }

        #[test]
        fn norm_homogeneous(v in prop::collection::vec(-100.0f64..100.0, 1..8), c in -10.0f64..10.0) {
            for kind in [NormKind::Max, NormKind::Euclidean] {
                let n = vector_norm(&v, kind).unwrap();
                prop_assert!(n >= 0.0);
                let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
                let ns = vector_norm(&scaled, kind).unwrap();
                prop_assert!((ns - c.abs() * n).abs() <= 1e-12 * (1.0 + ns));
                let zero = v.iter().all(|&x| x == 0.0);
                prop_assert_eq!(n == 0.0, zero);
            }
        }
    }
}
