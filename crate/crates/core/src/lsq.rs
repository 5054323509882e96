//! Dense least squares and the relative residual error used to compare a
//! sketched solution against the full one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scalar::{cast, to_f64, Real};
use crate::sketch::{Rhs, SketchedSystem};
use crate::tensor_core::KhatriRaoOperator;

/// Default truncation threshold, relative to the largest singular value.
pub const DEFAULT_RCOND: f64 = 1e-10;

/// Lower clamp applied to relative errors that rounding pushed below zero.
pub const REL_ERROR_FLOOR: f64 = -1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Qr,
    TruncatedSvd,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LsSolution<T: Real> {
    pub x: DVector<T>,
    /// `‖Mx − rhs‖²`, recomputed from `x`.
    pub residual_sq: T,
    pub rank_used: usize,
    pub method: SolveMethod,
    /// Set when the system had fewer rows than unknowns.
    pub underdetermined: bool,
}

/// Minimizes `‖Mx − rhs‖₂`.
///
/// Householder QR is used unless the diagonal of `R` spans more than
/// `1/rcond`, in which case the minimum-norm solution is taken from the SVD of
/// `R` with singular values below `rcond·σ_max` discarded. Systems with fewer
/// rows than columns always go through the SVD.
pub fn solve_ls<T: Real>(m: &DMatrix<T>, rhs: &DVector<T>, rcond: f64) -> Result<LsSolution<T>> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("least-squares matrix must be nonempty".into()));
    }
    check_dim("least-squares right-hand side", rows, rhs.len())?;
    if !(0.0..1.0).contains(&rcond) {
        return Err(Error::InvalidArgument(format!("rcond must lie in [0, 1), got {rcond}")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares matrix"));
    }
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares right-hand side"));
    }

    let (x, rank_used, method) = if rows >= cols {
        let qr = m.clone().qr();
        let r = qr.r();
        let mut qtb = rhs.clone();
        qr.q_tr_mul(&mut qtb);
        let c = qtb.rows(0, cols).into_owned();
        let diag: Vec<f64> = (0..cols).map(|i| to_f64(r[(i, i)].abs())).collect();
        let dmax = diag.iter().cloned().fold(0.0, f64::max);
        let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let well_conditioned = dmin > 0.0 && (rcond == 0.0 || dmax / dmin <= 1.0 / rcond);
        match well_conditioned.then(|| r.solve_upper_triangular(&c)).flatten() {
            Some(x) if x.iter().all(|v| v.is_finite()) => (x, cols, SolveMethod::Qr),
            _ => {
                let (x, rank) = truncated_svd_solve(r, &c, rcond)?;
                (x, rank, SolveMethod::TruncatedSvd)
            }
        }
    } else {
        let (x, rank) = truncated_svd_solve(m.clone(), rhs, rcond)?;
        (x, rank, SolveMethod::TruncatedSvd)
    };

    let residual_sq = (m * &x - rhs).norm_squared();
    Ok(LsSolution {
        x,
        residual_sq,
        rank_used,
        method,
        underdetermined: rows < cols,
    })
}

/// Minimum-norm solution of `min ‖Mx − rhs‖` keeping singular values
/// `σ > rcond·σ_max`. Returns the solution and the number of kept values.
fn truncated_svd_solve<T: Real>(m: DMatrix<T>, rhs: &DVector<T>, rcond: f64) -> Result<(DVector<T>, usize)> {
    let cols = m.ncols();
    let svd = m
        .try_svd(true, true, T::default_epsilon(), 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let sigma_max = svd.singular_values.iter().cloned().fold(T::zero(), |a, b| a.max(b));
    let threshold = sigma_max * cast::<T>(rcond);
    let mut x = DVector::zeros(cols);
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > threshold && s > T::zero() {
            let coeff = u.column(k).dot(rhs) / s;
            x += v_t.row(k).transpose() * coeff;
            rank += 1;
        }
    }
    Ok((x, rank))
}

/// Solves the sketched problem `min ‖SAx − Sb‖`.
pub fn solve_sketched<T: Real>(system: &SketchedSystem<T>, rcond: f64) -> Result<LsSolution<T>> {
    solve_ls(&system.sa, &system.sb, rcond)
}

/// `f(x) = ‖Ax − b‖²` on the full system, without forming `A`.
pub fn residual_sq_full<T: Real>(op: &KhatriRaoOperator<T>, x: &DVector<T>, b: &Rhs<T>) -> Result<T> {
    check_dim("residual right-hand side", op.nrows(), b.len())?;
    let ax = op.apply(x.as_slice())?;
    Ok(match b {
        Rhs::Dense(v) => (ax - v).norm_squared(),
        Rhs::Tensor(t) => (ax - t.to_dense()).norm_squared(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeError {
    /// `raw` clamped below at [`REL_ERROR_FLOOR`].
    pub value: f64,
    pub raw: f64,
}

/// `(f(x_s) − f(x*)) / f(x*)`.
pub fn relative_error(f_xs: f64, f_xstar: f64) -> Result<RelativeError> {
    if !(f_xstar > 0.0) || !f_xstar.is_finite() {
        return Err(Error::Degenerate(format!(
            "optimal residual f(x*) = {f_xstar} must be positive for a relative error"
        )));
    }
    if !f_xs.is_finite() {
        return Err(Error::NonFinite("sketched residual"));
    }
    let raw = (f_xs - f_xstar) / f_xstar;
    Ok(RelativeError {
        value: raw.max(REL_ERROR_FLOOR),
        raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_matrix, gaussian_vector, stream_rng};
    use crate::tensor_core::TensorVector;
    use proptest::prelude::*;

    #[test]
    fn identity_system() {
        let v = DVector::from_vec(vec![1.0, -2.0, 3.5]);
        let sol = solve_ls(&DMatrix::identity(3, 3), &v, DEFAULT_RCOND).unwrap();
        assert_eq!(sol.x, v);
        assert_eq!(sol.residual_sq, 0.0);
        assert_eq!(sol.method, SolveMethod::Qr);
        assert_eq!(sol.rank_used, 3);
    }

    #[test]
    fn two_equations_one_unknown() {
        // normal equations: 2x = 2 → x = 1, residual (1)² + (1)² = 2
        let m = DMatrix::<f64>::from_column_slice(2, 1, &[1.0, 1.0]);
        let sol = solve_ls(&m, &DVector::from_vec(vec![0.0, 2.0]), DEFAULT_RCOND).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-15);
        assert!((sol.residual_sq - 2.0).abs() < 1e-14);
    }

    #[test]
    fn duplicated_column_gives_minimum_norm() {
        let mut rng = stream_rng(31, 0);
        let base: DMatrix<f64> = gaussian_matrix(&mut rng, 5, 2);
        let m = DMatrix::from_columns(&[base.column(0), base.column(1), base.column(0)]);
        let rhs: DVector<f64> = gaussian_vector(&mut rng, 5);
        let sol = solve_ls(&m, &rhs, 1e-12).unwrap();
        assert_eq!(sol.method, SolveMethod::TruncatedSvd);
        assert_eq!(sol.rank_used, 2);
        // oracle: pseudo-inverse from the SVD of M itself
        let oracle = m.clone().pseudo_inverse(1e-12).unwrap() * &rhs;
        assert!((&sol.x - &oracle).amax() <= 1e-10 * oracle.amax());
        let sub = solve_ls(&base, &rhs, 1e-12).unwrap();
        assert!((sol.residual_sq - sub.residual_sq).abs() <= 1e-10 * sub.residual_sq);
        assert!((sol.x[0] - sol.x[2]).abs() < 1e-10);
    }

    #[test]
    fn underdetermined_is_flagged() {
        let m = DMatrix::<f64>::from_row_slice(1, 2, &[3.0, 4.0]);
        let sol = solve_ls(&m, &DVector::from_vec(vec![5.0]), DEFAULT_RCOND).unwrap();
        assert!(sol.underdetermined);
        // minimum-norm solution is (3, 4)/5
        assert!((sol.x[0] - 0.6).abs() < 1e-14 && (sol.x[1] - 0.8).abs() < 1e-14);
        assert!(sol.residual_sq < 1e-28);
    }

    #[test]
    fn invalid_inputs() {
        let m = DMatrix::from_column_slice(2, 1, &[1.0, f64::NAN]);
        assert!(matches!(solve_ls(&m, &DVector::zeros(2), 0.1), Err(Error::NonFinite(_))));
        let m = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert!(solve_ls(&m, &DVector::zeros(3), 0.1).is_err());
        assert!(solve_ls(&m, &DVector::zeros(2), 1.0).is_err());
        assert!(solve_ls(&m, &DVector::from_vec(vec![f64::INFINITY, 0.0]), 0.1).is_err());
    }

    #[test]
    fn residual_full_cases() {
        let mut rng = stream_rng(4, 4);
        let op = KhatriRaoOperator::single(gaussian_matrix(&mut rng, 4, 2), gaussian_matrix(&mut rng, 3, 2)).unwrap();
        let x: DVector<f64> = gaussian_vector(&mut rng, 2);
        let b = Rhs::Dense(op.apply(x.as_slice()).unwrap());
        assert!(residual_sq_full(&op, &x, &b).unwrap() <= 1e-18);

        let tv = TensorVector::new(gaussian_vector(&mut rng, 4), gaussian_vector(&mut rng, 3)).unwrap();
        let zero = DVector::zeros(2);
        let f0 = residual_sq_full(&op, &zero, &Rhs::Tensor(tv.clone())).unwrap();
        assert!((f0 - tv.norm_squared()).abs() <= 1e-12 * f0);

        let dense = op.materialize(100).unwrap();
        let oracle = (&dense * &x - tv.to_dense()).norm_squared();
        let f = residual_sq_full(&op, &x, &Rhs::Tensor(tv)).unwrap();
        assert!((f - oracle).abs() <= 1e-10 * oracle);
        assert!(residual_sq_full(&op, &x, &Rhs::Dense(DVector::zeros(5))).is_err());
    }

    #[test]
    fn relative_error_cases() {
        assert_eq!(relative_error(3.0, 3.0).unwrap().value, 0.0);
        assert_eq!(relative_error(4.0, 2.0).unwrap().value, 1.0);
        assert!((relative_error(1.5e-12, 1.0e-12).unwrap().value - 0.5).abs() < 1e-12);
        let r = relative_error(1.0 - 1e-9, 1.0).unwrap();
        assert_eq!(r.value, REL_ERROR_FLOOR);
        assert!(r.raw < REL_ERROR_FLOOR);
        assert!(matches!(relative_error(1.0, 0.0), Err(Error::Degenerate(_))));
    }

    proptest! {
        #[test]
        fn qr_solution_satisfies_normal_equations(m in 3usize..30, p in 1usize..4, seed in any::<u64>()) {
            let mut rng = stream_rng(seed, 0);
            let a: DMatrix<f64> = gaussian_matrix(&mut rng, m.max(p), p);
            let b: DVector<f64> = gaussian_vector(&mut rng, m.max(p));
            let sol = solve_ls(&a, &b, DEFAULT_RCOND).unwrap();
            let grad = a.transpose() * (&a * &sol.x - &b);
            prop_assert!(grad.amax() <= 1e-8 * a.norm() * b.norm());
            prop_assert!((sol.residual_sq - (&a * &sol.x - &b).norm_squared()).abs() <= 1e-10 * sol.residual_sq.max(1e-300));
        }

        #[test]
        fn relative_error_is_scale_invariant(seed in any::<u64>(), alpha in prop_oneof![-50.0f64..-0.02, 0.02f64..50.0]) {
            let mut rng = stream_rng(seed, 1);
            let a: DMatrix<f64> = gaussian_matrix(&mut rng, 12, 3);
            let b: DVector<f64> = gaussian_vector(&mut rng, 12);
            let s: DMatrix<f64> = gaussian_matrix(&mut rng, 6, 12);
            let (sa, sb) = (&s * &a, &s * &b);
            let err = |a: &DMatrix<f64>, b: &DVector<f64>, sa: &DMatrix<f64>, sb: &DVector<f64>| {
                let full = solve_ls(a, b, 0.0).unwrap();
                let xs = solve_ls(sa, sb, 0.0).unwrap().x;
                relative_error((a * xs - b).norm_squared(), full.residual_sq).unwrap().raw
            };
            let e1 = err(&a, &b, &sa, &sb);
            let e2 = err(&(&a * alpha), &(&b * alpha), &(&sa * alpha), &(&sb * alpha));
            prop_assert!((e1 - e2).abs() <= 1e-8 * e1.abs().max(1e-6));
        }
    }
}
