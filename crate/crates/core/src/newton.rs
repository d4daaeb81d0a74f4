//! Damped Newton iteration with a sparse direct linear solve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{linear_solve, norm2, CsrMatrix, Factorization};

/// A square nonlinear system `R(U) = 0`.
///
/// Evaluations may fail with [`Error::InvertedElement`] or
/// [`Error::Positivity`]; Newton treats such trial points as invalid and
/// backtracks.
pub trait NonlinearSystem {
    fn residual(&self, u: &[f64]) -> Result<Vec<f64>>;
    fn jacobian(&self, u: &[f64]) -> Result<CsrMatrix>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    /// Relative residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Maximum number of step halvings in the line search.
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 25,
            max_halvings: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub converged: bool,
    /// Factorization used by the last linear solve.
    pub factorization: Option<Factorization>,
    pub halvings: usize,
}

impl NewtonReport {
    /// Absolute residual target for the given initial residual.
    pub fn target(tol: f64, initial: f64) -> f64 {
        tol * initial.max(1.0)
    }
}

fn is_invalid_trial(e: &Error) -> bool {
    matches!(e, Error::InvertedElement { .. } | Error::Positivity { .. })
}

/// Solve `R(U) = 0` from `guess`.
///
/// Converges when `‖R‖ ≤ tol·max(1, ‖R(guess)‖)`. Non-convergence is
/// reported, not raised. Errors from evaluating the guess itself and linear
/// solver failures are returned.
pub fn newton_solve(sys: &dyn NonlinearSystem, guess: &[f64], opts: &NewtonOptions) -> Result<(Vec<f64>, NewtonReport)> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("Newton tolerance must be positive".into()));
    }
    let mut u = guess.to_vec();
    let mut r = sys.residual(&u)?;
    let mut norm = norm2(&r);
    let mut report = NewtonReport {
        iterations: 0,
        initial_residual: norm,
        final_residual: norm,
        converged: false,
        factorization: None,
        halvings: 0,
    };
    let target = NewtonReport::target(opts.tol, norm);
    while norm > target && report.iterations < opts.max_iter {
        let jac = sys.jacobian(&u)?;
        let (delta, how) = linear_solve(&jac, &r)?;
        report.factorization = Some(how);
        report.iterations += 1;

        let mut alpha = 1.0;
        let mut fallback: Option<(Vec<f64>, Vec<f64>, f64)> = None;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a - alpha * d).collect();
            match sys.residual(&trial) {
                Ok(rt) => {
                    let nt = norm2(&rt);
                    if nt.is_finite() && nt < norm {
                        accepted = Some((trial, rt, nt));
                        break;
                    }
                    if nt.is_finite() {
                        fallback = Some((trial, rt, nt));
                    }
                }
                Err(e) if is_invalid_trial(&e) => {}
                Err(e) => return Err(e),
            }
            alpha *= 0.5;
            report.halvings += 1;
        }
        match accepted.or(fallback) {
            Some((nu, nr, nn)) => {
                u = nu;
                r = nr;
                norm = nn;
            }
            None => break,
        }
    }
    report.final_residual = norm;
    report.converged = norm <= target;
    Ok((u, report))
}

/// Dense central-difference Jacobian, for cross-validation only.
pub fn fd_jacobian(sys: &dyn NonlinearSystem, u: &[f64], eps: f64) -> Result<Vec<Vec<f64>>> {
    let n = u.len();
    let mut cols = Vec::with_capacity(n);
    let mut w = u.to_vec();
    for j in 0..n {
        let h = eps * u[j].abs().max(1.0);
        w[j] = u[j] + h;
        let rp = sys.residual(&w)?;
        w[j] = u[j] - h;
        let rm = sys.residual(&w)?;
        w[j] = u[j];
        cols.push(rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<f64>>());
    }
    // Transpose to row-major.
    let m = cols.first().map_or(0, |c| c.len());
    Ok((0..m).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear {
        a: CsrMatrix,
        b: Vec<f64>,
    }

    impl NonlinearSystem for Linear {
        fn residual(&self, u: &[f64]) -> Result<Vec<f64>> {
            Ok(self.a.matvec(u).iter().zip(&self.b).map(|(x, y)| x - y).collect())
        }
        fn jacobian(&self, _: &[f64]) -> Result<CsrMatrix> {
            Ok(self.a.clone())
        }
    }

    struct Square;

    impl NonlinearSystem for Square {
        fn residual(&self, u: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![u[0] * u[0] - 4.0])
        }
        fn jacobian(&self, u: &[f64]) -> Result<CsrMatrix> {
            Ok(CsrMatrix::from_triplets(1, 1, vec![(0, 0, 2.0 * u[0])]))
        }
    }

    /// `R(u) = u − 1` but only defined for `u < 1.5`.
    struct Guarded;

    impl NonlinearSystem for Guarded {
        fn residual(&self, u: &[f64]) -> Result<Vec<f64>> {
            if u[0] >= 1.5 {
                return Err(Error::InvertedElement { element: 0, point: 0, jacobian: -1.0 });
            }
            Ok(vec![(u[0] - 1.0) * (1.0 + (u[0] - 1.0).powi(2))])
        }
        fn jacobian(&self, u: &[f64]) -> Result<CsrMatrix> {
            let d = u[0] - 1.0;
            Ok(CsrMatrix::from_triplets(1, 1, vec![(0, 0, 1.0 + 3.0 * d * d)]))
        }
    }

    #[test]
    fn linear_system_in_one_iteration() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)]);
        let sys = Linear { a, b: vec![1.0, 2.0] };
        let (u, rep) = newton_solve(&sys, &[0.0, 0.0], &NewtonOptions::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
        assert_eq!(rep.factorization, Some(Factorization::Cholesky));
        assert!((u[0] - 1.0 / 11.0).abs() < 1e-14 && (u[1] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn scalar_quadratic_converges_quadratically() {
        let (u, rep) = newton_solve(&Square, &[3.0], &NewtonOptions::default()).unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 6);
        assert!((u[0] - 2.0).abs() < 1e-9);
        // Hand iteration: 3 → 13/6 → 2.00641... each error roughly squares.
        let mut x: f64 = 3.0;
        let mut errs = vec![];
        for _ in 0..4 {
            x -= (x * x - 4.0) / (2.0 * x);
            errs.push((x - 2.0).abs());
        }
        assert!(errs[2] < errs[1] * errs[1] && errs[1] < errs[0] * errs[0]);
    }

    #[test]
    fn line_search_avoids_invalid_region() {
        let (u, rep) = newton_solve(&Guarded, &[-2.0], &NewtonOptions::default()).unwrap();
        assert!(rep.converged);
        assert!((u[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn nonconvergence_is_reported() {
        let opts = NewtonOptions { max_iter: 1, ..Default::default() };
        let (_, rep) = newton_solve(&Square, &[30.0], &opts).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn singular_jacobian_is_an_error() {
        let sys = Linear { a: CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0)]), b: vec![1.0, 1.0] };
        assert!(matches!(
            newton_solve(&sys, &[0.0, 0.0], &NewtonOptions::default()),
            Err(Error::LinearSolver(_))
        ));
    }

    #[test]
    fn fd_jacobian_matches_linear_map() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 4.0), (0, 1, -1.0), (1, 1, 3.0)]);
        let sys = Linear { a: a.clone(), b: vec![0.0, 0.0] };
        let j = fd_jacobian(&sys, &[0.3, -0.2], 1e-6).unwrap();
        let d = a.to_dense();
        for i in 0..2 {
            for k in 0..2 {
                assert!((j[i][k] - d[i][k]).abs() < 1e-8);
            }
        }
    }
}
