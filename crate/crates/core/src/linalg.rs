//! Small dense tensor helpers, a CSR matrix, and the direct sparse solve.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Col, Side};
use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};

pub type Mat2 = Matrix2<f64>;
pub type Vec2 = Vector2<f64>;

/// Smallest singular value of a 2×2 tensor.
///
/// With `F = [[a, b], [c, d]]`, `σ_max = (√((a+d)² + (b−c)²) + √((a−d)² + (b+c)²)) / 2`
/// and `σ_min = |det F| / σ_max`, which avoids cancellation.
pub fn min_singular_value(f: &Mat2) -> f64 {
    let (a, b, c, d) = (f[(0, 0)], f[(0, 1)], f[(1, 0)], f[(1, 1)]);
    let smax = 0.5 * ((a + d).hypot(b - c) + (a - d).hypot(b + c));
    if smax == 0.0 {
        0.0
    } else {
        f.determinant().abs() / smax
    }
}

/// Smallest eigenpair of a symmetric tensor restricted to its leading
/// `dim × dim` block. The eigenvector is unit length with its first nonzero
/// component positive.
pub fn smallest_eigenpair_sym(a: &Mat2, dim: usize) -> (f64, Vec2) {
    if dim == 1 {
        return (a[(0, 0)], Vec2::new(1.0, 0.0));
    }
    let (a00, a11) = (a[(0, 0)], a[(1, 1)]);
    let a01 = 0.5 * (a[(0, 1)] + a[(1, 0)]);
    let scale = a00.abs().max(a11.abs()).max(a01.abs());
    if scale == 0.0 {
        return (0.0, Vec2::new(1.0, 0.0));
    }
    if a01.abs() <= 1e-300 {
        return if a00 <= a11 {
            (a00, Vec2::new(1.0, 0.0))
        } else {
            (a11, Vec2::new(0.0, 1.0))
        };
    }
    let mean = 0.5 * (a00 + a11);
    let half = 0.5 * (a00 - a11);
    let lambda = mean - half.hypot(a01);
    // Two candidate (unnormalized) null vectors of A - λI; take the larger.
    let v1 = Vec2::new(a01, lambda - a00);
    let v2 = Vec2::new(lambda - a11, a01);
    let mut v = if v1.norm_squared() >= v2.norm_squared() { v1 } else { v2 };
    v /= v.norm();
    if v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0) {
        v = -v;
    }
    (lambda, v)
}

pub fn sym(a: &Mat2) -> Mat2 {
    0.5 * (a + a.transpose())
}

/// Frobenius inner product `A : B`.
pub fn ddot(a: &Mat2, b: &Mat2) -> f64 {
    a.component_mul(b).sum()
}

/// Compressed sparse row matrix with sorted, unique column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_unstable_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            debug_assert!(r < nrows && c < ncols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(p) => self.values[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn to_triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    /// Largest `|A_ij - A_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    /// Dense copy, row-major. Intended for tests and tiny systems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, j, v) in self.to_triplets() {
            d[i][j] = v;
        }
        d
    }
}

/// Which factorization produced a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factorization {
    Cholesky,
    Lu,
}

/// Solve `A x = b` with a sparse direct method.
///
/// Symmetric matrices are first offered to a Cholesky factorization; if that
/// fails (indefinite) or the matrix is not symmetric, a partially pivoted
/// sparse LU is used.
pub fn linear_solve(a: &CsrMatrix, b: &[f64]) -> Result<(Vec<f64>, Factorization)> {
    if a.nrows != a.ncols || b.len() != a.nrows {
        return Err(Error::InvalidArgument(format!(
            "linear_solve: matrix {}x{} with rhs of length {}",
            a.nrows,
            a.ncols,
            b.len()
        )));
    }
    let n = a.nrows;
    if n == 0 {
        return Ok((Vec::new(), Factorization::Cholesky));
    }
    let trips: Vec<Triplet<usize, usize, f64>> = a
        .to_triplets()
        .into_iter()
        .map(|(i, j, v)| Triplet::new(i, j, v))
        .collect();
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips)
        .map_err(|e| Error::LinearSolver(format!("{e:?}")))?;
    let rhs = Col::from_fn(n, |i| b[i]);

    let finish = |x: Col<f64>, kind| -> Option<(Vec<f64>, Factorization)> {
        let v: Vec<f64> = (0..n).map(|i| x[i]).collect();
        v.iter().all(|x| x.is_finite()).then_some((v, kind))
    };

    if a.asymmetry() <= 1e-12 {
        if let Ok(llt) = mat.sp_cholesky(Side::Lower) {
            if let Some(out) = finish(llt.solve(&rhs), Factorization::Cholesky) {
                return Ok(out);
            }
        }
    }
    let lu = mat
        .sp_lu()
        .map_err(|e| Error::LinearSolver(format!("sparse LU failed: {e:?}")))?;
    let x = lu.solve(&rhs);
    let (x, kind) = finish(x, Factorization::Lu)
        .ok_or_else(|| Error::LinearSolver("matrix is numerically singular".into()))?;
    // A pivot-free breakdown can still return finite garbage; check the residual.
    let r = a.matvec(&x);
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rnorm = r.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    if rnorm > 1e-6 * bnorm.max(f64::MIN_POSITIVE) && rnorm > 1e-300 {
        return Err(Error::LinearSolver(format!(
            "matrix is numerically singular (residual {rnorm:e})"
        )));
    }
    Ok((x, kind))
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
