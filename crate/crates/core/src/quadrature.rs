//! Quadrature rules exact for polynomials of degree `2k+1`.
//!
//! The rule chosen for degree `k` doubles as the nodal set of the
//! thermodynamic space: every thermodynamic quantity lives only at these
//! points.
//!
//! * segment: `k+1` point Gauss–Legendre,
//! * quad: `(k+1)²` point tensor Gauss–Legendre,
//! * triangle: `(k+1)²` point collapsed (Duffy) product of Gauss–Legendre and
//!   Gauss–Jacobi(1,0). All weights are positive.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::reference::Shape;

/// Highest polynomial degree supported by [`get_rule`].
pub const MAX_DEGREE: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    pub shape: Shape,
    /// Reference coordinates; the second component is zero on segments.
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub exactness_degree: usize,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn([f64; 2]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(*p))
            .sum()
    }
}

/// Rule on `shape` exact for all polynomials of degree `2k+1`.
pub fn get_rule(shape: Shape, k: usize) -> Result<QuadRule> {
    if k > MAX_DEGREE {
        return Err(Error::InvalidArgument(format!(
            "quadrature for degree k = {k} is not supported (max {MAX_DEGREE})"
        )));
    }
    let n = k + 1;
    let (gx, gw) = gauss_legendre(n);
    let (points, weights) = match shape {
        Shape::Segment => (gx.iter().map(|&x| [x, 0.0]).collect(), gw),
        Shape::Quad => {
            let mut p = Vec::with_capacity(n * n);
            let mut w = Vec::with_capacity(n * n);
            for j in 0..n {
                for i in 0..n {
                    p.push([gx[i], gx[j]]);
                    w.push(gw[i] * gw[j]);
                }
            }
            (p, w)
        }
        Shape::Triangle => {
            let (jx, jw) = gauss_jacobi_10(n);
            let mut p = Vec::with_capacity(n * n);
            let mut w = Vec::with_capacity(n * n);
            for j in 0..n {
                for i in 0..n {
                    p.push([gx[i] * (1.0 - jx[j]), jx[j]]);
                    w.push(gw[i] * jw[j]);
                }
            }
            (p, w)
        }
    };
    Ok(QuadRule {
        shape,
        points,
        weights,
        exactness_degree: 2 * k + 1,
    })
}

/// Legendre polynomial `P_n` and its derivative at `x ∈ [-1, 1]`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for m in 2..=n {
        let mf = m as f64;
        let p2 = ((2.0 * mf - 1.0) * x * p1 - (mf - 1.0) * p0) / mf;
        p0 = p1;
        p1 = p2;
    }
    let dp = if (1.0 - x * x).abs() < 1e-300 {
        0.5 * (n * (n + 1)) as f64 * x.powi(n as i32 + 1)
    } else {
        n as f64 * (p0 - x * p1) / (1.0 - x * x)
    };
    (p1, dp)
}

/// Gauss–Legendre nodes and weights on `[0, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, z);
        // Map from [-1, 1] (descending) to [0, 1] (ascending).
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[n - 1 - i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Gauss–Lobatto–Legendre nodes on `[0, 1]` (endpoints included), ascending.
pub fn gauss_lobatto_points(k: usize) -> Vec<f64> {
    assert!(k >= 1);
    if k == 1 {
        return vec![0.0, 1.0];
    }
    // Interior nodes are roots of P_k'.
    let mut nodes = vec![0.0; k + 1];
    nodes[k] = 1.0;
    let kf = k as f64;
    for i in 1..k {
        let mut z = -(std::f64::consts::PI * i as f64 / kf).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(k, z);
            // P_k'' from the Legendre ODE: (1-z²)P'' = 2zP' - k(k+1)P.
            let d2p = (2.0 * z * dp - kf * (kf + 1.0) * p) / (1.0 - z * z);
            let dz = dp / d2p;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = 0.5 * (1.0 + z);
    }
    // Enforce exact symmetry about 1/2.
    for i in 0..=k / 2 {
        let a = 0.5 * (nodes[i] + 1.0 - nodes[k - i]);
        nodes[i] = a;
        nodes[k - i] = 1.0 - a;
    }
    nodes
}

/// Gauss–Jacobi rule on `[0, 1]` for the weight `(1 - v)`, via Golub–Welsch.
fn gauss_jacobi_10(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (alpha, beta) = (1.0_f64, 0.0_f64);
    let ab = alpha + beta;
    let mut t = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let nf = i as f64;
        let denom = (2.0 * nf + ab) * (2.0 * nf + ab + 2.0);
        t[(i, i)] = if i == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / denom
        };
        if i + 1 < n {
            let m = (i + 1) as f64;
            let s = 2.0 * m + ab;
            let b = (4.0 * m * (m + alpha) * (m + beta) * (m + ab)
                / (s * s * (s + 1.0) * (s - 1.0)))
                .sqrt();
            t[(i, i + 1)] = b;
            t[(i + 1, i)] = b;
        }
    }
    // mu0 = ∫_{-1}^{1} (1 - x) dx = 2.
    let mu0 = 2.0;
    let eig = SymmetricEigen::new(t);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // x ∈ [-1,1] -> v = (1+x)/2, weight (1-v) = (1-x)/2, dv = dx/2.
    let x = pairs.iter().map(|p| 0.5 * (1.0 + p.0)).collect();
    let w = pairs.iter().map(|p| 0.25 * p.1).collect();
    (x, w)
}

/// `(a, b)_h = Σ_ℓ Σ_i a_i^ℓ b_i^ℓ ω_i^ℓ` over a quadrature-point layout.
pub fn discrete_inner_product(a: &[f64], b: &[f64], weights: &[f64]) -> Result<f64> {
    if a.len() != weights.len() || b.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "layout mismatch: {} / {} values for {} weights",
            a.len(),
            b.len(),
            weights.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .zip(weights)
        .map(|((x, y), w)| x * y * w)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// ∫ x^a y^b over the reference element, by closed form.
    fn monomial_integral(shape: Shape, a: u32, b: u32) -> f64 {
        match shape {
            Shape::Segment => {
                if b > 0 {
                    0.0
                } else {
                    1.0 / (a as f64 + 1.0)
                }
            }
            Shape::Quad => 1.0 / ((a as f64 + 1.0) * (b as f64 + 1.0)),
            Shape::Triangle => {
                // a! b! / (a + b + 2)!
                let fact = |n: u32| (1..=n).map(|i| i as f64).product::<f64>();
                fact(a) * fact(b) / fact(a + b + 2)
            }
        }
    }

    #[test]
    fn quad_k1_has_four_equal_weights() {
        let r = get_rule(Shape::Quad, 1).unwrap();
        assert_eq!(r.len(), 4);
        for w in &r.weights {
            assert_relative_eq!(*w, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn triangle_k0_is_centroid() {
        let r = get_rule(Shape::Triangle, 0).unwrap();
        assert_eq!(r.len(), 1);
        assert_relative_eq!(r.weights[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(r.points[0][0], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(r.points[0][1], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn quad_k1_integrates_x3y3() {
        let r = get_rule(Shape::Quad, 1).unwrap();
        let v = r.integrate(|[x, y]| x.powi(3) * y.powi(3));
        assert_relative_eq!(v, 1.0 / 16.0, epsilon = 1e-15);
    }

    #[test]
    fn all_monomials_up_to_exactness_degree() {
        for shape in [Shape::Segment, Shape::Quad, Shape::Triangle] {
            for k in 0..=MAX_DEGREE {
                let r = get_rule(shape, k).unwrap();
                assert!(r.weights.iter().all(|&w| w > 0.0));
                assert!((r.weights.iter().sum::<f64>() - shape.measure()).abs() < 1e-14);
                for p in r.points.iter() {
                    assert!(shape.contains(*p, 0.0));
                }
                let deg = r.exactness_degree as u32;
                let ymax = if shape == Shape::Segment { 0 } else { deg };
                for a in 0..=deg {
                    for b in 0..=ymax.min(deg - a) {
                        let exact = monomial_integral(shape, a, b);
                        let got = r.integrate(|[x, y]| x.powi(a as i32) * y.powi(b as i32));
                        assert!(
                            (got - exact).abs() <= 1e-12 * exact.abs(),
                            "{shape:?} k={k} x^{a}y^{b}: {got} vs {exact}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn unsupported_degree_is_rejected() {
        assert!(matches!(get_rule(Shape::Quad, 7), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn lobatto_points_are_symmetric_and_ordered() {
        for k in 1..=6 {
            let g = gauss_lobatto_points(k);
            assert_eq!(g.len(), k + 1);
            assert_eq!(g[0], 0.0);
            assert_eq!(g[k], 1.0);
            for i in 0..k {
                assert!(g[i] < g[i + 1]);
                assert!((g[i] + g[k - i] - 1.0).abs() < 1e-15);
            }
        }
        // k = 2 has the midpoint; k = 3 has (1 ± 1/√5)/2.
        assert_relative_eq!(gauss_lobatto_points(2)[1], 0.5, epsilon = 1e-15);
        assert_relative_eq!(
            gauss_lobatto_points(3)[1],
            0.5 * (1.0 - 1.0 / 5f64.sqrt()),
            epsilon = 1e-15
        );
    }

    #[test]
    fn inner_product_cases() {
        let w = vec![0.25; 4];
        assert_eq!(discrete_inner_product(&[0.0; 4], &[0.0; 4], &w).unwrap(), 0.0);
        assert_relative_eq!(discrete_inner_product(&[1.0; 4], &[1.0; 4], &w).unwrap(), 1.0);
        assert!(discrete_inner_product(&[1.0; 3], &[1.0; 4], &w).is_err());
    }
}
