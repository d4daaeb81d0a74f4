//! Reference solutions and error measurement.

pub mod riemann;

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::hydro::{element_kinematics, EnergySource, FlowState, HydroProblem};
use crate::quadrature::get_rule;

pub use riemann::{exact_riemann, Primitive, RiemannSolution, RootFinder, Wave};

/// Density, velocity and pressure at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointState {
    pub rho: f64,
    pub u: [f64; 2],
    pub p: f64,
}

/// Stationary Taylor-Green vortex on the unit square and its energy source.
pub fn taylor_green_reference(x: [f64; 2]) -> (PointState, f64) {
    let (px, py) = (PI * x[0], PI * x[1]);
    let s = PointState {
        rho: 1.0,
        u: [px.sin() * py.cos(), -px.cos() * py.sin()],
        p: 0.25 * ((2.0 * px).cos() + (2.0 * py).cos()) + 1.0,
    };
    (s, EnergySource::TaylorGreen.eval(x).0)
}

/// `(|x_h(ξ) − center|, ρ(ξ))` at every quadrature point.
pub fn radial_scatter(problem: &HydroProblem, state: &FlowState, center: [f64; 2]) -> Result<Vec<(f64, f64)>> {
    let space = &problem.space;
    let mut out = Vec::with_capacity(space.n_quad_total());
    for e in 0..space.n_elements {
        for (q, k) in element_kinematics(space, &state.x, &state.u, e)?.iter().enumerate() {
            let r = (k.pos[0] - center[0]).hypot(k.pos[1] - center[1]);
            out.push((r, problem.rho0.element(e)[q] / k.j));
        }
    }
    Ok(out)
}

/// Errors on a sequence of meshes and the observed orders between levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub hs: Vec<f64>,
    pub errors: Vec<f64>,
    /// `orders[i]` is measured between levels `i` and `i+1`; NaN when undefined.
    pub orders: Vec<f64>,
}

pub fn convergence_order(errors: &[f64], hs: &[f64]) -> Result<ConvergenceTable> {
    if errors.len() != hs.len() || hs.len() < 2 {
        return Err(Error::InvalidArgument("need at least two (h, error) levels".into()));
    }
    if hs.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::InvalidArgument("mesh sizes must decrease monotonically".into()));
    }
    let orders = errors
        .windows(2)
        .zip(hs.windows(2))
        .map(|(e, h)| {
            if e[0] > 0.0 && e[1] > 0.0 {
                (e[0] / e[1]).ln() / (h[0] / h[1]).ln()
            } else {
                f64::NAN
            }
        })
        .collect();
    Ok(ConvergenceTable {
        hs: hs.to_vec(),
        errors: errors.to_vec(),
        orders,
    })
}

/// CSV table `h,error_u,order_u,error_e,order_e`; the first row has empty orders.
pub fn convergence_csv(u: &ConvergenceTable, e: &ConvergenceTable) -> String {
    let mut s = String::from("h,error_u,order_u,error_e,order_e\n");
    let fmt = |v: Option<&f64>| match v {
        Some(x) if x.is_finite() => format!("{x:.4}"),
        _ => String::new(),
    };
    for i in 0..u.hs.len() {
        let (ou, oe) = if i == 0 { (None, None) } else { (u.orders.get(i - 1), e.orders.get(i - 1)) };
        s.push_str(&format!(
            "{:.6e},{:.6e},{},{:.6e},{}\n",
            u.hs[i],
            u.errors[i],
            fmt(ou),
            e.errors[i],
            fmt(oe)
        ));
    }
    s
}

/// Field compared by [`l2_error_vs_reference`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorField {
    Velocity,
    InternalEnergy,
    Density,
}

/// `sqrt(((f_h − f∘x_h)², J)_h)` over the deformed configuration.
pub fn l2_error_vs_reference(
    problem: &HydroProblem,
    state: &FlowState,
    reference: &dyn Fn([f64; 2]) -> PointState,
    which: ErrorField,
) -> Result<f64> {
    let space = &problem.space;
    let mut sum = 0.0;
    for e in 0..space.n_elements {
        let g = problem.gas(e);
        for (q, k) in element_kinematics(space, &state.x, &state.u, e)?.iter().enumerate() {
            let r = reference(k.pos);
            let d2 = match which {
                ErrorField::Velocity => (k.vel[0] - r.u[0]).powi(2) + (k.vel[1] - r.u[1]).powi(2),
                ErrorField::InternalEnergy => {
                    let eh = g.cv * state.theta.element(e)[q];
                    let er = g.cv * r.p / (g.r() * r.rho);
                    (eh - er).powi(2)
                }
                ErrorField::Density => (problem.rho0.element(e)[q] / k.j - r.rho).powi(2),
            };
            sum += d2 * k.j * space.weight(e, q);
        }
    }
    Ok(sum.sqrt())
}

/// Velocity L² error evaluated with an over-integrating rule of degree
/// `rule_k` (exact to `2 rule_k + 1`) instead of the nodal rule.
pub fn l2_velocity_error_refined(
    problem: &HydroProblem,
    state: &FlowState,
    reference: &dyn Fn([f64; 2]) -> [f64; 2],
    rule_k: usize,
) -> Result<f64> {
    let space = &problem.space;
    let rule = get_rule(space.shape, rule_k)?;
    let mut sum = 0.0;
    for e in 0..space.n_elements {
        let g0 = space.evaluate_geometry(&space.identity_map(), e, &rule.points)?;
        let g = space.evaluate_geometry(&state.x, e, &rule.points)?;
        let lx = space.gather(&state.x, e);
        let lu = space.gather(&state.u, e);
        let nodes = space.element_nodes(e);
        for (i, p) in rule.points.iter().enumerate() {
            let (vals, grads) = space.basis.eval(*p);
            let mut ref_jac = 0.0;
            {
                // |det ∇̂Φ0| from the initial node coordinates.
                let mut m = crate::linalg::Mat2::zeros();
                for (a, &n) in nodes.iter().enumerate() {
                    let xn = space.node_coords[n];
                    for r in 0..space.dim {
                        for c in 0..space.dim {
                            m[(r, c)] += xn[r] * grads[a][c];
                        }
                    }
                }
                if space.dim == 1 {
                    m[(1, 1)] = 1.0;
                }
                ref_jac += m.determinant().abs();
            }
            let mut pos = [0.0; 2];
            let mut vel = [0.0; 2];
            for (a, w) in vals.iter().enumerate() {
                for c in 0..2 {
                    pos[c] += w * lx[a][c];
                    vel[c] += w * lu[a][c];
                }
            }
            let r = reference(pos);
            let d2 = (vel[0] - r[0]).powi(2) + (vel[1] - r[1]).powi(2);
            debug_assert!((g0.j[i] - 1.0).abs() < 1e-10);
            sum += d2 * g.j[i] * ref_jac * rule.weights[i];
        }
    }
    Ok(sum.sqrt())
}
