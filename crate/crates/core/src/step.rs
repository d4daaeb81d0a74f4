//! Velocity-only nonlinear system of one implicit step.
//!
//! Every implicit scheme here (backward Euler and BDF of any order, uniform
//! or variable steps) writes the discrete time derivative of a quantity
//! `α` as `c0 (αⁿ − α̂)`, with `α̂` a combination of past levels. With
//! `τ = 1/c0` the new position and temperature are eliminated pointwise:
//!
//! * `xⁿ = x̂ + τ uⁿ`
//! * `θⁿ = (θ̂ + τ σ:∇u / (c_v ρ0) + τ e_src / c_v) / (1 + τ (γ−1) ∇·u)`
//!
//! leaving `c0 M (uⁿ − û) + R(xⁿ, uⁿ, θⁿ) = 0` for the velocity.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hydro::{FlowState, HydroProblem};
use crate::linalg::{CsrMatrix, Mat2};
use crate::newton::NonlinearSystem;
use crate::space::QuadField;

/// The nonlinear velocity system of one implicit step.
#[derive(Debug, Clone)]
pub struct ImplicitSystem<'a> {
    pub problem: &'a HydroProblem,
    /// Leading coefficient of the discrete time derivative.
    pub c0: f64,
    pub x_hat: Vec<f64>,
    pub u_hat: Vec<f64>,
    pub theta_hat: QuadField,
    /// Frozen artificial viscosity.
    pub mu: QuadField,
}

struct ElementOutput {
    residual: Vec<f64>,
    theta: Vec<f64>,
    jacobian: Option<Vec<f64>>,
}

impl<'a> ImplicitSystem<'a> {
    /// Build from derivative coefficients `coeffs[j]` acting on level `n−j`
    /// and the past levels (most recent first).
    pub fn from_levels(problem: &'a HydroProblem, coeffs: &[f64], past: &[&FlowState], mu: QuadField) -> Result<Self> {
        if coeffs.len() != past.len() + 1 || past.is_empty() {
            return Err(Error::InvalidArgument("coefficient count must be one more than the number of levels".into()));
        }
        let c0 = coeffs[0];
        if !(c0 > 0.0) || !c0.is_finite() {
            return Err(Error::InvalidArgument(format!("leading coefficient {c0} must be positive")));
        }
        let combine = |get: &dyn Fn(&FlowState) -> &[f64]| -> Vec<f64> {
            let n = get(past[0]).len();
            let mut out = vec![0.0; n];
            for (a, lvl) in coeffs[1..].iter().zip(past) {
                for (o, v) in out.iter_mut().zip(get(lvl)) {
                    *o -= a * v / c0;
                }
            }
            out
        };
        let x_hat = combine(&|s| &s.x);
        let u_hat = combine(&|s| &s.u);
        let th = combine(&|s| &s.theta.values);
        Ok(Self {
            problem,
            c0,
            x_hat,
            u_hat,
            theta_hat: QuadField::new(th, problem.space.n_quad()),
            mu,
        })
    }

    pub fn tau(&self) -> f64 {
        1.0 / self.c0
    }

    /// `xⁿ = x̂ + τ u`.
    pub fn positions(&self, u: &[f64]) -> Vec<f64> {
        let tau = self.tau();
        self.x_hat.iter().zip(u).map(|(x, v)| x + tau * v).collect()
    }

    fn element(&self, x: &[f64], u: &[f64], e: usize, want_jac: bool) -> Result<ElementOutput> {
        let p = self.problem;
        let space = &p.space;
        let g = p.gas(e);
        let dim = space.dim;
        let n_loc = space.n_loc();
        let nd = n_loc * dim;
        let tau = self.tau();
        let gm1 = g.gamma() - 1.0;
        let lam = g.xi_bulk - 2.0 * g.eta / 3.0;
        let lx = space.gather(x, e);
        let lu = space.gather(u, e);
        let mut res = vec![0.0; nd];
        let mut thetas = Vec::with_capacity(space.n_quad());
        let mut jac = if want_jac { Some(vec![0.0; nd * nd]) } else { None };
        let eye = Mat2::identity();

        for q in 0..space.n_quad() {
            let w = space.weight(e, q);
            let gx = space.grad_x0(e, q);
            let phi = &space.table.values[q];
            let rho0 = p.rho0.element(e)[q];
            let c = g.eta + self.mu.element(e)[q];

            let f = space.deformation(&lx, e, q);
            let j = f.determinant();
            if !(j > 0.0) || !j.is_finite() {
                return Err(Error::InvertedElement { element: e, point: q, jacobian: j });
            }
            let fi = f.try_inverse().unwrap();
            let h = space.material_gradient(&lu, e, q);
            let gu = h * fi;
            let d = 0.5 * (gu + gu.transpose());
            let tr = gu.trace();
            let sigma = j * (c * d + lam * tr * eye);
            let dissip = j * (c * d.component_mul(&d).sum() + lam * tr * tr);

            let (src, src_grad) = if p.source.is_none() {
                (0.0, [0.0; 2])
            } else {
                let mut pos = [0.0; 2];
                for (a, wa) in phi.iter().enumerate() {
                    pos[0] += wa * lx[a][0];
                    pos[1] += wa * lx[a][1];
                }
                p.source.eval(pos)
            };
            let num = self.theta_hat.element(e)[q] + tau * dissip / (g.cv * rho0) + tau * src / g.cv;
            let den = 1.0 + tau * gm1 * tr;
            if !(den > 0.0) {
                return Err(Error::Positivity { element: e, point: q, what: "temperature denominator", value: den });
            }
            let theta = num / den;
            if !(theta > 0.0) || !theta.is_finite() {
                return Err(Error::Positivity { element: e, point: q, what: "temperature", value: theta });
            }
            thetas.push(theta);
            let rr = g.r() * rho0;
            let s = sigma - rr * theta * eye;
            let pk = s * fi.transpose();
            for a in 0..n_loc {
                for cc in 0..dim {
                    res[a * dim + cc] += w * (pk[(cc, 0)] * gx[a][0] + pk[(cc, 1)] * gx[a][1]);
                }
            }

            if let Some(k) = jac.as_mut() {
                for b in 0..n_loc {
                    for dd in 0..dim {
                        let mut dh = Mat2::zeros();
                        for jj in 0..dim {
                            dh[(dd, jj)] = gx[b][jj];
                        }
                        let df = tau * dh;
                        let fidf = fi * df;
                        let dj = j * fidf.trace();
                        let dfi = -fidf * fi;
                        let dg = (dh - tau * gu * dh) * fi;
                        let dd_sym = 0.5 * (dg + dg.transpose());
                        let dtr = dg.trace();
                        let dsigma = (dj / j) * sigma + j * (c * dd_sym + lam * dtr * eye);
                        let ddissip = (dj / j) * dissip + j * (2.0 * c * d.component_mul(&dd_sym).sum() + 2.0 * lam * tr * dtr);
                        let dsrc = src_grad[dd] * tau * phi[b];
                        let dnum = tau * ddissip / (g.cv * rho0) + tau * dsrc / g.cv;
                        let dden = tau * gm1 * dtr;
                        let dtheta = (dnum - theta * dden) / den;
                        let ds = dsigma - rr * dtheta * eye;
                        let dpk = ds * fi.transpose() + s * dfi.transpose();
                        let col = b * dim + dd;
                        for a in 0..n_loc {
                            for cc in 0..dim {
                                k[(a * dim + cc) * nd + col] += w * (dpk[(cc, 0)] * gx[a][0] + dpk[(cc, 1)] * gx[a][1]);
                            }
                        }
                    }
                }
            }
        }
        Ok(ElementOutput { residual: res, theta: thetas, jacobian: jac })
    }

    fn assemble(&self, u: &[f64], want_jac: bool) -> Result<(Vec<f64>, QuadField, Option<CsrMatrix>)> {
        let p = self.problem;
        let space = &p.space;
        let dim = space.dim;
        let n_loc = space.n_loc();
        let x = self.positions(u);
        let outs: Vec<ElementOutput> = (0..space.n_elements)
            .into_par_iter()
            .map(|e| self.element(&x, u, e, want_jac))
            .collect::<Result<_>>()?;

        // Inertia: c0 M (u − û).
        let du: Vec<f64> = u.iter().zip(&self.u_hat).map(|(a, b)| a - b).collect();
        let mut r: Vec<f64> = p.mass.matvec(&du).iter().map(|v| self.c0 * v).collect();
        let mut theta = QuadField::constant(space, 0.0);
        let mut trip = Vec::new();
        if want_jac {
            trip.reserve(p.mass.nnz() + space.n_elements * (n_loc * dim).pow(2));
            for (i, jj, v) in p.mass.to_triplets() {
                trip.push((i, jj, self.c0 * v));
            }
        }
        for (e, out) in outs.into_iter().enumerate() {
            let nodes = space.element_nodes(e);
            let gdof = |l: usize| nodes[l / dim] * dim + l % dim;
            for (l, v) in out.residual.iter().enumerate() {
                r[gdof(l)] += v;
            }
            theta.element_mut(e).copy_from_slice(&out.theta);
            if let Some(k) = out.jacobian {
                let nd = n_loc * dim;
                for a in 0..nd {
                    for b in 0..nd {
                        trip.push((gdof(a), gdof(b), k[a * nd + b]));
                    }
                }
            }
        }
        let c = &p.constraints;
        c.zero_constrained(&mut r);
        let jac = if want_jac {
            trip.retain(|&(i, j, _)| !c.is_fixed(i) && !c.is_fixed(j));
            for i in 0..r.len() {
                if c.is_fixed(i) {
                    trip.push((i, i, 1.0));
                }
            }
            Some(CsrMatrix::from_triplets(r.len(), r.len(), trip))
        } else {
            None
        };
        Ok((r, theta, jac))
    }

    /// Temperature implied by velocity `u`.
    pub fn temperature(&self, u: &[f64]) -> Result<QuadField> {
        Ok(self.assemble(u, false)?.1)
    }

    /// Full new state for a converged velocity.
    pub fn state(&self, u: &[f64], t: f64) -> Result<FlowState> {
        Ok(FlowState {
            x: self.positions(u),
            u: u.to_vec(),
            theta: self.temperature(u)?,
            t,
        })
    }
}

impl NonlinearSystem for ImplicitSystem<'_> {
    fn residual(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.assemble(u, false)?.0)
    }

    fn jacobian(&self, u: &[f64]) -> Result<CsrMatrix> {
        Ok(self.assemble(u, true)?.2.unwrap())
    }
}
