//! Exact solution of the Riemann problem for the Euler equations of an
//! ideal gas.

use crate::error::{Error, Result};

/// Primitive state `(ρ, u, p)` in one dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub rho: f64,
    pub u: f64,
    pub p: f64,
}

impl Primitive {
    pub fn new(rho: f64, u: f64, p: f64) -> Self {
        Self { rho, u, p }
    }

    fn sound_speed(&self, gamma: f64) -> f64 {
        (gamma * self.p / self.rho).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Wave {
    Shock { speed: f64 },
    Rarefaction { head: f64, tail: f64 },
}

/// Star-region solution and wave pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiemannSolution {
    pub left: Primitive,
    pub right: Primitive,
    pub gamma: f64,
    /// Initial discontinuity position.
    pub x0: f64,
    pub p_star: f64,
    pub u_star: f64,
    pub rho_star_left: f64,
    pub rho_star_right: f64,
    pub left_wave: Wave,
    pub right_wave: Wave,
}

/// Root finder for the star pressure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootFinder {
    Newton,
    Bisection,
}

fn pressure_function(p: f64, s: &Primitive, gamma: f64) -> (f64, f64) {
    let c = s.sound_speed(gamma);
    if p > s.p {
        let a = 2.0 / ((gamma + 1.0) * s.rho);
        let b = (gamma - 1.0) / (gamma + 1.0) * s.p;
        let q = (a / (p + b)).sqrt();
        ((p - s.p) * q, q * (1.0 - 0.5 * (p - s.p) / (p + b)))
    } else {
        let e = (gamma - 1.0) / (2.0 * gamma);
        let r = p / s.p;
        (2.0 * c / (gamma - 1.0) * (r.powf(e) - 1.0), r.powf(-(gamma + 1.0) / (2.0 * gamma)) / (s.rho * c))
    }
}

impl RiemannSolution {
    pub fn solve(left: Primitive, right: Primitive, gamma: f64, finder: RootFinder) -> Result<Self> {
        for s in [&left, &right] {
            if !(s.rho > 0.0 && s.p > 0.0) {
                return Err(Error::InvalidArgument(format!("Riemann states need positive ρ and p, got {s:?}")));
            }
        }
        if !(gamma > 1.0) {
            return Err(Error::InvalidArgument(format!("γ must exceed 1, got {gamma}")));
        }
        let (cl, cr) = (left.sound_speed(gamma), right.sound_speed(gamma));
        let du = right.u - left.u;
        if 2.0 / (gamma - 1.0) * (cl + cr) <= du {
            return Err(Error::Unsupported("Riemann data generates vacuum".into()));
        }
        let f = |p: f64| {
            let (fl, dl) = pressure_function(p, &left, gamma);
            let (fr, dr) = pressure_function(p, &right, gamma);
            (fl + fr + du, dl + dr)
        };
        let p_star = match finder {
            RootFinder::Newton => {
                // Two-rarefaction guess, then Newton.
                let e = (gamma - 1.0) / (2.0 * gamma);
                let guess = ((cl + cr - 0.5 * (gamma - 1.0) * du) / (cl / left.p.powf(e) + cr / right.p.powf(e))).powf(1.0 / e);
                let mut p = guess.max(1e-12);
                for _ in 0..100 {
                    let (v, d) = f(p);
                    let next = (p - v / d).max(1e-14 * p);
                    let change = 2.0 * (next - p).abs() / (next + p);
                    p = next;
                    if change < 1e-15 {
                        break;
                    }
                }
                p
            }
            RootFinder::Bisection => {
                let mut lo = 0.0;
                let mut hi = left.p.max(right.p);
                while f(hi).0 < 0.0 {
                    hi *= 2.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid).0 < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-16 * hi {
                        break;
                    }
                }
                0.5 * (lo + hi)
            }
        };
        let (fl, _) = pressure_function(p_star, &left, gamma);
        let (fr, _) = pressure_function(p_star, &right, gamma);
        let u_star = 0.5 * (left.u + right.u) + 0.5 * (fr - fl);
        let gr = (gamma - 1.0) / (gamma + 1.0);

        let star_density = |s: &Primitive| {
            let r = p_star / s.p;
            if p_star > s.p {
                s.rho * (r + gr) / (gr * r + 1.0)
            } else {
                s.rho * r.powf(1.0 / gamma)
            }
        };
        let rho_star_left = star_density(&left);
        let rho_star_right = star_density(&right);

        let left_wave = if p_star > left.p {
            let q = ((gamma + 1.0) / (2.0 * gamma) * p_star / left.p + (gamma - 1.0) / (2.0 * gamma)).sqrt();
            Wave::Shock { speed: left.u - cl * q }
        } else {
            let c_star = cl * (p_star / left.p).powf((gamma - 1.0) / (2.0 * gamma));
            Wave::Rarefaction { head: left.u - cl, tail: u_star - c_star }
        };
        let right_wave = if p_star > right.p {
            let q = ((gamma + 1.0) / (2.0 * gamma) * p_star / right.p + (gamma - 1.0) / (2.0 * gamma)).sqrt();
            Wave::Shock { speed: right.u + cr * q }
        } else {
            let c_star = cr * (p_star / right.p).powf((gamma - 1.0) / (2.0 * gamma));
            Wave::Rarefaction { head: right.u + cr, tail: u_star + c_star }
        };
        Ok(Self {
            left,
            right,
            gamma,
            x0: 0.0,
            p_star,
            u_star,
            rho_star_left,
            rho_star_right,
            left_wave,
            right_wave,
        })
    }

    pub fn with_origin(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }

    /// Solution at similarity variable `ξ = (x − x0)/t`.
    pub fn sample_xi(&self, xi: f64) -> Primitive {
        let g = self.gamma;
        if xi <= self.u_star {
            match self.left_wave {
                Wave::Shock { speed } => {
                    if xi <= speed {
                        self.left
                    } else {
                        Primitive::new(self.rho_star_left, self.u_star, self.p_star)
                    }
                }
                Wave::Rarefaction { head, tail } => {
                    if xi <= head {
                        self.left
                    } else if xi >= tail {
                        Primitive::new(self.rho_star_left, self.u_star, self.p_star)
                    } else {
                        let cl = self.left.sound_speed(g);
                        let f = 2.0 / (g + 1.0) + (g - 1.0) / ((g + 1.0) * cl) * (self.left.u - xi);
                        Primitive::new(
                            self.left.rho * f.powf(2.0 / (g - 1.0)),
                            2.0 / (g + 1.0) * (cl + 0.5 * (g - 1.0) * self.left.u + xi),
                            self.left.p * f.powf(2.0 * g / (g - 1.0)),
                        )
                    }
                }
            }
        } else {
            match self.right_wave {
                Wave::Shock { speed } => {
                    if xi >= speed {
                        self.right
                    } else {
                        Primitive::new(self.rho_star_right, self.u_star, self.p_star)
                    }
                }
                Wave::Rarefaction { head, tail } => {
                    if xi >= head {
                        self.right
                    } else if xi <= tail {
                        Primitive::new(self.rho_star_right, self.u_star, self.p_star)
                    } else {
                        let cr = self.right.sound_speed(g);
                        let f = 2.0 / (g + 1.0) - (g - 1.0) / ((g + 1.0) * cr) * (self.right.u - xi);
                        Primitive::new(
                            self.right.rho * f.powf(2.0 / (g - 1.0)),
                            2.0 / (g + 1.0) * (-cr + 0.5 * (g - 1.0) * self.right.u + xi),
                            self.right.p * f.powf(2.0 * g / (g - 1.0)),
                        )
                    }
                }
            }
        }
    }

    /// Solution at position `x` and time `t > 0`.
    pub fn sample(&self, x: f64, t: f64) -> Primitive {
        self.sample_xi((x - self.x0) / t)
    }
}

/// Exact solution of the Riemann problem with the discontinuity at `x = 0`.
pub fn exact_riemann(left: Primitive, right: Primitive, gamma: f64, x: f64, t: f64) -> Result<Primitive> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument("Riemann solution needs t > 0".into()));
    }
    Ok(RiemannSolution::solve(left, right, gamma, RootFinder::Newton)?.sample(x, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sod() -> (Primitive, Primitive) {
        (Primitive::new(1.0, 0.0, 1.0), Primitive::new(0.125, 0.0, 0.1))
    }

    #[test]
    fn initial_states_recovered_at_early_time() {
        let (l, r) = sod();
        let a = exact_riemann(l, r, 1.4, -0.5, 1e-9).unwrap();
        let b = exact_riemann(l, r, 1.4, 0.5, 1e-9).unwrap();
        assert_eq!(a, l);
        assert_eq!(b, r);
    }

    #[test]
    fn equal_states_are_constant() {
        let s = Primitive::new(0.7, 0.3, 2.0);
        for x in [-3.0, -0.1, 0.0, 0.2, 4.0] {
            let v = exact_riemann(s, s, 1.4, x, 1.0).unwrap();
            assert!((v.rho - 0.7).abs() < 1e-12 && (v.u - 0.3).abs() < 1e-12 && (v.p - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_root_finders_agree_on_sod() {
        let (l, r) = sod();
        let a = RiemannSolution::solve(l, r, 1.4, RootFinder::Newton).unwrap();
        let b = RiemannSolution::solve(l, r, 1.4, RootFinder::Bisection).unwrap();
        assert!((a.p_star - b.p_star).abs() < 1e-12);
        assert!((a.p_star - 0.30313).abs() < 1e-5);
        assert!((a.u_star - 0.92745).abs() < 1e-5);
    }

    #[test]
    fn vacuum_is_unsupported() {
        let l = Primitive::new(1.0, -10.0, 0.1);
        let r = Primitive::new(1.0, 10.0, 0.1);
        assert!(matches!(RiemannSolution::solve(l, r, 1.4, RootFinder::Newton), Err(Error::Unsupported(_))));
    }
}
