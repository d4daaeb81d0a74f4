//! Ideal-gas thermodynamics evaluated pointwise at quadrature nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gas constants, physical viscosities and artificial-viscosity scalings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasParams {
    pub cv: f64,
    pub cp: f64,
    /// Dynamic viscosity η.
    pub eta: f64,
    /// Bulk viscosity.
    pub xi_bulk: f64,
    pub q1: f64,
    pub q2: f64,
    /// Apply the compression switch to the quadratic viscosity term too.
    #[serde(default)]
    pub av_quadratic_switch: bool,
}

impl GasParams {
    /// Inviscid gas with `c_v = 1/(γ−1)`, so that `c_p − c_v = 1`.
    pub fn ideal(gamma: f64) -> Self {
        let cv = 1.0 / (gamma - 1.0);
        Self {
            cv,
            cp: gamma * cv,
            eta: 0.0,
            xi_bulk: 0.0,
            q1: 0.5,
            q2: 2.0,
            av_quadratic_switch: false,
        }
    }

    pub fn with_av(mut self, q1: f64, q2: f64) -> Self {
        self.q1 = q1;
        self.q2 = q2;
        self
    }

    pub fn with_viscosity(mut self, eta: f64, xi_bulk: f64) -> Self {
        self.eta = eta;
        self.xi_bulk = xi_bulk;
        self
    }

    pub fn gamma(&self) -> f64 {
        self.cp / self.cv
    }

    /// Gas constant `c_p − c_v`.
    pub fn r(&self) -> f64 {
        self.cp - self.cv
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.cv > 0.0
            && self.cp > self.cv
            && self.eta >= 0.0
            && self.xi_bulk >= 0.0
            && self.q1 >= 0.0
            && self.q2 >= 0.0
            && [self.cv, self.cp, self.eta, self.xi_bulk, self.q1, self.q2].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid gas parameters {self:?}")))
        }
    }
}

/// Thermodynamic state at one quadrature point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermoPointState {
    pub rho: f64,
    pub theta: f64,
    pub p: f64,
    pub e: f64,
    pub s: f64,
}

fn check_positive(what: &'static str, value: f64, element: usize, point: usize) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Positivity { element, point, what, value })
    }
}

/// Pressure, internal energy and entropy per unit mass.
pub fn eos_eval(rho: f64, theta: f64, g: &GasParams) -> Result<ThermoPointState> {
    eos_eval_at(rho, theta, g, 0, 0)
}

/// [`eos_eval`] with the quadrature point identified in any error.
pub fn eos_eval_at(rho: f64, theta: f64, g: &GasParams, element: usize, point: usize) -> Result<ThermoPointState> {
    check_positive("density", rho, element, point)?;
    check_positive("temperature", theta, element, point)?;
    Ok(ThermoPointState {
        rho,
        theta,
        p: g.r() * rho * theta,
        e: g.cv * theta,
        s: entropy(rho, theta, g),
    })
}

/// Entropy per unit mass; no positivity check.
pub fn entropy(rho: f64, theta: f64, g: &GasParams) -> f64 {
    g.cv * theta.ln() - g.r() * rho.ln() + g.cv
}

/// Pointwise mass conservation `ρ = ρ0 / J`.
pub fn density_from_jacobian(rho0: f64, j: f64) -> Result<f64> {
    if j <= 0.0 || !j.is_finite() {
        return Err(Error::InvertedElement { element: 0, point: 0, jacobian: j });
    }
    check_positive("initial density", rho0, 0, 0)?;
    Ok(rho0 / j)
}

/// Free energy density `ψ(ρ, θ)`.
pub fn free_energy_density(rho: f64, theta: f64, g: &GasParams) -> Result<f64> {
    check_positive("density", rho, 0, 0)?;
    check_positive("temperature", theta, 0, 0)?;
    Ok(g.r() * theta * rho * rho.ln() - g.cv * rho * theta * theta.ln())
}

/// Temperature from density and pressure.
pub fn temperature_from_pressure(rho: f64, p: f64, g: &GasParams) -> f64 {
    p / (g.r() * rho)
}

/// Adiabatic sound speed `sqrt(γ p / ρ) = sqrt(γ (c_p − c_v) θ)`.
pub fn sound_speed(theta: f64, g: &GasParams) -> f64 {
    (g.gamma() * g.r() * theta.max(0.0)).sqrt()
}
