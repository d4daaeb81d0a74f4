//! Benchmark problem definitions.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydro::{EnergySource, FlowState, HydroProblem};
use crate::integrator::{Scheme, StepParams};
use crate::mesh::{build_cartesian_mesh, markers, BoxDomain, MeshData};
use crate::reference::Shape;
use crate::space::{BoundaryCondition, Constraints, KinematicSpace, QuadField};
use crate::thermo::GasParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseName {
    TaylorGreen,
    Sod,
    Sedov,
    Noh,
    TriplePoint,
    Gresho,
}

impl CaseName {
    pub const ALL: [CaseName; 6] = [
        CaseName::TaylorGreen,
        CaseName::Sod,
        CaseName::Sedov,
        CaseName::Noh,
        CaseName::TriplePoint,
        CaseName::Gresho,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CaseName::TaylorGreen => "taylor_green",
            CaseName::Sod => "sod",
            CaseName::Sedov => "sedov",
            CaseName::Noh => "noh",
            CaseName::TriplePoint => "triple_point",
            CaseName::Gresho => "gresho",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            CaseName::TaylorGreen => "2D stationary Taylor-Green vortex with energy source, unit square, walls",
            CaseName::Sod => "1D Sod shock tube on [-5, 5]",
            CaseName::Sedov => "2D Sedov blast in the quarter plane [0, 1.2]^2",
            CaseName::Noh => "2D Noh implosion in the quarter plane [0, 1]^2",
            CaseName::TriplePoint => "three-material T-junction on [0, 7] x [0, 3]",
            CaseName::Gresho => "low-Mach Gresho vortex on the unit square, walls",
        }
    }
}

impl fmt::Display for CaseName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        CaseName::ALL
            .into_iter()
            .find(|c| c.as_str() == norm)
            .ok_or_else(|| Error::Config(format!("unknown case '{s}'")))
    }
}

/// A benchmark with its discretization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSpec {
    pub name: CaseName,
    pub degree: usize,
    pub nx: usize,
    pub ny: usize,
    pub shape: Shape,
    pub scheme: Scheme,
    pub cfl: f64,
    pub t_final: f64,
    /// Constant step size; `None` selects CFL-based automatic control.
    pub dt: Option<f64>,
    pub gamma: f64,
    pub q1: f64,
    pub q2: f64,
    pub av: bool,
    /// Internal energy assigned where the initial data is zero.
    pub energy_floor: f64,
    /// Gresho maximum Mach number.
    pub mach_max: f64,
    /// Use the Mach-scaled sound speed in the CFL rule.
    pub lowmach_dt: bool,
}

impl CaseSpec {
    pub fn default_for(name: CaseName) -> Self {
        let base = CaseSpec {
            name,
            degree: 2,
            nx: 16,
            ny: 16,
            shape: Shape::Quad,
            scheme: Scheme::Bdf2,
            cfl: 0.5,
            t_final: 1.0,
            dt: None,
            gamma: 1.4,
            q1: 0.5,
            q2: 2.0,
            av: true,
            energy_floor: 1e-12,
            mach_max: 0.1,
            lowmach_dt: false,
        };
        match name {
            CaseName::TaylorGreen => CaseSpec {
                nx: 8,
                ny: 8,
                t_final: 0.5,
                dt: Some(0.05),
                gamma: 5.0 / 3.0,
                av: false,
                ..base
            },
            CaseName::Sod => CaseSpec {
                degree: 4,
                nx: 20,
                ny: 1,
                shape: Shape::Segment,
                t_final: 2.0,
                ..base
            },
            CaseName::Sedov => base,
            CaseName::Noh => CaseSpec {
                t_final: 0.6,
                gamma: 5.0 / 3.0,
                q1: 1.0,
                q2: 4.0,
                ..base
            },
            CaseName::TriplePoint => CaseSpec {
                degree: 4,
                nx: 28,
                ny: 12,
                cfl: 3.0,
                t_final: 3.3,
                q1: 0.25,
                q2: 1.0,
                ..base
            },
            CaseName::Gresho => CaseSpec {
                nx: 20,
                ny: 20,
                t_final: 0.25 * 0.4 * PI,
                av: false,
                lowmach_dt: true,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.degree) {
            return Err(Error::Config(format!("degree must be in 1..=8, got {}", self.degree)));
        }
        if self.nx == 0 || (self.shape != Shape::Segment && self.ny == 0) {
            return Err(Error::Config("mesh resolution must be positive".into()));
        }
        if (self.name == CaseName::Sod) != (self.shape == Shape::Segment) {
            return Err(Error::Config(format!("case {} does not support shape {:?}", self.name, self.shape)));
        }
        if !(self.gamma > 1.0) {
            return Err(Error::Config(format!("gamma must exceed 1, got {}", self.gamma)));
        }
        if !(self.cfl > 0.0) {
            return Err(Error::Config(format!("cfl must be positive, got {}", self.cfl)));
        }
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return Err(Error::Config(format!("t_final must be positive, got {}", self.t_final)));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::Config(format!("dt must be positive, got {dt}")));
            }
        }
        if !(self.q1 >= 0.0 && self.q2 >= 0.0) {
            return Err(Error::Config("artificial viscosity coefficients must be non-negative".into()));
        }
        if !(self.energy_floor > 0.0) {
            return Err(Error::Config("energy_floor must be positive".into()));
        }
        if self.name == CaseName::Gresho && !(self.mach_max > 0.0) {
            return Err(Error::Config("mach_max must be positive".into()));
        }
        Ok(())
    }

    pub fn domain(&self) -> BoxDomain {
        match self.name {
            CaseName::TaylorGreen | CaseName::Noh | CaseName::Gresho => BoxDomain::unit_square(),
            CaseName::Sod => BoxDomain::interval(-5.0, 5.0),
            CaseName::Sedov => BoxDomain::new([0.0, 0.0], [1.2, 1.2]),
            CaseName::TriplePoint => BoxDomain::new([0.0, 0.0], [7.0, 3.0]),
        }
    }

    /// Step size for mesh level `l`, `dt = 0.05 / 2^l`, with `nx = 8·2^l`.
    pub fn taylor_green_level(degree: usize, level: u32) -> Self {
        let n = 8 << level;
        CaseSpec {
            degree,
            nx: n,
            ny: n,
            scheme: Scheme::bdf(degree.min(4)).unwrap_or(Scheme::Bdf2),
            dt: Some(0.05 / f64::from(1u32 << level)),
            ..CaseSpec::default_for(CaseName::TaylorGreen)
        }
    }
}

/// Fully set-up problem ready to integrate.
#[derive(Debug, Clone)]
pub struct CaseSetup {
    pub spec: CaseSpec,
    pub mesh: MeshData,
    pub problem: HydroProblem,
    pub state: FlowState,
    pub params: StepParams,
}

impl CaseSetup {
    pub fn gas(&self) -> &GasParams {
        &self.problem.materials[0]
    }
}

/// Gresho pressure and angular velocity at radius `r`.
pub fn gresho_profile(r: f64, gamma: f64, mach_max: f64) -> (f64, f64) {
    let base = 1.0 / (gamma * mach_max * mach_max) - 0.5;
    if r < 0.2 {
        (base + 12.5 * r * r, 5.0 * r)
    } else if r <= 0.4 {
        (base + 4.0 * (5.0 * r).ln() + 4.0 - 20.0 * r + 12.5 * r * r, 2.0 - 5.0 * r)
    } else {
        (base + 4.0 * 2f64.ln() - 2.0, 0.0)
    }
}

/// Exact stationary Gresho velocity.
pub fn gresho_velocity(x: [f64; 2]) -> [f64; 2] {
    let (dx, dy) = (x[0] - 0.5, x[1] - 0.5);
    let r = dx.hypot(dy);
    if r < 1e-14 {
        return [0.0, 0.0];
    }
    let (_, uphi) = gresho_profile(r, 1.4, 1.0);
    [-uphi * dy / r, uphi * dx / r]
}

/// Triple-point region of a point: `(ρ, p, material)`.
pub fn triple_point_region(x: [f64; 2]) -> (f64, f64, usize) {
    if x[0] <= 1.0 {
        (1.0, 1.0, 0)
    } else if x[1] <= 1.5 {
        (1.0, 0.1, 1)
    } else {
        (0.125, 0.1, 2)
    }
}

/// Sedov internal energy: bilinear on the corner cell `T0` with value
/// `0.2448·4/area(T0)` at the origin and zero at its other vertices, `floor`
/// elsewhere. The integral of `ρ0 e` over `T0` with `ρ0 = 1` is 0.2448.
pub fn sedov_corner_energy(space: &KinematicSpace, mesh: &MeshData, floor: f64) -> Result<QuadField> {
    if mesh.shape != Shape::Quad {
        return Err(Error::Unsupported("the Sedov energy deposit needs a quadrilateral corner cell".into()));
    }
    let corner = (0..mesh.element_count())
        .find(|&e| mesh.elements[e].iter().any(|&v| mesh.vertices[v][0].abs() < 1e-14 && mesh.vertices[v][1].abs() < 1e-14))
        .ok_or_else(|| Error::Unsupported("no cell touches the origin".into()))?;
    let vs: Vec<[f64; 2]> = mesh.elements[corner].iter().map(|&v| mesh.vertices[v]).collect();
    let hx = vs.iter().map(|v| v[0]).fold(0.0, f64::max);
    let hy = vs.iter().map(|v| v[1]).fold(0.0, f64::max);
    let peak = 0.2448 * 4.0 / (hx * hy);
    let mut e = QuadField::constant(space, floor);
    let nq = space.n_quad();
    for (q, v) in e.element_mut(corner).iter_mut().enumerate() {
        let x = space.quad_points[corner * nq + q];
        *v = peak * (1.0 - x[0] / hx) * (1.0 - x[1] / hy);
    }
    Ok(e)
}

fn boundary(left_bottom: BoundaryCondition, right_top: BoundaryCondition, dim: usize) -> BTreeMap<u32, BoundaryCondition> {
    let mut m = BTreeMap::new();
    m.insert(markers::LEFT, left_bottom);
    m.insert(markers::RIGHT, right_top);
    if dim == 2 {
        m.insert(markers::BOTTOM, left_bottom);
        m.insert(markers::TOP, right_top);
    }
    m
}

/// Build mesh, spaces, problem, initial state and step parameters.
///
/// Thermodynamic initial data is sampled at quadrature points; the initial
/// temperature is `θ = p/((c_p − c_v) ρ)` or `e/c_v` where `e` is given.
pub fn instantiate_case(spec: &CaseSpec) -> Result<CaseSetup> {
    spec.validate()?;
    let mesh = build_cartesian_mesh(spec.nx, spec.ny, &spec.domain(), spec.shape)?;
    let space = KinematicSpace::new(&mesh, spec.degree)?;
    let dim = space.dim;
    let gas = GasParams::ideal(spec.gamma).with_av(spec.q1, spec.q2);
    let wall = BoundaryCondition::Wall;
    let sym = BoundaryCondition::Symmetry;
    let free = BoundaryCondition::Free;

    let ne = space.n_elements;
    let mut materials = vec![gas];
    let mut material_of = vec![0; ne];
    let bcs = match spec.name {
        CaseName::Sedov | CaseName::Noh => boundary(sym, free, dim),
        _ => boundary(wall, wall, dim),
    };

    let rho0: QuadField;
    let theta: QuadField;
    let mut u = vec![0.0; space.n_dofs()];
    let mut source = EnergySource::None;
    match spec.name {
        CaseName::TaylorGreen => {
            rho0 = QuadField::constant(&space, 1.0);
            theta = QuadField::from_fn(&space, |x| {
                crate::oracles::taylor_green_reference(x).0.p / gas.r()
            });
            u = space.interpolate(|x| crate::oracles::taylor_green_reference(x).0.u);
            source = EnergySource::TaylorGreen;
        }
        CaseName::Sod => {
            rho0 = QuadField::from_fn(&space, |x| if x[0] < 0.0 { 1.0 } else { 0.125 });
            theta = QuadField::from_fn(&space, |x| {
                let (rho, p) = if x[0] < 0.0 { (1.0, 1.0) } else { (0.125, 0.1) };
                p / (gas.r() * rho)
            });
        }
        CaseName::Sedov => {
            rho0 = QuadField::constant(&space, 1.0);
            let e = sedov_corner_energy(&space, &mesh, spec.energy_floor)?;
            theta = QuadField::new(e.values.iter().map(|v| v.max(spec.energy_floor) / gas.cv).collect(), e.per_element);
        }
        CaseName::Noh => {
            rho0 = QuadField::constant(&space, 1.0);
            theta = QuadField::constant(&space, spec.energy_floor / gas.cv);
            u = space.interpolate(|x| {
                let r = x[0].hypot(x[1]);
                if r < 1e-14 {
                    [0.0, 0.0]
                } else {
                    [-x[0] / r, -x[1] / r]
                }
            });
        }
        CaseName::TriplePoint => {
            // Materials: Ω1 γ = 1.5, Ω2 γ = 1.4, Ω3 γ = 1.5.
            let g15 = GasParams::ideal(1.5).with_av(spec.q1, spec.q2);
            let g14 = GasParams::ideal(1.4).with_av(spec.q1, spec.q2);
            materials = vec![g15, g14, g15];
            for (e, m) in material_of.iter_mut().enumerate() {
                *m = triple_point_region(mesh.element_center(e)).2;
            }
            let nq = space.n_quad();
            let mut rv = Vec::with_capacity(space.n_quad_total());
            let mut tv = Vec::with_capacity(space.n_quad_total());
            for e in 0..ne {
                let (rho, p, m) = triple_point_region(mesh.element_center(e));
                let r = materials[m].r();
                for _ in 0..nq {
                    rv.push(rho);
                    tv.push(p / (r * rho));
                }
            }
            rho0 = QuadField::new(rv, nq);
            theta = QuadField::new(tv, nq);
        }
        CaseName::Gresho => {
            rho0 = QuadField::constant(&space, 1.0);
            theta = QuadField::from_fn(&space, |x| {
                let r = (x[0] - 0.5).hypot(x[1] - 0.5);
                gresho_profile(r, spec.gamma, spec.mach_max).0 / gas.r()
            });
            u = space.interpolate(gresho_velocity);
        }
    }

    let constraints = Constraints::build(&space, &bcs)?;
    let mut problem = HydroProblem::new(space, rho0, materials, material_of, constraints)?;
    problem.source = source;
    problem.av_enabled = spec.av;
    let state = problem.initial_state(u, theta);
    let params = StepParams {
        scheme: spec.scheme,
        cfl: spec.cfl,
        lowmach_mmax: spec.lowmach_dt.then_some(spec.mach_max),
        auto_control: spec.dt.is_none(),
        ..StepParams::default()
    };
    params.validate()?;
    Ok(CaseSetup { spec: spec.clone(), mesh, problem, state, params })
}
