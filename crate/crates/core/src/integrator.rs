//! Implicit time integration: backward Euler, the filtered midpoint rule
//! and BDF of order 2 to 4, with CFL-based step selection.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydro::{compute_av_field, totals, FlowState, HydroProblem};
use crate::linalg::min_singular_value;
use crate::newton::{newton_solve, NewtonOptions, NewtonReport};
use crate::space::QuadField;
use crate::step::ImplicitSystem;
use crate::thermo::sound_speed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[serde(alias = "backward_euler")]
    Be,
    Midpoint,
    Bdf2,
    Bdf3,
    Bdf4,
}

impl Scheme {
    /// Number of past levels used by the scheme.
    pub fn levels(self) -> usize {
        match self {
            Scheme::Be | Scheme::Midpoint => 1,
            Scheme::Bdf2 => 2,
            Scheme::Bdf3 => 3,
            Scheme::Bdf4 => 4,
        }
    }

    /// BDF scheme of order `m` (order 1 is backward Euler).
    pub fn bdf(m: usize) -> Result<Scheme> {
        match m {
            1 => Ok(Scheme::Be),
            2 => Ok(Scheme::Bdf2),
            3 => Ok(Scheme::Bdf3),
            4 => Ok(Scheme::Bdf4),
            _ => Err(Error::InvalidArgument(format!("BDF order {m} is not supported"))),
        }
    }

    pub fn parse(s: &str) -> Result<Scheme> {
        match s.to_ascii_lowercase().as_str() {
            "be" | "backward_euler" | "bdf1" => Ok(Scheme::Be),
            "midpoint" => Ok(Scheme::Midpoint),
            "bdf2" => Ok(Scheme::Bdf2),
            "bdf3" => Ok(Scheme::Bdf3),
            "bdf4" => Ok(Scheme::Bdf4),
            other => Err(Error::InvalidArgument(format!("unknown scheme '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    pub scheme: Scheme,
    pub cfl: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Low-Mach variant: the sound speed is scaled by this Mach number.
    pub lowmach_mmax: Option<f64>,
    /// Halve on failure and grow by `growth` on success.
    pub auto_control: bool,
    pub growth: f64,
    /// Midpoint substeps used to produce each BDF starting level.
    pub startup_substeps: usize,
    pub newton: NewtonOptions,
}

impl Default for StepParams {
    fn default() -> Self {
        Self {
            scheme: Scheme::Bdf2,
            cfl: 1.0,
            dt_min: 1e-8,
            dt_max: 1.0,
            lowmach_mmax: None,
            auto_control: true,
            growth: 1.02,
            startup_substeps: 4,
            newton: NewtonOptions::default(),
        }
    }
}

impl StepParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0) || !self.cfl.is_finite() {
            return Err(Error::Config(format!("cfl must be positive, got {}", self.cfl)));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_max) {
            return Err(Error::Config(format!(
                "time step bounds must satisfy 0 < dt_min <= dt_max, got [{}, {}]",
                self.dt_min, self.dt_max
            )));
        }
        if let Some(m) = self.lowmach_mmax {
            if !(m > 0.0) {
                return Err(Error::Config(format!("lowmach_mmax must be positive, got {m}")));
            }
        }
        if !(self.growth >= 1.0) || self.startup_substeps == 0 {
            return Err(Error::Config("growth must be >= 1 and startup_substeps >= 1".into()));
        }
        if !(self.newton.tol > 0.0) || self.newton.max_iter == 0 {
            return Err(Error::Config("Newton tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// CFL time step `min CFL·h0·α0 / (k (|u| + c_s))`, clamped to `[dt_min, dt_max]`.
pub fn compute_dt(problem: &HydroProblem, state: &FlowState, params: &StepParams) -> Result<f64> {
    let space = &problem.space;
    let mut dt = f64::INFINITY;
    for e in 0..space.n_elements {
        let g = problem.gas(e);
        let kin = crate::hydro::element_kinematics(space, &state.x, &state.u, e)?;
        for (q, k) in kin.iter().enumerate() {
            let alpha0 = if space.dim == 1 { k.f[(0, 0)].abs() } else { min_singular_value(&k.f) };
            let h = space.h0[e] * alpha0 / space.degree as f64;
            let mut cs = sound_speed(state.theta.element(e)[q], g);
            if let Some(m) = params.lowmach_mmax {
                cs *= m;
            }
            let speed = (k.vel[0] * k.vel[0] + k.vel[1] * k.vel[1]).sqrt() + cs;
            let local = params.cfl * h / speed;
            if local.is_nan() || !speed.is_finite() {
                return Err(Error::StepControl(format!("non-finite signal speed in element {e}")));
            }
            dt = dt.min(local);
        }
    }
    Ok(dt.clamp(params.dt_min, params.dt_max))
}

/// Coefficients `a_j` of the variable-step BDF derivative
/// `D(α) = Σ_j a_j α^{n−j}` for time nodes `times = [tⁿ, tⁿ⁻¹, …]`.
pub fn bdf_coefficients(times: &[f64]) -> Result<Vec<f64>> {
    if times.len() < 2 {
        return Err(Error::InvalidArgument("need at least two time levels".into()));
    }
    if times.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::InvalidArgument("time levels must be strictly decreasing".into()));
    }
    let t0 = times[0];
    let mut out = Vec::with_capacity(times.len());
    out.push(times[1..].iter().map(|t| 1.0 / (t0 - t)).sum());
    for j in 1..times.len() {
        let mut num = 1.0;
        let mut den = 1.0;
        for (m, &tm) in times.iter().enumerate() {
            if m == j {
                continue;
            }
            if m != 0 {
                num *= t0 - tm;
            }
            den *= times[j] - tm;
        }
        out.push(num / den);
    }
    Ok(out)
}

/// Uniform-step BDF coefficients of order `m`.
pub fn bdf_uniform(m: usize, dt: f64) -> Result<Vec<f64>> {
    let times: Vec<f64> = (0..=m).map(|j| -(j as f64) * dt).collect();
    bdf_coefficients(&times)
}

/// Most recent states, newest first.
#[derive(Debug, Clone, Default)]
pub struct HistoryBuffer {
    levels: VecDeque<FlowState>,
    capacity: usize,
}

impl HistoryBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            levels: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&mut self, s: FlowState) -> Result<()> {
        if let Some(last) = self.levels.front() {
            if !(s.t > last.t) {
                return Err(Error::InvalidArgument(format!("history time {} does not follow {}", s.t, last.t)));
            }
        }
        self.levels.push_front(s);
        self.levels.truncate(self.capacity);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn latest(&self) -> &FlowState {
        &self.levels[0]
    }

    pub fn get(&self, j: usize) -> &FlowState {
        &self.levels[j]
    }

    pub fn clear_to_latest(&mut self) {
        self.levels.truncate(1);
    }
}

/// An accepted step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: FlowState,
    pub report: NewtonReport,
}

fn recoverable(e: &Error) -> bool {
    matches!(e, Error::InvertedElement { .. } | Error::Positivity { .. } | Error::LinearSolver(_))
}

/// Implicit step from `past` (most recent first) to time `t_new`.
pub fn implicit_step(problem: &HydroProblem, past: &[&FlowState], t_new: f64, opts: &NewtonOptions) -> Result<StepResult> {
    let mut times = vec![t_new];
    times.extend(past.iter().map(|s| s.t));
    let coeffs = bdf_coefficients(&times)?;
    let mu = compute_av_field(problem, past[0])?;
    let sys = ImplicitSystem::from_levels(problem, &coeffs, past, mu)?;

    let mut first = past[0].u.clone();
    problem.constraints.impose(&mut first);
    let mut zero = vec![0.0; first.len()];
    problem.constraints.impose(&mut zero);

    let mut last_err = None;
    for guess in [first, zero] {
        match newton_solve(&sys, &guess, opts) {
            Ok((u, report)) if report.converged => {
                let state = sys.state(&u, t_new)?;
                return Ok(StepResult { state, report });
            }
            Ok((_, report)) => {
                last_err = Some(Error::StepFailure(format!(
                    "Newton did not converge in {} iterations (residual {:e} from {:e})",
                    report.iterations, report.final_residual, report.initial_residual
                )));
            }
            Err(e) if recoverable(&e) => last_err = Some(Error::StepFailure(e.to_string())),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap())
}

/// One backward Euler step.
pub fn be_step(problem: &HydroProblem, prev: &FlowState, dt: f64, opts: &NewtonOptions) -> Result<StepResult> {
    check_dt(dt)?;
    implicit_step(problem, &[prev], prev.t + dt, opts)
}

/// Time filter `vⁿ = 2 v^{n−½} − v^{n−1}`.
pub fn filter(half: &[f64], prev: &[f64]) -> Vec<f64> {
    half.iter().zip(prev).map(|(h, p)| 2.0 * h - p).collect()
}

/// Midpoint rule: backward Euler over `δt/2`, then the time filter.
pub fn midpoint_step(problem: &HydroProblem, prev: &FlowState, dt: f64, opts: &NewtonOptions) -> Result<StepResult> {
    check_dt(dt)?;
    let half = implicit_step(problem, &[prev], prev.t + 0.5 * dt, opts)?;
    let state = FlowState {
        x: filter(&half.state.x, &prev.x),
        u: filter(&half.state.u, &prev.u),
        theta: QuadField::new(filter(&half.state.theta.values, &prev.theta.values), prev.theta.per_element),
        t: prev.t + dt,
    };
    if let Some(i) = state.theta.values.iter().position(|&t| !(t > 0.0)) {
        let nq = state.theta.per_element;
        return Err(Error::StepFailure(format!(
            "temperature {:e} after filtering at element {} point {}",
            state.theta.values[i],
            i / nq,
            i % nq
        )));
    }
    totals(problem, &state).map_err(|e| Error::StepFailure(e.to_string()))?;
    Ok(StepResult { state, report: half.report })
}

/// BDF step of order `m` from the `m` most recent levels of `history`.
pub fn bdf_step(problem: &HydroProblem, history: &HistoryBuffer, dt: f64, m: usize, opts: &NewtonOptions) -> Result<StepResult> {
    check_dt(dt)?;
    if m == 0 || history.len() < m {
        return Err(Error::InvalidArgument(format!(
            "BDF{m} needs {m} previous levels, history has {}",
            history.len()
        )));
    }
    let past: Vec<&FlowState> = (0..m).map(|j| history.get(j)).collect();
    implicit_step(problem, &past, past[0].t + dt, opts)
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")))
    }
}

/// Next time step after an attempt: halve on failure, otherwise grow by at
/// most `growth` and never beyond the CFL step.
pub fn auto_step_control(succeeded: bool, dt: f64, dt_cfl: f64, params: &StepParams) -> Result<f64> {
    if succeeded {
        Ok(dt_cfl.min(params.growth * dt).min(params.dt_max))
    } else {
        let next = 0.5 * dt;
        if next < params.dt_min {
            Err(Error::StepControl(format!(
                "time step {next:e} fell below dt_min = {:e}",
                params.dt_min
            )))
        } else {
            Ok(next)
        }
    }
}

/// Stateful integrator for one simulation.
#[derive(Debug, Clone)]
pub struct Integrator {
    pub params: StepParams,
    pub history: HistoryBuffer,
}

impl Integrator {
    pub fn new(params: StepParams, initial: FlowState) -> Result<Self> {
        params.validate()?;
        let mut history = HistoryBuffer::new(params.scheme.levels());
        history.push(initial)?;
        Ok(Self { params, history })
    }

    pub fn state(&self) -> &FlowState {
        self.history.latest()
    }

    /// Take one step of size `dt`. BDF schemes build their starting levels
    /// with substepped midpoint steps. On error the history is unchanged.
    pub fn step(&mut self, problem: &HydroProblem, dt: f64) -> Result<StepResult> {
        let opts = &self.params.newton;
        let m = self.params.scheme.levels();
        let res = match self.params.scheme {
            Scheme::Be => be_step(problem, self.state(), dt, opts)?,
            Scheme::Midpoint => midpoint_step(problem, self.state(), dt, opts)?,
            _ if self.history.len() < m => {
                let n = self.params.startup_substeps;
                let mut s = self.state().clone();
                let mut rep = None;
                for _ in 0..n {
                    let r = midpoint_step(problem, &s, dt / n as f64, opts)?;
                    s = r.state;
                    rep = Some(r.report);
                }
                // Land exactly on the target time.
                s.t = self.state().t + dt;
                StepResult { state: s, report: rep.unwrap() }
            }
            _ => bdf_step(problem, &self.history, dt, m, opts)?,
        };
        self.history.push(res.state.clone())?;
        Ok(res)
    }

    /// Advance to `t_final`, calling `on_step` after every accepted step.
    /// With automatic control the step adapts; otherwise `dt` is fixed
    /// (the last step is shortened to hit `t_final`).
    pub fn advance(
        &mut self,
        problem: &HydroProblem,
        t_final: f64,
        dt0: Option<f64>,
        mut on_step: impl FnMut(&StepResult, f64) -> Result<()>,
    ) -> Result<usize> {
        let p = self.params;
        let mut dt = match dt0 {
            Some(d) => d,
            None => compute_dt(problem, self.state(), &p)?,
        };
        let mut steps = 0;
        let eps = 1e-12 * t_final.abs().max(1.0);
        while self.state().t < t_final - eps {
            let remaining = t_final - self.state().t;
            let try_dt = dt.min(remaining);
            match self.step(problem, try_dt) {
                Ok(res) => {
                    steps += 1;
                    on_step(&res, try_dt)?;
                    if p.auto_control {
                        let cfl = compute_dt(problem, &res.state, &p)?;
                        dt = auto_step_control(true, dt, cfl, &p)?;
                    }
                }
                Err(e) if p.auto_control && (recoverable(&e) || matches!(e, Error::StepFailure(_))) => {
                    dt = auto_step_control(false, try_dt, 0.0, &p)
                        .map_err(|abort| Error::StepControl(format!("{abort}; last failure: {e}")))?;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hydro::totals;
    use crate::mesh::{build_cartesian_mesh, markers, BoxDomain};
    use crate::reference::Shape;
    use crate::space::{BoundaryCondition, Constraints, KinematicSpace};
    use crate::thermo::GasParams;
    use std::collections::BTreeMap;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn uniform_bdf_coefficients() {
        let dt = 0.1;
        let b1 = bdf_uniform(1, dt).unwrap();
        assert!(close(&b1, &[10.0, -10.0], 1e-12));
        let b2 = bdf_uniform(2, dt).unwrap();
        assert!(close(&b2, &[15.0, -20.0, 5.0], 1e-12));
        let b3 = bdf_uniform(3, dt).unwrap();
        let e3: Vec<f64> = [11.0, -18.0, 9.0, -2.0].iter().map(|v| v / (6.0 * dt)).collect();
        assert!(close(&b3, &e3, 1e-11));
        let b4 = bdf_uniform(4, dt).unwrap();
        let e4: Vec<f64> = [25.0, -48.0, 36.0, -16.0, 3.0].iter().map(|v| v / (12.0 * dt)).collect();
        assert!(close(&b4, &e4, 1e-11));
    }

    #[test]
    fn bdf_consistency_on_polynomials() {
        let times = [1.0, 0.9, 0.75, 0.7, 0.5];
        for m in 1..=4 {
            let c = bdf_coefficients(&times[..=m]).unwrap();
            // Constants are annihilated, and polynomials up to degree m are
            // differentiated exactly.
            let apply = |f: &dyn Fn(f64) -> f64| c.iter().zip(&times[..=m]).map(|(a, t)| a * f(*t)).sum::<f64>();
            assert!(apply(&|_| 3.0).abs() < 1e-11);
            for p in 1..=m as i32 {
                let d = apply(&|t| t.powi(p));
                assert!((d - p as f64 * 1.0f64.powi(p - 1)).abs() < 1e-9, "m={m} p={p} d={d}");
            }
        }
        let c = bdf_uniform(2, 0.5).unwrap();
        let d: f64 = c.iter().enumerate().map(|(j, a)| a * (2.0 - 0.5 * j as f64)).sum();
        assert!((d - 1.0).abs() < 1e-14);
        let c = bdf_uniform(3, 0.25).unwrap();
        let d: f64 = c.iter().enumerate().map(|(j, a)| a * (1.0 - 0.25 * j as f64).powi(2)).sum();
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn variable_step_bdf2() {
        let (dt, dtp) = (0.2, 0.1);
        let w = dt / dtp;
        let c = bdf_coefficients(&[1.0, 0.8, 0.7]).unwrap();
        let e = [(1.0 + 2.0 * w) / (1.0 + w) / dt, -(1.0 + w) / dt, w * w / (1.0 + w) / dt];
        assert!(close(&c, &e, 1e-12));
    }

    #[test]
    fn filter_algebra() {
        assert_eq!(filter(&[1.0, 2.0], &[0.0, 1.0]), vec![2.0, 3.0]);
    }

    #[test]
    fn step_control_rules() {
        let p = StepParams { dt_min: 0.01, ..Default::default() };
        assert_eq!(auto_step_control(false, 0.1, 0.0, &p).unwrap(), 0.05);
        assert!((auto_step_control(true, 0.1, 0.2, &p).unwrap() - 0.102).abs() < 1e-15);
        assert_eq!(auto_step_control(true, 0.1, 0.05, &p).unwrap(), 0.05);
        assert!(matches!(auto_step_control(false, 0.015, 0.0, &p), Err(Error::StepControl(_))));
    }

    #[test]
    fn history_requires_increasing_times() {
        let s = FlowState { x: vec![], u: vec![], theta: QuadField::new(vec![1.0], 1), t: 1.0 };
        let mut h = HistoryBuffer::new(2);
        h.push(s.clone()).unwrap();
        assert!(h.push(s.clone()).is_err());
        h.push(FlowState { t: 2.0, ..s.clone() }).unwrap();
        h.push(FlowState { t: 3.0, ..s }).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(h.latest().t, 3.0);
    }

    fn box_problem(n: usize, k: usize, g: GasParams, cs_theta: f64) -> (HydroProblem, FlowState) {
        let m = build_cartesian_mesh(n, n, &BoxDomain::unit_square(), Shape::Quad).unwrap();
        let s = KinematicSpace::new(&m, k).unwrap();
        let bcs: BTreeMap<u32, BoundaryCondition> = [markers::LEFT, markers::RIGHT, markers::BOTTOM, markers::TOP]
            .iter()
            .map(|&m| (m, BoundaryCondition::Wall))
            .collect();
        let c = Constraints::build(&s, &bcs).unwrap();
        let rho0 = QuadField::constant(&s, 1.0);
        let ne = s.n_elements;
        let p = HydroProblem::new(s, rho0, vec![g], vec![0; ne], c).unwrap();
        let st = p.initial_state(vec![0.0; p.space.n_dofs()], QuadField::constant(&p.space, cs_theta));
        (p, st)
    }

    #[test]
    fn cfl_examples() {
        // c_s = 1 requires γ (c_p − c_v) θ = 1.
        let g = GasParams::ideal(1.4);
        let (p, s) = box_problem(10, 1, g, 1.0 / 1.4);
        let params = StepParams { cfl: 1.0, ..Default::default() };
        let d = compute_dt(&p, &s, &params).unwrap();
        assert!((d - 0.1).abs() < 1e-12, "{d}");
        let params = StepParams { cfl: 0.25, ..Default::default() };
        assert!((compute_dt(&p, &s, &params).unwrap() - 0.025).abs() < 1e-12);
        // Low Mach: c_s = 100, M = 0.01, h_min = 0.05.
        let (p, s) = box_problem(20, 1, g, 1e4 / 1.4);
        let params = StepParams { cfl: 1.0, lowmach_mmax: Some(0.01), ..Default::default() };
        assert!((compute_dt(&p, &s, &params).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn rest_state_is_preserved_by_every_scheme() {
        let (p, s) = box_problem(2, 2, GasParams::ideal(1.4), 1.0);
        let opts = NewtonOptions::default();
        for res in [be_step(&p, &s, 0.1, &opts).unwrap(), midpoint_step(&p, &s, 0.1, &opts).unwrap()] {
            assert!(res.state.u.iter().all(|v| v.abs() < 1e-13));
            assert!(close(&res.state.x, &s.x, 1e-13));
            assert!(close(&res.state.theta.values, &s.theta.values, 1e-13));
        }
    }

    #[test]
    fn be_dissipates_and_midpoint_conserves() {
        let g = GasParams::ideal(1.4);
        let (p, s0) = box_problem(2, 2, g, 1.0);
        let mut u = p.space.interpolate(|x| {
            let (sx, sy) = ((std::f64::consts::PI * x[0]).sin(), (std::f64::consts::PI * x[1]).sin());
            [0.3 * sx * sy, -0.2 * sx * sy]
        });
        p.constraints.impose(&mut u);
        let s = FlowState { u, ..s0 };
        let opts = NewtonOptions::default();
        let e0 = totals(&p, &s).unwrap();

        let be = be_step(&p, &s, 0.05, &opts).unwrap();
        let e1 = totals(&p, &be.state).unwrap();
        let du: Vec<f64> = be.state.u.iter().zip(&s.u).map(|(a, b)| a - b).collect();
        let expected = 0.5 * crate::linalg::dot(&du, &p.mass.matvec(&du));
        let slack = 10.0 * opts.tol * e0.total_energy().abs().max(1.0);
        assert!(e1.total_energy() <= e0.total_energy() + slack);
        assert!((e0.total_energy() - e1.total_energy() - expected).abs() <= slack);
        assert_eq!(e1.mass, e0.mass);

        let mid = midpoint_step(&p, &s, 0.05, &opts).unwrap();
        let e2 = totals(&p, &mid.state).unwrap();
        assert!((e2.total_energy() - e0.total_energy()).abs() <= slack);
    }
}
