//! Run configuration, the time loop, diagnostics and field output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cases::{instantiate_case, CaseName, CaseSetup, CaseSpec};
use crate::error::{Error, Result};
use crate::hydro::{element_kinematics, totals, FlowState, HydroProblem};
use crate::integrator::{Integrator, Scheme};
use crate::isothermal::{isothermal_be_step, BarotropicEOS, IsoState, IsothermalProblem};
use crate::newton::NewtonOptions;
use crate::oracles::riemann::{Primitive, RiemannSolution, RootFinder};
use crate::reference::Shape;
use crate::thermo::{entropy, GasParams};

/// Environment variable overriding the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "VARLAG_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    #[default]
    Full,
    Isothermal,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub degree: Option<usize>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub shape: Option<Shape>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub scheme: Option<Scheme>,
    pub cfl: Option<f64>,
    pub t_final: Option<f64>,
    /// Constant step; disables automatic control.
    pub dt: Option<f64>,
    pub dt_min: Option<f64>,
    pub dt_max: Option<f64>,
    pub lowmach: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsSection {
    pub gamma: Option<f64>,
    pub q1: Option<f64>,
    pub q2: Option<f64>,
    pub av: Option<bool>,
    pub energy_floor: Option<f64>,
    pub mach_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotFormat {
    Vtk,
    #[default]
    Csv,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Snapshot every this many steps; 0 writes only the final state.
    pub every: usize,
    pub format: SnapshotFormat,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("output"), every: 0, format: SnapshotFormat::Csv }
    }
}

/// A run configuration, read from TOML.
///
/// ```toml
/// case = "sod"
/// [mesh]
/// degree = 4
/// [time]
/// scheme = "bdf2"
/// [output]
/// dir = "out/sod"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub case: CaseName,
    #[serde(default)]
    pub model: Model,
    /// Assembly threads; 0 uses all cores. Results do not depend on it.
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub mesh: MeshSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub physics: PhysicsSection,
    #[serde(default)]
    pub newton: NewtonOptions,
    #[serde(default)]
    pub output: OutputSection,
    pub eos: Option<BarotropicEOS>,
}

fn default_threads() -> usize {
    1
}

impl RunConfig {
    pub fn new(case: CaseName) -> Self {
        Self {
            case,
            model: Model::Full,
            threads: 1,
            mesh: MeshSection::default(),
            time: TimeSection::default(),
            physics: PhysicsSection::default(),
            newton: NewtonOptions::default(),
            output: OutputSection::default(),
            eos: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Case parameters with all overrides applied.
    pub fn case_spec(&self) -> CaseSpec {
        let mut s = CaseSpec::default_for(self.case);
        let m = &self.mesh;
        s.degree = m.degree.unwrap_or(s.degree);
        s.nx = m.nx.unwrap_or(s.nx);
        s.ny = m.ny.unwrap_or(s.ny);
        s.shape = m.shape.unwrap_or(s.shape);
        let t = &self.time;
        s.scheme = t.scheme.unwrap_or(s.scheme);
        s.cfl = t.cfl.unwrap_or(s.cfl);
        s.t_final = t.t_final.unwrap_or(s.t_final);
        if t.dt.is_some() {
            s.dt = t.dt;
        }
        s.lowmach_dt = t.lowmach.unwrap_or(s.lowmach_dt);
        let p = &self.physics;
        s.gamma = p.gamma.unwrap_or(s.gamma);
        s.q1 = p.q1.unwrap_or(s.q1);
        s.q2 = p.q2.unwrap_or(s.q2);
        s.av = p.av.unwrap_or(s.av);
        s.energy_floor = p.energy_floor.unwrap_or(s.energy_floor);
        s.mach_max = p.mach_max.unwrap_or(s.mach_max);
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.case_spec().validate()?;
        if !(self.newton.tol > 0.0) || self.newton.max_iter == 0 {
            return Err(Error::Config("newton tolerance and iteration limit must be positive".into()));
        }
        for (name, v) in [("dt_min", self.time.dt_min), ("dt_max", self.time.dt_max)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        match (self.model, &self.eos) {
            (Model::Isothermal, None) => return Err(Error::Config("model = \"isothermal\" needs an [eos] section".into())),
            (Model::Isothermal, Some(e)) => e.validate()?,
            (Model::Full, Some(_)) => return Err(Error::Config("[eos] is only used with model = \"isothermal\"".into())),
            (Model::Full, None) => {}
        }
        Ok(())
    }

    /// Output directory after the environment override.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => self.output.dir.clone(),
        }
    }

    /// Case setup with the solver overrides applied to the step parameters.
    pub fn setup(&self) -> Result<CaseSetup> {
        let mut setup = instantiate_case(&self.case_spec())?;
        setup.params.newton = self.newton;
        if let Some(v) = self.time.dt_min {
            setup.params.dt_min = v;
        }
        if let Some(v) = self.time.dt_max {
            setup.params.dt_max = v;
        }
        setup.params.validate()?;
        Ok(setup)
    }
}

/// Totals of one accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub mass: f64,
    pub momentum: [f64; 2],
    pub kinetic: f64,
    /// Internal energy, or the free energy `(ψ J, 1)_h` for the isothermal model.
    pub internal: f64,
    pub total: f64,
    /// `(ρ0 s, 1)_h`; NaN for the isothermal model.
    pub entropy: f64,
    pub newton_iterations: usize,
    pub min_j: f64,
    /// NaN for the isothermal model.
    pub min_theta: f64,
}

impl DiagnosticsRecord {
    pub const HEADER: &'static str =
        "step,t,dt,mass,momentum_x,momentum_y,kinetic,internal,total,entropy,newton_iterations,min_j,min_theta";

    pub fn from_state(problem: &HydroProblem, state: &FlowState, step: usize, dt: f64, newton_iterations: usize) -> Result<Self> {
        let t = totals(problem, state)?;
        Ok(Self {
            step,
            t: state.t,
            dt,
            mass: t.mass,
            momentum: t.momentum,
            kinetic: t.kinetic,
            internal: t.internal,
            total: t.total_energy(),
            entropy: t.entropy,
            newton_iterations,
            min_j: t.min_j,
            min_theta: t.min_theta,
        })
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{:e},{:e}",
            self.step,
            self.t,
            self.dt,
            self.mass,
            self.momentum[0],
            self.momentum[1],
            self.kinetic,
            self.internal,
            self.total,
            self.entropy,
            self.newton_iterations,
            self.min_j,
            self.min_theta
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 13 {
            return Err(Error::Parse { line: 0, message: format!("expected 13 fields, got {}", f.len()) });
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse::<f64>().map_err(|e| Error::Parse { line: 0, message: format!("field {i}: {e}") })
        };
        let int = |i: usize| -> Result<usize> {
            f[i].parse::<usize>().map_err(|e| Error::Parse { line: 0, message: format!("field {i}: {e}") })
        };
        Ok(Self {
            step: int(0)?,
            t: num(1)?,
            dt: num(2)?,
            mass: num(3)?,
            momentum: [num(4)?, num(5)?],
            kinetic: num(6)?,
            internal: num(7)?,
            total: num(8)?,
            entropy: num(9)?,
            newton_iterations: int(10)?,
            min_j: num(11)?,
            min_theta: num(12)?,
        })
    }
}

/// Read a diagnostics CSV written by [`run`].
pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(DiagnosticsRecord::HEADER) {
        return Err(Error::Parse { line: 1, message: "unexpected diagnostics header".into() });
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            DiagnosticsRecord::parse_csv_row(l).map_err(|e| match e {
                Error::Parse { message, .. } => Error::Parse { line: i + 2, message },
                other => other,
            })
        })
        .collect()
}

/// Thermodynamic and kinematic values at one quadrature point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRecord {
    pub cell: usize,
    pub pos: [f64; 2],
    /// Current-configuration quadrature weight `J ω`.
    pub w: f64,
    /// Current cell size `|K|^{1/d}`.
    pub h: f64,
    pub rho: f64,
    pub p: f64,
    pub e: f64,
    pub theta: f64,
    pub s: f64,
    pub u: [f64; 2],
}

/// Pointwise fields of a state; `eos` selects the barotropic pressure law,
/// in which case `θ`, `e` and `s` are NaN.
pub fn point_records(problem: &HydroProblem, state: &FlowState, eos: Option<&BarotropicEOS>) -> Result<Vec<PointRecord>> {
    let space = &problem.space;
    let mut out = Vec::with_capacity(space.n_quad_total());
    for e in 0..space.n_elements {
        let g: &GasParams = problem.gas(e);
        let kin = element_kinematics(space, &state.x, &state.u, e)?;
        let vol: f64 = kin.iter().enumerate().map(|(q, k)| k.j * space.weight(e, q)).sum();
        let h = vol.powf(1.0 / space.dim as f64);
        for (q, k) in kin.iter().enumerate() {
            let rho = problem.rho0.element(e)[q] / k.j;
            let (p, en, theta, s) = match eos {
                Some(law) => (crate::isothermal::barotropic_pressure(rho, law)?, f64::NAN, f64::NAN, f64::NAN),
                None => {
                    let th = state.theta.element(e)[q];
                    (g.r() * rho * th, g.cv * th, th, entropy(rho, th, g))
                }
            };
            out.push(PointRecord {
                cell: e,
                pos: k.pos,
                w: k.j * space.weight(e, q),
                h,
                rho,
                p,
                e: en,
                theta,
                s,
                u: k.vel,
            });
        }
    }
    Ok(out)
}

pub const SNAPSHOT_CSV_HEADER: &str = "t,cell,x,y,r,w,h,rho,p,e,theta,s,ux,uy,speed";

pub fn snapshot_csv(records: &[PointRecord], t: f64) -> String {
    let mut s = String::with_capacity(records.len() * 160);
    s.push_str(SNAPSHOT_CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{:e},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            t,
            r.cell,
            r.pos[0],
            r.pos[1],
            r.pos[0].hypot(r.pos[1]),
            r.w,
            r.h,
            r.rho,
            r.p,
            r.e,
            r.theta,
            r.s,
            r.u[0],
            r.u[1],
            r.u[0].hypot(r.u[1])
        );
    }
    s
}

/// Columns of a snapshot CSV by header name.
pub fn read_snapshot_csv(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, message: "empty snapshot".into() })?
        .split(',')
        .map(|h| h.trim().to_string())
        .collect();
    let mut cols: BTreeMap<String, Vec<f64>> = header.iter().map(|h| (h.clone(), Vec::new())).collect();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(Error::Parse { line: i + 2, message: format!("expected {} fields", header.len()) });
        }
        for (h, f) in header.iter().zip(fields) {
            let v = f.trim().parse::<f64>().map_err(|e| Error::Parse { line: i + 2, message: e.to_string() })?;
            cols.get_mut(h).unwrap().push(v);
        }
    }
    Ok(cols)
}

/// Reference points subdividing the element uniformly with `n + 1` points per
/// direction, and the visualization sub-cells over them.
fn subdivision(shape: Shape, n: usize) -> (Vec<[f64; 2]>, Vec<Vec<usize>>) {
    let t = |i: usize| i as f64 / n as f64;
    match shape {
        Shape::Segment => ((0..=n).map(|i| [t(i), 0.0]).collect(), (0..n).map(|i| vec![i, i + 1]).collect()),
        Shape::Quad => {
            let pts = (0..=n).flat_map(|j| (0..=n).map(move |i| [t(i), t(j)])).collect();
            let id = |i: usize, j: usize| j * (n + 1) + i;
            let cells = (0..n)
                .flat_map(|j| (0..n).map(move |i| vec![id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]))
                .collect();
            (pts, cells)
        }
        Shape::Triangle => {
            let mut pts = Vec::new();
            let mut index = vec![vec![usize::MAX; n + 1]; n + 1];
            for j in 0..=n {
                for i in 0..=(n - j) {
                    index[j][i] = pts.len();
                    pts.push([t(i), t(j)]);
                }
            }
            let mut cells = Vec::new();
            for j in 0..n {
                for i in 0..(n - j) {
                    cells.push(vec![index[j][i], index[j][i + 1], index[j + 1][i]]);
                    if i + j + 1 < n {
                        cells.push(vec![index[j][i + 1], index[j + 1][i + 1], index[j + 1][i]]);
                    }
                }
            }
            (pts, cells)
        }
    }
}

fn vtk_cell_type(shape: Shape) -> u8 {
    match shape {
        Shape::Segment => 3,
        Shape::Triangle => 5,
        Shape::Quad => 9,
    }
}

/// Legacy ASCII VTK unstructured grid of the deformed mesh. Every element
/// is subdivided into `k^d` sub-cells; `|u|` is point data and the
/// thermodynamic fields are cell data taken from the quadrature point
/// nearest each sub-cell centre.
pub fn snapshot_vtk(problem: &HydroProblem, state: &FlowState, records: &[PointRecord]) -> Result<String> {
    let space = &problem.space;
    let n = space.degree.max(1);
    let (rpts, rcells) = subdivision(space.shape, n);
    let nq = space.n_quad();
    let mut points = Vec::new();
    let mut speed = Vec::new();
    let mut cells: Vec<Vec<usize>> = Vec::new();
    let mut cell_src = Vec::new();
    for e in 0..space.n_elements {
        let lx = space.gather(&state.x, e);
        let lu = space.gather(&state.u, e);
        let base = points.len();
        for p in &rpts {
            let (vals, _) = space.basis.eval(*p);
            let mut x = [0.0; 2];
            let mut u = [0.0; 2];
            for (a, w) in vals.iter().enumerate() {
                for c in 0..2 {
                    x[c] += w * lx[a][c];
                    u[c] += w * lu[a][c];
                }
            }
            points.push(x);
            speed.push(u[0].hypot(u[1]));
        }
        for c in &rcells {
            let mut centre = [0.0; 2];
            for &i in c {
                centre[0] += rpts[i][0] / c.len() as f64;
                centre[1] += rpts[i][1] / c.len() as f64;
            }
            let q = (0..nq)
                .min_by(|&a, &b| {
                    let d = |q: usize| {
                        let r = space.rule.points[q];
                        (r[0] - centre[0]).powi(2) + (r[1] - centre[1]).powi(2)
                    };
                    d(a).total_cmp(&d(b))
                })
                .unwrap_or(0);
            cells.push(c.iter().map(|i| base + i).collect());
            cell_src.push(e * nq + q);
        }
    }
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(s, "varlag t={:e}", state.t);
    s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", points.len());
    for p in &points {
        let _ = writeln!(s, "{:e} {:e} 0", p[0], p[1]);
    }
    let size: usize = cells.iter().map(|c| c.len() + 1).sum();
    let _ = writeln!(s, "CELLS {} {}", cells.len(), size);
    for c in &cells {
        let ids: Vec<String> = c.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(s, "{} {}", c.len(), ids.join(" "));
    }
    let _ = writeln!(s, "CELL_TYPES {}", cells.len());
    let ty = vtk_cell_type(space.shape);
    for _ in &cells {
        let _ = writeln!(s, "{ty}");
    }
    let _ = writeln!(s, "CELL_DATA {}", cells.len());
    let fields: [(&str, fn(&PointRecord) -> f64); 5] = [
        ("rho", |r| r.rho),
        ("p", |r| r.p),
        ("e", |r| r.e),
        ("theta", |r| r.theta),
        ("s", |r| r.s),
    ];
    for (name, f) in fields {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for &i in &cell_src {
            let _ = writeln!(s, "{:e}", f(&records[i]));
        }
    }
    let _ = writeln!(s, "POINT_DATA {}", points.len());
    s.push_str("SCALARS speed double 1\nLOOKUP_TABLE default\n");
    for v in &speed {
        let _ = writeln!(s, "{v:e}");
    }
    Ok(s)
}

/// Parsed legacy VTK unstructured grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VtkGrid {
    pub title: String,
    pub points: Vec<[f64; 3]>,
    pub cells: Vec<Vec<usize>>,
    pub cell_types: Vec<u8>,
    pub cell_data: BTreeMap<String, Vec<f64>>,
    pub point_data: BTreeMap<String, Vec<f64>>,
}

/// Reader for the subset of legacy ASCII VTK written by [`snapshot_vtk`].
pub fn parse_vtk(text: &str) -> Result<VtkGrid> {
    let mut lines = text.lines().enumerate().peekable();
    let perr = |line: usize, m: &str| Error::Parse { line: line + 1, message: m.to_string() };
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::Parse { line: 0, message: format!("unexpected end of file, expected {what}") });
    let (i, l) = next("version line")?;
    if !l.starts_with("# vtk DataFile") {
        return Err(perr(i, "missing VTK version line"));
    }
    let mut g = VtkGrid { title: next("title")?.1.to_string(), ..Default::default() };
    let (i, l) = next("format")?;
    if l.trim() != "ASCII" {
        return Err(perr(i, "only ASCII files are supported"));
    }
    let (i, l) = next("dataset")?;
    if l.trim() != "DATASET UNSTRUCTURED_GRID" {
        return Err(perr(i, "only unstructured grids are supported"));
    }
    let parse_f = |i: usize, t: &str| t.parse::<f64>().map_err(|e| perr(i, &e.to_string()));
    let parse_u = |i: usize, t: &str| t.parse::<usize>().map_err(|e| perr(i, &e.to_string()));
    let mut target: Option<bool> = None; // Some(true): cell data
    while let Ok((i, l)) = next("section") {
        let tok: Vec<&str> = l.split_whitespace().collect();
        match tok.first().copied() {
            None => continue,
            Some("POINTS") => {
                let n = parse_u(i, tok.get(1).ok_or_else(|| perr(i, "missing count"))?)?;
                for _ in 0..n {
                    let (j, l) = next("point")?;
                    let v: Vec<f64> = l.split_whitespace().map(|t| parse_f(j, t)).collect::<Result<_>>()?;
                    if v.len() != 3 {
                        return Err(perr(j, "points need three coordinates"));
                    }
                    g.points.push([v[0], v[1], v[2]]);
                }
            }
            Some("CELLS") => {
                let n = parse_u(i, tok.get(1).ok_or_else(|| perr(i, "missing count"))?)?;
                for _ in 0..n {
                    let (j, l) = next("cell")?;
                    let v: Vec<usize> = l.split_whitespace().map(|t| parse_u(j, t)).collect::<Result<_>>()?;
                    if v.is_empty() || v[0] + 1 != v.len() {
                        return Err(perr(j, "cell size does not match its connectivity"));
                    }
                    if v[1..].iter().any(|&p| p >= g.points.len()) {
                        return Err(perr(j, "cell references a missing point"));
                    }
                    g.cells.push(v[1..].to_vec());
                }
            }
            Some("CELL_TYPES") => {
                let n = parse_u(i, tok.get(1).ok_or_else(|| perr(i, "missing count"))?)?;
                for _ in 0..n {
                    let (j, l) = next("cell type")?;
                    g.cell_types.push(l.trim().parse::<u8>().map_err(|e| perr(j, &e.to_string()))?);
                }
            }
            Some("CELL_DATA") => target = Some(true),
            Some("POINT_DATA") => target = Some(false),
            Some("SCALARS") => {
                let name = tok.get(1).ok_or_else(|| perr(i, "missing field name"))?.to_string();
                let is_cell = target.ok_or_else(|| perr(i, "SCALARS outside a data section"))?;
                let n = if is_cell { g.cells.len() } else { g.points.len() };
                let (j, l) = next("lookup table")?;
                if !l.starts_with("LOOKUP_TABLE") {
                    return Err(perr(j, "expected LOOKUP_TABLE"));
                }
                let mut vals = Vec::with_capacity(n);
                while vals.len() < n {
                    let (j, l) = next("scalar value")?;
                    for t in l.split_whitespace() {
                        vals.push(parse_f(j, t)?);
                    }
                }
                if is_cell {
                    g.cell_data.insert(name, vals);
                } else {
                    g.point_data.insert(name, vals);
                }
            }
            Some(other) => return Err(perr(i, &format!("unknown section {other}"))),
        }
    }
    if g.cell_types.len() != g.cells.len() {
        return Err(Error::Parse { line: 0, message: "cell type count differs from cell count".into() });
    }
    Ok(g)
}

/// Write snapshot files `<stem>.csv` and/or `<stem>.vtk`; returns the paths.
pub fn write_snapshot(
    problem: &HydroProblem,
    state: &FlowState,
    dir: &Path,
    stem: &str,
    format: SnapshotFormat,
    eos: Option<&BarotropicEOS>,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let rec = point_records(problem, state, eos)?;
    let mut out = Vec::new();
    if matches!(format, SnapshotFormat::Csv | SnapshotFormat::Both) {
        let p = dir.join(format!("{stem}.csv"));
        fs::write(&p, snapshot_csv(&rec, state.t))?;
        out.push(p);
    }
    if matches!(format, SnapshotFormat::Vtk | SnapshotFormat::Both) {
        let p = dir.join(format!("{stem}.vtk"));
        fs::write(&p, snapshot_vtk(problem, state, &rec)?)?;
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: usize,
    pub t_final: f64,
    pub output_dir: PathBuf,
    pub diagnostics: Vec<DiagnosticsRecord>,
    pub final_state: FlowState,
    pub problem: HydroProblem,
}

struct Recorder<'a> {
    file: fs::File,
    records: Vec<DiagnosticsRecord>,
    cfg: &'a RunConfig,
    dir: PathBuf,
}

impl Recorder<'_> {
    fn push(&mut self, r: DiagnosticsRecord) -> Result<()> {
        writeln!(self.file, "{}", r.to_csv_row())?;
        self.records.push(r);
        Ok(())
    }

    fn snapshot(&self, problem: &HydroProblem, state: &FlowState, step: usize, eos: Option<&BarotropicEOS>) -> Result<()> {
        if self.cfg.output.every > 0 && step.is_multiple_of(self.cfg.output.every) {
            write_snapshot(problem, state, &self.dir, &format!("snapshot_{step:06}"), self.cfg.output.format, eos)?;
        }
        Ok(())
    }
}

/// Advance the configured case to its final time, writing
/// `diagnostics.csv`, periodic snapshots and `final.*` to the output directory.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    if cfg.threads == 0 {
        return run_inner(cfg);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_inner(cfg))
}

fn run_inner(cfg: &RunConfig) -> Result<RunSummary> {
    let setup = cfg.setup()?;
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)?;
    let mut file = fs::File::create(dir.join("diagnostics.csv"))?;
    writeln!(file, "{}", DiagnosticsRecord::HEADER)?;
    let mut rec = Recorder { file, records: Vec::new(), cfg, dir: dir.clone() };
    let t_final = setup.spec.t_final;
    let CaseSetup { problem, state, params, spec, .. } = setup;

    let (steps, final_state) = match cfg.model {
        Model::Full => {
            rec.push(DiagnosticsRecord::from_state(&problem, &state, 0, 0.0, 0)?)?;
            rec.snapshot(&problem, &state, 0, None)?;
            let mut integ = Integrator::new(params, state)?;
            let mut count = 0;
            let steps = integ.advance(&problem, t_final, spec.dt, |res, dt| {
                count += 1;
                rec.push(DiagnosticsRecord::from_state(&problem, &res.state, count, dt, res.report.iterations)?)?;
                rec.snapshot(&problem, &res.state, count, None)
            })?;
            (steps, integ.state().clone())
        }
        Model::Isothermal => {
            let eos = cfg.eos.expect("validated");
            let iso = IsothermalProblem::new(problem.clone(), eos)?;
            run_isothermal(&iso, state.u.clone(), &spec, cfg, &mut rec)?
        }
    };
    rec.file.flush()?;
    let eos = match cfg.model {
        Model::Isothermal => cfg.eos,
        Model::Full => None,
    };
    write_snapshot(&problem, &final_state, &dir, "final", cfg.output.format, eos.as_ref())?;
    Ok(RunSummary { steps, t_final: final_state.t, output_dir: dir, diagnostics: rec.records, final_state, problem })
}

fn iso_record(iso: &IsothermalProblem, s: &IsoState, step: usize, dt: f64, its: usize) -> Result<DiagnosticsRecord> {
    let p = &iso.hydro;
    let flow = as_flow(p, s);
    let t = totals(p, &flow)?;
    let kinetic = t.kinetic;
    let free = iso.physical_energy(s)? - kinetic;
    Ok(DiagnosticsRecord {
        step,
        t: s.t,
        dt,
        mass: t.mass,
        momentum: t.momentum,
        kinetic,
        internal: free,
        total: kinetic + free,
        entropy: f64::NAN,
        newton_iterations: its,
        min_j: t.min_j,
        min_theta: f64::NAN,
    })
}

/// Isothermal state viewed as a flow state with unit temperature.
fn as_flow(p: &HydroProblem, s: &IsoState) -> FlowState {
    FlowState { x: s.x.clone(), u: s.u.clone(), theta: crate::space::QuadField::constant(&p.space, 1.0), t: s.t }
}

fn run_isothermal(
    iso: &IsothermalProblem,
    u0: Vec<f64>,
    spec: &CaseSpec,
    cfg: &RunConfig,
    rec: &mut Recorder,
) -> Result<(usize, FlowState)> {
    let p = &iso.hydro;
    let mut s = iso.initial_state(u0);
    rec.push(iso_record(iso, &s, 0, 0.0, 0)?)?;
    let eos = cfg.eos;
    rec.snapshot(p, &as_flow(p, &s), 0, eos.as_ref())?;
    let dt_min = cfg.time.dt_min.unwrap_or(1e-8);
    let dt_max = cfg.time.dt_max.unwrap_or(1.0);
    let eps = 1e-12 * spec.t_final.max(1.0);
    let mut steps = 0;
    let mut dt = match spec.dt {
        Some(d) => d,
        None => iso.cfl_dt(&s, spec.cfl)?.clamp(dt_min, dt_max),
    };
    while s.t < spec.t_final - eps {
        let try_dt = dt.min(spec.t_final - s.t);
        match isothermal_be_step(iso, &s, try_dt, &cfg.newton) {
            Ok((next, report)) => {
                s = next;
                steps += 1;
                rec.push(iso_record(iso, &s, steps, try_dt, report.iterations)?)?;
                rec.snapshot(p, &as_flow(p, &s), steps, eos.as_ref())?;
                if spec.dt.is_none() {
                    dt = iso.cfl_dt(&s, spec.cfl)?.clamp(dt_min, dt_max).min(1.02 * dt);
                }
            }
            Err(e) if spec.dt.is_none() => {
                dt = 0.5 * try_dt;
                if dt < dt_min {
                    return Err(Error::StepControl(format!("step size fell below {dt_min:e}; last failure: {e}")));
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok((steps, as_flow(p, &s)))
}

/// Comparison of a 1D Sod snapshot with the exact Riemann solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SodComparison {
    pub t: f64,
    /// `∫|ρ_h − ρ| dx / |Ω|`.
    pub l1_density: f64,
    pub shock_numeric: f64,
    pub shock_exact: f64,
    /// Current width of the cell containing the numerical shock front.
    pub shock_cell_width: f64,
}

impl SodComparison {
    /// Shock offset measured in deformed cell widths.
    pub fn shock_offset_cells(&self) -> f64 {
        (self.shock_numeric - self.shock_exact).abs() / self.shock_cell_width
    }
}

/// Compare quadrature-point samples `(x, w, h, ρ)` of a Sod run at time `t`.
///
/// The numerical shock front is the steepest density drop between adjacent
/// samples to the right of the midpoint between the exact contact and shock,
/// which keeps the (sharp) contact out of the search.
pub fn compare_sod(samples: &[(f64, f64, f64, f64)], t: f64, domain_length: f64) -> Result<SodComparison> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let left = Primitive::new(1.0, 0.0, 1.0);
    let right = Primitive::new(0.125, 0.0, 0.1);
    let sol = RiemannSolution::solve(left, right, 1.4, RootFinder::Newton)?;
    let shock_exact = match sol.right_wave {
        crate::oracles::riemann::Wave::Shock { speed } => speed * t,
        _ => unreachable!("Sod data has a right shock"),
    };
    let contact = sol.u_star * t;
    let mut pts = samples.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let l1 = pts.iter().map(|&(x, w, _, rho)| w * (rho - sol.sample(x, t).rho).abs()).sum::<f64>() / domain_length;
    let cut = 0.5 * (contact + shock_exact);
    let mut best = (f64::NEG_INFINITY, f64::NAN, f64::NAN);
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.0 < cut || b.0 <= a.0 {
            continue;
        }
        let slope = (a.3 - b.3) / (b.0 - a.0);
        if slope > best.0 {
            best = (slope, 0.5 * (a.0 + b.0), 0.5 * (a.2 + b.2));
        }
    }
    if !best.1.is_finite() {
        return Err(Error::InvalidArgument("no samples to the right of the contact".into()));
    }
    Ok(SodComparison { t, l1_density: l1, shock_numeric: best.1, shock_exact, shock_cell_width: best.2 })
}

/// [`compare_sod`] on a snapshot CSV.
pub fn compare_sod_snapshot(path: &Path) -> Result<SodComparison> {
    let c = read_snapshot_csv(path)?;
    let col = |n: &str| c.get(n).ok_or_else(|| Error::Parse { line: 1, message: format!("snapshot lacks column '{n}'") });
    let (t, x, w, h, rho) = (col("t")?, col("x")?, col("w")?, col("h")?, col("rho")?);
    let t0 = *t.first().ok_or_else(|| Error::Parse { line: 2, message: "snapshot has no rows".into() })?;
    let samples: Vec<_> = (0..x.len()).map(|i| (x[i], w[i], h[i], rho[i])).collect();
    compare_sod(&samples, t0, 10.0)
}

/// Velocity and internal-energy errors of one Taylor-Green run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorGreenErrors {
    pub n: usize,
    pub h: f64,
    pub error_u: f64,
    pub error_e: f64,
    pub steps: usize,
}

/// Run BDF[m]-P^m (`m = degree`, capped at 4) on an `n × n` mesh with
/// `δt = 0.05·8/n` to `t_final` and measure the L² errors against the
/// stationary solution.
pub fn taylor_green_errors(degree: usize, n: usize, t_final: f64) -> Result<TaylorGreenErrors> {
    if n == 0 || !n.is_multiple_of(8) {
        return Err(Error::InvalidArgument(format!("mesh size {n} must be a positive multiple of 8")));
    }
    let spec = CaseSpec {
        degree,
        nx: n,
        ny: n,
        scheme: Scheme::bdf(degree.clamp(1, 4))?,
        dt: Some(0.05 * 8.0 / n as f64),
        t_final,
        ..CaseSpec::default_for(CaseName::TaylorGreen)
    };
    let setup = instantiate_case(&spec)?;
    let mut integ = Integrator::new(setup.params, setup.state)?;
    let steps = integ.advance(&setup.problem, t_final, spec.dt, |_, _| Ok(()))?;
    let reference = |x: [f64; 2]| crate::oracles::taylor_green_reference(x).0;
    let st = integ.state();
    Ok(TaylorGreenErrors {
        n,
        h: 1.0 / n as f64,
        error_u: crate::oracles::l2_error_vs_reference(&setup.problem, st, &reference, crate::oracles::ErrorField::Velocity)?,
        error_e: crate::oracles::l2_error_vs_reference(&setup.problem, st, &reference, crate::oracles::ErrorField::InternalEnergy)?,
        steps,
    })
}

/// Convergence tables (velocity, internal energy) over `meshes`.
pub fn taylor_green_convergence(
    degree: usize,
    meshes: &[usize],
    t_final: f64,
) -> Result<(crate::oracles::ConvergenceTable, crate::oracles::ConvergenceTable)> {
    let runs: Vec<TaylorGreenErrors> = meshes.iter().map(|&n| taylor_green_errors(degree, n, t_final)).collect::<Result<_>>()?;
    let hs: Vec<f64> = runs.iter().map(|r| r.h).collect();
    let eu: Vec<f64> = runs.iter().map(|r| r.error_u).collect();
    let ee: Vec<f64> = runs.iter().map(|r| r.error_e).collect();
    Ok((crate::oracles::convergence_order(&eu, &hs)?, crate::oracles::convergence_order(&ee, &hs)?))
}

/// Velocity deviation of a Gresho run from the stationary vortex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreshoDeviation {
    pub degree: usize,
    pub n: usize,
    pub error_u: f64,
    pub steps: usize,
}

/// Run the Gresho vortex with its defaults on a `k = degree`, `n × n` mesh
/// to `t_final` and measure the L² deviation of the velocity from the
/// initial (exact, stationary) field at the current positions.
pub fn gresho_deviation(degree: usize, n: usize, t_final: f64) -> Result<GreshoDeviation> {
    let spec = CaseSpec { degree, nx: n, ny: n, t_final, ..CaseSpec::default_for(CaseName::Gresho) };
    let setup = instantiate_case(&spec)?;
    let mut integ = Integrator::new(setup.params, setup.state)?;
    let steps = integ.advance(&setup.problem, t_final, spec.dt, |_, _| Ok(()))?;
    // The profile has kinks, so over-integrate.
    let error_u = crate::oracles::l2_velocity_error_refined(&setup.problem, integ.state(), &crate::cases::gresho_velocity, (degree + 3).min(crate::quadrature::MAX_DEGREE))?;
    Ok(GreshoDeviation { degree, n, error_u, steps })
}
