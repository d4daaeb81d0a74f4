//! Finite element spaces.
//!
//! [`KinematicSpace`] is the continuous vector Lagrange space of degree `k`
//! that carries both the flow map and the velocity. [`QuadField`] is the
//! discontinuous thermodynamic space, stored purely by its nodal values at
//! the quadrature points.
//!
//! Vector coefficients are laid out node-major: `coeffs[node * dim + c]`.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::Mat2;
use crate::mesh::MeshData;
use crate::quadrature::{gauss_lobatto_points, get_rule, QuadRule};
use crate::reference::Shape;

/// Nodal Lagrange basis of degree `k` on one reference element.
#[derive(Debug, Clone)]
pub struct LocalBasis {
    pub shape: Shape,
    pub degree: usize,
    /// Reference coordinates of the local nodes.
    pub nodes: Vec<[f64; 2]>,
    lattice: Vec<(usize, usize)>,
    gll: Vec<f64>,
    /// Triangle only: monomial exponents and the inverse Vandermonde matrix.
    exponents: Vec<(i32, i32)>,
    inv_vandermonde: Option<DMatrix<f64>>,
}

fn lagrange_1d(nodes: &[f64], a: usize, x: f64) -> (f64, f64) {
    let mut val = 1.0;
    let mut der = 0.0;
    for (m, &xm) in nodes.iter().enumerate() {
        if m == a {
            continue;
        }
        let inv = 1.0 / (nodes[a] - xm);
        der = der * (x - xm) * inv + val * inv;
        val *= (x - xm) * inv;
    }
    (val, der)
}

impl LocalBasis {
    pub fn new(shape: Shape, degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidArgument("kinematic degree must be at least 1".into()));
        }
        let k = degree;
        let gll = gauss_lobatto_points(k);
        let mut lattice = Vec::new();
        let mut nodes = Vec::new();
        let mut exponents = Vec::new();
        let mut inv_vandermonde = None;
        match shape {
            Shape::Segment => {
                for a in 0..=k {
                    lattice.push((a, 0));
                    nodes.push([gll[a], 0.0]);
                }
            }
            Shape::Quad => {
                for b in 0..=k {
                    for a in 0..=k {
                        lattice.push((a, b));
                        nodes.push([gll[a], gll[b]]);
                    }
                }
            }
            Shape::Triangle => {
                for j in 0..=k {
                    for i in 0..=k - j {
                        lattice.push((i, j));
                        nodes.push([i as f64 / k as f64, j as f64 / k as f64]);
                    }
                }
                for p in 0..=k as i32 {
                    for q in 0..=k as i32 - p {
                        exponents.push((p, q));
                    }
                }
                let n = nodes.len();
                let v = DMatrix::from_fn(n, n, |i, m| {
                    let (p, q) = exponents[m];
                    nodes[i][0].powi(p) * nodes[i][1].powi(q)
                });
                inv_vandermonde = Some(
                    v.try_inverse()
                        .ok_or_else(|| Error::InvalidArgument("singular triangle Vandermonde".into()))?,
                );
            }
        }
        Ok(Self {
            shape,
            degree,
            nodes,
            lattice,
            gll,
            exponents,
            inv_vandermonde,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Values and reference gradients of all basis functions at `p`.
    pub fn eval(&self, p: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
        let n = self.len();
        let mut vals = vec![0.0; n];
        let mut grads = vec![[0.0; 2]; n];
        match self.shape {
            Shape::Segment => {
                for a in 0..n {
                    let (v, d) = lagrange_1d(&self.gll, a, p[0]);
                    vals[a] = v;
                    grads[a] = [d, 0.0];
                }
            }
            Shape::Quad => {
                let k = self.degree;
                let lx: Vec<(f64, f64)> = (0..=k).map(|a| lagrange_1d(&self.gll, a, p[0])).collect();
                let ly: Vec<(f64, f64)> = (0..=k).map(|b| lagrange_1d(&self.gll, b, p[1])).collect();
                for (i, &(a, b)) in self.lattice.iter().enumerate() {
                    vals[i] = lx[a].0 * ly[b].0;
                    grads[i] = [lx[a].1 * ly[b].0, lx[a].0 * ly[b].1];
                }
            }
            Shape::Triangle => {
                let c = self.inv_vandermonde.as_ref().unwrap();
                let pw = |x: f64, e: i32| if e < 0 { 0.0 } else { x.powi(e) };
                for (m, &(ex, ey)) in self.exponents.iter().enumerate() {
                    let mono = pw(p[0], ex) * pw(p[1], ey);
                    let dx = if ex > 0 { ex as f64 * pw(p[0], ex - 1) * pw(p[1], ey) } else { 0.0 };
                    let dy = if ey > 0 { ey as f64 * pw(p[0], ex) * pw(p[1], ey - 1) } else { 0.0 };
                    for a in 0..n {
                        let w = c[(m, a)];
                        vals[a] += w * mono;
                        grads[a][0] += w * dx;
                        grads[a][1] += w * dy;
                    }
                }
            }
        }
        (vals, grads)
    }

    fn vertex_nodes(&self) -> Vec<usize> {
        let k = self.degree;
        let find = |ij: (usize, usize)| self.lattice.iter().position(|&l| l == ij).unwrap();
        match self.shape {
            Shape::Segment => vec![0, k],
            Shape::Quad => vec![find((0, 0)), find((k, 0)), find((k, k)), find((0, k))],
            Shape::Triangle => vec![find((0, 0)), find((k, 0)), find((0, k))],
        }
    }

    /// Edges as (local vertex A, local vertex B, interior nodes ordered from A to B).
    fn edges(&self) -> Vec<(usize, usize, Vec<usize>)> {
        let k = self.degree;
        let find = |ij: (usize, usize)| self.lattice.iter().position(|&l| l == ij).unwrap();
        let inner = |f: &dyn Fn(usize) -> (usize, usize)| (1..k).map(|m| find(f(m))).collect::<Vec<_>>();
        match self.shape {
            Shape::Segment => vec![],
            Shape::Quad => vec![
                (0, 1, inner(&|m| (m, 0))),
                (1, 2, inner(&|m| (k, m))),
                (3, 2, inner(&|m| (m, k))),
                (0, 3, inner(&|m| (0, m))),
            ],
            Shape::Triangle => vec![
                (0, 1, inner(&|m| (m, 0))),
                (1, 2, inner(&|m| (k - m, m))),
                (0, 2, inner(&|m| (0, m))),
            ],
        }
    }
}

/// Basis values and reference gradients at every point of a quadrature rule.
#[derive(Debug, Clone)]
pub struct BasisTable {
    /// `values[q][a]`
    pub values: Vec<Vec<f64>>,
    /// `ref_grads[q][a]`
    pub ref_grads: Vec<Vec<[f64; 2]>>,
}

impl BasisTable {
    pub fn new(basis: &LocalBasis, points: &[[f64; 2]]) -> Self {
        let (values, ref_grads) = points.iter().map(|p| basis.eval(*p)).unzip();
        Self { values, ref_grads }
    }
}

/// Deformation data at a set of points: `F = ∇_X x_h`, `J = det F`, `F⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryEval {
    pub dim: usize,
    pub f: Vec<Mat2>,
    pub j: Vec<f64>,
    pub finv: Vec<Mat2>,
}

impl GeometryEval {
    /// Smallest singular value of `F` at point `i` within the active dimensions.
    pub fn min_singular_value(&self, i: usize) -> f64 {
        if self.dim == 1 {
            self.f[i][(0, 0)].abs()
        } else {
            crate::linalg::min_singular_value(&self.f[i])
        }
    }
}

/// Continuous vector Lagrange space of degree `k` on the initial mesh, with
/// the frozen quadrature data of the initial configuration.
#[derive(Debug, Clone)]
pub struct KinematicSpace {
    pub dim: usize,
    pub shape: Shape,
    pub degree: usize,
    pub basis: LocalBasis,
    pub rule: QuadRule,
    pub table: BasisTable,
    /// Number of scalar nodes; the vector space has `dim * n_nodes` DOFs.
    pub n_nodes: usize,
    /// Initial coordinates `X` of every node.
    pub node_coords: Vec<[f64; 2]>,
    n_loc: usize,
    element_nodes: Vec<usize>,
    /// Physical weights ω_i^ℓ on the initial mesh, element-major.
    pub weights: Vec<f64>,
    /// Initial positions ξ_i^ℓ of the quadrature points.
    pub quad_points: Vec<[f64; 2]>,
    /// `∇_X φ_a` at every (element, point, local node).
    grad_x0: Vec<[f64; 2]>,
    /// Inverse of the initial element map gradient at every quadrature point.
    ref_to_x0: Vec<Mat2>,
    /// Nodes on each boundary marker, with the facet's axis-aligned normal
    /// axis (if any).
    boundary_nodes: BTreeMap<u32, Vec<(usize, Option<usize>)>>,
    /// Initial minimum edge length per element.
    pub h0: Vec<f64>,
    pub n_elements: usize,
}

fn straight_map(mesh: &MeshData, e: usize, p: [f64; 2]) -> [f64; 2] {
    let v: Vec<[f64; 2]> = mesh.elements[e].iter().map(|&i| mesh.vertices[i]).collect();
    let [s, t] = p;
    let w: Vec<f64> = match mesh.shape {
        Shape::Segment => vec![1.0 - s, s],
        Shape::Quad => vec![(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t],
        Shape::Triangle => vec![1.0 - s - t, s, t],
    };
    let mut x = [0.0; 2];
    for (wi, vi) in w.iter().zip(&v) {
        x[0] += wi * vi[0];
        x[1] += wi * vi[1];
    }
    x
}

impl KinematicSpace {
    pub fn new(mesh: &MeshData, degree: usize) -> Result<Self> {
        mesh.validate()?;
        let basis = LocalBasis::new(mesh.shape, degree)?;
        let rule = get_rule(mesh.shape, degree)?;
        let table = BasisTable::new(&basis, &rule.points);
        let n_loc = basis.len();
        let ne = mesh.element_count();
        let dim = mesh.dim;
        let k = degree;

        // Global numbering: vertices, then edge interiors, then element interiors.
        let vertex_local = basis.vertex_nodes();
        let edges = basis.edges();
        let mut edge_base: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = mesh.vertex_count();
        let mut element_nodes = vec![usize::MAX; ne * n_loc];
        for (e, el) in mesh.elements.iter().enumerate() {
            let slot = &mut element_nodes[e * n_loc..(e + 1) * n_loc];
            for (lv, &gv) in vertex_local.iter().zip(el) {
                slot[*lv] = gv;
            }
            for (a, b, inner) in &edges {
                let (ga, gb) = (el[*a], el[*b]);
                let key = (ga.min(gb), ga.max(gb));
                let base = *edge_base.entry(key).or_insert_with(|| {
                    let b = next;
                    next += k - 1;
                    b
                });
                for (m, &ln) in inner.iter().enumerate() {
                    // `m` counts from A; global order runs from the lower vertex id.
                    let off = if ga < gb { m } else { k - 2 - m };
                    slot[ln] = base + off;
                }
            }
        }
        for e in 0..ne {
            for a in 0..n_loc {
                if element_nodes[e * n_loc + a] == usize::MAX {
                    element_nodes[e * n_loc + a] = next;
                    next += 1;
                }
            }
        }
        let n_nodes = next;

        let mut node_coords = vec![[f64::NAN; 2]; n_nodes];
        for e in 0..ne {
            for a in 0..n_loc {
                node_coords[element_nodes[e * n_loc + a]] = straight_map(mesh, e, basis.nodes[a]);
            }
        }

        let nq = rule.len();
        let mut weights = Vec::with_capacity(ne * nq);
        let mut quad_points = Vec::with_capacity(ne * nq);
        let mut grad_x0 = Vec::with_capacity(ne * nq * n_loc);
        let mut ref_to_x0 = Vec::with_capacity(ne * nq);
        for e in 0..ne {
            let nodes = &element_nodes[e * n_loc..(e + 1) * n_loc];
            for q in 0..nq {
                let (jac, pos) = Self::ref_jacobian(dim, nodes, &node_coords, &table.values[q], &table.ref_grads[q]);
                let det = jac.determinant();
                if det <= 0.0 {
                    return Err(Error::InvertedElement { element: e, point: q, jacobian: det });
                }
                let inv = jac.try_inverse().unwrap();
                weights.push(det * rule.weights[q]);
                quad_points.push(pos);
                ref_to_x0.push(inv);
                for a in 0..n_loc {
                    let g = table.ref_grads[q][a];
                    // ∇_X φ = (∇̂Φ)^{-T} ∇̂φ
                    grad_x0.push([inv[(0, 0)] * g[0] + inv[(1, 0)] * g[1], inv[(0, 1)] * g[0] + inv[(1, 1)] * g[1]]);
                }
            }
        }

        // Boundary node sets.
        let mut boundary_nodes: BTreeMap<u32, Vec<(usize, Option<usize>)>> = BTreeMap::new();
        for f in &mesh.boundary {
            let axis = match dim {
                1 => Some(0),
                _ => {
                    let p = mesh.vertices[f.vertices[0]];
                    let q = mesh.vertices[f.vertices[1]];
                    let scale = (p[0] - q[0]).abs().max((p[1] - q[1]).abs());
                    if (p[0] - q[0]).abs() <= 1e-12 * scale {
                        Some(0)
                    } else if (p[1] - q[1]).abs() <= 1e-12 * scale {
                        Some(1)
                    } else {
                        None
                    }
                }
            };
            let entry = boundary_nodes.entry(f.marker).or_default();
            for &v in &f.vertices {
                entry.push((v, axis));
            }
            if dim == 2 && k > 1 {
                let key = (f.vertices[0].min(f.vertices[1]), f.vertices[0].max(f.vertices[1]));
                let base = *edge_base.get(&key).ok_or_else(|| {
                    Error::InvalidArgument(format!("boundary facet {:?} is not an element edge", f.vertices))
                })?;
                for m in 0..k - 1 {
                    entry.push((base + m, axis));
                }
            }
        }
        for nodes in boundary_nodes.values_mut() {
            nodes.sort_unstable();
            nodes.dedup();
        }

        Ok(Self {
            dim,
            shape: mesh.shape,
            degree,
            basis,
            rule,
            table,
            n_nodes,
            node_coords,
            n_loc,
            element_nodes,
            weights,
            quad_points,
            grad_x0,
            ref_to_x0,
            boundary_nodes,
            h0: (0..ne).map(|e| mesh.min_edge_length(e)).collect(),
            n_elements: ne,
        })
    }

    fn ref_jacobian(dim: usize, nodes: &[usize], coords: &[[f64; 2]], vals: &[f64], grads: &[[f64; 2]]) -> (Mat2, [f64; 2]) {
        let mut jac = Mat2::zeros();
        let mut pos = [0.0; 2];
        for (a, &n) in nodes.iter().enumerate() {
            let x = coords[n];
            for i in 0..dim {
                pos[i] += x[i] * vals[a];
                for j in 0..dim {
                    jac[(i, j)] += x[i] * grads[a][j];
                }
            }
        }
        if dim == 1 {
            jac[(1, 1)] = 1.0;
        }
        (jac, pos)
    }

    pub fn n_dofs(&self) -> usize {
        self.dim * self.n_nodes
    }

    pub fn n_loc(&self) -> usize {
        self.n_loc
    }

    pub fn n_quad(&self) -> usize {
        self.rule.len()
    }

    /// Total number of quadrature points `N_T × N_k`.
    pub fn n_quad_total(&self) -> usize {
        self.n_elements * self.rule.len()
    }

    pub fn element_nodes(&self, e: usize) -> &[usize] {
        &self.element_nodes[e * self.n_loc..(e + 1) * self.n_loc]
    }

    /// `∇_X φ_a` for all local nodes at quadrature point `q` of element `e`.
    pub fn grad_x0(&self, e: usize, q: usize) -> &[[f64; 2]] {
        let nq = self.n_quad();
        let s = (e * nq + q) * self.n_loc;
        &self.grad_x0[s..s + self.n_loc]
    }

    pub fn weight(&self, e: usize, q: usize) -> f64 {
        self.weights[e * self.n_quad() + q]
    }

    /// Nodal interpolant of a vector field given at initial coordinates.
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs()];
        for (n, x) in self.node_coords.iter().enumerate() {
            let v = f(*x);
            for c in 0..self.dim {
                out[n * self.dim + c] = v[c];
            }
        }
        out
    }

    /// Coefficients of the identity map `x_h = X`.
    pub fn identity_map(&self) -> Vec<f64> {
        self.interpolate(|x| x)
    }

    /// Gather the element-local coefficients `[a][c]` of a vector field.
    pub fn gather(&self, coeffs: &[f64], e: usize) -> Vec<[f64; 2]> {
        self.element_nodes(e)
            .iter()
            .map(|&n| {
                let mut v = [0.0; 2];
                for c in 0..self.dim {
                    v[c] = coeffs[n * self.dim + c];
                }
                v
            })
            .collect()
    }

    /// Pointwise evaluation of a vector field at the quadrature points of `e`.
    pub fn eval_field_at_quad(&self, coeffs: &[f64], e: usize) -> Result<Vec<[f64; 2]>> {
        self.check_len(coeffs)?;
        let local = self.gather(coeffs, e);
        Ok(self
            .table
            .values
            .iter()
            .map(|vals| {
                let mut v = [0.0; 2];
                for (a, w) in vals.iter().enumerate() {
                    v[0] += w * local[a][0];
                    v[1] += w * local[a][1];
                }
                v
            })
            .collect())
    }

    /// Material gradient `H = ∇_X v_h` at quadrature point `q` of element `e`
    /// from element-local coefficients.
    pub fn material_gradient(&self, local: &[[f64; 2]], e: usize, q: usize) -> Mat2 {
        let g = self.grad_x0(e, q);
        let mut h = Mat2::zeros();
        for (a, ga) in g.iter().enumerate() {
            for i in 0..self.dim {
                for j in 0..self.dim {
                    h[(i, j)] += local[a][i] * ga[j];
                }
            }
        }
        h
    }

    /// Deformation tensor `F = ∇_X x_h` (with `F₁₁ = 1` in 1D).
    pub fn deformation(&self, local_x: &[[f64; 2]], e: usize, q: usize) -> Mat2 {
        let mut f = self.material_gradient(local_x, e, q);
        if self.dim == 1 {
            f[(1, 1)] = 1.0;
        }
        f
    }

    /// Geometry of the flow map at the quadrature points of element `e`.
    pub fn geometry_at_quad(&self, x: &[f64], e: usize) -> Result<GeometryEval> {
        self.check_len(x)?;
        let local = self.gather(x, e);
        let nq = self.n_quad();
        let mut g = GeometryEval {
            dim: self.dim,
            f: Vec::with_capacity(nq),
            j: Vec::with_capacity(nq),
            finv: Vec::with_capacity(nq),
        };
        for q in 0..nq {
            let f = self.deformation(&local, e, q);
            let j = f.determinant();
            if j <= 0.0 || !j.is_finite() {
                return Err(Error::InvertedElement { element: e, point: q, jacobian: j });
            }
            g.finv.push(f.try_inverse().unwrap());
            g.f.push(f);
            g.j.push(j);
        }
        Ok(g)
    }

    /// Physical gradients `∇u_h = ∇_X u_h F⁻¹` at the quadrature points.
    pub fn eval_physical_gradient(&self, coeffs: &[f64], geometry: &GeometryEval, e: usize) -> Result<Vec<Mat2>> {
        self.check_len(coeffs)?;
        if let Some((q, &j)) = geometry.j.iter().enumerate().find(|(_, &j)| j <= 0.0) {
            return Err(Error::InvertedElement { element: e, point: q, jacobian: j });
        }
        let local = self.gather(coeffs, e);
        Ok((0..self.n_quad())
            .map(|q| self.material_gradient(&local, e, q) * geometry.finv[q])
            .collect())
    }

    /// Geometry at arbitrary reference points of element `e`.
    pub fn evaluate_geometry(&self, x: &[f64], e: usize, ref_points: &[[f64; 2]]) -> Result<GeometryEval> {
        self.check_len(x)?;
        if e >= self.n_elements {
            return Err(Error::InvalidArgument(format!("element {e} out of range")));
        }
        let nodes = self.element_nodes(e);
        let local = self.gather(x, e);
        let mut out = GeometryEval {
            dim: self.dim,
            f: vec![],
            j: vec![],
            finv: vec![],
        };
        for (i, p) in ref_points.iter().enumerate() {
            if !self.shape.contains(*p, 1e-12) {
                return Err(Error::InvalidArgument(format!("point {p:?} is outside the reference element")));
            }
            let (vals, grads) = self.basis.eval(*p);
            let (ref0, _) = Self::ref_jacobian(self.dim, nodes, &self.node_coords, &vals, &grads);
            let mut refx = Mat2::zeros();
            for (a, ga) in grads.iter().enumerate() {
                for r in 0..self.dim {
                    for c in 0..self.dim {
                        refx[(r, c)] += local[a][r] * ga[c];
                    }
                }
            }
            if self.dim == 1 {
                refx[(1, 1)] = 1.0;
            }
            let f = refx * ref0.try_inverse().ok_or(Error::InvertedElement { element: e, point: i, jacobian: 0.0 })?;
            let j = f.determinant();
            if j <= 0.0 {
                return Err(Error::InvertedElement { element: e, point: i, jacobian: j });
            }
            out.finv.push(f.try_inverse().unwrap());
            out.f.push(f);
            out.j.push(j);
        }
        Ok(out)
    }

    fn check_len(&self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() != self.n_dofs() {
            return Err(Error::InvalidArgument(format!(
                "coefficient vector has length {}, expected {}",
                coeffs.len(),
                self.n_dofs()
            )));
        }
        Ok(())
    }

    pub fn boundary_markers(&self) -> impl Iterator<Item = u32> + '_ {
        self.boundary_nodes.keys().copied()
    }

    /// Boundary nodes carrying `marker`, each with its facet normal axis.
    pub fn boundary_nodes(&self, marker: u32) -> &[(usize, Option<usize>)] {
        self.boundary_nodes.get(&marker).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Inverse of the initial reference-to-physical map gradient at (e, q).
    pub fn initial_inverse_map(&self, e: usize, q: usize) -> &Mat2 {
        &self.ref_to_x0[e * self.n_quad() + q]
    }
}

/// A scalar field in the thermodynamic space: one value per quadrature point.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadField {
    pub values: Vec<f64>,
    pub per_element: usize,
}

impl QuadField {
    pub fn new(values: Vec<f64>, per_element: usize) -> Self {
        assert!(per_element > 0 && values.len().is_multiple_of(per_element));
        Self { values, per_element }
    }

    pub fn constant(space: &KinematicSpace, v: f64) -> Self {
        Self::new(vec![v; space.n_quad_total()], space.n_quad())
    }

    /// Sample a function of the initial position at every quadrature point.
    pub fn from_fn(space: &KinematicSpace, f: impl Fn([f64; 2]) -> f64) -> Self {
        Self::new(space.quad_points.iter().map(|p| f(*p)).collect(), space.n_quad())
    }

    pub fn element(&self, e: usize) -> &[f64] {
        &self.values[e * self.per_element..(e + 1) * self.per_element]
    }

    pub fn element_mut(&mut self, e: usize) -> &mut [f64] {
        &mut self.values[e * self.per_element..(e + 1) * self.per_element]
    }

    pub fn n_elements(&self) -> usize {
        self.values.len() / self.per_element
    }
}

/// Velocity boundary condition attached to a boundary marker.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase", tag = "type", content = "value")]
pub enum BoundaryCondition {
    /// Zero normal velocity on an axis-aligned wall.
    Wall,
    /// Same constraint as a wall.
    Symmetry,
    Free,
    /// Dirichlet data on all velocity components.
    Prescribed([f64; 2]),
}

/// Constrained velocity DOFs and their values.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    fixed: Vec<Option<f64>>,
}

impl Constraints {
    pub fn none(space: &KinematicSpace) -> Self {
        Self { fixed: vec![None; space.n_dofs()] }
    }

    /// Build from per-marker conditions. Every marker present on the mesh
    /// must have a registered condition.
    pub fn build(space: &KinematicSpace, conditions: &BTreeMap<u32, BoundaryCondition>) -> Result<Self> {
        let mut fixed = vec![None; space.n_dofs()];
        let dim = space.dim;
        // Free markers first so that constrained markers win at shared corners.
        let mut order: Vec<u32> = space.boundary_markers().collect();
        order.sort_by_key(|m| !matches!(conditions.get(m), Some(BoundaryCondition::Free)));
        for marker in order {
            let bc = conditions
                .get(&marker)
                .ok_or_else(|| Error::Config(format!("boundary marker {marker} has no registered condition")))?;
            for &(node, axis) in space.boundary_nodes(marker) {
                match bc {
                    BoundaryCondition::Free => {}
                    BoundaryCondition::Wall | BoundaryCondition::Symmetry => {
                        let axis = axis.ok_or_else(|| {
                            Error::Unsupported(format!("wall condition on non-axis-aligned boundary (marker {marker})"))
                        })?;
                        fixed[node * dim + axis] = Some(0.0);
                    }
                    BoundaryCondition::Prescribed(v) => {
                        for c in 0..dim {
                            fixed[node * dim + c] = Some(v[c]);
                        }
                    }
                }
            }
        }
        Ok(Self { fixed })
    }

    pub fn is_fixed(&self, dof: usize) -> bool {
        self.fixed[dof].is_some()
    }

    pub fn fixed_value(&self, dof: usize) -> Option<f64> {
        self.fixed[dof]
    }

    pub fn n_dofs(&self) -> usize {
        self.fixed.len()
    }

    pub fn n_free(&self) -> usize {
        self.fixed.iter().filter(|f| f.is_none()).count()
    }

    /// Global DOF -> free index map.
    pub fn free_index(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.fixed
            .iter()
            .map(|f| {
                if f.is_none() {
                    next += 1;
                    Some(next - 1)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Zero the constrained entries of a residual or update.
    pub fn zero_constrained(&self, v: &mut [f64]) {
        for (x, f) in v.iter_mut().zip(&self.fixed) {
            if f.is_some() {
                *x = 0.0;
            }
        }
    }

    /// Enforce the constrained values on a velocity vector.
    pub fn impose(&self, v: &mut [f64]) {
        for (x, f) in v.iter_mut().zip(&self.fixed) {
            if let Some(val) = f {
                *x = *val;
            }
        }
    }
}
