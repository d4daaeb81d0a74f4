//! Conforming meshes of the initial configuration.
//!
//! A mesh stores only the vertices of the straight-sided (affine or bilinear)
//! initial elements; higher-order geometry nodes are placed by the kinematic
//! space by interpolating the element map.
//!
//! Text format (whitespace separated, ASCII decimal):
//!
//! ```text
//! dim n_nodes n_elems
//! x [y]                # n_nodes lines
//! shape v0 v1 ...      # n_elems lines
//! marker v0 [v1]       # any number of boundary facet lines
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::reference::Shape;

/// Boundary markers used by [`build_cartesian_mesh`].
pub mod markers {
    pub const LEFT: u32 = 1;
    pub const RIGHT: u32 = 2;
    pub const BOTTOM: u32 = 3;
    pub const TOP: u32 = 4;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDomain {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl BoxDomain {
    pub fn new(lo: [f64; 2], hi: [f64; 2]) -> Self {
        Self { lo, hi }
    }

    pub fn interval(a: f64, b: f64) -> Self {
        Self {
            lo: [a, 0.0],
            hi: [b, 0.0],
        }
    }

    pub fn unit_square() -> Self {
        Self::new([0.0, 0.0], [1.0, 1.0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFacet {
    pub marker: u32,
    pub vertices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshData {
    pub dim: usize,
    pub shape: Shape,
    pub vertices: Vec<[f64; 2]>,
    /// Vertex lists, counter-clockwise for 2D elements.
    pub elements: Vec<Vec<usize>>,
    pub boundary: Vec<BoundaryFacet>,
}

impl MeshData {
    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Shortest edge of element `e` in the initial configuration.
    pub fn min_edge_length(&self, e: usize) -> f64 {
        let v = &self.elements[e];
        let n = v.len();
        let dist = |a: usize, b: usize| {
            let p = self.vertices[a];
            let q = self.vertices[b];
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
        };
        if self.shape == Shape::Segment {
            return dist(v[0], v[1]);
        }
        (0..n)
            .map(|i| dist(v[i], v[(i + 1) % n]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Centroid of the element's vertices.
    pub fn element_center(&self, e: usize) -> [f64; 2] {
        let v = &self.elements[e];
        let mut c = [0.0; 2];
        for &i in v {
            c[0] += self.vertices[i][0];
            c[1] += self.vertices[i][1];
        }
        [c[0] / v.len() as f64, c[1] / v.len() as f64]
    }

    /// Structural checks: vertex indices in range, element arity, positive
    /// orientation at the vertices, conforming facets.
    pub fn validate(&self) -> Result<()> {
        if self.dim != self.shape.dimension() {
            return Err(Error::InvalidArgument(format!(
                "dimension {} does not match shape {}",
                self.dim,
                self.shape.name()
            )));
        }
        let nv = self.shape.vertex_count();
        for (e, el) in self.elements.iter().enumerate() {
            if el.len() != nv {
                return Err(Error::InvalidArgument(format!(
                    "element {e} has {} vertices, expected {nv}",
                    el.len()
                )));
            }
            if let Some(&bad) = el.iter().find(|&&i| i >= self.vertices.len()) {
                return Err(Error::InvalidArgument(format!(
                    "element {e} references missing vertex {bad}"
                )));
            }
            if self.corner_orientation(e).iter().any(|&j| j <= 0.0) {
                return Err(Error::InvertedElement {
                    element: e,
                    point: 0,
                    jacobian: self.corner_orientation(e).into_iter().fold(f64::INFINITY, f64::min),
                });
            }
        }
        if self.dim == 2 {
            // Every interior edge is shared by exactly two elements with
            // opposite orientation.
            let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
            for el in &self.elements {
                for i in 0..el.len() {
                    let (a, b) = (el[i], el[(i + 1) % el.len()]);
                    *edges.entry((a, b)).or_default() += 1;
                }
            }
            for (&(a, b), &count) in &edges {
                if count > 1 || edges.get(&(b, a)).copied().unwrap_or(0) > 1 {
                    return Err(Error::InvalidArgument(format!(
                        "non-conforming edge ({a}, {b})"
                    )));
                }
            }
        }
        for f in &self.boundary {
            if f.vertices.iter().any(|&i| i >= self.vertices.len()) {
                return Err(Error::InvalidArgument(format!(
                    "boundary facet {:?} references a missing vertex",
                    f.vertices
                )));
            }
        }
        Ok(())
    }

    /// Signed corner Jacobians of element `e` (one per vertex).
    fn corner_orientation(&self, e: usize) -> Vec<f64> {
        let el = &self.elements[e];
        let p = |i: usize| self.vertices[el[i]];
        match self.shape {
            Shape::Segment => vec![p(1)[0] - p(0)[0]],
            _ => {
                let n = el.len();
                (0..n)
                    .map(|i| {
                        let a = p(i);
                        let b = p((i + 1) % n);
                        let c = p((i + n - 1) % n);
                        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
                    })
                    .collect()
            }
        }
    }

    /// Serialize in the text import format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {} {}", self.dim, self.vertices.len(), self.elements.len());
        for v in &self.vertices {
            if self.dim == 1 {
                let _ = writeln!(s, "{:?}", v[0]);
            } else {
                let _ = writeln!(s, "{:?} {:?}", v[0], v[1]);
            }
        }
        for el in &self.elements {
            let _ = write!(s, "{}", self.shape.name());
            for v in el {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        for f in &self.boundary {
            let _ = write!(s, "{}", f.marker);
            for v in &f.vertices {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        s
    }

    /// Parse the text import format.
    pub fn from_text(text: &str) -> Result<MeshData> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let parse_err = |line: usize, message: String| Error::Parse { line, message };

        let (hl, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty mesh file".into()))?;
        let h: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(hl, format!("bad header: {e}")))?;
        if h.len() != 3 {
            return Err(parse_err(hl, "header must be `dim n_nodes n_elems`".into()));
        }
        let (dim, nn, ne) = (h[0], h[1], h[2]);
        if dim != 1 && dim != 2 {
            return Err(parse_err(hl, format!("unsupported dimension {dim}")));
        }

        let mut vertices = Vec::with_capacity(nn);
        for _ in 0..nn {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| parse_err(hl, "missing node lines".into()))?;
            let c: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(ln, format!("bad coordinate: {e}")))?;
            if c.len() != dim {
                return Err(parse_err(ln, format!("expected {dim} coordinates")));
            }
            vertices.push([c[0], if dim == 2 { c[1] } else { 0.0 }]);
        }

        let mut shape = None;
        let mut elements = Vec::with_capacity(ne);
        for _ in 0..ne {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| parse_err(hl, "missing element lines".into()))?;
            let mut toks = l.split_whitespace();
            let s = Shape::parse(toks.next().unwrap_or(""))
                .map_err(|e| parse_err(ln, e.to_string()))?;
            if *shape.get_or_insert(s) != s {
                return Err(parse_err(ln, "mixed element shapes are not supported".into()));
            }
            let v: Vec<usize> = toks
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(ln, format!("bad vertex index: {e}")))?;
            if v.len() != s.vertex_count() {
                return Err(parse_err(ln, format!("{} needs {} vertices", s.name(), s.vertex_count())));
            }
            elements.push(v);
        }
        let shape = shape.ok_or_else(|| parse_err(hl, "mesh has no elements".into()))?;

        let mut boundary = Vec::new();
        for (ln, l) in lines {
            let t: Vec<usize> = l
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(ln, format!("bad boundary line: {e}")))?;
            if t.len() != dim + 1 {
                return Err(parse_err(ln, "boundary line must be `marker v0 [v1]`".into()));
            }
            boundary.push(BoundaryFacet {
                marker: t[0] as u32,
                vertices: t[1..].to_vec(),
            });
        }

        let mesh = MeshData {
            dim,
            shape,
            vertices,
            elements,
            boundary,
        };
        mesh.validate()?;
        Ok(mesh)
    }
}

/// Uniform Cartesian mesh of an axis-aligned box.
///
/// `shape = Segment` ignores `ny` and the y-extent. Triangles split every cell
/// along its lower-left to upper-right diagonal.
pub fn build_cartesian_mesh(nx: usize, ny: usize, domain: &BoxDomain, shape: Shape) -> Result<MeshData> {
    if nx == 0 || (shape != Shape::Segment && ny == 0) {
        return Err(Error::InvalidArgument(format!("cell counts must be positive (nx = {nx}, ny = {ny})")));
    }
    let [x0, y0] = domain.lo;
    let [x1, y1] = domain.hi;
    if !(x1 > x0) || (shape != Shape::Segment && !(y1 > y0)) {
        return Err(Error::InvalidArgument("degenerate domain box".into()));
    }
    let xs: Vec<f64> = (0..=nx).map(|i| x0 + (x1 - x0) * i as f64 / nx as f64).collect();

    if shape == Shape::Segment {
        return Ok(MeshData {
            dim: 1,
            shape,
            vertices: xs.iter().map(|&x| [x, 0.0]).collect(),
            elements: (0..nx).map(|i| vec![i, i + 1]).collect(),
            boundary: vec![
                BoundaryFacet { marker: markers::LEFT, vertices: vec![0] },
                BoundaryFacet { marker: markers::RIGHT, vertices: vec![nx] },
            ],
        });
    }

    let ys: Vec<f64> = (0..=ny).map(|j| y0 + (y1 - y0) * j as f64 / ny as f64).collect();
    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for &y in &ys {
        for &x in &xs {
            vertices.push([x, y]);
        }
    }
    let mut elements = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
            match shape {
                Shape::Quad => elements.push(vec![a, b, c, d]),
                Shape::Triangle => {
                    elements.push(vec![a, b, c]);
                    elements.push(vec![a, c, d]);
                }
                Shape::Segment => unreachable!(),
            }
        }
    }
    let mut boundary = Vec::new();
    for i in 0..nx {
        boundary.push(BoundaryFacet { marker: markers::BOTTOM, vertices: vec![vid(i, 0), vid(i + 1, 0)] });
        boundary.push(BoundaryFacet { marker: markers::TOP, vertices: vec![vid(i + 1, ny), vid(i, ny)] });
    }
    for j in 0..ny {
        boundary.push(BoundaryFacet { marker: markers::LEFT, vertices: vec![vid(0, j + 1), vid(0, j)] });
        boundary.push(BoundaryFacet { marker: markers::RIGHT, vertices: vec![vid(nx, j), vid(nx, j + 1)] });
    }
    Ok(MeshData {
        dim: 2,
        shape,
        vertices,
        elements,
        boundary,
    })
}
