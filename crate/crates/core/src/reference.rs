//! Reference elements.
//!
//! All reference domains are unit-sized: the segment `[0,1]`, the square
//! `[0,1]²` and the unit simplex `{x, y ≥ 0, x + y ≤ 1}`. One-dimensional
//! data is embedded in two-component storage with the second coordinate zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Segment,
    Quad,
    Triangle,
}

impl Shape {
    pub fn dimension(self) -> usize {
        match self {
            Shape::Segment => 1,
            Shape::Quad | Shape::Triangle => 2,
        }
    }

    /// Measure of the reference domain.
    pub fn measure(self) -> f64 {
        match self {
            Shape::Segment | Shape::Quad => 1.0,
            Shape::Triangle => 0.5,
        }
    }

    pub fn vertex_count(self) -> usize {
        match self {
            Shape::Segment => 2,
            Shape::Quad => 4,
            Shape::Triangle => 3,
        }
    }

    pub fn reference_vertices(self) -> &'static [[f64; 2]] {
        match self {
            Shape::Segment => &[[0.0, 0.0], [1.0, 0.0]],
            Shape::Quad => &[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            Shape::Triangle => &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        }
    }

    /// True when `p` lies in the closed reference domain (with slack `tol`).
    pub fn contains(self, p: [f64; 2], tol: f64) -> bool {
        let [x, y] = p;
        match self {
            Shape::Segment => x >= -tol && x <= 1.0 + tol && y.abs() <= tol,
            Shape::Quad => x >= -tol && x <= 1.0 + tol && y >= -tol && y <= 1.0 + tol,
            Shape::Triangle => x >= -tol && y >= -tol && x + y <= 1.0 + tol,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Segment => "segment",
            Shape::Quad => "quad",
            Shape::Triangle => "triangle",
        }
    }

    pub fn parse(s: &str) -> Result<Shape> {
        match s.to_ascii_lowercase().as_str() {
            "segment" | "seg" | "line" => Ok(Shape::Segment),
            "quad" | "quadrilateral" | "square" => Ok(Shape::Quad),
            "triangle" | "tri" => Ok(Shape::Triangle),
            other => Err(Error::InvalidArgument(format!("unknown element shape '{other}'"))),
        }
    }
}

/// A reference element: its shape and spatial dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceElement {
    pub shape: Shape,
    pub dimension: usize,
}

impl ReferenceElement {
    pub fn new(shape: Shape) -> Self {
        Self {
            shape,
            dimension: shape.dimension(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions_match_shapes() {
        for s in [Shape::Segment, Shape::Quad, Shape::Triangle] {
            let r = ReferenceElement::new(s);
            assert_eq!(r.dimension, s.dimension());
            assert_eq!(s.reference_vertices().len(), s.vertex_count());
        }
        assert_eq!(Shape::Triangle.measure(), 0.5);
    }

    #[test]
    fn containment() {
        assert!(Shape::Triangle.contains([0.3, 0.3], 0.0));
        assert!(!Shape::Triangle.contains([0.6, 0.6], 0.0));
        assert!(Shape::Quad.contains([1.0, 0.0], 0.0));
        assert!(!Shape::Segment.contains([0.5, 0.1], 1e-12));
    }

    #[test]
    fn parse_names() {
        assert_eq!(Shape::parse("Quad").unwrap(), Shape::Quad);
        assert!(Shape::parse("hex").is_err());
    }
}
