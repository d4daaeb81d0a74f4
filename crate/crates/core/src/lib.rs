//! High-order variational Lagrangian finite elements for compressible
//! ideal gases.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cases;
pub mod driver;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod quadrature;
pub mod reference;
pub mod space;
pub mod thermo;
pub mod hydro;
pub mod integrator;
pub mod isothermal;
pub mod newton;
pub mod oracles;
pub mod step;

pub use error::{Error, Result};
pub use linalg::{Mat2, Vec2};
pub use mesh::{build_cartesian_mesh, BoxDomain, MeshData};
pub use reference::Shape;
pub use space::{BoundaryCondition, Constraints, GeometryEval, KinematicSpace, QuadField};
