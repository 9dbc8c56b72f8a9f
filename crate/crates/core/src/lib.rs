//! Adaptive bilinear finite elements on quadtree meshes with hanging nodes of
//! arbitrary level, an H(div)-conforming flux recovery on the polygonal view
//! of the mesh, and the recovery-based error estimator built on it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod afem;
pub mod benchmarks;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod fem;
pub mod flux;
pub mod io;
pub mod mesh;
pub mod quadrature;
pub mod sparse;
pub mod verify;

pub use error::{Error, Result};
