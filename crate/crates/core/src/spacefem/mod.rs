//! Spatial discretization: structured two-subdomain meshes, continuous
//! Lagrange spaces, operator assembly, projections and norms.

pub mod mesh;
pub mod norms;
pub mod ops;
pub mod projection;
pub mod quadrature;
pub mod space;

use thiserror::Error;

use crate::linalg::LinalgError;

pub use mesh::{
    build_coupled_mesh_1d, build_two_pipe_mesh, BoundaryTag, CoupledMesh, Side, SubdomainMesh,
};
pub use norms::{norm, NormKind};
pub use projection::{l2_projection, ritz_projection, stokes_ritz_projection};
pub use space::{FEFunction, LagrangeSpace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("mesh size error: {0}")]
    MeshSizeError(String),
    #[error("invalid space: {0}")]
    InvalidSpace(String),
    #[error("unknown norm kind `{0}`")]
    UnknownNorm(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}
