//! Multirate dG(0) time stepping for two interface-coupled subproblems.
//!
//! Each subproblem advances on its own micro partition of a shared macro
//! time mesh; every macro step is solved monolithically. Modules:
//!
//! - [`timegrid`]: two-rate meshes, refinement, endpoint/average operators
//! - [`ode`]: coupled ODE systems solved by damped Picard iteration
//! - [`linalg`]: CSR matrices, LU solves, coercivity check
//! - [`spacefem`]: structured meshes, Lagrange spaces, projections, norms
//! - [`transient`]: monolithic macro-step assembly and marching
//! - [`heat`], [`stokes`]: Nitsche-coupled transient solvers
//! - [`study`]: error measurement, refinement schedules, rate tables, CSV

pub mod heat;
pub mod linalg;
pub mod ode;
pub mod spacefem;
pub mod stokes;
pub mod study;
pub mod timegrid;
pub mod transient;
