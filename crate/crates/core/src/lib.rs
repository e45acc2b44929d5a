//! Numerical laboratory for state-constrained optimal control of the
//! continuity equation `∂ₜm + div(αm) = 0`.
//!
//! Densities live on uniform grids and are transported along RK4
//! characteristics; admissible controls come from a finite atlas of analytic
//! velocity fields with certified norm bounds. On top of that the crate
//! provides the weighted constraint `⟨p, m⟩ ≤ δ` with `p = dist(·, Ω)`, the
//! pushback correction of violating trajectories, exhaustive dynamic
//! programming for the constrained value function, Hamiltonian and HJB
//! residual checks, and McShane extensions.

pub mod constraint;
pub mod correction;
pub mod density;
pub mod dpp;
pub mod error;
pub mod fields;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod hamiltonian;
pub mod io;
pub mod jet;
pub mod linalg;
pub mod mcshane;
pub mod schedule;
pub mod spectral;
pub mod transport;

pub use density::{GridDensity, NormReport, Profile, QuarticBump};
pub use error::{Error, Result};
pub use fields::{Cutoff, VectorField};
pub use flow::{FlowConfig, FlowResult};
pub use geometry::{Aabb, Ball, ConvexBody, Polytope};
pub use grid::Grid;
pub use schedule::{ControlSchedule, Segment};
pub use transport::Transport;
