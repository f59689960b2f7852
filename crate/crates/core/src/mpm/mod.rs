//! Forward MLS-MPM with fixed-corotated elasticity.
//!
//! A substep evaluates the Kirchhoff stress per particle, scatters mass and
//! momentum (with the fused stress impulse `−dt·(4/dx²)·V⁰·τ·(xᵢ − xₚ)`) to a
//! background grid with the quadratic B-spline kernel, converts momentum to
//! velocity, applies gravity and boundary conditions, and gathers velocity
//! and the affine matrix back to particles before advecting them.

mod control;
mod grid;
mod kernel;
mod material;
mod state;
mod step;

pub use control::{control_points, ControlGroups};
pub use grid::{Boundary, FaceCondition, GridSpec, SimGrid};
pub use kernel::Kernel;
pub use material::{kirchhoff_stress, lame_parameters, MaterialParams, StressEval};
pub use state::{bounding_box, ParticleState};
pub use step::{g2p_advect, grid_update, p2g, simulate, simulate_recorded, step, SimConfig, Simulator};

pub(crate) use step::{evaluate_stress, for_stencil, particle_kernel};
