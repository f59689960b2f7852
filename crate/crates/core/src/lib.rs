//! Physics-integrated motion transfer.
//!
//! A reference object's bone-motion sequence and blend-skinning decomposition
//! are mapped onto a target particle set through per-vertex feature
//! correspondence. The target is then animated with a differentiable MLS-MPM
//! simulation whose per-part velocity fields are optimized so that part
//! centroids follow the (size-compensated) reference bone displacements.
//!
//! Part labels are zero-based part indices throughout the library. File
//! formats store them one-based with `0` meaning "unassigned".

pub mod adjoint;
pub mod correspondence;
pub mod error;
pub mod io;
pub mod kinematics;
pub mod mpm;
pub mod neural;
pub mod pipeline;
pub mod synth;
pub mod transfer;

pub use error::{Error, Result};

/// 3-vector used for positions, velocities and displacements.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3×3 matrix used for deformation gradients, stresses and rotations.
pub type Mat3 = nalgebra::Matrix3<f64>;
