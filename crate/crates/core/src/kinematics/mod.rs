//! Blend-skinning kinematic model.
//!
//! Bones are anisotropic Gaussians (center, orientation, per-axis scale).
//! Skinning weights are a softmax over negated Mahalanobis distances plus an
//! optional learned logit correction; warps blend the per-bone rigid
//! transforms with dual quaternions.

mod blend;
mod bone;
mod sequence;
mod skinning;

pub use blend::{blend_transforms, DualQuat};
pub use bone::{mahalanobis_distances, Bone};
pub use sequence::{bone_deltas, posed_centers, BoneFrame, BoneSequence};
pub use skinning::{
    backward_warp, forward_warp, part_labels, skinning_weights, LogitCorrection, SkinningModel,
};

/// Rigid transform (rotation + translation).
pub type Rigid = nalgebra::Isometry3<f64>;
