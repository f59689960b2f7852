use nalgebra::Rotation3;

use crate::{Error, Mat3, Result, Vec3};

use super::Rigid;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Gaussian-shaped bone: covariance `R diag(s²) Rᵀ` centered at `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bone {
    pub center: Vec3,
    pub orientation: Rotation3<f64>,
    pub scales: Vec3,
}

impl Bone {
    /// Builds a bone from a raw orientation matrix, checking orthonormality
    /// and positive scales.
    pub fn new(center: Vec3, orientation: Mat3, scales: Vec3) -> Result<Self> {
        let err = (orientation.transpose() * orientation - Mat3::identity()).norm();
        if err > ORTHONORMAL_TOL || orientation.determinant() <= 0.0 {
            return Err(Error::InvalidBone {
                index: 0,
                reason: format!("orientation is not a proper rotation (‖RᵀR − I‖ = {err:e})"),
            });
        }
        let bone = Bone {
            center,
            orientation: Rotation3::from_matrix_unchecked(orientation),
            scales,
        };
        bone.validate(0)?;
        Ok(bone)
    }

    /// Axis-aligned bone with identity orientation.
    pub fn axis_aligned(center: Vec3, scales: Vec3) -> Result<Self> {
        Self::new(center, Mat3::identity(), scales)
    }

    pub(crate) fn validate(&self, index: usize) -> Result<()> {
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidBone { index, reason: "non-finite center".into() });
        }
        if !self.scales.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidBone {
                index,
                reason: format!("scales must be strictly positive, got {:?}", self.scales.as_slice()),
            });
        }
        Ok(())
    }

    /// The bone carried by a rigid transform (center and orientation move,
    /// scales are unchanged).
    pub fn transformed(&self, t: &Rigid) -> Bone {
        Bone {
            center: t.transform_point(&self.center.into()).coords,
            orientation: t.rotation.to_rotation_matrix() * self.orientation,
            scales: self.scales,
        }
    }

    /// Squared Mahalanobis distance of `x` to this bone.
    pub fn mahalanobis(&self, x: &Vec3) -> f64 {
        let local = self.orientation.inverse() * (x - self.center);
        local.component_div(&self.scales).norm_squared()
    }
}

/// Squared Mahalanobis distance from `x` to every bone.
pub fn mahalanobis_distances(x: &Vec3, bones: &[Bone]) -> Result<Vec<f64>> {
    if bones.is_empty() {
        return Err(Error::InvalidArgument("bone list is empty".into()));
    }
    bones
        .iter()
        .enumerate()
        .map(|(i, b)| {
            b.validate(i)?;
            Ok(b.mahalanobis(x))
        })
        .collect()
}
