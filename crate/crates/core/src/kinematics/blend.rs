use nalgebra::{Quaternion, Translation3, UnitQuaternion};

use crate::{Error, Result, Vec3};

use super::Rigid;

/// Dual quaternion `real + ε·dual` encoding a rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualQuat {
    pub real: Quaternion<f64>,
    pub dual: Quaternion<f64>,
}

impl DualQuat {
    pub fn from_rigid(t: &Rigid) -> Self {
        let real = *t.rotation.quaternion();
        let tv = t.translation.vector;
        let dual = Quaternion::new(0.0, tv.x, tv.y, tv.z) * real * 0.5;
        DualQuat { real, dual }
    }

    /// Normalizes and converts back to a rigid transform. `None` when the
    /// real part vanishes.
    pub fn to_rigid(&self) -> Option<Rigid> {
        let n = self.real.norm();
        if n < 1e-300 || !n.is_finite() {
            return None;
        }
        let real = self.real / n;
        let dual = self.dual / n;
        let t = dual * real.conjugate() * 2.0;
        let rotation = UnitQuaternion::new_unchecked(real);
        Some(Rigid::from_parts(Translation3::new(t.i, t.j, t.k), rotation))
    }

    fn scaled(&self, w: f64) -> Self {
        DualQuat { real: self.real * w, dual: self.dual * w }
    }
}

/// Weighted dual-quaternion blend of rigid transforms.
///
/// Every quaternion is flipped into the hemisphere of the largest-weight
/// one before summation. One-hot weights return that transform unchanged;
/// for pure translations the result is the linear blend of translations.
pub fn blend_transforms(weights: &[f64], transforms: &[Rigid]) -> Result<Rigid> {
    if weights.len() != transforms.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} transforms",
            weights.len(),
            transforms.len()
        )));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::InvalidArgument("blend weights are all zero".into()));
    }
    let pivot = weights
        .iter()
        .enumerate()
        .fold(0, |best, (i, &w)| if w > weights[best] { i } else { best });

    // One-hot fast path keeps the endpoint bit-exact.
    if weights.iter().enumerate().all(|(i, &w)| i == pivot || w == 0.0) {
        return Ok(transforms[pivot]);
    }

    let pivot_q = *transforms[pivot].rotation.quaternion();
    let mut acc = DualQuat { real: Quaternion::new(0.0, 0.0, 0.0, 0.0), dual: Quaternion::new(0.0, 0.0, 0.0, 0.0) };
    for (&w, t) in weights.iter().zip(transforms) {
        if w == 0.0 {
            continue;
        }
        let mut dq = DualQuat::from_rigid(t);
        if dq.real.dot(&pivot_q) < 0.0 {
            dq = dq.scaled(-1.0);
        }
        let s = dq.scaled(w);
        acc.real += s.real;
        acc.dual += s.dual;
    }
    acc.to_rigid()
        .ok_or_else(|| Error::InvalidArgument("blended rotation is degenerate".into()))
}

/// Applies a rigid transform to a point.
pub(crate) fn apply(t: &Rigid, x: &Vec3) -> Vec3 {
    t.transform_point(&(*x).into()).coords
}
