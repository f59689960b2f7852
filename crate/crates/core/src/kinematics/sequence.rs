use crate::{Error, Result, Vec3};

use super::blend::apply;
use super::{Bone, Rigid};

/// Pose of the whole skeleton at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneFrame {
    /// Body-to-world transform for the entire structure.
    pub global: Rigid,
    /// Per-bone transform from canonical to posed, in the body frame.
    pub joints: Vec<Rigid>,
}

impl BoneFrame {
    pub fn identity(bones: usize) -> Self {
        BoneFrame { global: Rigid::identity(), joints: vec![Rigid::identity(); bones] }
    }
}

/// Canonical bones plus a per-frame pose track.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneSequence {
    pub canonical_bones: Vec<Bone>,
    pub frames: Vec<BoneFrame>,
    /// Seconds per frame.
    pub frame_dt: f64,
}

impl BoneSequence {
    pub fn new(canonical_bones: Vec<Bone>, frames: Vec<BoneFrame>, frame_dt: f64) -> Result<Self> {
        let seq = BoneSequence { canonical_bones, frames, frame_dt };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.canonical_bones.is_empty() {
            return Err(Error::InvalidArgument("bone sequence has no bones".into()));
        }
        for (i, b) in self.canonical_bones.iter().enumerate() {
            b.validate(i)?;
        }
        if self.frames.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "bone sequence needs at least 2 frames, got {}",
                self.frames.len()
            )));
        }
        if !(self.frame_dt > 0.0 && self.frame_dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("frame_dt must be positive, got {}", self.frame_dt)));
        }
        let b = self.canonical_bones.len();
        for (t, f) in self.frames.iter().enumerate() {
            if f.joints.len() != b {
                return Err(Error::Shape(format!(
                    "frame {t} has {} joint transforms, expected {b}",
                    f.joints.len()
                )));
            }
        }
        Ok(())
    }

    pub fn bone_count(&self) -> usize {
        self.canonical_bones.len()
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

/// Bone centers at frame `t` in the body frame (global transform excluded).
pub fn posed_centers(seq: &BoneSequence, t: usize) -> Result<Vec<Vec3>> {
    let frame = seq
        .frames
        .get(t)
        .ok_or(Error::FrameOutOfRange { index: t, frames: seq.frames.len() })?;
    Ok(seq
        .canonical_bones
        .iter()
        .zip(&frame.joints)
        .map(|(b, j)| apply(j, &b.center))
        .collect())
}

/// Per-bone center displacement between frames `t` and `t + 1`.
pub fn bone_deltas(seq: &BoneSequence, t: usize) -> Result<Vec<Vec3>> {
    if t + 1 >= seq.frames.len() {
        return Err(Error::FrameOutOfRange { index: t, frames: seq.frames.len() });
    }
    let a = posed_centers(seq, t)?;
    let b = posed_centers(seq, t + 1)?;
    Ok(b.iter().zip(&a).map(|(b, a)| b - a).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Rotation3, Translation3, UnitQuaternion, Vector3};

    fn bones() -> Vec<Bone> {
        vec![
            Bone::axis_aligned(Vec3::new(0.0, 0.0, 0.0), Vec3::repeat(0.5)).unwrap(),
            Bone::axis_aligned(Vec3::new(0.0, 1.0, 0.0), Vec3::repeat(0.5)).unwrap(),
        ]
    }

    #[test]
    fn static_sequence_has_zero_deltas() {
        let seq = BoneSequence::new(bones(), vec![BoneFrame::identity(2); 3], 0.1).unwrap();
        for t in 0..2 {
            assert!(bone_deltas(&seq, t).unwrap().iter().all(|d| d.norm() == 0.0));
        }
    }

    #[test]
    fn uniform_translation() {
        let frames = (0..4)
            .map(|t| {
                let j = Rigid::from_parts(Translation3::new(0.1 * t as f64, 0.0, 0.0), UnitQuaternion::identity());
                BoneFrame { global: Rigid::identity(), joints: vec![j; 2] }
            })
            .collect();
        let seq = BoneSequence::new(bones(), frames, 0.1).unwrap();
        for d in bone_deltas(&seq, 2).unwrap() {
            assert_relative_eq!(d, Vec3::new(0.1, 0.0, 0.0), epsilon = 1e-15);
        }
    }

    #[test]
    fn hinge_rotation_matches_rotated_center() {
        // bone 1 rotates about the x axis through the origin
        let angle = 0.4_f64;
        let frames = vec![
            BoneFrame::identity(2),
            BoneFrame {
                global: Rigid::identity(),
                joints: vec![
                    Rigid::identity(),
                    Rigid::from_parts(Translation3::identity(), UnitQuaternion::from_axis_angle(&Vector3::x_axis(), angle)),
                ],
            },
        ];
        let seq = BoneSequence::new(bones(), frames, 0.1).unwrap();
        let d = bone_deltas(&seq, 0).unwrap();
        let rotated = Rotation3::from_axis_angle(&Vector3::x_axis(), angle) * Vec3::new(0.0, 1.0, 0.0);
        assert_eq!(d[0], Vec3::zeros());
        assert_relative_eq!(d[1], rotated - Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(d[1], Vec3::new(0.0, angle.cos() - 1.0, angle.sin()), epsilon = 1e-15);
    }

    #[test]
    fn global_transform_is_excluded() {
        let mut frames = vec![BoneFrame::identity(2); 2];
        frames[1].global = Rigid::translation(5.0, 0.0, 0.0);
        let seq = BoneSequence::new(bones(), frames, 0.1).unwrap();
        assert!(bone_deltas(&seq, 0).unwrap().iter().all(|d| d.norm() == 0.0));
    }

    #[test]
    fn out_of_range() {
        let seq = BoneSequence::new(bones(), vec![BoneFrame::identity(2); 2], 0.1).unwrap();
        assert!(matches!(bone_deltas(&seq, 1), Err(Error::FrameOutOfRange { .. })));
    }

    #[test]
    fn validation() {
        assert!(BoneSequence::new(bones(), vec![BoneFrame::identity(2)], 0.1).is_err());
        assert!(BoneSequence::new(bones(), vec![BoneFrame::identity(2); 2], 0.0).is_err());
        assert!(BoneSequence::new(bones(), vec![BoneFrame::identity(2), BoneFrame::identity(3)], 0.1).is_err());
    }
}
