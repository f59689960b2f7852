//! Bone sequences as TOML.
//!
//! ```toml
//! bone_count = 1
//! frame_dt = 0.041666
//!
//! [[bones]]
//! center = [0.0, 0.5, 0.0]
//! rotation = [1.0, 0.0, 0.0, 0.0]   # unit quaternion, w first
//! scales = [0.1, 0.5, 0.1]
//!
//! [[frames]]
//! global = { rotation = [1.0, 0.0, 0.0, 0.0], translation = [0.0, 0.0, 0.0] }
//! joints = [{ rotation = [1.0, 0.0, 0.0, 0.0], translation = [0.0, 0.0, 0.0] }]
//! ```

use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::kinematics::{Bone, BoneFrame, BoneSequence, Rigid};
use crate::{Error, Result, Vec3};

/// Quaternions further than this from unit norm are rejected, not renormalized.
pub const QUATERNION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoneDoc {
    center: [f64; 3],
    rotation: [f64; 4],
    scales: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformDoc {
    rotation: [f64; 4],
    translation: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameDoc {
    global: TransformDoc,
    joints: Vec<TransformDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceDoc {
    bone_count: usize,
    frame_dt: f64,
    bones: Vec<BoneDoc>,
    frames: Vec<FrameDoc>,
}

fn unit_quaternion(q: [f64; 4], at: &str, path: &Path) -> Result<UnitQuaternion<f64>> {
    let q = Quaternion::new(q[0], q[1], q[2], q[3]);
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > QUATERNION_TOLERANCE {
        return Err(Error::parse(path, format!("{at}: quaternion norm {n} is not within {QUATERNION_TOLERANCE} of 1")));
    }
    Ok(UnitQuaternion::new_normalize(q))
}

fn quaternion_doc(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

fn transform(doc: &TransformDoc, at: &str, path: &Path) -> Result<Rigid> {
    let r = unit_quaternion(doc.rotation, &format!("{at}.rotation"), path)?;
    Ok(Rigid::from_parts(Translation3::new(doc.translation[0], doc.translation[1], doc.translation[2]), r))
}

fn transform_doc(t: &Rigid) -> TransformDoc {
    TransformDoc { rotation: quaternion_doc(&t.rotation), translation: t.translation.vector.into() }
}

pub fn decode_bone_sequence(text: &str, path: &Path) -> Result<BoneSequence> {
    let doc: SequenceDoc = toml::from_str(text).map_err(|e| Error::parse(path, e.to_string()))?;
    if doc.bones.len() != doc.bone_count {
        return Err(Error::parse(path, format!("bone_count is {} but {} bones are listed", doc.bone_count, doc.bones.len())));
    }
    let bones = doc
        .bones
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let r = unit_quaternion(b.rotation, &format!("bones[{i}].rotation"), path)?;
            let bone = Bone { center: Vec3::from(b.center), orientation: r.to_rotation_matrix(), scales: Vec3::from(b.scales) };
            bone.validate(i).map_err(|e| Error::parse(path, format!("bones[{i}]: {e}")))?;
            Ok(bone)
        })
        .collect::<Result<Vec<_>>>()?;
    let frames = doc
        .frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            if f.joints.len() != doc.bone_count {
                return Err(Error::parse(path, format!("frames[{t}] has {} joints, expected {}", f.joints.len(), doc.bone_count)));
            }
            Ok(BoneFrame {
                global: transform(&f.global, &format!("frames[{t}].global"), path)?,
                joints: f
                    .joints
                    .iter()
                    .enumerate()
                    .map(|(b, j)| transform(j, &format!("frames[{t}].joints[{b}]"), path))
                    .collect::<Result<_>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    BoneSequence::new(bones, frames, doc.frame_dt).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn encode_bone_sequence(seq: &BoneSequence) -> Result<String> {
    seq.validate()?;
    let doc = SequenceDoc {
        bone_count: seq.bone_count(),
        frame_dt: seq.frame_dt,
        bones: seq
            .canonical_bones
            .iter()
            .map(|b| BoneDoc {
                center: b.center.into(),
                rotation: quaternion_doc(&UnitQuaternion::from_rotation_matrix(&b.orientation)),
                scales: b.scales.into(),
            })
            .collect(),
        frames: seq
            .frames
            .iter()
            .map(|f| FrameDoc { global: transform_doc(&f.global), joints: f.joints.iter().map(transform_doc).collect() })
            .collect(),
    };
    toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))
}

pub fn parse_bone_sequence(path: impl AsRef<Path>) -> Result<BoneSequence> {
    let path = path.as_ref();
    decode_bone_sequence(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?, path)
}

pub fn write_bone_sequence(path: impl AsRef<Path>, seq: &BoneSequence) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_bone_sequence(seq)?).map_err(|e| Error::io(path, e))
}
