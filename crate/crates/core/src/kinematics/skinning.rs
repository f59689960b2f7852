use std::fmt;
use std::sync::Arc;

use crate::{Error, Result, Vec3};

use super::blend::{apply, blend_transforms};
use super::{Bone, BoneFrame, Rigid};

/// Learned per-point correction added to the skinning logits.
pub trait LogitCorrection: Send + Sync {
    /// Returns one logit offset per bone.
    fn logits(&self, x: &Vec3, bones: usize) -> Vec<f64>;
}

/// Canonical bones plus an optional logit correction (zero when absent).
#[derive(Clone)]
pub struct SkinningModel {
    pub bones: Vec<Bone>,
    pub correction: Option<Arc<dyn LogitCorrection>>,
}

impl fmt::Debug for SkinningModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SkinningModel")
            .field("bones", &self.bones)
            .field("correction", &self.correction.is_some())
            .finish()
    }
}

impl SkinningModel {
    pub fn new(bones: Vec<Bone>) -> Result<Self> {
        if bones.is_empty() {
            return Err(Error::InvalidArgument("skinning model needs at least one bone".into()));
        }
        for (i, b) in bones.iter().enumerate() {
            b.validate(i)?;
        }
        Ok(SkinningModel { bones, correction: None })
    }

    pub fn with_correction(mut self, correction: Arc<dyn LogitCorrection>) -> Self {
        self.correction = Some(correction);
        self
    }

    fn logits(&self, x: &Vec3, bones: &[Bone]) -> Vec<f64> {
        let mut logits: Vec<f64> = bones.iter().map(|b| -b.mahalanobis(x)).collect();
        if let Some(c) = &self.correction {
            for (l, d) in logits.iter_mut().zip(c.logits(x, bones.len())) {
                *l += d;
            }
        }
        logits
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Skinning weights `softmax(−d_M(x, bones) + W_Δ(x))`; bones are posed by
/// the frame's joint transforms when `pose` is given.
pub fn skinning_weights(x: &Vec3, model: &SkinningModel, pose: Option<&BoneFrame>) -> Result<Vec<f64>> {
    for (i, b) in model.bones.iter().enumerate() {
        b.validate(i)?;
    }
    let logits = match pose {
        None => model.logits(x, &model.bones),
        Some(frame) => {
            check_frame(model, frame)?;
            let posed: Vec<Bone> = model
                .bones
                .iter()
                .zip(&frame.joints)
                .map(|(b, j)| b.transformed(j))
                .collect();
            model.logits(x, &posed)
        }
    };
    Ok(softmax(&logits))
}

fn check_frame(model: &SkinningModel, frame: &BoneFrame) -> Result<()> {
    if frame.joints.len() != model.bones.len() {
        return Err(Error::Shape(format!(
            "frame has {} joints, model has {} bones",
            frame.joints.len(),
            model.bones.len()
        )));
    }
    Ok(())
}

/// Canonical → posed world point: `G · J→(x*) · x*`.
pub fn forward_warp(x_canonical: &Vec3, model: &SkinningModel, frame: &BoneFrame) -> Result<Vec3> {
    check_frame(model, frame)?;
    let w = skinning_weights(x_canonical, model, None)?;
    let joint = blend_transforms(&w, &frame.joints)?;
    Ok(apply(&frame.global, &apply(&joint, x_canonical)))
}

/// World → canonical point: `J←(y) · y` with `y = G⁻¹ x`, where the backward
/// weights are evaluated at `y` against the posed bones.
pub fn backward_warp(x_world: &Vec3, model: &SkinningModel, frame: &BoneFrame) -> Result<Vec3> {
    check_frame(model, frame)?;
    let y = apply(&frame.global.inverse(), x_world);
    let w = skinning_weights(&y, model, Some(frame))?;
    let inverses: Vec<Rigid> = frame.joints.iter().map(|j| j.inverse()).collect();
    let joint = blend_transforms(&w, &inverses)?;
    Ok(apply(&joint, &y))
}

/// Argmax part label (zero-based) for every point; ties go to the lowest index.
pub fn part_labels(points: &[Vec3], model: &SkinningModel) -> Result<Vec<usize>> {
    points
        .iter()
        .map(|x| {
            let w = skinning_weights(x, model, None)?;
            Ok(argmax(&w))
        })
        .collect()
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
