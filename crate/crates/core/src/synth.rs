//! Seeded synthetic scenes: a translating box, a two-part hinge (a lid
//! opening on a base slab) and an 11-bone walking stick figure.
//!
//! Every scene is built from axis-aligned particle lattices (one per part)
//! resting on `y = 0`. The reference shape is the unscaled lattice; the
//! target is the same shape scaled about the origin by `target_scale`.
//! Per-vertex features are a one-hot code of the true part plus Gaussian
//! noise.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Translation3, UnitQuaternion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::correspondence::{synthetic_features, FeatureSet};
use crate::io::{write_bone_sequence, write_features, write_point_cloud, PointCloud, RunConfig};
use crate::kinematics::{Bone, BoneFrame, BoneSequence, Rigid};
use crate::mpm::ParticleState;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    Box,
    TwoBoxHinge,
    BipedStick,
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(SceneKind::Box),
            "two-box-hinge" => Ok(SceneKind::TwoBoxHinge),
            "biped-stick" => Ok(SceneKind::BipedStick),
            other => Err(Error::InvalidArgument(format!(
                "unknown scene '{other}' (expected box, two-box-hinge or biped-stick)"
            ))),
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SceneKind::Box => "box",
            SceneKind::TwoBoxHinge => "two-box-hinge",
            SceneKind::BipedStick => "biped-stick",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    /// Lattice spacing of the reference shape.
    pub spacing: f64,
    /// Particles per axis (box scene only).
    pub n: usize,
    pub target_scale: f64,
    /// Number of reference frames (phases + 1).
    pub frames: usize,
    pub frame_dt: f64,
    pub density: f64,
    pub feature_noise: f64,
    pub diff_dims: usize,
    pub geo_dims: usize,
    /// Box: bone translation per frame.
    pub box_delta: Vec3,
    /// Hinge: total lid rotation over the sequence, degrees.
    pub hinge_angle_deg: f64,
    /// Stick figure: limb swing amplitude, degrees.
    pub swing_deg: f64,
    /// Stick figure: global forward translation per frame.
    pub stride: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 0,
            spacing: 0.04,
            n: 8,
            target_scale: 1.0,
            frames: 2,
            frame_dt: 1.0 / 24.0,
            density: 1000.0,
            feature_noise: 0.05,
            diff_dims: 16,
            geo_dims: 4,
            box_delta: Vec3::new(0.1, 0.0, 0.0),
            hinge_angle_deg: 30.0,
            swing_deg: 20.0,
            stride: 0.05,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.spacing > 0.0
            && self.n >= 2
            && self.target_scale > 0.0
            && self.frames >= 2
            && self.frame_dt > 0.0
            && self.density > 0.0
            && self.feature_noise >= 0.0
            && self.diff_dims > 0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid synthetic scene parameters: {self:?}")));
        }
        Ok(())
    }
}

/// A generated scene: target particles, reference motion and both
/// feature sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub kind: SceneKind,
    /// Target particles (scaled by `target_scale`).
    pub particles: ParticleState,
    /// True part of every target particle.
    pub particle_parts: Vec<usize>,
    pub sequence: BoneSequence,
    /// Reference vertices (unscaled) with features.
    pub reference: FeatureSet,
    pub reference_parts: Vec<usize>,
    /// Target vertices (the particle positions) with features.
    pub target: FeatureSet,
}

/// Axis-aligned block of particles at cell centers.
struct Block {
    min: Vec3,
    counts: [usize; 3],
    part: usize,
}

impl Block {
    /// Block covering `[min, max]` with roughly `h`-spaced samples.
    fn covering(min: Vec3, max: Vec3, h: f64, part: usize) -> Self {
        let counts = [0, 1, 2].map(|a| (((max[a] - min[a]) / h).round() as usize).max(1));
        Block { min, counts, part }
    }

    fn points(&self, h: f64) -> impl Iterator<Item = Vec3> + '_ {
        let [nx, ny, nz] = self.counts;
        (0..nx).flat_map(move |i| {
            (0..ny).flat_map(move |j| {
                (0..nz).map(move |k| self.min + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * h)
            })
        })
    }

    fn extent(&self, h: f64) -> Vec3 {
        Vec3::new(self.counts[0] as f64, self.counts[1] as f64, self.counts[2] as f64) * h
    }

    fn bone(&self, h: f64) -> Result<Bone> {
        let half = self.extent(h) * 0.5;
        Bone::axis_aligned(self.min + half, half)
    }
}

/// Rotation by `angle` about the axis through `pivot` along `axis`.
fn rotation_about(pivot: Vec3, axis: Vec3, angle: f64) -> Rigid {
    let r = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
    Rigid::from_parts(Translation3::from(pivot - r * pivot), r)
}

fn translation(t: Vec3) -> Rigid {
    Rigid::from_parts(Translation3::from(t), UnitQuaternion::identity())
}

struct Layout {
    blocks: Vec<Block>,
    frames: Vec<BoneFrame>,
}

fn box_layout(p: &SynthParams) -> Layout {
    let h = p.spacing;
    let side = p.n as f64 * h;
    let block = Block { min: Vec3::new(-0.5 * side, 0.0, -0.5 * side), counts: [p.n; 3], part: 0 };
    let frames = (0..p.frames)
        .map(|k| BoneFrame { global: Rigid::identity(), joints: vec![translation(p.box_delta * k as f64)] })
        .collect();
    Layout { blocks: vec![block], frames }
}

/// Hinge axis (along x) of the two-box-hinge scene, at the back top edge of
/// the base.
pub fn hinge_pivot(spacing: f64) -> Vec3 {
    let base = hinge_blocks(spacing).0;
    Vec3::new(0.0, base.min.y + base.extent(spacing).y, base.min.z)
}

fn hinge_blocks(h: f64) -> (Block, Block) {
    let base = Block::covering(Vec3::new(-0.5, 0.0, -0.36), Vec3::new(0.5, 0.08, 0.36), h, 0);
    let top = base.extent(h).y;
    let lid = Block::covering(Vec3::new(-0.5, top, -0.36), Vec3::new(0.5, top + 0.6, -0.28), h, 1);
    (base, lid)
}

fn hinge_layout(p: &SynthParams) -> Layout {
    let (base, lid) = hinge_blocks(p.spacing);
    let pivot = hinge_pivot(p.spacing);
    let total = p.hinge_angle_deg.to_radians();
    let frames = (0..p.frames)
        .map(|k| {
            // negative angle about +x tilts the lid backwards (towards −z)
            let angle = -total * k as f64 / (p.frames - 1) as f64;
            BoneFrame { global: Rigid::identity(), joints: vec![Rigid::identity(), rotation_about(pivot, Vec3::x(), angle)] }
        })
        .collect();
    Layout { blocks: vec![base, lid], frames }
}

/// Part indices of the stick figure.
pub mod biped {
    pub const PELVIS: usize = 0;
    pub const TORSO: usize = 1;
    pub const HEAD: usize = 2;
    pub const UPPER_ARM_L: usize = 3;
    pub const LOWER_ARM_L: usize = 4;
    pub const UPPER_ARM_R: usize = 5;
    pub const LOWER_ARM_R: usize = 6;
    pub const UPPER_LEG_L: usize = 7;
    pub const LOWER_LEG_L: usize = 8;
    pub const UPPER_LEG_R: usize = 9;
    pub const LOWER_LEG_R: usize = 10;
    pub const BONES: usize = 11;
}

fn biped_layout(p: &SynthParams) -> Layout {
    use biped::*;
    let h = p.spacing;
    let v = Vec3::new;
    let mut blocks = vec![
        Block::covering(v(-0.15, 0.84, -0.1), v(0.15, 0.99, 0.1), h, PELVIS),
        Block::covering(v(-0.18, 0.99, -0.1), v(0.18, 1.49, 0.1), h, TORSO),
        Block::covering(v(-0.1, 1.49, -0.1), v(0.1, 1.71, 0.1), h, HEAD),
    ];
    for (side, upper_arm, lower_arm, upper_leg, lower_leg) in
        [(1.0f64, UPPER_ARM_L, LOWER_ARM_L, UPPER_LEG_L, LOWER_LEG_L), (-1.0, UPPER_ARM_R, LOWER_ARM_R, UPPER_LEG_R, LOWER_LEG_R)]
    {
        let arm = |lo: f64, hi: f64, part| {
            let (a, b): (f64, f64) = (side * 0.18, side * 0.28);
            Block::covering(v(a.min(b), lo, -0.05), v(a.max(b), hi, 0.05), h, part)
        };
        let leg = |lo: f64, hi: f64, part| {
            let (a, b): (f64, f64) = (side * 0.03, side * 0.15);
            Block::covering(v(a.min(b), lo, -0.06), v(a.max(b), hi, 0.06), h, part)
        };
        blocks.push(arm(1.14, 1.44, upper_arm));
        blocks.push(arm(0.84, 1.14, lower_arm));
        blocks.push(leg(0.42, 0.84, upper_leg));
        blocks.push(leg(0.0, 0.42, lower_leg));
    }
    blocks.sort_by_key(|b| b.part);
    let swing = p.swing_deg.to_radians();
    let frames = (0..p.frames)
        .map(|k| {
            let phi = swing * (2.0 * PI * k as f64 / (p.frames - 1) as f64).sin();
            let mut joints = vec![Rigid::identity(); BONES];
            for (side, upper_arm, lower_arm, upper_leg, lower_leg) in
                [(1.0f64, UPPER_ARM_L, LOWER_ARM_L, UPPER_LEG_L, LOWER_LEG_L), (-1.0, UPPER_ARM_R, LOWER_ARM_R, UPPER_LEG_R, LOWER_LEG_R)]
            {
                let leg = rotation_about(v(side * 0.09, 0.84, 0.0), Vec3::x(), side * phi);
                let arm = rotation_about(v(side * 0.23, 1.44, 0.0), Vec3::x(), -side * phi);
                joints[upper_leg] = leg;
                joints[lower_leg] = leg;
                joints[upper_arm] = arm;
                joints[lower_arm] = arm;
            }
            BoneFrame { global: translation(v(0.0, 0.0, p.stride * k as f64)), joints }
        })
        .collect();
    Layout { blocks, frames }
}

/// Generates a scene; identical parameters give bit-identical output.
pub fn synth_scene(kind: SceneKind, params: &SynthParams) -> Result<SynthScene> {
    params.validate()?;
    let layout = match kind {
        SceneKind::Box => box_layout(params),
        SceneKind::TwoBoxHinge => hinge_layout(params),
        SceneKind::BipedStick => biped_layout(params),
    };
    let h = params.spacing;
    let bones = layout.blocks.iter().map(|b| b.bone(h)).collect::<Result<_>>()?;
    let sequence = BoneSequence::new(bones, layout.frames, params.frame_dt)?;

    let mut ref_x = Vec::new();
    let mut parts = Vec::new();
    for b in &layout.blocks {
        for x in b.points(h) {
            ref_x.push(x);
            parts.push(b.part);
        }
    }
    let s = params.target_scale;
    let target_x: Vec<Vec3> = ref_x.iter().map(|x| x * s).collect();
    let particles = ParticleState::uniform(target_x.clone(), params.density, (h * s).powi(3))?;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (rd, rg) = synthetic_features(&parts, params.diff_dims, params.geo_dims, params.feature_noise, &mut rng);
    let (td, tg) = synthetic_features(&parts, params.diff_dims, params.geo_dims, params.feature_noise, &mut rng);
    Ok(SynthScene {
        kind,
        particles,
        particle_parts: parts.clone(),
        sequence,
        reference: FeatureSet::new(ref_x, rd, rg)?,
        reference_parts: parts,
        target: FeatureSet::new(target_x, td, tg)?,
    })
}

/// File names written by [`write_scene`].
pub const TARGET_FILE: &str = "target.bin";
pub const TARGET_FEATURES_FILE: &str = "target_features.bin";
pub const REFERENCE_FEATURES_FILE: &str = "reference_features.bin";
pub const BONES_FILE: &str = "bones.toml";
pub const CONFIG_FILE: &str = "run.toml";

/// Writes the scene's input files and a run config pointing at them;
/// returns the config path.
pub fn write_scene(scene: &SynthScene, dir: impl AsRef<Path>, config: &RunConfig) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_point_cloud(dir.join(TARGET_FILE), &PointCloud::from_state(&scene.particles))?;
    write_features(dir.join(TARGET_FEATURES_FILE), &scene.target)?;
    write_features(dir.join(REFERENCE_FEATURES_FILE), &scene.reference)?;
    write_bone_sequence(dir.join(BONES_FILE), &scene.sequence)?;
    let mut cfg = config.clone();
    cfg.inputs.target = Some(TARGET_FILE.into());
    cfg.inputs.target_features = Some(TARGET_FEATURES_FILE.into());
    cfg.inputs.reference_features = Some(REFERENCE_FEATURES_FILE.into());
    cfg.inputs.bones = Some(BONES_FILE.into());
    cfg.matching.diff_dims = Some(scene.reference.diff_features.ncols());
    let path = dir.join(CONFIG_FILE);
    std::fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{bone_deltas, part_labels, SkinningModel};
    use approx::assert_relative_eq;

    #[test]
    fn box_lattice_count() {
        let s = synth_scene(SceneKind::Box, &SynthParams { n: 8, ..Default::default() }).unwrap();
        assert_eq!(s.particles.len(), 512);
        assert_eq!(s.sequence.bone_count(), 1);
        assert_relative_eq!(bone_deltas(&s.sequence, 0).unwrap()[0], Vec3::new(0.1, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn same_seed_same_scene() {
        for kind in [SceneKind::Box, SceneKind::TwoBoxHinge, SceneKind::BipedStick] {
            let p = SynthParams { seed: 9, frames: 4, ..Default::default() };
            assert_eq!(synth_scene(kind, &p).unwrap(), synth_scene(kind, &p).unwrap());
            let other = synth_scene(kind, &SynthParams { seed: 10, ..p.clone() }).unwrap();
            assert_ne!(other.target.diff_features, synth_scene(kind, &p).unwrap().target.diff_features);
        }
    }

    #[test]
    fn hinge_lid_delta_is_rotated_center() {
        let p = SynthParams { frames: 6, ..Default::default() };
        let s = synth_scene(SceneKind::TwoBoxHinge, &p).unwrap();
        assert_eq!(s.sequence.bone_count(), 2);
        let pivot = hinge_pivot(p.spacing);
        let c = s.sequence.canonical_bones[1].center;
        let step = (30f64 / 5.0).to_radians();
        let at = |k: f64| {
            let r = c - pivot;
            let a = -step * k;
            pivot + Vec3::new(r.x, r.y * a.cos() - r.z * a.sin(), r.y * a.sin() + r.z * a.cos())
        };
        for t in 0..5 {
            let d = bone_deltas(&s.sequence, t).unwrap();
            assert_eq!(d[0], Vec3::zeros());
            assert_relative_eq!(d[1], at(t as f64 + 1.0) - at(t as f64), epsilon = 1e-12);
        }
    }

    #[test]
    fn skinning_recovers_true_parts() {
        for kind in [SceneKind::Box, SceneKind::TwoBoxHinge, SceneKind::BipedStick] {
            let s = synth_scene(kind, &SynthParams::default()).unwrap();
            let model = SkinningModel::new(s.sequence.canonical_bones.clone()).unwrap();
            let labels = part_labels(&s.reference.vertices, &model).unwrap();
            let agree = labels.iter().zip(&s.reference_parts).filter(|(a, b)| a == b).count();
            assert!(agree as f64 >= 0.97 * labels.len() as f64, "{kind}: {agree}/{}", labels.len());
        }
    }

    #[test]
    fn biped_has_eleven_bones_and_target_is_scaled() {
        let s = synth_scene(SceneKind::BipedStick, &SynthParams { target_scale: 2.0, frames: 5, ..Default::default() }).unwrap();
        assert_eq!(s.sequence.bone_count(), biped::BONES);
        assert!((0..biped::BONES).all(|b| s.particle_parts.contains(&b)));
        assert_relative_eq!(s.target.vertices[7], s.reference.vertices[7] * 2.0);
        assert_eq!(s.sequence.frames[4].global.translation.vector, Vec3::new(0.0, 0.0, 0.2));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("two-box-hinge".parse::<SceneKind>().unwrap(), SceneKind::TwoBoxHinge);
        assert_eq!(SceneKind::BipedStick.to_string(), "biped-stick");
        assert!("laptop".parse::<SceneKind>().is_err());
    }
}
