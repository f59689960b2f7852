//! End-to-end driver: load inputs, map parts, build the simulation, run the
//! transfer and export frames.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::correspondence::{
    assign_particles, concat_features, match_parts, mean_part_features, remove_outliers, Aabb, FeatureSet,
    PartAssignment,
};
use crate::io::{
    export_frames, parse_bone_sequence, parse_point_cloud, read_features, write_field, CoverageMode, FrameManifest,
    PointCloud, RunConfig,
};
use crate::kinematics::{bone_deltas, part_labels, BoneSequence, SkinningModel};
use crate::mpm::{
    control_points, simulate, Boundary, ControlGroups, FaceCondition, GridSpec, MaterialParams, ParticleState, SimConfig,
};
use crate::neural::FieldConfig;
use crate::transfer::{ablation_manual_velocity, coverage_ratio, run_transfer, train_phase, TransferOptions, TransferRun, TransferScene};
use crate::{Error, Result, Vec3};

/// Process exit code for an error: 3 for numerical failures (divergence,
/// failed gradient check), 2 for everything else (bad data, config or I/O).
/// Usage errors (1) are the CLI's business.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged { .. } | Error::GradientMismatch { .. } => 3,
        _ => 2,
    }
}

/// Loaded pipeline inputs.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub particles: ParticleState,
    pub target: FeatureSet,
    pub reference: FeatureSet,
    pub sequence: BoneSequence,
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("missing inputs.{key}")))
}

/// Mean spacing of a particle set, from the particle volumes.
fn mean_spacing(particles: &ParticleState) -> f64 {
    particles.volume.iter().map(|v| v.cbrt()).sum::<f64>() / particles.len().max(1) as f64
}

impl Inputs {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let cloud = parse_point_cloud(required(&cfg.inputs.target, "target")?)?;
        let particles = particles_from_cloud(&cloud, cfg)?;
        let target = read_features(required(&cfg.inputs.target_features, "target_features")?, cfg.matching.diff_dims)?;
        let reference = read_features(required(&cfg.inputs.reference_features, "reference_features")?, cfg.matching.diff_dims)?;
        let sequence = parse_bone_sequence(required(&cfg.inputs.bones, "bones")?)?;
        Ok(Inputs { particles, target, reference, sequence })
    }
}

/// Particles from a cloud; without mass/volume every particle gets the
/// bounding-box volume split evenly and the configured density.
pub fn particles_from_cloud(cloud: &PointCloud, cfg: &RunConfig) -> Result<ParticleState> {
    if cloud.is_empty() {
        return Err(Error::InvalidArgument("target point cloud is empty".into()));
    }
    cloud.validate()?;
    let volume = match Aabb::around(&cloud.positions) {
        Some(b) => {
            let e = b.max - b.min;
            let longest = e.max();
            let vol: f64 = e.iter().map(|x| x.max(1e-3 * longest)).product();
            vol / cloud.len() as f64
        }
        None => 1.0,
    };
    cloud.to_state(cfg.sim.density, volume)
}

/// Part mapping results.
#[derive(Debug, Clone)]
pub struct PartMapping {
    /// Skinning-derived part of every reference vertex.
    pub reference_labels: Vec<usize>,
    /// Cleaned part of every target vertex.
    pub target: PartAssignment,
    /// Part of every particle; `None` outside every part box.
    pub particle_labels: Vec<Option<usize>>,
    pub unassigned_particles: usize,
}

/// Reference labels from skinning, feature matching, outlier removal and
/// particle assignment. Particles outside every part box stay unassigned:
/// they start at rest and only follow through elastic coupling.
pub fn map_parts(inputs: &Inputs, outlier_k: f64) -> Result<PartMapping> {
    let bones = inputs.sequence.canonical_bones.clone();
    let parts = bones.len();
    let model = SkinningModel::new(bones)?;
    let reference_labels = part_labels(&inputs.reference.vertices, &model)?;
    let means = mean_part_features(&concat_features(&inputs.reference)?, &reference_labels, parts)?;
    let matched = match_parts(&concat_features(&inputs.target)?, &means)?;
    let target = remove_outliers(&inputs.target.vertices, &matched, parts, outlier_k)?;
    if target.part_centroids.iter().all(Option::is_none) {
        return Err(Error::InvalidArgument("no target vertex could be matched to any part".into()));
    }
    let particle_labels = assign_particles(&inputs.particles.x, &target);
    let unassigned_particles = particle_labels.iter().filter(|l| l.is_none()).count();
    if unassigned_particles > 0 {
        log::warn!("{unassigned_particles} particles fell outside every part box and start at rest");
    }
    Ok(PartMapping { reference_labels, target, particle_labels, unassigned_particles })
}

/// Per-part `s_t/s_o` from each part's own bounding-box diagonal; parts
/// too small to measure fall back to `fallback`.
pub fn per_part_scales(inputs: &Inputs, mapping: &PartMapping, fallback: f64) -> Vec<f64> {
    let parts = inputs.sequence.bone_count();
    (0..parts)
        .map(|b| {
            let t: Vec<Vec3> = inputs.particles.x.iter().zip(&mapping.particle_labels).filter(|(_, l)| **l == Some(b)).map(|(x, _)| *x).collect();
            let r: Vec<Vec3> =
                inputs.reference.vertices.iter().zip(&mapping.reference_labels).filter(|(_, l)| **l == b).map(|(x, _)| *x).collect();
            match (coverage_ratio(&t), coverage_ratio(&r)) {
                (Ok(st), Ok(so)) => st / so,
                _ => fallback,
            }
        })
        .collect()
}

/// Simulation grid for a transfer: covers every part's initial box swept
/// along its cumulative (scaled) bone displacement, dilated, with cells
/// sized from the particle spacing (or from `sim.resolution` when set).
/// With a non-open floor the grid is shifted so the lowest particles sit on
/// the top of the floor band.
pub fn transfer_grid(
    particles: &ParticleState,
    labels: &[Option<usize>],
    sequence: &BoneSequence,
    part_scale: &[f64],
    phases: usize,
    cfg: &RunConfig,
) -> Result<GridSpec> {
    let parts = sequence.bone_count();
    let mut boxes: Vec<Option<Aabb>> = vec![None; parts];
    for (x, b) in particles.x.iter().zip(labels).filter_map(|(x, l)| l.map(|b| (x, b))) {
        let bx = boxes[b].get_or_insert(Aabb { min: *x, max: *x });
        bx.min = bx.min.inf(x);
        bx.max = bx.max.sup(x);
    }
    let (mut lo, mut hi) = particles.bounding_box().ok_or_else(|| Error::InvalidArgument("no particles".into()))?;
    let mut offset = vec![Vec3::zeros(); parts];
    for t in 0..phases {
        for (b, d) in bone_deltas(sequence, t)?.iter().enumerate() {
            offset[b] += d * part_scale[b];
            if let Some(bx) = boxes[b] {
                lo = lo.inf(&(bx.min + offset[b]));
                hi = hi.sup(&(bx.max + offset[b]));
            }
        }
    }
    grid_around(lo, hi, particles, cfg)
}

/// Grid over `[lo, hi]` dilated by `sim.dilation`, shifted onto the floor
/// band when the floor is not open.
fn grid_around(lo: Vec3, hi: Vec3, particles: &ParticleState, cfg: &RunConfig) -> Result<GridSpec> {
    let s = &cfg.sim;
    let extent = hi - lo;
    let pad = extent * (0.5 * s.dilation);
    let (lo, hi) = (lo - pad, hi + pad);
    let dx = match s.resolution {
        Some(r) => (hi - lo).max() / r as f64,
        None => s.cell_spacing_ratio * mean_spacing(particles),
    };
    let mut spec = GridSpec::fit_cell_size(lo, hi, dx, s.boundary_margin)?;
    if s.boundary[2] != FaceCondition::Open {
        let ground = particles.x.iter().map(|x| x.y).fold(f64::INFINITY, f64::min);
        let top = spec.origin.y + (spec.dims[1] - 1) as f64 * dx;
        spec.origin.y = ground - s.boundary_margin as f64 * dx;
        spec.dims[1] = (((top - spec.origin.y) / dx).ceil() as usize + 1).max(3);
    }
    Ok(spec)
}

fn sim_config(grid: GridSpec, frame_dt: f64, cfg: &RunConfig) -> Result<SimConfig> {
    let n = cfg.sim.substeps;
    let mut sim = SimConfig::new(grid, frame_dt / n as f64);
    sim.substeps = n;
    sim.gravity = Vec3::from(cfg.sim.gravity);
    sim.material = MaterialParams::new(cfg.sim.youngs, cfg.sim.poisson)?;
    sim.boundary = Boundary { faces: cfg.sim.boundary, margin: cfg.sim.boundary_margin };
    sim.parallel = !cfg.deterministic;
    Ok(sim)
}

/// Plain forward simulation: `frames` frames of `sim.substeps` substeps each,
/// on a grid around the initial particles. Returns the initial state plus
/// one state per frame.
pub fn simulate_frames(particles: &ParticleState, frames: usize, frame_dt: f64, cfg: &RunConfig) -> Result<Vec<ParticleState>> {
    cfg.validate()?;
    let (lo, hi) = particles.bounding_box().ok_or_else(|| Error::InvalidArgument("no particles".into()))?;
    let sim = sim_config(grid_around(lo, hi, particles, cfg)?, frame_dt, cfg)?;
    let mut out = vec![particles.clone()];
    for _ in 0..frames {
        let next = simulate(out.last().expect("initial state"), &sim, sim.substeps)?;
        out.push(next);
    }
    Ok(out)
}

/// Jittered `side³` elastic blob with random velocities in an open 16³ box,
/// material from `cfg`, for adjoint-vs-finite-difference checks.
pub fn gradcheck_scene(side: usize, substeps: usize, cfg: &RunConfig) -> Result<(ParticleState, SimConfig)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spacing = 0.05;
    let center = Vec3::repeat(0.8);
    let half = (side as f64 - 1.0) * 0.5;
    let mut x = Vec::with_capacity(side.pow(3));
    for i in 0..side {
        for j in 0..side {
            for k in 0..side {
                let jitter = Vec3::from_fn(|_, _| rng.random_range(-0.2..0.2));
                x.push(center + (Vec3::new(i as f64, j as f64, k as f64) - Vec3::repeat(half) + jitter) * spacing);
            }
        }
    }
    let mut particles = ParticleState::uniform(x, cfg.sim.density, spacing.powi(3))?;
    for v in particles.v.iter_mut() {
        *v = Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5));
    }
    let mut sim = SimConfig::new(GridSpec::new(Vec3::zeros(), 0.1, [16; 3])?, 1e-3);
    sim.substeps = substeps;
    sim.gravity = Vec3::zeros();
    sim.boundary = Boundary::open();
    sim.material = MaterialParams::new(cfg.sim.youngs, cfg.sim.poisson)?;
    sim.parallel = !cfg.deterministic;
    Ok((particles, sim))
}

/// Transfer scene plus the mapping it was built from.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scene: TransferScene,
    pub mapping: PartMapping,
    pub phases: usize,
}

/// Maps parts and assembles the transfer scene described by `cfg`.
pub fn prepare(inputs: &Inputs, cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let mapping = map_parts(inputs, cfg.matching.outlier_k)?;
    let s_t = coverage_ratio(&inputs.particles.x)?;
    let s_o = coverage_ratio(&inputs.reference.vertices)?;
    let part_scale = match cfg.matching.coverage {
        CoverageMode::Object => vec![s_t / s_o; inputs.sequence.bone_count()],
        CoverageMode::PerPart => per_part_scales(inputs, &mapping, s_t / s_o),
    };
    let available = inputs.sequence.frame_count() - 1;
    let phases = cfg.optimizer.phases.unwrap_or(available);
    if phases > available {
        return Err(Error::Config(format!("optimizer.phases = {phases} but the sequence only has {available}")));
    }
    let grid = transfer_grid(&inputs.particles, &mapping.particle_labels, &inputs.sequence, &part_scale, phases, cfg)?;
    let mut sim = sim_config(grid, inputs.sequence.frame_dt, cfg)?;
    if let Some(r) = cfg.sim.control_resolution {
        let (_, assignment) = control_points(&inputs.particles.x, r)?;
        sim.sharing = Some(ControlGroups::new(assignment));
    }
    log::info!(
        "grid {:?} cells of {:.4}, dt {:.3e}, {} particles, s_t {:.4}, s_o {:.4}",
        grid.dims,
        grid.cell_size,
        sim.dt,
        inputs.particles.len(),
        s_t,
        s_o
    );
    let o = &cfg.optimizer;
    let options = TransferOptions {
        iters: o.iters,
        lr: o.lr,
        tv_weight: o.tv_weight,
        field: FieldConfig {
            resolution: o.field_resolution,
            channels: o.field_channels,
            hidden: o.field_hidden,
            ..Default::default()
        },
        seed: cfg.seed,
    };
    let labels = mapping.particle_labels.clone();
    let mut scene = TransferScene::new(inputs.particles.clone(), labels, inputs.sequence.clone(), s_t, s_o, sim, options)?;
    scene.part_scale = part_scale;
    scene.validate()?;
    Ok(Prepared { scene, mapping, phases })
}

/// Exported frames as point clouds labeled with the particle parts.
pub fn frame_clouds(run: &TransferRun, labels: &[Option<usize>]) -> Vec<PointCloud> {
    run.frames.iter().map(|f| PointCloud::from_positions(f.x.clone()).with_labels(labels.to_vec())).collect()
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub run: TransferRun,
    pub manifest: FrameManifest,
    pub out_dir: PathBuf,
}

/// Loads the inputs, runs the transfer and writes frames (plus the final
/// field parameters) to the output directory.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    let inputs = Inputs::load(cfg)?;
    let mut prepared = prepare(&inputs, cfg)?;
    let run = run_transfer(&mut prepared.scene, prepared.phases)?;
    let out_dir = cfg.output.out_dir.clone();
    let manifest =
        export_frames(&frame_clouds(&run, &prepared.scene.labels), inputs.sequence.frame_dt, &out_dir, cfg.output.format)?;
    for (b, field) in prepared.scene.fields.iter().enumerate() {
        if let Some(f) = field {
            write_field(out_dir.join(format!("field_{b:02}.bin")), f)?;
        }
    }
    Ok(PipelineOutput { run, manifest, out_dir })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub phase: usize,
    pub optimized_error: f64,
    /// `(alpha, terminal error)` per manual run.
    pub manual: Vec<(f64, f64)>,
}

impl AblationReport {
    pub fn best_manual(&self) -> Option<(f64, f64)> {
        self.manual.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Optimized phase versus manually scaled bone velocities on the same
/// start state (the phase's start is reached by optimizing the earlier
/// phases).
pub fn run_ablation(inputs: &Inputs, cfg: &RunConfig) -> Result<AblationReport> {
    let mut prepared = prepare(inputs, cfg)?;
    let phase = cfg.ablation.phase;
    if phase >= prepared.scene.phase_count() {
        return Err(Error::Config(format!("ablation.phase {phase} is past the last phase")));
    }
    let mut start = prepared.scene.particles.clone();
    for t in 0..phase {
        start = train_phase(&mut prepared.scene, &start, t)?.state;
    }
    let manual = cfg
        .ablation
        .alphas
        .iter()
        .map(|&a| Ok((a, ablation_manual_velocity(&prepared.scene, &start, phase, a)?.terminal_error())))
        .collect::<Result<Vec<_>>>()?;
    let optimized_error = train_phase(&mut prepared.scene, &start, phase)?.terminal_error();
    Ok(AblationReport { phase, optimized_error, manual })
}
