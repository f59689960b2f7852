//! Motion transfer: bone-driven velocity initialization, per-phase
//! optimization of delta-velocity fields against the centroid displacement
//! loss, and assembly of the output animation.
//!
//! A phase is the motion between two consecutive reference frames. Every
//! part starts from the uniform velocity that would carry it along its
//! bone's displacement in `N` substeps; a per-part triplane field adds a
//! per-particle correction that is trained through the differentiable
//! simulator so that each part's mass centroid ends where the scaled
//! reference bone went.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adjoint::AdjointTape;
use crate::correspondence::{Aabb, BOX_DILATION};
use crate::kinematics::{bone_deltas, BoneSequence, Rigid};
use crate::mpm::{simulate, ParticleState, SimConfig};
use crate::neural::{FieldConfig, TriplaneField};
use crate::{Error, Mat3, Result, Vec3};

/// Velocity that covers `bone_delta` in `n` substeps of length `dt`.
pub fn init_velocity(bone_delta: &Vec3, n: usize, dt: f64) -> Result<Vec3> {
    if n == 0 || !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("need n ≥ 1 and dt > 0, got n = {n}, dt = {dt}")));
    }
    Ok(bone_delta / (n as f64 * dt))
}

/// Mass-weighted centroid displacement of each part between two states.
/// Parts without particles get a zero row.
pub fn part_displacement(
    before: &ParticleState,
    after: &ParticleState,
    labels: &[Option<usize>],
    parts: usize,
) -> Result<Vec<Vec3>> {
    if before.len() != after.len() || labels.len() != before.len() {
        return Err(Error::Shape(format!(
            "states have {} and {} particles, labels {}",
            before.len(),
            after.len(),
            labels.len()
        )));
    }
    let mut sums = vec![(Vec3::zeros(), 0.0); parts];
    for (p, l) in labels.iter().enumerate() {
        let Some(b) = *l else { continue };
        if b >= parts {
            return Err(Error::InvalidArgument(format!("label {b} out of range for {parts} parts")));
        }
        let m = before.mass[p];
        sums[b].0 += (after.x[p] - before.x[p]) * m;
        sums[b].1 += m;
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(b, (s, m))| {
            if m > 0.0 {
                s / m
            } else {
                log::warn!("part {b} has no particles; displacement set to zero");
                Vec3::zeros()
            }
        })
        .collect())
}

/// `Σ_b ‖δ_b − (s_t/s_o)·δ̂_b‖₁`.
pub fn displacement_loss(achieved: &[Vec3], reference: &[Vec3], s_t: f64, s_o: f64) -> Result<f64> {
    if achieved.len() != reference.len() {
        return Err(Error::Shape(format!("{} achieved rows, {} reference rows", achieved.len(), reference.len())));
    }
    if !(s_t > 0.0 && s_o > 0.0) {
        return Err(Error::InvalidArgument(format!("coverage ratios must be positive, got {s_t} and {s_o}")));
    }
    let k = s_t / s_o;
    Ok(achieved.iter().zip(reference).map(|(a, r)| (a - r * k).abs().sum()).sum())
}

/// Bounding-box diagonal of a point set.
pub fn coverage_ratio(positions: &[Vec3]) -> Result<f64> {
    if positions.len() < 2 {
        return Err(Error::InvalidArgument(format!("coverage needs ≥ 2 points, got {}", positions.len())));
    }
    let b = Aabb::around(positions).expect("non-empty");
    let d = b.diagonal();
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::InvalidArgument(format!("degenerate point cloud (diagonal {d})")));
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOptions {
    pub iters: usize,
    pub lr: f64,
    pub tv_weight: f64,
    pub field: FieldConfig,
    /// Seeds the field initialization.
    pub seed: u64,
}

impl Default for TransferOptions {
    fn default() -> Self {
        TransferOptions { iters: 200, lr: 1e-2, tv_weight: 1e-3, field: FieldConfig::default(), seed: 0 }
    }
}

/// Everything one transfer run needs.
#[derive(Debug, Clone)]
pub struct TransferScene {
    /// Target particles at frame 0.
    pub particles: ParticleState,
    /// Part of every particle; unlabeled particles start at rest and do not
    /// enter the loss.
    pub labels: Vec<Option<usize>>,
    pub reference: BoneSequence,
    pub s_t: f64,
    pub s_o: f64,
    /// Per-part multiplier on the reference displacement inside the loss;
    /// `s_t/s_o` for every part unless overridden.
    pub part_scale: Vec<f64>,
    pub config: SimConfig,
    /// One field per part; `None` for parts without particles.
    pub fields: Vec<Option<TriplaneField>>,
    pub options: TransferOptions,
}

/// Outcome of one optimized (or ablated) phase.
#[derive(Debug, Clone)]
pub struct PhaseResult {
    pub phase: usize,
    /// Achieved centroid displacement per part, at the best iterate.
    pub displacement: Vec<Vec3>,
    /// Scaled reference displacement per part.
    pub target: Vec<Vec3>,
    /// Total loss (displacement + weighted TV) per iteration.
    pub loss_history: Vec<f64>,
    pub best_iter: usize,
    /// Displacement loss of the best iterate.
    pub best_loss: f64,
    /// Simulated end state of the best iterate.
    pub state: ParticleState,
}

impl PhaseResult {
    /// Euclidean norm of the displacement error over all parts.
    pub fn terminal_error(&self) -> f64 {
        self.displacement.iter().zip(&self.target).map(|(a, t)| (a - t).norm_squared()).sum::<f64>().sqrt()
    }
}

/// Simulated and exported frames of a transfer run.
#[derive(Debug, Clone)]
pub struct TransferRun {
    /// Simulated state at the start of every phase plus the final one.
    pub simulated: Vec<ParticleState>,
    /// `simulated` with the scaled global transform applied.
    pub frames: Vec<ParticleState>,
    pub phases: Vec<PhaseResult>,
}

fn part_members(labels: &[Option<usize>], parts: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); parts];
    for (p, l) in labels.iter().enumerate() {
        if let Some(b) = l {
            members[*b].push(p);
        }
    }
    members
}

/// Normalization box of a part: its dilated bounding box, at least one
/// cell wide on every axis.
fn part_domain(points: impl IntoIterator<Item = Vec3>, min_extent: f64) -> Option<Aabb> {
    let pts: Vec<Vec3> = points.into_iter().collect();
    let b = Aabb::around(&pts)?;
    let b = if (b.max - b.min).max() > 0.0 { b.dilated(BOX_DILATION) } else { b };
    let pad = (b.max - b.min).map(|e| 0.5 * (min_extent - e).max(0.0));
    Some(Aabb { min: b.min - pad, max: b.max + pad })
}

impl TransferScene {
    /// Builds a scene with freshly initialized fields (zero output, see
    /// [`TriplaneField::new`]).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        particles: ParticleState,
        labels: Vec<Option<usize>>,
        reference: BoneSequence,
        s_t: f64,
        s_o: f64,
        config: SimConfig,
        options: TransferOptions,
    ) -> Result<Self> {
        let parts = reference.bone_count();
        let mut scene = TransferScene {
            particles,
            labels,
            reference,
            s_t,
            s_o,
            part_scale: vec![s_t / s_o; parts],
            config,
            fields: Vec::new(),
            options,
        };
        scene.validate_inputs()?;
        let mut rng = ChaCha8Rng::seed_from_u64(scene.options.seed);
        let dx = scene.config.grid.cell_size;
        for members in part_members(&scene.labels, parts) {
            let field = match part_domain(members.iter().map(|&p| scene.particles.x[p]), dx) {
                Some(domain) => Some(TriplaneField::new(scene.options.field, domain, &mut rng)?),
                None => None,
            };
            scene.fields.push(field);
        }
        Ok(scene)
    }

    fn validate_inputs(&self) -> Result<()> {
        self.particles.validate()?;
        self.reference.validate()?;
        self.config.validate()?;
        if self.labels.len() != self.particles.len() {
            return Err(Error::Shape(format!("{} labels for {} particles", self.labels.len(), self.particles.len())));
        }
        let parts = self.parts();
        if let Some(b) = self.labels.iter().flatten().find(|&&b| b >= parts) {
            return Err(Error::InvalidArgument(format!("label {b} but the reference has {parts} bones")));
        }
        if !(self.s_t > 0.0 && self.s_o > 0.0 && self.s_t.is_finite() && self.s_o.is_finite()) {
            return Err(Error::InvalidArgument(format!("coverage ratios must be positive, got {} and {}", self.s_t, self.s_o)));
        }
        if self.part_scale.len() != parts || !self.part_scale.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument("part_scale needs one positive entry per part".into()));
        }
        if !(self.options.lr > 0.0) || !(self.options.tv_weight >= 0.0) {
            return Err(Error::InvalidArgument("optimizer needs lr > 0 and tv_weight ≥ 0".into()));
        }
        Ok(())
    }

    /// Checks that every populated part has a field.
    pub fn validate(&self) -> Result<()> {
        self.validate_inputs()?;
        if self.fields.len() != self.parts() {
            return Err(Error::Shape(format!("{} fields for {} parts", self.fields.len(), self.parts())));
        }
        for (b, members) in part_members(&self.labels, self.parts()).iter().enumerate() {
            if !members.is_empty() && self.fields[b].is_none() {
                return Err(Error::InvalidArgument(format!("part {b} has particles but no field")));
            }
        }
        Ok(())
    }

    pub fn parts(&self) -> usize {
        self.reference.bone_count()
    }

    /// Number of phases the reference supports.
    pub fn phase_count(&self) -> usize {
        self.reference.frame_count() - 1
    }

    /// Reference bone displacements `δ̂` of phase `t` and the scaled loss
    /// targets.
    pub fn phase_targets(&self, t: usize) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
        let deltas = bone_deltas(&self.reference, t)?;
        let targets = deltas.iter().zip(&self.part_scale).map(|(d, s)| d * *s).collect();
        Ok((deltas, targets))
    }

    /// Per-particle bone-driven velocities `α·δ̂/(N·dt)` (no field, no sharing).
    pub fn base_velocities(&self, t: usize, alpha: f64) -> Result<Vec<Vec3>> {
        let (deltas, _) = self.phase_targets(t)?;
        let v0 = deltas
            .iter()
            .map(|d| init_velocity(d, self.config.substeps, self.config.dt).map(|v| v * alpha))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.labels.iter().map(|l| l.map_or(Vec3::zeros(), |b| v0[b])).collect())
    }

    /// Initial velocities of phase `t` from `start`: bone velocity plus
    /// field correction, before control-point sharing.
    pub fn initial_velocities(&self, start: &ParticleState, t: usize) -> Result<Vec<Vec3>> {
        let mut v = self.base_velocities(t, 1.0)?;
        for (p, l) in self.labels.iter().enumerate() {
            if let Some(field) = l.and_then(|b| self.fields[b].as_ref()) {
                v[p] += field.query(&start.x[p])?;
            }
        }
        Ok(v)
    }

    fn phase_start(&self, start: &ParticleState, v: Vec<Vec3>) -> ParticleState {
        let mut s = start.clone();
        s.v = v;
        if let Some(groups) = &self.config.sharing {
            groups.share(&mut s.v);
        }
        s.c = vec![Mat3::zeros(); s.len()];
        s
    }

    /// Relative global transform of frame `t` (w.r.t. frame 0) with its
    /// translation scaled by `s_t/s_o`.
    pub fn scaled_global(&self, t: usize) -> Result<Rigid> {
        let frames = &self.reference.frames;
        let g = frames.get(t).ok_or(Error::FrameOutOfRange { index: t, frames: frames.len() })?;
        let mut rel = g.global * frames[0].global.inverse();
        rel.translation.vector *= self.s_t / self.s_o;
        Ok(rel)
    }
}

/// Sign-preserving L1 subgradient (zero at zero).
fn l1_grad(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-parameter adaptive step without momentum: an exponential average of
/// squared gradients (bias-corrected) scales every coordinate.
#[derive(Debug, Clone)]
struct AdaptiveStep {
    sq: Vec<f64>,
    steps: i32,
}

const DECAY: f64 = 0.99;
const EPS: f64 = 1e-8;

impl AdaptiveStep {
    fn new(n: usize) -> Self {
        AdaptiveStep { sq: vec![0.0; n], steps: 0 }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.steps += 1;
        let correction = 1.0 - DECAY.powi(self.steps);
        for ((p, g), s) in params.iter_mut().zip(grad).zip(self.sq.iter_mut()) {
            *s = DECAY * *s + (1.0 - DECAY) * g * g;
            let denom = (*s / correction).sqrt() + EPS;
            *p -= lr * g / denom;
        }
    }
}

fn diverged(t: usize, iter: usize, loss: f64, state: Option<&ParticleState>, cause: &str) -> Error {
    if let Some(s) = state {
        let (lo, hi) = s.bounding_box().unwrap_or_default();
        log::error!(
            "phase {t} iteration {iter} diverged ({cause}): loss = {loss}, max speed = {:.6e}, bbox = [{:?}, {:?}]",
            s.max_speed(),
            lo.as_slice(),
            hi.as_slice()
        );
    } else {
        log::error!("phase {t} iteration {iter} diverged ({cause}): loss = {loss}");
    }
    Error::Diverged { phase: t, iter, loss }
}

/// Optimizes the fields for phase `t`, starting from `start`. The fields
/// are updated in place (warm start for the next phase); the returned state
/// is the end state of the iterate with the lowest displacement loss.
pub fn train_phase(scene: &mut TransferScene, start: &ParticleState, t: usize) -> Result<PhaseResult> {
    scene.validate()?;
    if start.len() != scene.particles.len() {
        return Err(Error::Shape(format!("start state has {} particles, scene {}", start.len(), scene.particles.len())));
    }
    let parts = scene.parts();
    let members = part_members(&scene.labels, parts);
    let (_, targets) = scene.phase_targets(t)?;
    let dx = scene.config.grid.cell_size;
    for (b, field) in scene.fields.iter_mut().enumerate() {
        if let (Some(field), Some(domain)) = (field.as_mut(), part_domain(members[b].iter().map(|&p| start.x[p]), dx)) {
            field.set_domain(domain)?;
        }
    }
    let part_mass: Vec<f64> = members.iter().map(|m| m.iter().map(|&p| start.mass[p]).sum()).collect();
    let mut optimizers: Vec<Option<AdaptiveStep>> =
        scene.fields.iter().map(|f| f.as_ref().map(|f| AdaptiveStep::new(f.params().len()))).collect();
    let n = scene.config.substeps;
    let opts = scene.options.clone();

    let mut history = Vec::with_capacity(opts.iters);
    let mut best: Option<(f64, usize, Vec<Vec3>, ParticleState)> = None;
    for iter in 0..opts.iters.max(1) {
        let v = scene.initial_velocities(start, t)?;
        let init = scene.phase_start(start, v);
        let tape = match AdjointTape::record(&init, &scene.config, n) {
            Ok(tape) => tape,
            Err(e @ (Error::OutOfBounds { .. } | Error::InvalidDeformation { .. })) => {
                return Err(diverged(t, iter, f64::NAN, Some(&init), &e.to_string()));
            }
            Err(e) => return Err(e),
        };
        let end = tape.final_state();
        let achieved = part_displacement(&init, end, &scene.labels, parts)?;
        let disp_loss: f64 = achieved.iter().zip(&targets).map(|(a, r)| (a - r).abs().sum()).sum();
        let mut tv = 0.0;
        let mut tv_grads = Vec::with_capacity(parts);
        for field in &scene.fields {
            tv_grads.push(field.as_ref().map(|f| {
                let (l, g) = f.tv_loss();
                tv += l;
                g
            }));
        }
        let loss = disp_loss + opts.tv_weight * tv;
        log::info!("phase={t} iter={iter} loss={loss:.6e} tv={tv:.6e}");
        history.push(loss);
        if !loss.is_finite() {
            return Err(diverged(t, iter, loss, Some(end), "non-finite loss"));
        }
        if best.as_ref().is_none_or(|(l, ..)| disp_loss < *l) {
            best = Some((disp_loss, iter, achieved.clone(), end.clone()));
        }
        if iter + 1 >= opts.iters {
            break;
        }

        let sign: Vec<Vec3> = achieved.iter().zip(&targets).map(|(a, r)| (a - r).map(l1_grad)).collect();
        let loss_grad_x: Vec<Vec3> = scene
            .labels
            .iter()
            .enumerate()
            .map(|(p, l)| l.map_or(Vec3::zeros(), |b| sign[b] * (init.mass[p] / part_mass[b])))
            .collect();
        let mut grad_v = tape.backward(&loss_grad_x)?;
        if let Some(groups) = &scene.config.sharing {
            groups.share(&mut grad_v);
        }
        for b in 0..parts {
            let (Some(field), Some(opt)) = (scene.fields[b].as_mut(), optimizers[b].as_mut()) else { continue };
            let xs: Vec<Vec3> = members[b].iter().map(|&p| start.x[p]).collect();
            let up: Vec<Vec3> = members[b].iter().map(|&p| grad_v[p]).collect();
            let mut grad = field.query_batch_with_param_grad(&xs, &up)?;
            if let Some(tg) = &tv_grads[b] {
                for (g, t) in grad.iter_mut().zip(tg) {
                    *g += opts.tv_weight * t;
                }
            }
            if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
                return Err(diverged(t, iter, loss, Some(end), &format!("non-finite gradient in part {b} parameter {i}")));
            }
            opt.apply(field.params_mut(), &grad, opts.lr);
        }
    }
    let (best_loss, best_iter, displacement, state) = best.expect("at least one iteration");
    log::debug!("phase {t}: best displacement loss {best_loss:.6e} at iteration {best_iter}");
    Ok(PhaseResult { phase: t, displacement, target: targets, loss_history: history, best_iter, best_loss, state })
}

/// Runs phase `t` with fields disabled and bone velocities scaled by `alpha`.
pub fn ablation_manual_velocity(scene: &TransferScene, start: &ParticleState, t: usize, alpha: f64) -> Result<PhaseResult> {
    scene.validate_inputs()?;
    let parts = scene.parts();
    let (_, targets) = scene.phase_targets(t)?;
    let init = scene.phase_start(start, scene.base_velocities(t, alpha)?);
    let end = simulate(&init, &scene.config, scene.config.substeps)?;
    let displacement = part_displacement(&init, &end, &scene.labels, parts)?;
    let loss: f64 = displacement.iter().zip(&targets).map(|(a, r)| (a - r).abs().sum()).sum();
    Ok(PhaseResult {
        phase: t,
        displacement,
        target: targets,
        loss_history: vec![loss],
        best_iter: 0,
        best_loss: loss,
        state: end,
    })
}

fn apply_rigid(state: &ParticleState, g: &Rigid) -> ParticleState {
    let mut s = state.clone();
    for x in s.x.iter_mut() {
        *x = g.transform_point(&(*x).into()).coords;
    }
    for v in s.v.iter_mut() {
        *v = g.rotation * *v;
    }
    s
}

/// Chains `phases` optimized phases from the scene's initial particles and
/// applies the scaled global transform to every emitted frame.
pub fn run_transfer(scene: &mut TransferScene, phases: usize) -> Result<TransferRun> {
    if phases > scene.phase_count() {
        return Err(Error::FrameOutOfRange { index: phases, frames: scene.reference.frame_count() });
    }
    let mut simulated = vec![scene.particles.clone()];
    let mut results = Vec::with_capacity(phases);
    for t in 0..phases {
        let start = simulated.last().expect("initial frame").clone();
        let result = train_phase(scene, &start, t)?;
        log::info!(
            "phase {t} done: best loss {:.4e} at iteration {}, terminal error {:.4e}",
            result.best_loss,
            result.best_iter,
            result.terminal_error()
        );
        simulated.push(result.state.clone());
        results.push(result);
    }
    let frames = simulated
        .iter()
        .enumerate()
        .map(|(t, s)| Ok(apply_rigid(s, &scene.scaled_global(t)?)))
        .collect::<Result<_>>()?;
    Ok(TransferRun { simulated, frames, phases: results })
}
