//! Reverse-mode gradients through the MLS-MPM substep.
//!
//! The forward pass records particle states (every substep for short runs,
//! every `checkpoint_interval` substeps otherwise). The backward pass
//! rebuilds each substep's grid from the recorded state and propagates
//! adjoints of `(x, v, C, F)` through advection, G2P, the grid update, P2G
//! and the fixed-corotated stress. Only gradients with respect to the
//! initial particle velocities are returned.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mpm::{
    evaluate_stress, for_stencil, grid_update, p2g, particle_kernel, ParticleState, SimConfig, SimGrid, Simulator,
};
use crate::{Error, Mat3, Result, Vec3};

/// Tape sizing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointOptions {
    /// Runs with at most this many substeps store every state.
    pub full_tape_limit: usize,
    /// Checkpoint spacing for longer runs.
    pub checkpoint_interval: usize,
    /// Upper bound on recorded state memory.
    pub max_tape_bytes: usize,
}

impl Default for AdjointOptions {
    fn default() -> Self {
        AdjointOptions { full_tape_limit: 64, checkpoint_interval: 8, max_tape_bytes: 2 << 30 }
    }
}

const BYTES_PER_PARTICLE: usize = std::mem::size_of::<Vec3>() * 2
    + std::mem::size_of::<Mat3>() * 2
    + std::mem::size_of::<f64>() * 2;

/// Recorded forward simulation ready for a backward pass.
#[derive(Debug, Clone)]
pub struct AdjointTape {
    config: SimConfig,
    n_steps: usize,
    interval: usize,
    /// `checkpoints[i]` is the state before substep `i * interval`.
    checkpoints: Vec<ParticleState>,
    final_state: ParticleState,
}

impl AdjointTape {
    pub fn record(particles: &ParticleState, config: &SimConfig, n_steps: usize) -> Result<Self> {
        Self::record_with(particles, config, n_steps, AdjointOptions::default())
    }

    pub fn record_with(
        particles: &ParticleState,
        config: &SimConfig,
        n_steps: usize,
        opts: AdjointOptions,
    ) -> Result<Self> {
        let interval = if n_steps <= opts.full_tape_limit { 1 } else { opts.checkpoint_interval.max(1) };
        let stored = n_steps.div_ceil(interval) + 1;
        let needed = stored * particles.len() * BYTES_PER_PARTICLE;
        if needed > opts.max_tape_bytes {
            return Err(Error::TapeOverflow { needed, limit: opts.max_tape_bytes });
        }
        let mut sim = Simulator::new(config.clone())?;
        let mut state = particles.clone();
        let mut checkpoints = Vec::with_capacity(stored);
        for s in 0..n_steps {
            if s % interval == 0 {
                checkpoints.push(state.clone());
            }
            sim.step(&mut state)?;
        }
        Ok(AdjointTape { config: config.clone(), n_steps, interval, checkpoints, final_state: state })
    }

    pub fn final_state(&self) -> &ParticleState {
        &self.final_state
    }

    pub fn into_final_state(self) -> ParticleState {
        self.final_state
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Re-runs the recorded simulation from the first checkpoint.
    pub fn replay(&self) -> Result<ParticleState> {
        crate::mpm::simulate(&self.checkpoints[0], &self.config, self.n_steps)
    }

    /// Gradient of a scalar loss with respect to the initial velocities,
    /// given the loss gradient on the final positions.
    pub fn backward(&self, loss_grad_x: &[Vec3]) -> Result<Vec<Vec3>> {
        let n = self.final_state.len();
        if loss_grad_x.len() != n {
            return Err(Error::Shape(format!("{} loss gradients for {n} particles", loss_grad_x.len())));
        }
        let mut adj = ParticleAdjoint::seeded(loss_grad_x);
        if self.n_steps == 0 {
            return Ok(adj.v);
        }
        let mut grid = SimGrid::new(self.config.grid);
        let mut grid_adj = GridAdjoint::new(self.config.grid.node_count());
        let mut sim = Simulator::new(self.config.clone())?;
        for seg in (0..self.checkpoints.len()).rev() {
            let start = seg * self.interval;
            let end = ((seg + 1) * self.interval).min(self.n_steps);
            // states[k] is the state before substep start + k; the last entry
            // is the state after the segment.
            let mut states = Vec::with_capacity(end - start + 1);
            let mut s = self.checkpoints[seg].clone();
            states.push(s.clone());
            for _ in start..end {
                sim.step(&mut s)?;
                states.push(s.clone());
            }
            for k in (0..end - start).rev() {
                backward_step(&states[k], &states[k + 1], &self.config, &mut grid, &mut grid_adj, &mut adj)?;
            }
        }
        Ok(adj.v)
    }
}

/// Forward simulation plus reverse-mode gradient of `Σ loss_grad · x_final`
/// with respect to the initial velocities.
pub fn simulate_with_gradient(
    particles: &ParticleState,
    config: &SimConfig,
    n_steps: usize,
    loss_grad_on_final_positions: &[Vec3],
) -> Result<(ParticleState, Vec<Vec3>)> {
    let tape = AdjointTape::record(particles, config, n_steps)?;
    let grad = tape.backward(loss_grad_on_final_positions)?;
    Ok((tape.into_final_state(), grad))
}

#[derive(Debug, Clone)]
struct ParticleAdjoint {
    x: Vec<Vec3>,
    v: Vec<Vec3>,
    c: Vec<Mat3>,
    f: Vec<Mat3>,
}

impl ParticleAdjoint {
    fn seeded(x: &[Vec3]) -> Self {
        let n = x.len();
        ParticleAdjoint { x: x.to_vec(), v: vec![Vec3::zeros(); n], c: vec![Mat3::zeros(); n], f: vec![Mat3::zeros(); n] }
    }
}

#[derive(Debug, Clone)]
struct GridAdjoint {
    velocity: Vec<Vec3>,
    momentum: Vec<Vec3>,
    mass: Vec<f64>,
}

impl GridAdjoint {
    fn new(n: usize) -> Self {
        GridAdjoint { velocity: vec![Vec3::zeros(); n], momentum: vec![Vec3::zeros(); n], mass: vec![0.0; n] }
    }

    fn clear(&mut self, active: &[usize]) {
        for &i in active {
            self.velocity[i] = Vec3::zeros();
            self.momentum[i] = Vec3::zeros();
            self.mass[i] = 0.0;
        }
    }
}

/// Maps the adjoint of the state after one substep to the adjoint of the
/// state before it. `adj` is updated in place.
fn backward_step(
    before: &ParticleState,
    after: &ParticleState,
    config: &SimConfig,
    grid: &mut SimGrid,
    grid_adj: &mut GridAdjoint,
    adj: &mut ParticleAdjoint,
) -> Result<()> {
    let n = before.len();
    let dt = config.dt;
    let dx = config.grid.cell_size;
    let scale = config.affine_scale();
    let spec = config.grid;

    let stress = evaluate_stress(before, config)?;
    let tau: Vec<Mat3> = stress.iter().map(|s| s.tau).collect();
    p2g(before, grid, &tau, config)?;
    grid_update(grid, config);

    // F' = (I + dt C') F  and  x' = x + dt v'
    let mut f_bar = vec![Mat3::zeros(); n];
    let mut c_new_bar = vec![Mat3::zeros(); n];
    let mut v_new_bar = vec![Vec3::zeros(); n];
    for p in 0..n {
        let fb = adj.f[p];
        f_bar[p] = (Mat3::identity() + after.c[p] * dt).transpose() * fb;
        c_new_bar[p] = adj.c[p] + fb * before.f[p].transpose() * dt;
        v_new_bar[p] = adj.v[p] + adj.x[p] * dt;
    }
    if let Some(groups) = &config.sharing {
        groups.share(&mut v_new_bar);
    }
    let mut x_bar = adj.x.clone();

    // G2P: v' = Σ w vᵢ,  C' = s Σ w vᵢ dᵀ
    let kernels = (0..n).map(|p| particle_kernel(&spec, &before.x[p], p)).collect::<Result<Vec<_>>>()?;
    for p in 0..n {
        let k = &kernels[p];
        let (vb, cb) = (v_new_bar[p], c_new_bar[p]);
        let mut xb = Vec3::zeros();
        for_stencil(&spec, k, |idx, i, j, l| {
            let w = k.weight(i, j, l);
            let d = k.offset(i, j, l, dx);
            let vi = grid.velocity[idx];
            let cb_d = cb * d;
            grid_adj.velocity[idx] += vb * w + cb_d * (scale * w);
            let w_bar = vi.dot(&vb) + scale * vi.dot(&cb_d);
            let d_bar = cb.transpose() * vi * (scale * w);
            xb += k.weight_grad(i, j, l) * w_bar - d_bar;
        });
        x_bar[p] += xb;
    }

    // grid update: v = B (p/m + dt g)
    let dims = spec.dims;
    for &idx in grid.active() {
        let m = grid.mass[idx];
        if m > 0.0 {
            let mut vb = grid_adj.velocity[idx];
            config.boundary.apply(spec.coords(idx), &dims, &mut vb);
            grid_adj.momentum[idx] = vb / m;
            grid_adj.mass[idx] = -vb.dot(&grid.momentum[idx]) / (m * m);
        }
    }

    // P2G: mᵢ = Σ w m,  pᵢ = Σ w (m v + A d),  A = m C − dt s V⁰ τ
    let mut v_bar = vec![Vec3::zeros(); n];
    let mut c_bar = vec![Mat3::zeros(); n];
    for p in 0..n {
        let k = &kernels[p];
        let m = before.mass[p];
        let affine = before.c[p] * m - tau[p] * (dt * scale * before.volume[p]);
        let mv = before.v[p] * m;
        let mut a_bar = Mat3::zeros();
        let mut vb = Vec3::zeros();
        let mut xb = Vec3::zeros();
        for_stencil(&spec, k, |idx, i, j, l| {
            let w = k.weight(i, j, l);
            let d = k.offset(i, j, l, dx);
            let pb = grid_adj.momentum[idx];
            let w_bar = grid_adj.mass[idx] * m + pb.dot(&(mv + affine * d));
            vb += pb * (w * m);
            a_bar += (pb * w) * d.transpose();
            let d_bar = affine.transpose() * pb * w;
            xb += k.weight_grad(i, j, l) * w_bar - d_bar;
        });
        x_bar[p] += xb;
        v_bar[p] = vb;
        c_bar[p] = a_bar * m;
        let tau_bar = a_bar * (-dt * scale * before.volume[p]);
        f_bar[p] += stress[p].vjp(&before.f[p], &config.material, &tau_bar);
    }

    grid_adj.clear(grid.active());
    adj.x = x_bar;
    adj.v = v_bar;
    adj.c = c_bar;
    adj.f = f_bar;
    Ok(())
}

/// One adjoint-vs-finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientProbe {
    pub particle: usize,
    pub axis: usize,
    pub adjoint: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientReport {
    pub probes: Vec<GradientProbe>,
    pub max_relative_error: f64,
    pub mean_relative_error: f64,
}

/// Compares adjoint velocity gradients against central finite differences
/// on `n_probes` random velocity components, for the loss
/// `L = Σₚ wₚ · xₚ(final)` with seeded random weights. The run length is
/// `config.substeps` substeps and the perturbation is `1e-4` cell sizes.
pub fn gradient_check(scene: &ParticleState, config: &SimConfig, n_probes: usize, seed: u64) -> Result<GradientReport> {
    if n_probes == 0 || scene.is_empty() {
        return Ok(GradientReport::default());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<Vec3> = (0..scene.len())
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let n_steps = config.substeps;
    let loss = |s: &ParticleState| -> f64 { s.x.iter().zip(&weights).map(|(x, w)| x.dot(w)).sum() };

    let (_, grad) = simulate_with_gradient(scene, config, n_steps, &weights)?;
    let scale = grad.iter().map(|g| g.amax()).fold(0.0, f64::max);
    let floor = (scale * 1e-6).max(1e-300);
    let h = 1e-4 * config.grid.cell_size;

    let mut probes = Vec::with_capacity(n_probes);
    for _ in 0..n_probes {
        let particle = rng.random_range(0..scene.len());
        let axis = rng.random_range(0..3);
        let mut plus = scene.clone();
        plus.v[particle][axis] += h;
        let mut minus = scene.clone();
        minus.v[particle][axis] -= h;
        let lp = loss(&crate::mpm::simulate(&plus, config, n_steps)?);
        let lm = loss(&crate::mpm::simulate(&minus, config, n_steps)?);
        let fd = (lp - lm) / (2.0 * h);
        let a = grad[particle][axis];
        let relative_error = (a - fd).abs() / a.abs().max(fd.abs()).max(floor);
        probes.push(GradientProbe { particle, axis, adjoint: a, finite_difference: fd, relative_error });
    }
    let max_relative_error = probes.iter().map(|p| p.relative_error).fold(0.0, f64::max);
    let mean_relative_error = probes.iter().map(|p| p.relative_error).sum::<f64>() / probes.len() as f64;
    Ok(GradientReport { probes, max_relative_error, mean_relative_error })
}
