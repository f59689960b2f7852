//! One MLS-MPM substep: stress → P2G → grid update → G2P/advection.

use rayon::prelude::*;

use crate::{Error, Mat3, Result, Vec3};

use super::control::ControlGroups;
use super::grid::{Boundary, GridSpec, SimGrid};
use super::kernel::Kernel;
use super::material::{MaterialParams, StressEval};
use super::state::ParticleState;

/// Simulation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Substep length in seconds.
    pub dt: f64,
    /// Substeps per animation frame (one transfer phase).
    pub substeps: usize,
    pub gravity: Vec3,
    pub grid: GridSpec,
    pub material: MaterialParams,
    pub boundary: Boundary,
    /// Evaluate per-particle stages on the rayon pool. Node accumulation is
    /// always sequential in particle order, so results are bitwise identical
    /// either way.
    pub parallel: bool,
    /// Optional per-cell velocity sharing applied after G2P.
    pub sharing: Option<ControlGroups>,
}

impl SimConfig {
    pub fn new(grid: GridSpec, dt: f64) -> Self {
        SimConfig {
            dt,
            substeps: 24,
            gravity: Vec3::new(0.0, -9.8, 0.0),
            grid,
            material: MaterialParams::default(),
            boundary: Boundary::default(),
            parallel: false,
            sharing: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if self.substeps < 1 {
            return Err(Error::InvalidArgument("substeps must be ≥ 1".into()));
        }
        Ok(())
    }

    /// `4 / dx²`, the MLS-MPM affine scaling for the quadratic kernel.
    #[inline]
    pub fn affine_scale(&self) -> f64 {
        4.0 / (self.grid.cell_size * self.grid.cell_size)
    }
}

pub(crate) fn map_particles<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

pub(crate) fn particle_kernel(spec: &GridSpec, x: &Vec3, p: usize) -> Result<Kernel> {
    let k = Kernel::new(&spec.grid_pos(x), 1.0 / spec.cell_size);
    if !spec.stencil_fits(&k.base) || !x.iter().all(|c| c.is_finite()) {
        return Err(Error::OutOfBounds { particle: p, position: [x.x, x.y, x.z] });
    }
    Ok(k)
}

/// Iterates the 27 stencil nodes as `(grid index, i, j, k)`.
#[inline]
pub(crate) fn for_stencil(spec: &GridSpec, k: &Kernel, mut f: impl FnMut(usize, usize, usize, usize)) {
    let [bx, by, bz] = k.base.map(|b| b as usize);
    for i in 0..3 {
        for j in 0..3 {
            let row = spec.index(bx + i, by + j, bz);
            for l in 0..3 {
                f(row + l, i, j, l);
            }
        }
    }
}

/// Per-particle stress evaluation, failing on the first invalid `F`.
pub(crate) fn evaluate_stress(particles: &ParticleState, config: &SimConfig) -> Result<Vec<StressEval>> {
    map_particles(particles.len(), config.parallel, |p| {
        StressEval::new(&particles.f[p], &config.material).map_err(|e| match e {
            Error::InvalidDeformation { reason, .. } => Error::InvalidDeformation { particle: p, reason },
            other => other,
        })
    })
    .into_iter()
    .collect()
}

/// Scatters particle mass and momentum (with the fused stress impulse) to
/// the grid. The grid is cleared first.
pub fn p2g(particles: &ParticleState, grid: &mut SimGrid, stress: &[Mat3], config: &SimConfig) -> Result<()> {
    if stress.len() != particles.len() {
        return Err(Error::Shape(format!("{} stresses for {} particles", stress.len(), particles.len())));
    }
    grid.clear();
    let spec = grid.spec;
    let dx = spec.cell_size;
    let scale = config.affine_scale();
    let prepared: Vec<Result<(Kernel, Mat3)>> = map_particles(particles.len(), config.parallel, |p| {
        let k = particle_kernel(&spec, &particles.x[p], p)?;
        let affine = particles.c[p] * particles.mass[p] - stress[p] * (config.dt * scale * particles.volume[p]);
        Ok((k, affine))
    });
    for (p, prep) in prepared.into_iter().enumerate() {
        let (k, affine) = prep?;
        let m = particles.mass[p];
        let mv = particles.v[p] * m;
        for_stencil(&spec, &k, |idx, i, j, l| {
            let w = k.weight(i, j, l);
            let d = k.offset(i, j, l, dx);
            grid.touch(idx);
            grid.mass[idx] += w * m;
            grid.momentum[idx] += w * (mv + affine * d);
        });
    }
    Ok(())
}

/// Momentum → velocity, gravity, boundary conditions.
pub fn grid_update(grid: &mut SimGrid, config: &SimConfig) {
    let dims = grid.spec.dims;
    for a in 0..grid.active().len() {
        let idx = grid.active()[a];
        let m = grid.mass[idx];
        if m > 0.0 {
            let mut v = grid.momentum[idx] / m + config.gravity * config.dt;
            config.boundary.apply(grid.spec.coords(idx), &dims, &mut v);
            grid.velocity[idx] = v;
        } else {
            grid.velocity[idx] = Vec3::zeros();
        }
    }
}

/// Gathers grid velocities back to particles and advects them.
pub fn g2p_advect(particles: &mut ParticleState, grid: &SimGrid, config: &SimConfig) -> Result<()> {
    let spec = grid.spec;
    let dx = spec.cell_size;
    let scale = config.affine_scale();
    let gathered: Vec<Result<(Vec3, Mat3)>> = map_particles(particles.len(), config.parallel, |p| {
        let k = particle_kernel(&spec, &particles.x[p], p)?;
        let mut v = Vec3::zeros();
        let mut b = Mat3::zeros();
        for_stencil(&spec, &k, |idx, i, j, l| {
            let w = k.weight(i, j, l);
            let vi = grid.velocity[idx];
            v += vi * w;
            b += (vi * w) * k.offset(i, j, l, dx).transpose();
        });
        Ok((v, b * scale))
    });
    for (p, g) in gathered.into_iter().enumerate() {
        let (v, c) = g?;
        particles.v[p] = v;
        particles.c[p] = c;
    }
    if let Some(groups) = &config.sharing {
        groups.share(&mut particles.v);
    }
    let dt = config.dt;
    for p in 0..particles.len() {
        particles.x[p] += particles.v[p] * dt;
        particles.f[p] = (Mat3::identity() + particles.c[p] * dt) * particles.f[p];
    }
    Ok(())
}

/// Reusable grid buffers for repeated substeps.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub config: SimConfig,
    pub grid: SimGrid,
    cfl_warnings: usize,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let grid = SimGrid::new(config.grid);
        Ok(Simulator { config, grid, cfl_warnings: 0 })
    }

    /// Number of substeps that violated the CFL guard so far.
    pub fn cfl_warnings(&self) -> usize {
        self.cfl_warnings
    }

    pub fn step(&mut self, particles: &mut ParticleState) -> Result<()> {
        let speed = particles.max_speed();
        if speed * self.config.dt >= self.config.grid.cell_size {
            if self.cfl_warnings == 0 {
                log::warn!(
                    "CFL violated: max speed {speed:.4} · dt {:.3e} ≥ cell size {:.4}",
                    self.config.dt,
                    self.config.grid.cell_size
                );
            }
            self.cfl_warnings += 1;
        }
        let stress: Vec<Mat3> = evaluate_stress(particles, &self.config)?.iter().map(|s| s.tau).collect();
        p2g(particles, &mut self.grid, &stress, &self.config)?;
        grid_update(&mut self.grid, &self.config);
        g2p_advect(particles, &self.grid, &self.config)
    }

    pub fn run(&mut self, particles: &mut ParticleState, n_steps: usize) -> Result<()> {
        for _ in 0..n_steps {
            self.step(particles)?;
        }
        Ok(())
    }
}

/// One full substep.
pub fn step(particles: &ParticleState, config: &SimConfig) -> Result<ParticleState> {
    simulate(particles, config, 1)
}

/// `n_steps` substeps from `particles`.
pub fn simulate(particles: &ParticleState, config: &SimConfig, n_steps: usize) -> Result<ParticleState> {
    let mut sim = Simulator::new(config.clone())?;
    let mut state = particles.clone();
    sim.run(&mut state, n_steps)?;
    Ok(state)
}

/// Like [`simulate`], also returning every intermediate state (initial state
/// first, final state last).
pub fn simulate_recorded(
    particles: &ParticleState,
    config: &SimConfig,
    n_steps: usize,
) -> Result<(ParticleState, Vec<ParticleState>)> {
    let mut sim = Simulator::new(config.clone())?;
    let mut state = particles.clone();
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(state.clone());
    for _ in 0..n_steps {
        sim.step(&mut state)?;
        states.push(state.clone());
    }
    Ok((state, states))
}
