use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

/// Placement and size of the background grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: Vec3,
    pub cell_size: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: Vec3, cell_size: f64, dims: [usize; 3]) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidArgument(format!("cell size must be positive, got {cell_size}")));
        }
        if dims.iter().any(|&d| d < 3) {
            return Err(Error::InvalidArgument(format!("grid dims must be ≥ 3, got {dims:?}")));
        }
        Ok(GridSpec { origin, cell_size, dims })
    }

    /// Fits a grid around a box: the box is dilated by `dilation` (fraction of
    /// its extent) and the longest axis gets `resolution` interior cells; a
    /// `margin`-cell band is added on every side.
    pub fn fit(min: Vec3, max: Vec3, dilation: f64, resolution: usize, margin: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidArgument(format!("resolution must be ≥ 2, got {resolution}")));
        }
        let extent = (max - min).map(|e| e.max(0.0));
        let longest = extent.max();
        if !(longest > 0.0 && longest.is_finite()) {
            return Err(Error::InvalidArgument("cannot fit a grid around a degenerate box".into()));
        }
        let dilated = extent * (1.0 + dilation);
        let dx = longest * (1.0 + dilation) / resolution as f64;
        Self::fit_cell_size(min - (dilated - extent) * 0.5, min + extent + (dilated - extent) * 0.5, dx, margin)
    }

    /// Covers `[min, max]` with cells of size `dx` plus `margin` cells (and
    /// one stencil cell) on every side.
    pub fn fit_cell_size(min: Vec3, max: Vec3, dx: f64, margin: usize) -> Result<Self> {
        let pad = (margin + 1) as f64 * dx;
        let lo = min - Vec3::repeat(pad);
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let span = max[a] - min[a] + 2.0 * pad;
            dims[a] = ((span / dx).ceil() as usize + 1).max(3);
        }
        Self::new(lo, dx, dims)
    }

    pub fn node_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let k = index % self.dims[2];
        let j = (index / self.dims[2]) % self.dims[1];
        let i = index / (self.dims[1] * self.dims[2]);
        [i, j, k]
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.cell_size
    }

    /// Particle position in cell units.
    #[inline]
    pub fn grid_pos(&self, x: &Vec3) -> Vec3 {
        (x - self.origin) / self.cell_size
    }

    /// Whether a 3×3×3 stencil starting at `base` fits in the grid.
    #[inline]
    pub fn stencil_fits(&self, base: &[i64; 3]) -> bool {
        (0..3).all(|a| base[a] >= 0 && base[a] as usize + 2 < self.dims[a])
    }
}

/// Velocity condition on one face of the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FaceCondition {
    /// Velocity zeroed.
    Sticky,
    /// Normal component zeroed.
    Slip,
    /// Untouched.
    #[default]
    Open,
}

impl std::str::FromStr for FaceCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sticky" => Ok(FaceCondition::Sticky),
            "slip" => Ok(FaceCondition::Slip),
            "open" => Ok(FaceCondition::Open),
            other => Err(Error::Config(format!("unknown boundary condition `{other}`"))),
        }
    }
}

/// Face conditions in the order −x, +x, −y, +y, −z, +z, applied to nodes
/// within `margin` cells of each face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Boundary {
    pub faces: [FaceCondition; 6],
    pub margin: usize,
}

impl Default for Boundary {
    /// Sticky floor (−y), open elsewhere, 3-cell margin.
    fn default() -> Self {
        let mut faces = [FaceCondition::Open; 6];
        faces[2] = FaceCondition::Sticky;
        Boundary { faces, margin: 3 }
    }
}

impl Boundary {
    pub fn open() -> Self {
        Boundary { faces: [FaceCondition::Open; 6], margin: 3 }
    }

    /// Applies the conditions to node `coords`. The map is linear in `v`, so
    /// the adjoint pass applies it unchanged (it is self-adjoint).
    #[inline]
    pub fn apply(&self, coords: [usize; 3], dims: &[usize; 3], v: &mut Vec3) {
        for axis in 0..3 {
            let low = coords[axis] < self.margin;
            let high = coords[axis] + self.margin >= dims[axis];
            for (hit, face) in [(low, 2 * axis), (high, 2 * axis + 1)] {
                if !hit {
                    continue;
                }
                match self.faces[face] {
                    FaceCondition::Sticky => *v = Vec3::zeros(),
                    FaceCondition::Slip => v[axis] = 0.0,
                    FaceCondition::Open => {}
                }
            }
        }
    }
}

/// Dense node storage with a list of touched nodes for cheap clearing.
#[derive(Debug, Clone)]
pub struct SimGrid {
    pub spec: GridSpec,
    pub mass: Vec<f64>,
    pub momentum: Vec<Vec3>,
    pub velocity: Vec<Vec3>,
    active: Vec<usize>,
    touched: Vec<bool>,
}

impl SimGrid {
    pub fn new(spec: GridSpec) -> Self {
        let n = spec.node_count();
        SimGrid {
            spec,
            mass: vec![0.0; n],
            momentum: vec![Vec3::zeros(); n],
            velocity: vec![Vec3::zeros(); n],
            active: Vec::new(),
            touched: vec![false; n],
        }
    }

    pub fn clear(&mut self) {
        for &i in &self.active {
            self.mass[i] = 0.0;
            self.momentum[i] = Vec3::zeros();
            self.velocity[i] = Vec3::zeros();
            self.touched[i] = false;
        }
        self.active.clear();
    }

    /// Nodes that received any particle contribution since the last clear,
    /// in first-touch order.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    #[inline]
    pub(crate) fn touch(&mut self, index: usize) {
        if !self.touched[index] {
            self.touched[index] = true;
            self.active.push(index);
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.active.iter().map(|&i| self.mass[i]).sum()
    }

    pub fn total_momentum(&self) -> Vec3 {
        self.active.iter().map(|&i| self.momentum[i]).sum()
    }
}
