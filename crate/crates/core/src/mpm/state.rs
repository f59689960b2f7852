use crate::{Error, Mat3, Result, Vec3};

/// Struct-of-arrays particle state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub x: Vec<Vec3>,
    pub v: Vec<Vec3>,
    pub mass: Vec<f64>,
    /// Initial (rest) volume.
    pub volume: Vec<f64>,
    /// Deformation gradient.
    pub f: Vec<Mat3>,
    /// Affine velocity matrix.
    pub c: Vec<Mat3>,
}

impl ParticleState {
    /// Particles at rest: zero velocity, `F = I`, `C = 0`.
    pub fn at_rest(x: Vec<Vec3>, mass: Vec<f64>, volume: Vec<f64>) -> Result<Self> {
        let n = x.len();
        let s = ParticleState {
            v: vec![Vec3::zeros(); n],
            f: vec![Mat3::identity(); n],
            c: vec![Mat3::zeros(); n],
            x,
            mass,
            volume,
        };
        s.validate()?;
        Ok(s)
    }

    /// Uniform-density particles with equal rest volume.
    pub fn uniform(x: Vec<Vec3>, density: f64, volume: f64) -> Result<Self> {
        let n = x.len();
        Self::at_rest(x, vec![density * volume; n], vec![volume; n])
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.len();
        if [self.v.len(), self.mass.len(), self.volume.len(), self.f.len(), self.c.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::Shape("particle attribute lengths differ".into()));
        }
        for p in 0..n {
            if !(self.mass[p] > 0.0) {
                return Err(Error::InvalidArgument(format!("particle {p} has non-positive mass")));
            }
            if !(self.volume[p] > 0.0) {
                return Err(Error::InvalidArgument(format!("particle {p} has non-positive volume")));
            }
            if !(self.f[p].determinant() > 0.0) {
                return Err(Error::InvalidDeformation { particle: p, reason: "det(F) ≤ 0".into() });
            }
            if !self.x[p].iter().chain(self.v[p].iter()).all(|c| c.is_finite()) {
                return Err(Error::NonFinite(format!("particle {p} position/velocity")));
            }
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn total_momentum(&self) -> Vec3 {
        self.v.iter().zip(&self.mass).map(|(v, m)| v * *m).sum()
    }

    /// Mass-weighted centroid of the particles selected by `members`.
    pub fn centroid_of(&self, members: impl IntoIterator<Item = usize>) -> Option<Vec3> {
        let mut m = 0.0;
        let mut acc = Vec3::zeros();
        for p in members {
            m += self.mass[p];
            acc += self.x[p] * self.mass[p];
        }
        (m > 0.0).then(|| acc / m)
    }

    pub fn centroid(&self) -> Option<Vec3> {
        self.centroid_of(0..self.len())
    }

    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        bounding_box(&self.x)
    }

    pub fn max_speed(&self) -> f64 {
        self.v.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Axis-aligned bounds of a point set.
pub fn bounding_box(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = points.first()?;
    Some(points.iter().fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
}
