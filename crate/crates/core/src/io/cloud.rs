use std::fs;
use std::path::Path;

use super::container::{Precision, RawMatrix, MAGIC};
use super::ply;
use crate::mpm::ParticleState;
use crate::{Error, Result, Vec3};

/// Positions with optional per-point mass, volume and part label.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub mass: Option<Vec<f64>>,
    pub volume: Option<Vec<f64>>,
    /// Zero-based part labels; `None` entries are unassigned.
    pub labels: Option<Vec<Option<usize>>>,
}

impl PointCloud {
    pub fn from_positions(positions: Vec<Vec3>) -> Self {
        PointCloud { positions, ..Default::default() }
    }

    pub fn from_state(state: &ParticleState) -> Self {
        PointCloud {
            positions: state.x.clone(),
            mass: Some(state.mass.clone()),
            volume: Some(state.volume.clone()),
            labels: None,
        }
    }

    pub fn with_labels(mut self, labels: Vec<Option<usize>>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let attr = [("mass", self.mass.as_ref().map(Vec::len)), ("volume", self.volume.as_ref().map(Vec::len)), ("labels", self.labels.as_ref().map(Vec::len))];
        for (name, len) in attr {
            if let Some(len) = len.filter(|&l| l != n) {
                return Err(Error::Shape(format!("{n} points but {len} {name} entries")));
            }
        }
        if self.mass.is_some() != self.volume.is_some() {
            return Err(Error::InvalidArgument("mass and volume must be given together".into()));
        }
        if let Some(i) = self.positions.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite(format!("position of point {i}")));
        }
        Ok(())
    }

    /// Particle state at rest. Missing mass/volume fall back to a uniform
    /// `density` and `default_volume`.
    pub fn to_state(&self, density: f64, default_volume: f64) -> Result<ParticleState> {
        match (&self.mass, &self.volume) {
            (Some(m), Some(v)) => ParticleState::at_rest(self.positions.clone(), m.clone(), v.clone()),
            _ => ParticleState::uniform(self.positions.clone(), density, default_volume),
        }
    }

    fn columns(&self) -> usize {
        3 + if self.mass.is_some() { 2 } else { 0 } + usize::from(self.labels.is_some())
    }

    /// Container rows: `xyz [mass volume] [label]`, labels one-based with 0
    /// meaning unassigned.
    pub fn to_matrix(&self) -> Result<RawMatrix> {
        self.validate()?;
        let cols = self.columns();
        let mut values = Vec::with_capacity(self.len() * cols);
        for (i, p) in self.positions.iter().enumerate() {
            values.extend(p.iter());
            if let (Some(m), Some(v)) = (&self.mass, &self.volume) {
                values.extend([m[i], v[i]]);
            }
            if let Some(l) = &self.labels {
                values.push(l[i].map_or(0.0, |l| (l + 1) as f64));
            }
        }
        RawMatrix::new(self.len(), cols, Precision::F32, values)
    }

    pub fn from_matrix(m: &RawMatrix, origin: &Path) -> Result<Self> {
        let (has_mass, has_label) = match m.cols {
            3 => (false, false),
            4 => (false, true),
            5 => (true, false),
            6 => (true, true),
            c if m.rows == 0 && c == 0 => (false, false),
            c => return Err(Error::parse(origin, format!("point cloud needs 3–6 columns, header declares {c}"))),
        };
        let mut cloud = PointCloud::default();
        let (mut mass, mut volume, mut labels) = (Vec::new(), Vec::new(), Vec::new());
        for r in 0..m.rows {
            let row = m.row(r);
            cloud.positions.push(Vec3::new(row[0], row[1], row[2]));
            if has_mass {
                mass.push(row[3]);
                volume.push(row[4]);
            }
            if has_label {
                labels.push(decode_label(row[m.cols - 1]).map_err(|msg| Error::parse(origin, format!("row {r}: {msg}")))?);
            }
        }
        if has_mass {
            cloud.mass = Some(mass);
            cloud.volume = Some(volume);
        }
        if has_label {
            cloud.labels = Some(labels);
        }
        Ok(cloud)
    }
}

pub(crate) fn decode_label(v: f64) -> std::result::Result<Option<usize>, String> {
    if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
        return Err(format!("label {v} is not a non-negative integer"));
    }
    Ok((v > 0.0).then(|| v as usize - 1))
}

/// Reads a container or PLY point cloud; an empty file is an empty cloud.
pub fn parse_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Ok(PointCloud::default());
    }
    if bytes.starts_with(MAGIC) {
        PointCloud::from_matrix(&RawMatrix::from_bytes(&bytes, path)?, path)
    } else if bytes.starts_with(b"ply") {
        ply::decode(&bytes, path)
    } else {
        Err(Error::parse(path, "unrecognized point cloud format at offset 0"))
    }
}

/// Writes the canonical binary container (f32 payload).
pub fn write_point_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    super::container::write_matrix(path, &cloud.to_matrix()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_stored_one_based() {
        let c = PointCloud::from_positions(vec![Vec3::zeros(); 2]).with_labels(vec![Some(0), None]);
        let m = c.to_matrix().unwrap();
        assert_eq!((m.cols, m.row(0)[3], m.row(1)[3]), (4, 1.0, 0.0));
        assert_eq!(PointCloud::from_matrix(&m, Path::new("c")).unwrap(), c);
    }

    #[test]
    fn column_layouts() {
        let mut c = PointCloud::from_positions(vec![Vec3::new(1.0, 2.0, 3.0)]);
        assert_eq!(c.to_matrix().unwrap().cols, 3);
        c.mass = Some(vec![2.0]);
        c.volume = Some(vec![0.5]);
        assert_eq!(c.to_matrix().unwrap().values, vec![1.0, 2.0, 3.0, 2.0, 0.5]);
        c.labels = Some(vec![Some(4)]);
        assert_eq!(c.to_matrix().unwrap().values, vec![1.0, 2.0, 3.0, 2.0, 0.5, 5.0]);
    }

    #[test]
    fn bad_label_rejected() {
        let m = RawMatrix::new(1, 4, Precision::F32, vec![0.0, 0.0, 0.0, 1.5]).unwrap();
        assert!(PointCloud::from_matrix(&m, Path::new("c")).unwrap_err().to_string().contains("row 0"));
    }

    #[test]
    fn mismatched_attributes_rejected() {
        let mut c = PointCloud::from_positions(vec![Vec3::zeros(); 2]);
        c.labels = Some(vec![None]);
        assert!(c.to_matrix().is_err());
    }
}
