//! Feature files and field parameter files, both in the binary container.
//!
//! A feature file holds one row per vertex: `xyz` followed by the
//! concatenated feature columns. Which leading feature columns count as the
//! semantic block is supplied by the reader.

use std::path::Path;

use nalgebra::DMatrix;

use super::container::{read_matrix, write_matrix, Precision, RawMatrix};
use crate::correspondence::{Aabb, FeatureSet};
use crate::neural::{FieldConfig, TriplaneField};
use crate::{Error, Result, Vec3};

pub fn write_features(path: impl AsRef<Path>, fs: &FeatureSet) -> Result<()> {
    let feats = crate::correspondence::concat_features(fs)?;
    let cols = 3 + feats.ncols();
    let mut values = Vec::with_capacity(fs.vertices.len() * cols);
    for (r, v) in fs.vertices.iter().enumerate() {
        values.extend(v.iter());
        values.extend(feats.row(r).iter());
    }
    write_matrix(path, &RawMatrix::new(fs.vertices.len(), cols, Precision::F32, values)?)
}

/// Reads a feature file; `diff_dims` leading feature columns form the
/// semantic block (`None` = all of them).
pub fn read_features(path: impl AsRef<Path>, diff_dims: Option<usize>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let m = read_matrix(path)?;
    if m.cols < 3 {
        return Err(Error::parse(path, format!("feature file needs ≥ 3 columns, header declares {}", m.cols)));
    }
    let d = m.cols - 3;
    let d1 = diff_dims.unwrap_or(d);
    if d1 > d {
        return Err(Error::parse(path, format!("{d1} semantic columns requested but only {d} feature columns present")));
    }
    let vertices = (0..m.rows).map(|r| Vec3::from_column_slice(&m.row(r)[..3])).collect();
    let diff = DMatrix::from_fn(m.rows, d1, |r, c| m.row(r)[3 + c]);
    let geo = DMatrix::from_fn(m.rows, d - d1, |r, c| m.row(r)[3 + d1 + c]);
    FeatureSet::new(vertices, diff, geo)
}

const FIELD_META: usize = 9;

/// Field as an `n × 1` f64 column: `P C H`, domain min, domain max, params.
pub fn field_to_matrix(field: &TriplaneField) -> RawMatrix {
    let c = field.config();
    let d = field.domain();
    let mut values = vec![c.resolution as f64, c.channels as f64, c.hidden as f64];
    values.extend(d.min.iter().chain(d.max.iter()));
    values.extend_from_slice(field.params());
    RawMatrix { rows: values.len(), cols: 1, precision: Precision::F64, values }
}

pub fn field_from_matrix(m: &RawMatrix, origin: &Path) -> Result<TriplaneField> {
    if m.cols != 1 || m.rows < FIELD_META {
        return Err(Error::parse(origin, format!("field file must be an n×1 column with n ≥ {FIELD_META}, got {}×{}", m.rows, m.cols)));
    }
    let v = &m.values;
    let dim = |i: usize| -> Result<usize> {
        (v[i] >= 0.0 && v[i].fract() == 0.0)
            .then_some(v[i] as usize)
            .ok_or_else(|| Error::parse(origin, format!("row {i}: {} is not a size", v[i])))
    };
    let config = FieldConfig { resolution: dim(0)?, channels: dim(1)?, hidden: dim(2)?, ..Default::default() };
    let domain = Aabb { min: Vec3::new(v[3], v[4], v[5]), max: Vec3::new(v[6], v[7], v[8]) };
    let mut field = TriplaneField::zeros(config, domain).map_err(|e| Error::parse(origin, e.to_string()))?;
    field.set_params(v[FIELD_META..].to_vec()).map_err(|e| Error::parse(origin, e.to_string()))?;
    Ok(field)
}

pub fn write_field(path: impl AsRef<Path>, field: &TriplaneField) -> Result<()> {
    write_matrix(path, &field_to_matrix(field))
}

pub fn read_field(path: impl AsRef<Path>) -> Result<TriplaneField> {
    let path = path.as_ref();
    field_from_matrix(&read_matrix(path)?, path)
}
