//! Part mapping between a reference shape and a target shape.
//!
//! Reference vertices carry part labels (from skinning weights); the mean
//! concatenated feature of every reference part is matched against each
//! target vertex by cosine similarity. Labels far from their part centroid
//! are dropped, per-part bounding boxes are drawn around the survivors, and
//! simulation particles inherit the label of the box they fall in.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result, Vec3};

/// Box dilation (fraction of the extent) applied to part boxes.
pub const BOX_DILATION: f64 = 0.05;
/// Default outlier threshold in standard deviations.
pub const DEFAULT_OUTLIER_K: f64 = 2.0;
const MAX_OUTLIER_ROUNDS: usize = 1000;

/// Per-vertex semantic and geometric features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub vertices: Vec<Vec3>,
    pub diff_features: DMatrix<f64>,
    pub geo_features: DMatrix<f64>,
}

impl FeatureSet {
    pub fn new(vertices: Vec<Vec3>, diff_features: DMatrix<f64>, geo_features: DMatrix<f64>) -> Result<Self> {
        let fs = FeatureSet { vertices, diff_features, geo_features };
        fs.validate()?;
        Ok(fs)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.diff_features.nrows() != n || self.geo_features.nrows() != n {
            return Err(Error::Shape(format!(
                "{n} vertices but feature blocks have {} and {} rows",
                self.diff_features.nrows(),
                self.geo_features.nrows()
            )));
        }
        if !self.diff_features.iter().chain(self.geo_features.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(())
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn around<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        Some(it.fold(Aabb { min: first, max: first }, |b, p| Aabb { min: b.min.inf(p), max: b.max.sup(p) }))
    }

    /// Grows every side by `fraction/2` of the extent (flat axes use the
    /// longest extent).
    pub fn dilated(&self, fraction: f64) -> Self {
        let extent = self.max - self.min;
        let longest = extent.max();
        let pad = extent.map(|e| 0.5 * fraction * if e > 0.0 { e } else { longest });
        Aabb { min: self.min - pad, max: self.max + pad }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }
}

/// Cleaned target labels with per-part geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct PartAssignment {
    pub labels: Vec<Option<usize>>,
    pub part_boxes: Vec<Option<Aabb>>,
    pub part_centroids: Vec<Option<Vec3>>,
}

impl PartAssignment {
    pub fn parts(&self) -> usize {
        self.part_boxes.len()
    }
}

/// Row-wise `[diff | geo]`.
pub fn concat_features(fs: &FeatureSet) -> Result<DMatrix<f64>> {
    fs.validate()?;
    let n = fs.vertices.len();
    let (d1, d2) = (fs.diff_features.ncols(), fs.geo_features.ncols());
    let mut out = DMatrix::zeros(n, d1 + d2);
    out.columns_mut(0, d1).copy_from(&fs.diff_features);
    out.columns_mut(d1, d2).copy_from(&fs.geo_features);
    Ok(out)
}

/// Mean feature row of every part `0..parts`.
pub fn mean_part_features(features: &DMatrix<f64>, labels: &[usize], parts: usize) -> Result<DMatrix<f64>> {
    if labels.len() != features.nrows() {
        return Err(Error::Shape(format!("{} labels for {} feature rows", labels.len(), features.nrows())));
    }
    let mut sums = DMatrix::zeros(parts, features.ncols());
    let mut counts = vec![0usize; parts];
    for (r, &l) in labels.iter().enumerate() {
        if l >= parts {
            return Err(Error::InvalidArgument(format!("label {l} out of range for {parts} parts")));
        }
        let mut row = sums.row_mut(l);
        row += features.row(r);
        counts[l] += 1;
    }
    for (b, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::EmptyPart { part: b });
        }
        let mut row = sums.row_mut(b);
        row /= c as f64;
    }
    Ok(sums)
}

/// Cosine-similarity argmax of every target row against the reference part
/// means. Zero-norm rows are left unassigned.
pub fn match_parts(target_features: &DMatrix<f64>, ref_part_means: &DMatrix<f64>) -> Result<Vec<Option<usize>>> {
    if target_features.ncols() != ref_part_means.ncols() {
        return Err(Error::Shape(format!(
            "target features have {} columns, reference means {}",
            target_features.ncols(),
            ref_part_means.ncols()
        )));
    }
    let mean_norms: Vec<f64> = ref_part_means.row_iter().map(|r| r.norm()).collect();
    let mut zero_rows = 0usize;
    let labels = target_features
        .row_iter()
        .map(|row| {
            let norm = row.norm();
            if norm == 0.0 {
                zero_rows += 1;
                return None;
            }
            let mut best: Option<(usize, f64)> = None;
            for (b, mean) in ref_part_means.row_iter().enumerate() {
                if mean_norms[b] == 0.0 {
                    continue;
                }
                let cos = row.dot(&mean) / (norm * mean_norms[b]);
                if best.is_none_or(|(_, c)| cos > c) {
                    best = Some((b, cos));
                }
            }
            best.map(|(b, _)| b)
        })
        .collect();
    if zero_rows > 0 {
        log::warn!("{zero_rows} target vertices have zero-norm features and stay unassigned");
    }
    Ok(labels)
}

fn part_geometry(vertices: &[Vec3], labels: &[Option<usize>], parts: usize) -> (Vec<Option<Aabb>>, Vec<Option<Vec3>>) {
    let mut members: Vec<Vec<&Vec3>> = vec![Vec::new(); parts];
    for (x, l) in vertices.iter().zip(labels) {
        if let Some(b) = l {
            members[*b].push(x);
        }
    }
    let boxes = members.iter().map(|m| Aabb::around(m.iter().copied()).map(|b| b.dilated(BOX_DILATION))).collect();
    let centroids = members
        .iter()
        .map(|m| (!m.is_empty()).then(|| m.iter().copied().sum::<Vec3>() / m.len() as f64))
        .collect();
    (boxes, centroids)
}

/// Drops labeled vertices farther than `mean + k·std` from their part
/// centroid, repeating on the survivors until nothing changes, so a second
/// application is a no-op.
pub fn remove_outliers(vertices: &[Vec3], labels: &[Option<usize>], parts: usize, k: f64) -> Result<PartAssignment> {
    if vertices.len() != labels.len() {
        return Err(Error::Shape(format!("{} labels for {} vertices", labels.len(), vertices.len())));
    }
    if let Some(bad) = labels.iter().flatten().find(|&&l| l >= parts) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {parts} parts")));
    }
    let mut labels = labels.to_vec();
    for _ in 0..MAX_OUTLIER_ROUNDS {
        let (_, centroids) = part_geometry(vertices, &labels, parts);
        let mut stats = vec![(0usize, 0.0f64, 0.0f64); parts];
        for (x, l) in vertices.iter().zip(&labels) {
            if let Some(b) = *l {
                let d = (x - centroids[b].expect("part has members")).norm();
                stats[b].0 += 1;
                stats[b].1 += d;
                stats[b].2 += d * d;
            }
        }
        let thresholds: Vec<f64> = stats
            .iter()
            .map(|&(n, s, s2)| {
                if n == 0 {
                    return f64::INFINITY;
                }
                let mean = s / n as f64;
                let var = (s2 / n as f64 - mean * mean).max(0.0);
                mean + k * var.sqrt()
            })
            .collect();
        let mut changed = false;
        for (x, l) in vertices.iter().zip(labels.iter_mut()) {
            if let Some(b) = *l {
                let d = (x - centroids[b].expect("part has members")).norm();
                // relative slack keeps exactly-at-threshold points (e.g. zero spread) in
                if d > thresholds[b] * (1.0 + 1e-12) + 1e-300 {
                    *l = None;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let (part_boxes, part_centroids) = part_geometry(vertices, &labels, parts);
    for (b, c) in part_centroids.iter().enumerate() {
        if c.is_none() {
            log::warn!("part {b} has no target vertices after outlier removal");
        }
    }
    Ok(PartAssignment { labels, part_boxes, part_centroids })
}

/// Label of the part box containing each particle; overlaps go to the
/// nearest part centroid, particles outside every box stay unassigned.
pub fn assign_particles(particle_positions: &[Vec3], assignment: &PartAssignment) -> Vec<Option<usize>> {
    particle_positions
        .iter()
        .map(|x| {
            let mut best: Option<(usize, f64)> = None;
            for (b, bx) in assignment.part_boxes.iter().enumerate() {
                let (Some(bx), Some(c)) = (bx, assignment.part_centroids[b]) else { continue };
                if !bx.contains(x) {
                    continue;
                }
                let d = (x - c).norm_squared();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((b, d));
                }
            }
            best.map(|(b, _)| b)
        })
        .collect()
}

/// Part-indexed one-hot features plus Gaussian noise, for tests and
/// synthetic scenes. The one-hot occupies column `part % dims` of each block.
pub fn synthetic_features(
    parts: &[usize],
    diff_dims: usize,
    geo_dims: usize,
    noise: f64,
    rng: &mut impl Rng,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let normal = Normal::new(0.0, noise.max(0.0)).expect("finite noise");
    let mut block = |dims: usize| {
        let mut m = DMatrix::zeros(parts.len(), dims);
        for (r, &p) in parts.iter().enumerate() {
            for c in 0..dims {
                m[(r, c)] = normal.sample(rng);
            }
            if dims > 0 {
                m[(r, p % dims)] += 1.0;
            }
        }
        m
    };
    let diff = block(diff_dims);
    let geo = block(geo_dims);
    (diff, geo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn concat_puts_diff_first() {
        let fs = FeatureSet::new(
            vec![Vec3::zeros()],
            DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            DMatrix::from_row_slice(1, 1, &[3.0]),
        )
        .unwrap();
        assert_eq!(concat_features(&fs).unwrap(), DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]));
    }

    #[test]
    fn concat_with_empty_geo_block() {
        let diff = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let fs = FeatureSet::new(vec![Vec3::zeros(); 2], diff.clone(), DMatrix::zeros(2, 0)).unwrap();
        assert_eq!(concat_features(&fs).unwrap(), diff);
    }

    #[test]
    fn concat_full_size_dimensions() {
        let fs = FeatureSet::new(vec![Vec3::zeros(); 3], DMatrix::zeros(3, 1024), DMatrix::zeros(3, 128)).unwrap();
        assert_eq!(concat_features(&fs).unwrap().shape(), (3, 1152));
    }

    #[test]
    fn row_mismatch_rejected() {
        assert!(FeatureSet::new(vec![Vec3::zeros(); 2], DMatrix::zeros(2, 1), DMatrix::zeros(3, 1)).is_err());
        let mut fs = FeatureSet::new(vec![Vec3::zeros(); 2], DMatrix::zeros(2, 1), DMatrix::zeros(2, 1)).unwrap();
        fs.geo_features = DMatrix::zeros(1, 1);
        assert!(concat_features(&fs).is_err());
    }

    #[test]
    fn mean_of_single_member_and_duplicates() {
        let f = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 5.0, 5.0, 5.0, 5.0]);
        let m = mean_part_features(&f, &[0, 1, 1], 2).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 5.0, 5.0]));
    }

    #[test]
    fn empty_part_is_named() {
        let f = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(matches!(mean_part_features(&f, &[0, 2], 3), Err(Error::EmptyPart { part: 1 })));
    }

    #[test]
    fn match_identical_and_one_hot() {
        let means = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let targets = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0]);
        assert_eq!(match_parts(&targets, &means).unwrap(), vec![Some(1), Some(2), None]);
    }

    #[test]
    fn match_ties_go_low() {
        let means = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let targets = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert_eq!(match_parts(&targets, &means).unwrap(), vec![Some(0)]);
    }

    fn sphere(n: usize, center: Vec3, r: f64) -> Vec<Vec3> {
        (0..n)
            .map(|i| {
                let t = i as f64 / n as f64 * std::f64::consts::TAU;
                center + Vec3::new(t.cos(), t.sin(), 0.0) * r
            })
            .collect()
    }

    #[test]
    fn tight_cluster_keeps_everything() {
        let pts = sphere(40, Vec3::new(1.0, 2.0, 3.0), 0.5);
        let a = remove_outliers(&pts, &vec![Some(0); 40], 1, 2.0).unwrap();
        assert!(a.labels.iter().all(|l| *l == Some(0)));
    }

    #[test]
    fn identical_points_keep_everything() {
        let pts = vec![Vec3::new(1.0, 1.0, 1.0); 10];
        let a = remove_outliers(&pts, &vec![Some(0); 10], 1, 2.0).unwrap();
        assert!(a.labels.iter().all(|l| *l == Some(0)));
    }

    #[test]
    fn far_point_is_removed() {
        let mut pts = sphere(30, Vec3::zeros(), 1.0);
        pts.push(Vec3::new(10.0, 0.0, 0.0));
        let labels = vec![Some(0); pts.len()];
        // with the far point: distances ≈ 1 (30×) and ≈ 10; mean + 2σ ≈ 1.29 + 2·1.6 < 10
        let a = remove_outliers(&pts, &labels, 1, 2.0).unwrap();
        assert_eq!(a.labels[30], None);
        assert!(a.labels[..30].iter().all(|l| *l == Some(0)));
        let bx = a.part_boxes[0].unwrap();
        assert!(bx.max.x < 2.0);
        assert_relative_eq!(a.part_centroids[0].unwrap(), Vec3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn assign_particles_rules() {
        let a = PartAssignment {
            labels: vec![],
            part_boxes: vec![
                Some(Aabb { min: Vec3::zeros(), max: Vec3::repeat(2.0) }),
                Some(Aabb { min: Vec3::repeat(1.0), max: Vec3::repeat(3.0) }),
            ],
            part_centroids: vec![Some(Vec3::repeat(1.0)), Some(Vec3::repeat(2.0))],
        };
        let pts = [Vec3::repeat(0.5), Vec3::repeat(2.5), Vec3::repeat(1.4), Vec3::repeat(1.6), Vec3::repeat(5.0)];
        assert_eq!(assign_particles(&pts, &a), vec![Some(0), Some(1), Some(0), Some(1), None]);
    }

    #[test]
    fn synthetic_features_are_seeded() {
        let parts = [0, 1, 2, 1];
        let a = synthetic_features(&parts, 4, 2, 0.05, &mut ChaCha8Rng::seed_from_u64(3));
        let b = synthetic_features(&parts, 4, 2, 0.05, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!(a.0[(1, 1)] > 0.5 && a.1[(2, 0)] > 0.5);
    }
}
