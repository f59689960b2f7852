//! Grid-cell downsampling into control points and per-cell velocity sharing.

use std::collections::BTreeMap;

use crate::{Error, Result, Vec3};

use super::state::bounding_box;

/// Particles grouped by control cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGroups {
    /// Control index of every particle.
    pub assignment: Vec<usize>,
    /// Member count of every control point.
    pub counts: Vec<usize>,
}

impl ControlGroups {
    pub fn new(assignment: Vec<usize>) -> Self {
        let n = assignment.iter().copied().max().map_or(0, |m| m + 1);
        let mut counts = vec![0; n];
        for &a in &assignment {
            counts[a] += 1;
        }
        ControlGroups { assignment, counts }
    }

    /// Replaces every vector by the mean of its group. The operator is a
    /// symmetric projection, so it is also its own adjoint.
    pub fn share(&self, values: &mut [Vec3]) {
        let mut sums = vec![Vec3::zeros(); self.counts.len()];
        for (v, &a) in values.iter().zip(&self.assignment) {
            sums[a] += v;
        }
        for (s, &c) in sums.iter_mut().zip(&self.counts) {
            if c > 0 {
                *s /= c as f64;
            }
        }
        for (v, &a) in values.iter_mut().zip(&self.assignment) {
            *v = sums[a];
        }
    }

    /// True when every group has a single member (sharing is the identity).
    pub fn is_trivial(&self) -> bool {
        self.counts.iter().all(|&c| c <= 1)
    }
}

/// Buckets particles into a `resolution³` lattice over their bounding box.
///
/// Returns one control point per occupied cell (the mean of its particles,
/// ordered by cell index) and the control index of every particle.
pub fn control_points(positions: &[Vec3], resolution: usize) -> Result<(Vec<Vec3>, Vec<usize>)> {
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!("control resolution must be ≥ 2, got {resolution}")));
    }
    let Some((lo, hi)) = bounding_box(positions) else {
        return Ok((Vec::new(), Vec::new()));
    };
    let extent = hi - lo;
    let cell_of = |x: &Vec3| -> usize {
        let mut idx = 0usize;
        for a in 0..3 {
            let c = if extent[a] > 0.0 {
                (((x[a] - lo[a]) / extent[a] * resolution as f64) as usize).min(resolution - 1)
            } else {
                0
            };
            idx = idx * resolution + c;
        }
        idx
    };
    let cells: Vec<usize> = positions.iter().map(cell_of).collect();
    let mut order: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in &cells {
        order.entry(c).or_insert(0);
    }
    for (k, slot) in order.values_mut().enumerate() {
        *slot = k;
    }
    let assignment: Vec<usize> = cells.iter().map(|c| order[c]).collect();
    let mut sums = vec![Vec3::zeros(); order.len()];
    let mut counts = vec![0usize; order.len()];
    for (x, &a) in positions.iter().zip(&assignment) {
        sums[a] += x;
        counts[a] += 1;
    }
    let points = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    Ok((points, assignment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_cell_gives_mean() {
        // a tiny cluster far from a second point puts the cluster in one cell
        let mut pts = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.01, 0.0, 0.0), Vec3::new(0.0, 0.02, 0.01)];
        pts.push(Vec3::new(10.0, 10.0, 10.0));
        let (ctrl, assign) = control_points(&pts, 41).unwrap();
        assert_eq!(ctrl.len(), 2);
        assert_eq!(assign[0], assign[1]);
        assert_eq!(assign[0], assign[2]);
        assert_relative_eq!(ctrl[assign[0]], Vec3::new(0.01 / 3.0, 0.02 / 3.0, 0.01 / 3.0), epsilon = 1e-15);
    }

    #[test]
    fn distinct_cells_reproduce_inputs() {
        let pts: Vec<Vec3> = (0..4)
            .flat_map(|i| (0..4).map(move |j| Vec3::new(i as f64 + 0.5, j as f64 + 0.5, 0.0)))
            .collect();
        let (ctrl, assign) = control_points(&pts, 4).unwrap();
        assert_eq!(ctrl.len(), pts.len());
        for (p, &a) in pts.iter().zip(&assign) {
            assert_eq!(ctrl[a], *p);
        }
    }

    #[test]
    fn share_averages_groups() {
        let groups = ControlGroups::new(vec![0, 1, 0, 1, 2]);
        let mut v = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
            Vec3::new(3.0, 0.0, 0.0),
            Vec3::new(0.0, 4.0, 0.0),
            Vec3::new(5.0, 5.0, 5.0),
        ];
        groups.share(&mut v);
        assert_eq!(v[0], Vec3::new(2.0, 0.0, 0.0));
        assert_eq!(v[2], Vec3::new(2.0, 0.0, 0.0));
        assert_eq!(v[3], Vec3::new(0.0, 3.0, 0.0));
        assert_eq!(v[4], Vec3::new(5.0, 5.0, 5.0));
        assert!(!groups.is_trivial());
    }

    #[test]
    fn rejects_low_resolution() {
        assert!(control_points(&[Vec3::zeros()], 1).is_err());
        assert_eq!(control_points(&[], 4).unwrap().0.len(), 0);
    }
}
