use motrans::correspondence::{assign_particles, match_parts, mean_part_features, remove_outliers};
use motrans::Vec3;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

// Normalize everything up front, then score every (row, part) pair.
fn exhaustive(target: &DMatrix<f64>, means: &DMatrix<f64>) -> Vec<Option<usize>> {
    let unit = |m: &DMatrix<f64>| -> Vec<Option<Vec<f64>>> {
        m.row_iter()
            .map(|r| {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                (n > 0.0).then(|| r.iter().map(|v| v / n).collect())
            })
            .collect()
    };
    let (t, m) = (unit(target), unit(means));
    t.iter()
        .map(|row| {
            let row = row.as_ref()?;
            let scores: Vec<(usize, f64)> = m
                .iter()
                .enumerate()
                .filter_map(|(b, mean)| mean.as_ref().map(|mean| (b, row.iter().zip(mean).map(|(a, b)| a * b).sum())))
                .collect();
            let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
            scores.iter().find(|s| s.1 == best).map(|s| s.0)
        })
        .collect()
}

#[test]
fn match_equals_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for instance in 0..200 {
        let dims = rng.random_range(2..24);
        let target = random_matrix(200, dims, &mut rng);
        let means = random_matrix(5, dims, &mut rng);
        let got = match_parts(&target, &means).unwrap();
        let want = exhaustive(&target, &means);
        // Summation order differs, so near-ties (within rounding) may go
        // either way; everything else must agree exactly.
        for (r, (g, w)) in got.iter().zip(&want).enumerate() {
            if g != w {
                let row = target.row(r);
                let cos = |b: usize| row.dot(&means.row(b)) / (row.norm() * means.row(b).norm());
                let gap = (cos(g.unwrap()) - cos(w.unwrap())).abs();
                assert!(gap < 1e-12, "instance {instance} row {r}: {g:?} vs {w:?} (gap {gap:e})");
            }
        }
    }
}

#[test]
fn zero_rows_stay_unassigned_and_zero_means_are_skipped() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut target = random_matrix(20, 6, &mut rng);
    target.row_mut(4).fill(0.0);
    let mut means = random_matrix(5, 6, &mut rng);
    means.row_mut(2).fill(0.0);
    let got = match_parts(&target, &means).unwrap();
    assert_eq!(got[4], None);
    assert!(got.iter().flatten().all(|&b| b != 2));
    assert_eq!(got, exhaustive(&target, &means));
}

#[test]
fn mean_features_feed_matching() {
    // Reference rows that are one-hot per part recover their own parts.
    let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
    let features = DMatrix::from_fn(50, 5, |r, c| if labels[r] == c { 2.0 } else { 0.0 });
    let means = mean_part_features(&features, &labels, 5).unwrap();
    let got = match_parts(&features, &means).unwrap();
    assert_eq!(got, labels.iter().map(|&l| Some(l)).collect::<Vec<_>>());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn labels_invariant_under_positive_row_scaling(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = random_matrix(200, 8, &mut rng);
        let means = random_matrix(5, 8, &mut rng);
        let mut scaled = target.clone();
        for mut row in scaled.row_iter_mut() {
            row *= 10f64.powf(rng.random_range(-3.0..3.0));
        }
        let mut scaled_means = means.clone();
        for mut row in scaled_means.row_iter_mut() {
            row *= 10f64.powf(rng.random_range(-3.0..3.0));
        }
        let a = match_parts(&target, &means).unwrap();
        let b = match_parts(&scaled, &scaled_means).unwrap();
        let agree = a.iter().zip(&b).filter(|(x, y)| x == y).count();
        // only rounding-level near-ties can flip
        prop_assert!(agree >= 199, "{agree}");
    }

    #[test]
    fn remove_outliers_is_idempotent(seed in any::<u64>(), k in 0.5f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts = 3;
        let vertices: Vec<Vec3> = (0..150)
            .map(|i| {
                let c = (i % parts) as f64 * 2.0;
                let spread = if rng.random_bool(0.05) { 3.0 } else { 0.3 };
                Vec3::new(c + rng.random_range(-spread..spread), rng.random_range(-spread..spread), rng.random_range(-spread..spread))
            })
            .collect();
        let labels: Vec<Option<usize>> =
            (0..150).map(|i| if rng.random_bool(0.1) { None } else { Some(i % parts) }).collect();
        let once = remove_outliers(&vertices, &labels, parts, k).unwrap();
        let twice = remove_outliers(&vertices, &once.labels, parts, k).unwrap();
        prop_assert_eq!(&once, &twice);
        // removal only ever clears labels
        for (before, after) in labels.iter().zip(&once.labels) {
            prop_assert!(after.is_none() || after == before);
        }
        // every surviving vertex lies inside its part box
        let assigned = assign_particles(&vertices, &once);
        for (l, a) in once.labels.iter().zip(&assigned) {
            if l.is_some() {
                prop_assert!(a.is_some());
            }
        }
    }
}
