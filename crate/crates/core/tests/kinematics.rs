use approx::assert_relative_eq;
use motrans::kinematics::{
    backward_warp, forward_warp, part_labels, skinning_weights, Bone, BoneFrame, Rigid, SkinningModel,
};
use motrans::{Mat3, Vec3};
use nalgebra::{Rotation3, Translation3, UnitQuaternion};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
    let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    Rotation3::new(axis.normalize() * rng.random_range(0.0..std::f64::consts::PI))
}

fn random_bone(rng: &mut ChaCha8Rng) -> Bone {
    let c = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let s = Vec3::new(rng.random_range(0.05..0.8), rng.random_range(0.05..0.8), rng.random_range(0.05..0.8));
    Bone::new(c, *random_rotation(rng).matrix(), s).unwrap()
}

fn random_rigid(rng: &mut ChaCha8Rng) -> Rigid {
    let t = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    Rigid::from_parts(Translation3::from(t), UnitQuaternion::from_rotation_matrix(&random_rotation(rng)))
}

// Mahalanobis distance through the explicit covariance inverse, not the
// rotate-and-divide shortcut the library uses.
fn covariance_distance(b: &Bone, x: &Vec3) -> f64 {
    let r = b.orientation.matrix();
    let sigma = r * Mat3::from_diagonal(&b.scales.component_mul(&b.scales)) * r.transpose();
    let d = x - b.center;
    (d.transpose() * sigma.try_inverse().unwrap() * d)[0]
}

#[test]
fn part_labels_equal_brute_force_argmin() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bones: Vec<Bone> = (0..6).map(|_| random_bone(&mut rng)).collect();
    let model = SkinningModel::new(bones.clone()).unwrap();
    let points: Vec<Vec3> = (0..10_000)
        .map(|_| Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)))
        .collect();
    let labels = part_labels(&points, &model).unwrap();
    for (x, l) in points.iter().zip(&labels) {
        let d: Vec<f64> = bones.iter().map(|b| covariance_distance(b, x)).collect();
        let best = (0..d.len()).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
        assert_eq!(*l, best, "at {x:?}: distances {d:?}");
    }
}

#[test]
fn single_bone_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let model = SkinningModel::new(vec![random_bone(&mut rng)]).unwrap();
        let frame = BoneFrame { global: random_rigid(&mut rng), joints: vec![random_rigid(&mut rng)] };
        let x = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let y = forward_warp(&x, &model, &frame).unwrap();
        let expected = frame.global * frame.joints[0] * nalgebra::Point3::from(x);
        assert_relative_eq!(y, expected.coords, epsilon = 1e-9);
        let back = backward_warp(&y, &model, &frame).unwrap();
        assert!((back - x).norm() <= 1e-9, "{back:?} vs {x:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_are_a_partition_of_unity(seed in any::<u64>(), bones in 1usize..9, posed in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = SkinningModel::new((0..bones).map(|_| random_bone(&mut rng)).collect()).unwrap();
        let frame = BoneFrame { global: Rigid::identity(), joints: (0..bones).map(|_| random_rigid(&mut rng)).collect() };
        for _ in 0..20 {
            let x = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let w = skinning_weights(&x, &model, posed.then_some(&frame)).unwrap();
            prop_assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn labels_are_rigid_invariant(seed in any::<u64>()) {
        // Moving the bones and the points together must not change labels.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bones: Vec<Bone> = (0..4).map(|_| random_bone(&mut rng)).collect();
        let t = random_rigid(&mut rng);
        let moved: Vec<Bone> = bones.iter().map(|b| b.transformed(&t)).collect();
        let points: Vec<Vec3> = (0..50)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let moved_points: Vec<Vec3> = points.iter().map(|x| (t * nalgebra::Point3::from(*x)).coords).collect();
        let a = part_labels(&points, &SkinningModel::new(bones).unwrap()).unwrap();
        let b = part_labels(&moved_points, &SkinningModel::new(moved).unwrap()).unwrap();
        let agree = a.iter().zip(&b).filter(|(x, y)| x == y).count();
        // near-ties may flip under rounding
        prop_assert!(agree >= 49, "{agree}");
    }
}
