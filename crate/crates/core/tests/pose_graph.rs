use multislam::geometry::{Pose, Rotation, Vec3};
use multislam::pose_graph::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn loops(g: &MultiRobotPoseGraph) -> usize {
    g.loop_closures().count()
}

#[test]
fn manhattan_scale_matches_benchmark() {
    let g = generate_manhattan(&ManhattanConfig::default());
    assert_eq!(g.total_poses(), 3500);
    assert!(loops(&g) > 2000, "only {} loops", loops(&g));
    let text = serialize_g2o(&g, g.ground_truth.as_ref().unwrap()).unwrap();
    let back = parse_g2o(&text).unwrap();
    assert_eq!(back.graph.total_poses(), 3500);
    assert_eq!(loops(&back.graph), loops(&g));
}

#[test]
fn outlier_injection_on_manhattan_adds_exactly_count() {
    let g = generate_manhattan(&ManhattanConfig::default());
    let o = inject_outliers(&g, 1000, 7);
    assert_eq!(o.measurements().len(), g.measurements().len() + 1000);
    assert_eq!(o.injected_outliers().len(), 1000);
}

#[test]
fn partitioned_round_trip_encodes_robot_ids() {
    let g = generate_manhattan(&ManhattanConfig { poses: 900, ..Default::default() });
    let p = partition(&g, 3).unwrap();
    let truth = p.ground_truth.clone().unwrap();
    let text = serialize_g2o(&p, &truth).unwrap();
    assert!(text.contains(&format!("VERTEX_SE2 {} ", 2 * ROBOT_KEY_STRIDE)));
    let back = parse_g2o(&text).unwrap();
    assert_eq!(back.graph.robots().collect::<Vec<_>>(), vec![0, 1, 2]);
    for (a, b) in back.graph.measurements().iter().zip(p.measurements()) {
        assert_eq!((a.from, a.to, a.kind), (b.from, b.to, b.kind));
        assert!((a.transform.translation - b.transform.translation).norm() < 1e-12);
        assert!((a.transform.rotation.matrix() - b.transform.rotation.matrix()).norm() < 1e-12);
    }
    for (k, pose) in back.initial.iter() {
        assert!((pose.translation - truth.get(k).unwrap().translation).norm() < 1e-12);
    }
}

#[test]
fn ate_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let g = generate_manhattan(&ManhattanConfig { poses: 100, ..Default::default() });
    let truth = g.ground_truth.unwrap();
    let mut total = 0.0;
    let trials = 50;
    for _ in 0..trials {
        let est: Trajectory = truth
            .iter()
            .map(|(k, p)| {
                let d = Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
                (*k, Pose::new(p.rotation, p.translation + d))
            })
            .collect();
        total += ate(&est, &truth).unwrap();
    }
    let mean = total / trials as f64;
    let expected = 0.1 * 3f64.sqrt();
    assert!((mean - expected).abs() < 0.2 * expected, "{mean}");
}

fn poses_close(a: &Pose, b: &Pose) -> bool {
    (a.translation - b.translation).norm() < 1e-12 && (a.rotation.matrix() - b.rotation.matrix()).norm() < 1e-12
}

fn graphs_close(a: &MultiRobotPoseGraph, b: &MultiRobotPoseGraph) -> bool {
    a.robots().eq(b.robots())
        && a.robots().all(|r| a.pose_count(r) == b.pose_count(r))
        && a.measurements().len() == b.measurements().len()
        && a.measurements().iter().zip(b.measurements()).all(|(x, y)| {
            (x.from, x.to, x.kind) == (y.from, y.to, y.kind)
                && (x.kappa - y.kappa).abs() < 1e-9 * y.kappa
                && (x.tau - y.tau).abs() < 1e-9 * y.tau
                && poses_close(&x.transform, &y.transform)
        })
}

fn arb_pose() -> impl Strategy<Value = Pose> {
    (prop::array::uniform3(-3.0..3.0f64), prop::array::uniform3(-20.0..20.0f64))
        .prop_map(|(w, t)| Pose::new(Rotation::exp(&Vec3::from(w)), Vec3::from(t)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pgo_cost_is_gauge_invariant(seed in 0u64..1000, gauge in arb_pose()) {
        let g = generate_manhattan(&ManhattanConfig { poses: 150, seed, ..Default::default() });
        let truth = g.ground_truth.clone().unwrap();
        let a = pgo_cost(&g, &truth).unwrap();
        let b = pgo_cost(&g, &truth.transformed(&gauge)).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * a.max(1.0));
    }

    #[test]
    fn ate_is_zero_under_rigid_motion_and_symmetric(seed in 0u64..1000, gauge in arb_pose()) {
        let g = generate_manhattan(&ManhattanConfig { poses: 120, seed, sigma_translation: 0.2, ..Default::default() });
        let truth = g.ground_truth.clone().unwrap();
        prop_assert!(ate(&truth.transformed(&gauge), &truth).unwrap() < 1e-8);
        let dead = OdometryIndex::build(&g).unwrap().trajectory();
        let (ab, ba) = (ate(&dead, &truth).unwrap(), ate(&truth, &dead).unwrap());
        prop_assert!((ab - ba).abs() < 0.1 * ab.max(1e-9) + 1e-9);
    }

    #[test]
    fn partition_and_injection_conserve_measurements(seed in 0u64..1000, robots in 1usize..6, count in 0usize..40) {
        let g = generate_manhattan(&ManhattanConfig { poses: 200, seed, ..Default::default() });
        let o = inject_outliers(&g, count, seed);
        prop_assert_eq!(&o.measurements()[..g.measurements().len()], g.measurements());
        let p = partition(&o, robots).unwrap();
        prop_assert_eq!(p.measurements().len(), o.measurements().len());
        prop_assert!(p.validate().is_ok());
        let text = serialize_g2o(&p, p.ground_truth.as_ref().unwrap()).unwrap();
        let back = parse_g2o(&text).unwrap();
        let again = parse_g2o(&serialize_g2o(&back.graph, &back.initial).unwrap()).unwrap();
        prop_assert!(graphs_close(&again.graph, &p));
        prop_assert!(graphs_close(&back.graph, &p));
    }
}
