use multislam::geometry::{Pose, Rotation, Vec3};
use multislam::pcm::*;
use multislam::pose_graph::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_graph(rng: &mut impl Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < p {
                e.push((a, b));
            }
        }
    }
    e
}

#[test]
fn heuristic_tracks_exact_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut hits = 0;
    for _ in 0..200 {
        let g = AdjacencyGraph::from_edges(30, &random_graph(&mut rng, 30, 0.5));
        let exact = brute_force_max_clique(&g).unwrap();
        let heur = max_clique_batch(&g, &SearchOptions::default());
        let bnb = max_clique_batch(&g, &SearchOptions::exact());
        heur.verify(&g).unwrap();
        assert!(heur.size <= exact.size);
        assert_eq!(bnb.members, exact.members);
        assert!(!heur.is_exact && bnb.is_exact);
        hits += usize::from(heur.size == exact.size);
    }
    assert!(hits >= 190, "heuristic matched exact in {hits}/200");
}

/// Builds a Manhattan chain and returns the odometry index plus its loops
/// (clean ones exact with respect to ground truth).
fn manhattan_candidates(poses: u32, outliers: usize, seed: u64) -> (MultiRobotPoseGraph, Vec<CandidateLoop>) {
    let g = generate_manhattan(&ManhattanConfig { poses, seed, ..Default::default() });
    let g = inject_outliers(&g, outliers, seed);
    let odo = OdometryIndex::build(&g).unwrap();
    let c = g.loop_closures().map(|(i, m)| CandidateLoop::new(i as u64, *m, &odo).unwrap()).collect();
    (g, c)
}

#[test]
fn cycle_residual_matches_straight_line_composition() {
    // Oracle: walk the cycle step by step through the raw odometry edges.
    let (g, cands) = manhattan_candidates(300, 10, 4);
    let steps: Vec<Pose> = g.measurements().iter().filter(|m| m.kind == EdgeKind::Odometry).map(|m| m.transform).collect();
    let walk = |from: u32, to: u32| {
        let mut p = Pose::identity();
        if from <= to {
            for s in &steps[from as usize..to as usize] {
                p = p.compose(s);
            }
        } else {
            for s in steps[to as usize..from as usize].iter().rev() {
                p = p.compose(&s.inverse());
            }
        }
        p
    };
    for a in cands.iter().take(20) {
        for b in cands.iter().rev().take(20) {
            let (x, y) = if a.id <= b.id { (a, b) } else { (b, a) };
            let (mx, my) = (&x.measurement, &y.measurement);
            let oracle = mx
                .transform
                .compose(&walk(mx.to.index, my.to.index))
                .compose(&my.transform.inverse())
                .compose(&walk(my.from.index, mx.from.index));
            let (r, _, _) = cycle_residual(a, b).unwrap();
            assert!((r.translation - oracle.translation).norm() < 1e-8);
            assert!((r.rotation.matrix() - oracle.rotation.matrix()).norm() < 1e-10);
        }
    }
}

#[test]
fn clean_loop_is_inconsistent_with_offset_copy() {
    let (g, cands) = manhattan_candidates(400, 0, 8);
    let truth = g.ground_truth.as_ref().unwrap();
    let clean = cands[cands.len() / 2];
    let mut outlier = clean;
    outlier.id = 10_000;
    outlier.measurement.transform = truth.get(&clean.measurement.from).unwrap().between(truth.get(&clean.measurement.to).unwrap());
    outlier.measurement.transform.translation.x += 10.0;
    let cfg = PcmConfig { trans_threshold: 1.0, use_covariance_scaling: false, ..Default::default() };
    let (r, _, _) = cycle_residual(&clean, &outlier).unwrap();
    assert!(r.translation.norm() > 9.0);
    assert!(!pairwise_consistent(&clean, &outlier, &cfg));
    assert!(pairwise_consistent(&clean, &clean, &cfg));
}

#[test]
fn segment_variance_matches_monte_carlo() {
    // Oracle: sample noisy planar chains and measure the spread of the
    // endpoint error around the noiseless endpoint.
    let (sr, st) = (0.02, 0.05);
    let n: u32 = 40;
    let truth_step = |i: u32| Pose::planar(1.0, 0.0, if i % 7 == 3 { std::f64::consts::FRAC_PI_2 } else { 0.0 });
    let mut g = MultiRobotPoseGraph::new();
    g.planar = true;
    g.add_robot(0, n + 1);
    for i in 0..n {
        let m = RelativeMeasurement::new(PoseKey::new(0, i), PoseKey::new(0, i + 1), truth_step(i), 1.0 / (sr * sr), 1.0 / (st * st));
        g.add_measurement(m).unwrap();
    }
    let idx = OdometryIndex::build(&g).unwrap();
    let (a, b) = (idx.anchor(&PoseKey::new(0, 5)).unwrap(), idx.anchor(&PoseKey::new(0, 35)).unwrap());
    let (rv, tv) = OdometryAnchor::segment_variance(a, b, &b.pose.translation);
    let exact = a.pose.between(&b.pose);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (nr, nt) = (Normal::new(0.0, sr).unwrap(), Normal::new(0.0, st).unwrap());
    let trials = 20000;
    let (mut er, mut et) = (0.0, 0.0);
    for _ in 0..trials {
        let mut p = Pose::identity();
        for i in 5..35 {
            let noise = Pose::new(Rotation::about_z(nr.sample(&mut rng)), Vec3::new(nt.sample(&mut rng), nt.sample(&mut rng), 0.0));
            p = p.compose(&truth_step(i).compose(&noise));
        }
        let e = exact.between(&p);
        er += e.rotation.angle().powi(2);
        et += (a.pose.compose(&p).translation - b.pose.translation).norm_squared();
    }
    let (er, et) = (er / trials as f64, et / trials as f64);
    assert!((er - rv).abs() < 0.05 * rv, "rotation {er} vs {rv}");
    assert!((et - tv).abs() < 0.1 * tv, "translation {et} vs {tv}");
}

fn filter_counts(o: &MultiRobotPoseGraph, cfg: &PcmConfig) -> (usize, usize) {
    let odo = OdometryIndex::build(o).unwrap();
    let (mut clean_dropped, mut outliers_dropped) = (0, 0);
    for (i, m) in o.loop_closures() {
        if !odometry_consistency_filter(&CandidateLoop::new(i as u64, *m, &odo).unwrap(), cfg) {
            if o.injected_outliers().contains(&i) {
                outliers_dropped += 1;
            } else {
                clean_dropped += 1;
            }
        }
    }
    (clean_dropped, outliers_dropped)
}

#[test]
fn odometry_filter_keeps_clean_loops_and_drops_some_outliers() {
    let exact = generate_manhattan(&ManhattanConfig { sigma_rotation: 0.0, sigma_translation: 0.0, ..Default::default() });
    let fixed = PcmConfig { use_covariance_scaling: false, ..Default::default() };
    let (clean, outliers) = filter_counts(&inject_outliers(&exact, 1000, 1), &fixed);
    assert_eq!(clean, 0);
    assert!(outliers > 900, "{outliers}");

    let noisy = generate_manhattan(&ManhattanConfig::default());
    let (clean, outliers) = filter_counts(&inject_outliers(&noisy, 1000, 1), &PcmConfig::default());
    assert_eq!(clean, 0);
    assert!(outliers > 0 && outliers < 1000, "{outliers}");
}

#[test]
fn select_inliers_on_small_manhattan() {
    let g = generate_manhattan(&ManhattanConfig { poses: 800, seed: 3, ..Default::default() });
    let o = inject_outliers(&g, 200, 3);
    let out = select_inliers(&o, &PcmConfig::default()).unwrap();
    let bad = out.accepted.iter().filter(|i| o.injected_outliers().contains(i)).count();
    let clean = o.loop_closures().count() - 200;
    assert!(bad <= 2, "{bad} outliers accepted");
    assert!(out.accepted.len() - bad >= clean * 95 / 100);
}

fn arb_graph(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>, Vec<usize>)> {
    (1..=max_n, 0.05f64..0.95, any::<u64>()).prop_map(|(n, p, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges = random_graph(&mut rng, n, p);
        let mut cuts: Vec<usize> = (0..rng.random_range(1..5)).map(|_| rng.random_range(1..=n)).collect();
        cuts.push(n);
        cuts.sort_unstable();
        cuts.dedup();
        (n, edges, cuts)
    })
}

/// Replays `edges` into a graph in batches ending at each cut.
fn replay(n: usize, edges: &[(usize, usize)], cuts: &[usize], mut each: impl FnMut(&mut AdjacencyGraph)) -> AdjacencyGraph {
    let full = AdjacencyGraph::from_edges(n, edges);
    let mut g = AdjacencyGraph::new();
    let mut start = 0;
    for &cut in cuts {
        for v in start..cut {
            let nb: Vec<usize> = (0..v).filter(|&u| full.adjacent(u, v)).collect();
            g.push_vertex(v as u64, &nb).unwrap();
        }
        start = cut;
        each(&mut g);
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn incremental_dichotomy_with_exact_search((n, edges, cuts) in arb_graph(25)) {
        let mut prev = CliqueResult::empty();
        replay(n, &edges, &cuts, |g| {
            let before = prev.size;
            let frontier: Vec<u64> = g.frontier().iter().map(|&v| g.ids()[v]).collect();
            let next = max_clique_incremental(g, &prev, &SearchOptions::exact()).unwrap();
            let oracle = brute_force_max_clique(g).unwrap();
            next.verify(g).unwrap();
            assert_eq!(next.size, oracle.size);
            if next.size == before {
                assert_eq!(next.members, prev.members);
            } else {
                assert!(next.size > before);
                assert!(next.members.iter().any(|m| frontier.contains(m)));
            }
            prev = next;
        });
    }

    #[test]
    fn heuristic_incremental_is_sound_and_monotone((n, edges, cuts) in arb_graph(60)) {
        let mut prev = CliqueResult::empty();
        let g = replay(n, &edges, &cuts, |g| {
            let frontier: Vec<u64> = g.frontier().iter().map(|&v| g.ids()[v]).collect();
            let next = max_clique_incremental(g, &prev, &SearchOptions::default()).unwrap();
            next.verify(g).unwrap();
            assert!(next.size >= prev.size);
            if next.size > prev.size {
                assert!(next.members.iter().any(|m| frontier.contains(m)));
            }
            assert!(g.frontier().is_empty());
            prev = next;
        });
        let batch = max_clique_batch(&g, &SearchOptions::default());
        batch.verify(&g).unwrap();
        prop_assert_eq!(batch.clone(), max_clique_batch(&g, &SearchOptions::default()));
        prop_assert!(batch.size <= brute_force_max_clique(&g).map(|r| r.size).unwrap_or(usize::MAX));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn consistency_is_symmetric_and_insertion_order_free(seed in 0u64..500, split in 1usize..40) {
        let (_, cands) = manhattan_candidates(500, 30, seed);
        let cfg = PcmConfig::default();
        for a in cands.iter().step_by(7) {
            for b in cands.iter().step_by(5) {
                prop_assert_eq!(pairwise_consistent(a, b, &cfg), pairwise_consistent(b, a, &cfg));
            }
        }
        let split = split.min(cands.len());
        let mut one = ConsistencyGraph::new(cfg);
        one.add_candidates(cands.clone()).unwrap();
        let mut two = ConsistencyGraph::new(PcmConfig { execution: multislam::par::Execution::Sequential, ..cfg });
        let k1 = two.add_candidates(cands[..split].to_vec()).unwrap();
        let k2 = two.add_candidates(cands[split..].to_vec()).unwrap();
        let (n, k) = (split as u64, (cands.len() - split) as u64);
        prop_assert_eq!(k1, n * (n - 1) / 2);
        prop_assert_eq!(k2, k * n + k * k.saturating_sub(1) / 2);
        for a in 0..cands.len() {
            for b in 0..cands.len() {
                prop_assert_eq!(one.graph().adjacent(a, b), two.graph().adjacent(a, b));
            }
        }
    }
}
