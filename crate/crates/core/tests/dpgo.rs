use multislam::dpgo::*;
use multislam::geometry::{Pose, Rotation, Vec3};
use multislam::pose_graph::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_graph(seed: u64, poses: u32, robots: usize) -> MultiRobotPoseGraph {
    let cfg = ManhattanConfig { poses, blocks: 4, seed, ..Default::default() };
    partition(&generate_manhattan(&cfg), robots).unwrap()
}

fn random_start(g: &MultiRobotPoseGraph, rank: usize, seed: u64) -> LiftedEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t: Trajectory = g
        .keys()
        .map(|k| {
            let w = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let p = Vec3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
            (k, Pose::new(Rotation::exp(&w), p))
        })
        .collect();
    lift(&t, rank)
}

/// Same measurement noise, ground truth moved by `a`.
fn regauge(g: &MultiRobotPoseGraph, a: &Pose) -> MultiRobotPoseGraph {
    let truth = g.ground_truth.as_ref().unwrap();
    let moved = truth.transformed(a);
    let mut out = MultiRobotPoseGraph::new();
    for r in g.robots() {
        out.add_robot(r, g.pose_count(r));
    }
    out.planar = g.planar;
    for m in g.measurements() {
        let (ti, tj) = (truth.get(&m.from).unwrap(), truth.get(&m.to).unwrap());
        let noise = ti.between(tj).inverse().compose(&m.transform);
        let (mi, mj) = (moved.get(&m.from).unwrap(), moved.get(&m.to).unwrap());
        let mut n = *m;
        n.transform = mi.between(mj).compose(&noise);
        out.add_measurement(n).unwrap();
    }
    out.ground_truth = Some(moved);
    out
}

fn converged() -> RbcdConfig {
    RbcdConfig { max_iterations: 30_000, cost_tolerance: 1e-13, ..RbcdConfig::default() }
}

#[test]
fn odometry_init_beats_random_init() {
    for seed in 0..20 {
        let g = small_graph(seed, 300, 3);
        let a = lifted_cost(&g, &chordal_init(&g, 5).unwrap()).unwrap();
        let b = lifted_cost(&g, &random_start(&g, 5, seed)).unwrap();
        assert!(a <= b, "seed {seed}: {a} > {b}");
    }
}

#[test]
fn descent_and_feasibility_for_every_schedule() {
    let g = small_graph(7, 400, 4);
    for cfg in [
        RbcdConfig::default(),
        RbcdConfig { block_order: BlockOrder::Greedy, ..RbcdConfig::default() },
        RbcdConfig::early_stop(),
        RbcdConfig { rank: 3, ..RbcdConfig::default() },
    ] {
        for init in [chordal_init(&g, cfg.rank).unwrap(), random_start(&g, cfg.rank, 1)] {
            let (x, trace) = rbcd_solve_from(&g, init, &cfg).unwrap();
            let mut prev = trace.initial_cost;
            for e in &trace.entries {
                assert!(e.cost <= prev + 1e-12, "{cfg:?} iteration {}", e.iteration);
                prev = e.cost;
            }
            assert!(x.max_stiefel_residual() <= 1e-8);
            let rounded = pgo_cost(&g, &round_solution(&x).trajectory).unwrap();
            assert!(rounded >= trace.final_cost() * (1.0 - 1e-9), "{rounded} < {}", trace.final_cost());
        }
    }
}

#[test]
fn centralized_cost_is_bounded_by_converged_relaxation() {
    for seed in 0..4 {
        let g = small_graph(seed, 150, 3);
        let c = centralized_solve(&g, &CentralizedConfig::default()).unwrap();
        let (_, trace) = rbcd_solve(&g, &converged()).unwrap();
        assert!(c.cost >= trace.final_cost() - 1e-6, "seed {seed}: {} < {}", c.cost, trace.final_cost());
    }
}

#[test]
fn higher_rank_never_costs_more() {
    for seed in 0..3 {
        let g = small_graph(seed + 10, 120, 3);
        let costs: Vec<f64> = (3..=5)
            .map(|rank| rbcd_solve(&g, &RbcdConfig { rank, ..converged() }).unwrap().1.final_cost())
            .collect();
        for w in costs.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "seed {seed}: {costs:?}");
        }
    }
}

#[test]
fn parallel_and_sequential_agree() {
    let g = small_graph(3, 300, 3);
    let seq = RbcdConfig { execution: multislam::par::Execution::Sequential, max_iterations: 30, ..RbcdConfig::default() };
    let par = RbcdConfig { execution: multislam::par::Execution::Parallel, ..seq.clone() };
    let (a, ta) = rbcd_solve(&g, &seq).unwrap();
    let (b, tb) = rbcd_solve(&g, &par).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta.entries.iter().map(|e| e.cost).collect::<Vec<_>>(), tb.entries.iter().map(|e| e.cost).collect::<Vec<_>>());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn moving_the_ground_truth_changes_nothing(
        seed in 0u64..1000,
        w in prop::array::uniform3(-2.0f64..2.0),
        t in prop::array::uniform3(-50.0f64..50.0),
    ) {
        let g = small_graph(seed, 150, 3);
        let a = Pose::new(Rotation::exp(&Vec3::from(w)), Vec3::from(t));
        let h = regauge(&g, &a);
        let cfg = RbcdConfig { max_iterations: 300, ..RbcdConfig::default() };
        let run = |g: &MultiRobotPoseGraph| {
            let (x, _) = rbcd_solve(g, &cfg).unwrap();
            let r = round_solution(&x).trajectory;
            let c = centralized_solve(g, &CentralizedConfig::default()).unwrap();
            let truth = g.ground_truth.as_ref().unwrap();
            (pgo_cost(g, &r).unwrap(), ate(&r, truth).unwrap(), c.cost, ate(&c.trajectory, truth).unwrap())
        };
        let (p, q) = (run(&g), run(&h));
        prop_assert!((p.0 - q.0).abs() <= 1e-6, "rbcd cost {} vs {}", p.0, q.0);
        prop_assert!((p.1 - q.1).abs() <= 1e-6, "rbcd ate {} vs {}", p.1, q.1);
        prop_assert!((p.2 - q.2).abs() <= 1e-6, "central cost {} vs {}", p.2, q.2);
        prop_assert!((p.3 - q.3).abs() <= 1e-6, "central ate {} vs {}", p.3, q.3);
    }
}
