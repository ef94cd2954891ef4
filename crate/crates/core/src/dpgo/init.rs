use super::{robot_spanning_tree, DpgoError, LiftedEstimate, LiftedPose};
use crate::pose_graph::{MultiRobotPoseGraph, OdometryIndex, Trajectory};
use std::collections::BTreeMap;

/// Dead-reckoned trajectory of every robot in its own frame (first pose at
/// the identity).
pub fn odometry_trajectories(g: &MultiRobotPoseGraph) -> Result<BTreeMap<u32, Trajectory>, DpgoError> {
    let all = OdometryIndex::build(g)?.trajectory();
    Ok(g.robots().map(|r| (r, all.robot(r))).collect())
}

/// Places per-robot trajectories in the frame of the first robot, chaining
/// the first inter-robot loop (by measurement index) of each robot pair in
/// breadth-first order.
pub fn align_robot_frames(g: &MultiRobotPoseGraph, local: &BTreeMap<u32, Trajectory>) -> Result<Trajectory, DpgoError> {
    let mut out = Trajectory::new();
    let missing = |r: u32| DpgoError::Config(format!("no local trajectory for robot {r}"));
    for (robot, via) in robot_spanning_tree(g)? {
        let traj = local.get(&robot).ok_or_else(|| missing(robot))?;
        let frame = match via {
            None => crate::geometry::Pose::identity(),
            Some(i) => {
                let m = &g.measurements()[i];
                if m.to.robot == robot {
                    let world_to = out.get(&m.from)?.compose(&m.transform);
                    world_to.compose(&traj.get(&m.to)?.inverse())
                } else {
                    let world_from = out.get(&m.to)?.compose(&m.transform.inverse());
                    world_from.compose(&traj.get(&m.from)?.inverse())
                }
            }
        };
        out.extend(traj.transformed(&frame));
    }
    Ok(out)
}

/// Embeds every pose of `t` at rank `rank`.
pub fn lift(t: &Trajectory, rank: usize) -> LiftedEstimate {
    LiftedEstimate { rank, poses: t.iter().map(|(k, p)| (*k, LiftedPose::embed(p, rank))).collect() }
}

/// Initial estimate for the distributed solver: odometry chains aligned
/// through one inter-robot loop per robot pair, lifted by zero padding.
pub fn chordal_init(g: &MultiRobotPoseGraph, rank: usize) -> Result<LiftedEstimate, DpgoError> {
    if rank < 3 {
        return Err(DpgoError::Config(format!("rank {rank} < 3")));
    }
    let local = odometry_trajectories(g)?;
    Ok(lift(&align_robot_frames(g, &local)?, rank))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::test_util::random_pose;
    use crate::geometry::Pose;
    use crate::pose_graph::{ate, PoseKey, RelativeMeasurement};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noiseless(robots: u32, n: u32, seed: u64) -> (MultiRobotPoseGraph, Trajectory) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = MultiRobotPoseGraph::new();
        let truth: Trajectory = (0..robots).flat_map(|r| (0..n).map(move |i| PoseKey::new(r, i))).map(|k| (k, random_pose(&mut rng))).collect();
        for r in 0..robots {
            g.add_robot(r, n);
            for i in 0..n - 1 {
                let (a, b) = (PoseKey::new(r, i), PoseKey::new(r, i + 1));
                let m = truth.get(&a).unwrap().between(truth.get(&b).unwrap());
                g.add_measurement(RelativeMeasurement::new(a, b, m, 1.0, 1.0)).unwrap();
            }
        }
        for r in 1..robots {
            // Reversed direction on purpose.
            let (a, b) = (PoseKey::new(r, 1), PoseKey::new(r - 1, 2));
            let m = truth.get(&a).unwrap().between(truth.get(&b).unwrap());
            g.add_measurement(RelativeMeasurement::new(a, b, m, 1.0, 1.0)).unwrap();
        }
        (g, truth)
    }

    #[test]
    fn noiseless_init_recovers_truth_up_to_gauge() {
        let (g, truth) = noiseless(3, 6, 7);
        let init = chordal_init(&g, 3).unwrap();
        let est: Trajectory = init.poses.iter().map(|(k, l)| (*k, l.truncated())).collect();
        assert!(ate(&est, &truth).unwrap() < 1e-9);
        let anchor = truth.get(&PoseKey::new(0, 0)).unwrap().inverse();
        for (k, p) in est.iter() {
            let want = anchor.compose(truth.get(k).unwrap());
            assert!((p.translation - want.translation).norm() < 1e-9);
            assert!((p.rotation.matrix() - want.rotation.matrix()).norm() < 1e-9);
        }
        assert_eq!(init.poses[&PoseKey::new(0, 0)].y, LiftedPose::embed(&Pose::identity(), 3).y);
    }

    #[test]
    fn disconnected_robots_are_listed() {
        let mut g = MultiRobotPoseGraph::new();
        for r in 0..3 {
            g.add_robot(r, 2);
            g.add_measurement(RelativeMeasurement::new(PoseKey::new(r, 0), PoseKey::new(r, 1), Pose::identity(), 1.0, 1.0))
                .unwrap();
        }
        g.add_measurement(RelativeMeasurement::new(PoseKey::new(0, 0), PoseKey::new(2, 1), Pose::identity(), 1.0, 1.0))
            .unwrap();
        assert_eq!(chordal_init(&g, 5), Err(DpgoError::Disconnected(vec![1])));
    }
}
