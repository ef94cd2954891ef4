use super::SolverTrace;
use crate::pose_graph::Trajectory;
use std::fmt::Write;

/// `iteration,robot_id,lifted_cost,wall_ms`, one row per block update.
/// Row 0 holds the initial cost with an empty robot id.
pub fn trace_csv(trace: &SolverTrace, with_time: bool) -> String {
    let mut s = String::from("iteration,robot_id,lifted_cost,wall_ms\n");
    let _ = writeln!(s, "0,,{:e},{}", trace.initial_cost, if with_time { "0" } else { "" });
    for e in &trace.entries {
        let t = if with_time { format!("{:.3}", e.wall_ms) } else { String::new() };
        let _ = writeln!(s, "{},{},{:e},{}", e.iteration, e.robot, e.cost, t);
    }
    s
}

/// TUM-style lines `index tx ty tz qx qy qz qw`. Keyframe indices stand in
/// for timestamps, so pass one robot at a time.
pub fn write_tum(t: &Trajectory) -> String {
    let mut s = String::new();
    for (k, p) in t.iter() {
        let q = p.rotation.to_quaternion();
        let v = p.translation;
        let _ = writeln!(s, "{} {} {} {} {} {} {} {}", k.index, v.x, v.y, v.z, q[0], q[1], q[2], q[3]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpgo::TraceEntry;
    use crate::geometry::Pose;
    use crate::pose_graph::PoseKey;

    #[test]
    fn csv_and_tum_layout() {
        let trace = SolverTrace {
            initial_cost: 2.0,
            entries: vec![TraceEntry { iteration: 1, robot: 3, cost: 1.5, wall_ms: 0.25, accepted: true }],
        };
        assert_eq!(trace_csv(&trace, false), "iteration,robot_id,lifted_cost,wall_ms\n0,,2e0,\n1,3,1.5e0,\n");
        let t: Trajectory = [(PoseKey::new(0, 4), Pose::planar(1.0, 2.0, 0.0))].into_iter().collect();
        assert_eq!(write_tum(&t), "4 1 2 0 0 0 0 1\n");
    }
}
