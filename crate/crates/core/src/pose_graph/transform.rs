use super::{EdgeKind, MultiRobotPoseGraph, PoseGraphError, PoseKey, RelativeMeasurement, Trajectory};
use crate::geometry::{Pose, Rotation, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Key of pose `index` of an `n`-pose chain split among `robots` robots.
/// Segment sizes differ by at most one, larger segments first.
pub fn partition_key(index: u32, n: u32, robots: u32) -> PoseKey {
    let (base, extra) = (n / robots, n % robots);
    let big = extra * (base + 1);
    if index < big {
        PoseKey::new(index / (base + 1), index % (base + 1))
    } else {
        let rest = index - big;
        PoseKey::new(extra + rest / base, rest % base)
    }
}

/// Cuts a single-robot chain into `n_robots` contiguous segments. Edges
/// crossing a cut, odometry included, become inter-robot loops. Ground truth
/// is re-keyed; poses stay in the original world frame.
pub fn partition(g: &MultiRobotPoseGraph, n_robots: usize) -> Result<MultiRobotPoseGraph, PoseGraphError> {
    let robots: Vec<u32> = g.robots().collect();
    let n = if robots.len() == 1 { g.pose_count(robots[0]) } else { 0 };
    if robots.len() != 1 || n_robots == 0 || n_robots > n as usize {
        return Err(PoseGraphError::BadPartition { poses: n as usize, robots: n_robots });
    }
    let r = n_robots as u32;
    let remap = |k: &PoseKey| partition_key(k.index, n, r);
    let mut out = MultiRobotPoseGraph::new();
    out.planar = g.planar;
    for i in 0..r {
        out.add_robot(i, n / r + u32::from(i < n % r));
    }
    for (idx, m) in g.measurements().iter().enumerate() {
        let (from, to) = (remap(&m.from), remap(&m.to));
        let kind = if from.robot != to.robot {
            EdgeKind::InterLoop
        } else if m.kind == EdgeKind::InterLoop {
            EdgeKind::IntraLoop
        } else {
            m.kind
        };
        let new = out.add_measurement(RelativeMeasurement { from, to, kind, ..*m })?;
        if g.injected_outliers().contains(&idx) {
            out.mark_injected(new);
        }
    }
    out.ground_truth = g.ground_truth.as_ref().map(|t| t.iter().map(|(k, p)| (remap(k), *p)).collect::<Trajectory>());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutlierConfig {
    /// Translations are uniform in `[-h, h]³` (z = 0 for planar graphs).
    pub box_half_width: f64,
    /// Weights for injected edges; when unset the first loop closure's (or
    /// else the first measurement's) weights are reused.
    pub kappa: Option<f64>,
    pub tau: Option<f64>,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self { box_half_width: 10.0, kappa: None, tau: None }
    }
}

/// Adds `count` random loop closures using default settings.
pub fn inject_outliers(g: &MultiRobotPoseGraph, count: usize, seed: u64) -> MultiRobotPoseGraph {
    inject_outliers_with(g, count, seed, &OutlierConfig::default())
}

/// Uniform random rotation (Shoemake's quaternion sampling).
fn uniform_rotation<R: Rng>(rng: &mut R) -> Rotation {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    Rotation::from_quaternion(a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin(), b * (tau * u3).cos())
}

/// Adds `count` loop closures with uniformly random endpoints and transforms.
/// Endpoint pairs are distinct and never consecutive on one chain. Injected
/// edges are recorded in [`MultiRobotPoseGraph::injected_outliers`].
pub fn inject_outliers_with(g: &MultiRobotPoseGraph, count: usize, seed: u64, cfg: &OutlierConfig) -> MultiRobotPoseGraph {
    let mut out = g.clone();
    if count == 0 {
        return out;
    }
    let keys: Vec<PoseKey> = g.keys().collect();
    assert!(keys.len() >= 3, "outlier injection needs at least three poses");
    let reference = g.loop_closures().next().map(|(_, m)| m).or(g.measurements().first());
    let kappa = cfg.kappa.or(reference.map(|m| m.kappa)).unwrap_or(1.0);
    let tau = cfg.tau.or(reference.map(|m| m.tau)).unwrap_or(1.0);
    let h = cfg.box_half_width;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        let (a, b) = loop {
            let a = keys[rng.random_range(0..keys.len())];
            let b = keys[rng.random_range(0..keys.len())];
            if a != b && !(a.robot == b.robot && a.index.abs_diff(b.index) == 1) {
                break (a, b);
            }
        };
        let transform = if g.planar {
            Pose::planar(rng.random_range(-h..=h), rng.random_range(-h..=h), rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
        } else {
            let rot = uniform_rotation(&mut rng);
            Pose::new(rot, Vec3::new(rng.random_range(-h..=h), rng.random_range(-h..=h), rng.random_range(-h..=h)))
        };
        let idx = out.add_measurement(RelativeMeasurement::new(a, b, transform, kappa, tau)).expect("valid outlier edge");
        out.mark_injected(idx);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_graph::{generate_manhattan, ManhattanConfig};

    fn chain(n: u32) -> MultiRobotPoseGraph {
        let mut g = MultiRobotPoseGraph::new();
        g.add_robot(0, n);
        for i in 0..n - 1 {
            g.add_measurement(RelativeMeasurement::new(PoseKey::new(0, i), PoseKey::new(0, i + 1), Pose::from_translation(Vec3::x()), 1.0, 1.0))
                .unwrap();
        }
        g
    }

    #[test]
    fn single_robot_partition_is_identity() {
        let mut g = chain(10);
        g.add_measurement(RelativeMeasurement::new(PoseKey::new(0, 2), PoseKey::new(0, 8), Pose::identity(), 1.0, 1.0)).unwrap();
        let p = partition(&g, 1).unwrap();
        assert_eq!(p.measurements(), g.measurements());
    }

    #[test]
    fn two_way_split() {
        let mut g = chain(100);
        g.add_measurement(RelativeMeasurement::new(PoseKey::new(0, 10), PoseKey::new(0, 60), Pose::identity(), 1.0, 1.0)).unwrap();
        let p = partition(&g, 2).unwrap();
        assert_eq!((p.pose_count(0), p.pose_count(1)), (50, 50));
        let last = p.measurements().last().unwrap();
        assert_eq!((last.from, last.to, last.kind), (PoseKey::new(0, 10), PoseKey::new(1, 10), EdgeKind::InterLoop));
        let cut = p.measurements()[49];
        assert_eq!((cut.from, cut.to, cut.kind), (PoseKey::new(0, 49), PoseKey::new(1, 0), EdgeKind::InterLoop));
        p.validate().unwrap();
    }

    #[test]
    fn partition_errors() {
        let g = chain(4);
        assert!(partition(&g, 5).is_err());
        assert!(partition(&g, 0).is_err());
        assert!(partition(&partition(&g, 2).unwrap(), 2).is_err());
    }

    #[test]
    fn partition_key_matches_segment_sizes() {
        for (n, r) in [(10u32, 3u32), (7, 7), (100, 2), (3500, 3)] {
            let mut counts = vec![0u32; r as usize];
            let mut prev = PoseKey::new(0, 0);
            for i in 0..n {
                let k = partition_key(i, n, r);
                counts[k.robot as usize] += 1;
                if i > 0 {
                    assert!(k == PoseKey::new(prev.robot, prev.index + 1) || k == PoseKey::new(prev.robot + 1, 0));
                }
                prev = k;
            }
            assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn manhattan_split_conserves_measurements() {
        let g = inject_outliers(&generate_manhattan(&ManhattanConfig { poses: 600, ..Default::default() }), 50, 3);
        let p = partition(&g, 3).unwrap();
        assert_eq!(p.measurements().len(), g.measurements().len());
        assert_eq!(p.injected_outliers(), g.injected_outliers());
        for (a, b) in p.measurements().iter().zip(g.measurements()) {
            assert_eq!(a.transform, b.transform);
        }
    }

    #[test]
    fn outliers_are_appended_and_tagged() {
        let g = chain(20);
        assert_eq!(inject_outliers(&g, 0, 1), g);
        let o = inject_outliers(&g, 30, 1);
        assert_eq!(o.measurements().len(), 49);
        assert_eq!(&o.measurements()[..19], g.measurements());
        assert_eq!(o.injected_outliers().iter().copied().collect::<Vec<_>>(), (19..49).collect::<Vec<_>>());
        for m in &o.measurements()[19..] {
            assert!(m.kind.is_loop());
            assert!(m.transform.translation.amax() <= 10.0);
        }
    }

    #[test]
    fn uniform_rotation_has_uniform_angle_distribution() {
        // Haar measure on SO(3): angle density (1 − cos θ)/π, mean π/2 + 2/π.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 20000;
        let mean = (0..n).map(|_| uniform_rotation(&mut rng).angle()).sum::<f64>() / n as f64;
        let expected = std::f64::consts::FRAC_PI_2 + 2.0 / std::f64::consts::PI;
        assert!((mean - expected).abs() < 0.02, "{mean} vs {expected}");
    }
}
