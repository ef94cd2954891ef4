//! Multi-robot pose-graph data model, dataset ingestion and generation, and
//! evaluation metrics.

mod g2o;
mod manhattan;
mod metrics;
mod transform;

pub use g2o::{parse_g2o, serialize_g2o, G2oData, ROBOT_KEY_STRIDE};
pub use manhattan::{generate_manhattan, ManhattanConfig};
pub use metrics::{ate, pgo_cost};
pub use transform::{inject_outliers, inject_outliers_with, partition, partition_key, OutlierConfig};

use crate::geometry::{Pose, Vec3};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseGraphError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: edge references unknown vertex {id}")]
    UnknownVertex { line: usize, id: u64 },
    #[error("no value for pose {0}")]
    MissingKey(PoseKey),
    #[error("invalid measurement {from} -> {to}: {reason}")]
    InvalidMeasurement { from: PoseKey, to: PoseKey, reason: String },
    #[error("robot {robot} odometry chain is broken before index {index}")]
    BrokenChain { robot: u32, index: u32 },
    #[error("cannot split {poses} poses among {robots} robots")]
    BadPartition { poses: usize, robots: usize },
    #[error("trajectories cover different key sets")]
    KeyMismatch,
    #[error("trajectory alignment failed: {0}")]
    Alignment(#[from] crate::geometry::GeometryError),
}

/// Identifies one keyframe: robot id plus index within that robot's chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PoseKey {
    pub robot: u32,
    pub index: u32,
}

impl PoseKey {
    pub fn new(robot: u32, index: u32) -> Self {
        Self { robot, index }
    }
}

impl fmt::Display for PoseKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}:{}", self.robot, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Odometry,
    IntraLoop,
    InterLoop,
}

impl EdgeKind {
    pub fn is_loop(self) -> bool {
        self != EdgeKind::Odometry
    }
}

/// Relative pose `transform ≈ X_from⁻¹ · X_to` with isotropic weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeMeasurement {
    pub from: PoseKey,
    pub to: PoseKey,
    pub transform: Pose,
    /// Rotation weight (1/rad²).
    pub kappa: f64,
    /// Translation weight (1/m²).
    pub tau: f64,
    pub kind: EdgeKind,
}

impl RelativeMeasurement {
    /// Builds a measurement, inferring the kind from the endpoints. An edge
    /// between consecutive indices of one robot is classified as odometry.
    pub fn new(from: PoseKey, to: PoseKey, transform: Pose, kappa: f64, tau: f64) -> Self {
        let kind = if from.robot != to.robot {
            EdgeKind::InterLoop
        } else if to.index == from.index + 1 {
            EdgeKind::Odometry
        } else {
            EdgeKind::IntraLoop
        };
        Self { from, to, transform, kappa, tau, kind }
    }

    pub fn with_kind(mut self, kind: EdgeKind) -> Self {
        self.kind = kind;
        self
    }

    /// The same constraint expressed from `to` to `from`.
    pub fn reversed(&self) -> Self {
        Self { from: self.to, to: self.from, transform: self.transform.inverse(), ..*self }
    }
}

/// Estimated or ground-truth poses by key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub poses: BTreeMap<PoseKey, Pose>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &PoseKey) -> Result<&Pose, PoseGraphError> {
        self.poses.get(key).ok_or(PoseGraphError::MissingKey(*key))
    }

    pub fn insert(&mut self, key: PoseKey, pose: Pose) {
        self.poses.insert(key, pose);
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PoseKey, &Pose)> {
        self.poses.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &PoseKey> {
        self.poses.keys()
    }

    /// Poses of a single robot, in index order.
    pub fn robot(&self, robot: u32) -> Trajectory {
        Trajectory {
            poses: self.poses.range(PoseKey::new(robot, 0)..=PoseKey::new(robot, u32::MAX)).map(|(k, p)| (*k, *p)).collect(),
        }
    }

    /// Left-multiplies every pose by `t`.
    pub fn transformed(&self, t: &Pose) -> Trajectory {
        Trajectory { poses: self.poses.iter().map(|(k, p)| (*k, t.compose(p))).collect() }
    }

    pub fn extend(&mut self, other: Trajectory) {
        self.poses.extend(other.poses);
    }
}

impl FromIterator<(PoseKey, Pose)> for Trajectory {
    fn from_iter<I: IntoIterator<Item = (PoseKey, Pose)>>(iter: I) -> Self {
        Trajectory { poses: iter.into_iter().collect() }
    }
}

/// Pose graph over several robots' keyframe chains.
///
/// Every robot `r` owns keys `(r, 0) .. (r, n_r − 1)` and, once
/// [`validate`](Self::validate)d, an odometry edge between each consecutive
/// pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MultiRobotPoseGraph {
    robots: BTreeMap<u32, u32>,
    measurements: Vec<RelativeMeasurement>,
    pub ground_truth: Option<Trajectory>,
    /// Set for graphs that originated from planar data.
    pub planar: bool,
    injected: BTreeSet<usize>,
}

impl MultiRobotPoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a robot with `poses` keyframes (replacing any previous count).
    pub fn add_robot(&mut self, robot: u32, poses: u32) {
        self.robots.insert(robot, poses);
    }

    pub fn robots(&self) -> impl Iterator<Item = u32> + '_ {
        self.robots.keys().copied()
    }

    pub fn robot_count(&self) -> usize {
        self.robots.len()
    }

    pub fn pose_count(&self, robot: u32) -> u32 {
        self.robots.get(&robot).copied().unwrap_or(0)
    }

    pub fn total_poses(&self) -> usize {
        self.robots.values().map(|&n| n as usize).sum()
    }

    pub fn contains(&self, key: &PoseKey) -> bool {
        self.robots.get(&key.robot).is_some_and(|&n| key.index < n)
    }

    /// All keys, robots ascending then indices ascending.
    pub fn keys(&self) -> impl Iterator<Item = PoseKey> + '_ {
        self.robots.iter().flat_map(|(&r, &n)| (0..n).map(move |i| PoseKey::new(r, i)))
    }

    pub fn measurements(&self) -> &[RelativeMeasurement] {
        &self.measurements
    }

    pub fn loop_closures(&self) -> impl Iterator<Item = (usize, &RelativeMeasurement)> {
        self.measurements.iter().enumerate().filter(|(_, m)| m.kind.is_loop())
    }

    /// Appends a measurement after checking its endpoints and kind.
    pub fn add_measurement(&mut self, m: RelativeMeasurement) -> Result<usize, PoseGraphError> {
        let bad = |reason: &str| PoseGraphError::InvalidMeasurement { from: m.from, to: m.to, reason: reason.into() };
        if !self.contains(&m.from) || !self.contains(&m.to) {
            return Err(bad("endpoint not in graph"));
        }
        if !(m.kappa > 0.0 && m.tau > 0.0) || !m.kappa.is_finite() || !m.tau.is_finite() {
            return Err(bad("weights must be positive and finite"));
        }
        match m.kind {
            EdgeKind::Odometry if m.from.robot != m.to.robot || m.to.index != m.from.index + 1 => {
                return Err(bad("odometry must connect consecutive indices of one robot"))
            }
            EdgeKind::InterLoop if m.from.robot == m.to.robot => return Err(bad("inter-robot loop within one robot")),
            EdgeKind::IntraLoop if m.from.robot != m.to.robot => return Err(bad("intra-robot loop across robots")),
            _ => {}
        }
        self.measurements.push(m);
        Ok(self.measurements.len() - 1)
    }

    /// Indices of measurements added by outlier injection. Only evaluation
    /// code should read this.
    pub fn injected_outliers(&self) -> &BTreeSet<usize> {
        &self.injected
    }

    pub(crate) fn mark_injected(&mut self, index: usize) {
        self.injected.insert(index);
    }

    /// Checks that every robot's odometry chain is complete.
    pub fn validate(&self) -> Result<(), PoseGraphError> {
        for (&robot, &n) in &self.robots {
            let mut seen = vec![false; n.saturating_sub(1) as usize];
            for m in &self.measurements {
                if m.kind == EdgeKind::Odometry && m.from.robot == robot {
                    seen[m.from.index as usize] = true;
                }
            }
            if let Some(i) = seen.iter().position(|s| !s) {
                return Err(PoseGraphError::BrokenChain { robot, index: i as u32 + 1 });
            }
        }
        Ok(())
    }

    /// Copy with only the measurements selected by `keep`; robots, ground
    /// truth and outlier tags (re-indexed) are preserved.
    pub fn filtered<F: Fn(usize, &RelativeMeasurement) -> bool>(&self, keep: F) -> MultiRobotPoseGraph {
        let mut out = MultiRobotPoseGraph {
            robots: self.robots.clone(),
            measurements: Vec::new(),
            ground_truth: self.ground_truth.clone(),
            planar: self.planar,
            injected: BTreeSet::new(),
        };
        for (i, m) in self.measurements.iter().enumerate() {
            if keep(i, m) {
                if self.injected.contains(&i) {
                    out.injected.insert(out.measurements.len());
                }
                out.measurements.push(*m);
            }
        }
        out
    }

    /// Sub-graph of one robot: its keys and the measurements between them.
    pub fn robot_subgraph(&self, robot: u32) -> MultiRobotPoseGraph {
        let mut g = self.filtered(|_, m| m.from.robot == robot && m.to.robot == robot);
        g.robots.retain(|&r, _| r == robot);
        g.ground_truth = self.ground_truth.as_ref().map(|t| t.robot(robot));
        g
    }
}

/// Dead-reckoned poses of each robot's chain, for O(1) odometry composition
/// between any two indices.
#[derive(Debug, Clone, Default)]
pub struct OdometryIndex {
    chains: BTreeMap<u32, Vec<OdometryAnchor>>,
}

/// Cumulative odometry state at one keyframe.
///
/// Besides the dead-reckoned pose it carries prefix sums of the first-order
/// noise model implied by the odometry weights, so the covariance of any
/// chain segment can be evaluated in O(1).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OdometryAnchor {
    /// Pose relative to the robot's first keyframe.
    pub pose: Pose,
    /// Travelled distance from the first keyframe (m).
    pub arclength: f64,
    /// Accumulated rotation variance (rad², summed over active axes).
    pub rotation_variance: f64,
    /// Accumulated translation variance from translation noise (m²).
    pub translation_variance: f64,
    lever_w: f64,
    lever_wp: Vec3,
    lever_wpp: f64,
}

impl OdometryAnchor {
    /// Rotation and translation variance accumulated between two anchors of
    /// one chain when the error is observed at `end` (chain frame). Rotation
    /// noise at each step displaces the end point by its lever arm.
    pub fn segment_variance(a: &OdometryAnchor, b: &OdometryAnchor, end: &Vec3) -> (f64, f64) {
        let (lo, hi) = if a.lever_w <= b.lever_w { (a, b) } else { (b, a) };
        let w = hi.lever_w - lo.lever_w;
        let wp = hi.lever_wp - lo.lever_wp;
        let wpp = hi.lever_wpp - lo.lever_wpp;
        let lever = (w * end.norm_squared() - 2.0 * end.dot(&wp) + wpp).max(0.0);
        (
            (hi.rotation_variance - lo.rotation_variance).abs(),
            (hi.translation_variance - lo.translation_variance).abs() + lever,
        )
    }
}

impl OdometryAnchor {
    /// Number of values in [`to_array`](Self::to_array).
    pub const WIRE_LEN: usize = 20;

    /// Flat form for transmission: rotation (row-major), translation,
    /// arclength, both variances and the lever-arm prefix sums.
    pub fn to_array(&self) -> [f64; 20] {
        let r = self.pose.rotation.matrix();
        let t = &self.pose.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)],
            t.x, t.y, t.z,
            self.arclength, self.rotation_variance, self.translation_variance,
            self.lever_w, self.lever_wp.x, self.lever_wp.y, self.lever_wp.z, self.lever_wpp,
        ]
    }

    pub fn from_array(a: &[f64; 20]) -> Self {
        let r = crate::geometry::Mat3::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]);
        Self {
            pose: Pose::new(crate::geometry::Rotation::from_matrix_unchecked(r), Vec3::new(a[9], a[10], a[11])),
            arclength: a[12],
            rotation_variance: a[13],
            translation_variance: a[14],
            lever_w: a[15],
            lever_wp: Vec3::new(a[16], a[17], a[18]),
            lever_wpp: a[19],
        }
    }
}

impl OdometryIndex {
    pub fn build(g: &MultiRobotPoseGraph) -> Result<Self, PoseGraphError> {
        let mut steps: BTreeMap<u32, Vec<Option<(Pose, f64, f64)>>> =
            g.robots.iter().map(|(&r, &n)| (r, vec![None; n.saturating_sub(1) as usize])).collect();
        for m in g.measurements() {
            if m.kind == EdgeKind::Odometry {
                let slot = &mut steps.get_mut(&m.from.robot).expect("robot")[m.from.index as usize];
                if slot.is_none() {
                    *slot = Some((m.transform, m.kappa, m.tau));
                }
            }
        }
        // Planar graphs only perturb yaw and (x, y).
        let (rot_dof, trans_dof, lever_dof) = if g.planar { (1.0, 2.0, 1.0) } else { (3.0, 3.0, 2.0) };
        let mut chains = BTreeMap::new();
        for (robot, s) in steps {
            let mut chain = Vec::with_capacity(s.len() + 1);
            let mut cur = OdometryAnchor::default();
            chain.push(cur);
            for (i, step) in s.into_iter().enumerate() {
                let (step, kappa, tau) = step.ok_or(PoseGraphError::BrokenChain { robot, index: i as u32 + 1 })?;
                let pose = cur.pose.compose(&step);
                let w = lever_dof / kappa;
                let p = pose.translation;
                cur = OdometryAnchor {
                    pose,
                    arclength: cur.arclength + step.translation.norm(),
                    rotation_variance: cur.rotation_variance + rot_dof / kappa,
                    translation_variance: cur.translation_variance + trans_dof / tau,
                    lever_w: cur.lever_w + w,
                    lever_wp: cur.lever_wp + p * w,
                    lever_wpp: cur.lever_wpp + w * p.norm_squared(),
                };
                chain.push(cur);
            }
            if g.pose_count(robot) == 0 {
                chain.clear();
            }
            chains.insert(robot, chain);
        }
        Ok(Self { chains })
    }

    pub fn anchor(&self, key: &PoseKey) -> Option<&OdometryAnchor> {
        self.chains.get(&key.robot)?.get(key.index as usize)
    }

    /// Odometry-composed transform from `a` to `b` (same robot).
    pub fn between(&self, a: &PoseKey, b: &PoseKey) -> Option<Pose> {
        debug_assert_eq!(a.robot, b.robot);
        Some(self.anchor(a)?.pose.between(&self.anchor(b)?.pose))
    }

    /// Dead-reckoned trajectory of every robot in its own frame.
    pub fn trajectory(&self) -> Trajectory {
        self.chains
            .iter()
            .flat_map(|(&r, c)| c.iter().enumerate().map(move |(i, a)| (PoseKey::new(r, i as u32), a.pose)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;

    fn chain(n: u32) -> MultiRobotPoseGraph {
        let mut g = MultiRobotPoseGraph::new();
        g.add_robot(0, n);
        for i in 0..n - 1 {
            let m = RelativeMeasurement::new(
                PoseKey::new(0, i),
                PoseKey::new(0, i + 1),
                Pose::new(Rotation::about_z(0.1), Vec3::x()),
                1.0,
                1.0,
            );
            g.add_measurement(m).unwrap();
        }
        g
    }

    #[test]
    fn measurement_rules() {
        let mut g = chain(5);
        g.add_robot(1, 3);
        let p = Pose::identity();
        let bad_odo = RelativeMeasurement::new(PoseKey::new(0, 0), PoseKey::new(0, 3), p, 1.0, 1.0).with_kind(EdgeKind::Odometry);
        assert!(g.add_measurement(bad_odo).is_err());
        let bad_w = RelativeMeasurement::new(PoseKey::new(0, 0), PoseKey::new(1, 0), p, 0.0, 1.0);
        assert!(g.add_measurement(bad_w).is_err());
        let missing = RelativeMeasurement::new(PoseKey::new(0, 0), PoseKey::new(1, 7), p, 1.0, 1.0);
        assert!(g.add_measurement(missing).is_err());
        let inter = RelativeMeasurement::new(PoseKey::new(0, 0), PoseKey::new(1, 1), p, 1.0, 1.0);
        assert_eq!(inter.kind, EdgeKind::InterLoop);
        g.add_measurement(inter).unwrap();
        assert_eq!(g.validate(), Err(PoseGraphError::BrokenChain { robot: 1, index: 1 }));
    }

    #[test]
    fn odometry_index_composes_chain() {
        let g = chain(6);
        let idx = OdometryIndex::build(&g).unwrap();
        let rel = idx.between(&PoseKey::new(0, 1), &PoseKey::new(0, 4)).unwrap();
        let step = Pose::new(Rotation::about_z(0.1), Vec3::x());
        let direct = step.compose(&step).compose(&step);
        assert!((rel.translation - direct.translation).norm() < 1e-12);
        assert!((idx.anchor(&PoseKey::new(0, 5)).unwrap().arclength - 5.0).abs() < 1e-12);
        let back = idx.between(&PoseKey::new(0, 4), &PoseKey::new(0, 1)).unwrap();
        assert!(back.compose(&rel).translation.norm() < 1e-12);
    }
}
