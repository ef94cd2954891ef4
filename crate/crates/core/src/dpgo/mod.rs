//! Trajectory estimation on the rank-restricted relaxation of pose-graph
//! optimization.
//!
//! Each pose `(R, t)` is lifted to `X = [Y | p]`, an `r × 4` matrix whose
//! first three columns lie on the Stiefel manifold `St(3, r)`. The lifted
//! cost of a measurement `(R_ij, t_ij, κ, τ)` is
//!
//! ```text
//! κ‖Y_j − Y_i R_ij‖²_F + τ‖p_j − p_i − Y_i t_ij‖²
//! ```
//!
//! which at `r = 3` is exactly [`pgo_cost`](crate::pose_graph::pgo_cost).
//! Robots own blocks of poses and improve them in turn ([`rbcd_solve`]),
//! exchanging only the poses that appear in inter-robot loop closures.

mod bench;
mod block;
mod central;
mod init;
mod io;
mod rbcd;
mod rounding;

pub use bench::{compare_methods, dpgo_bench_csv, Method, MethodError, MethodResult, DPGO_BENCH_CSV_HEADER};
pub use block::{block_update, BlockProblem, RobotBlock, StepOutcome};
pub use central::{centralized_solve, chordal_relaxation, local_pgo_baseline, refine, CentralizedConfig, CentralizedSolution};
pub use init::{align_robot_frames, chordal_init, lift, odometry_trajectories};
pub use io::{trace_csv, write_tum};
pub use rbcd::{rbcd_solve, rbcd_solve_from, BlockOrder, RbcdConfig, SolverTrace, TraceEntry};
pub use rounding::{round_solution, RoundedSolution};

use crate::geometry::{Mat3, Pose, Rotation, Vec3};
use crate::par::{self, Execution};
use crate::pose_graph::{MultiRobotPoseGraph, PoseGraphError, PoseKey, RelativeMeasurement};
use nalgebra::{DMatrix, DVector, Matrix4};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpgoError {
    #[error("robots {0:?} are not connected to robot 0")]
    Disconnected(Vec<u32>),
    #[error("missing public pose {0}")]
    MissingPublic(PoseKey),
    #[error("missing lifted pose {0}")]
    MissingPose(PoseKey),
    #[error("non-finite cost")]
    NonFinite,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("rank mismatch: expected {expected}, found {found}")]
    RankMismatch { expected: usize, found: usize },
    #[error("linear solve failed: {0}")]
    Linear(String),
    #[error(transparent)]
    Graph(#[from] PoseGraphError),
}

impl From<crate::sparse::FactorError> for DpgoError {
    fn from(e: crate::sparse::FactorError) -> Self {
        DpgoError::Linear(e.0)
    }
}

/// One pose of the relaxed problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedPose {
    /// `r × 3`, orthonormal columns.
    pub y: DMatrix<f64>,
    /// `r`-vector, metres.
    pub p: DVector<f64>,
}

impl LiftedPose {
    /// Embeds a pose into rank `r` by zero padding.
    pub fn embed(pose: &Pose, rank: usize) -> Self {
        assert!(rank >= 3, "rank must be at least 3");
        let mut y = DMatrix::zeros(rank, 3);
        y.view_mut((0, 0), (3, 3)).copy_from(pose.rotation.matrix());
        let mut p = DVector::zeros(rank);
        p.rows_mut(0, 3).copy_from(&pose.translation);
        Self { y, p }
    }

    pub fn rank(&self) -> usize {
        self.p.len()
    }

    /// `‖YᵀY − I‖_F`.
    pub fn stiefel_residual(&self) -> f64 {
        (self.y.transpose() * &self.y - DMatrix::identity(3, 3)).norm()
    }

    /// The top 3×3 part, for rank-3 inspection.
    pub fn truncated(&self) -> Pose {
        let m: Mat3 = self.y.fixed_view::<3, 3>(0, 0).into_owned();
        Pose::new(Rotation::project(&m), Vec3::new(self.p[0], self.p[1], self.p[2]))
    }

    /// `[Y | p]` as one `r × 4` matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.rank(), 4);
        x.columns_mut(0, 3).copy_from(&self.y);
        x.column_mut(3).copy_from(&self.p);
        x
    }

    pub fn from_stacked(x: &DMatrix<f64>) -> Self {
        Self { y: x.columns(0, 3).into_owned(), p: x.column(3).into_owned() }
    }
}

/// Lifted values for every pose of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedEstimate {
    pub rank: usize,
    pub poses: BTreeMap<PoseKey, LiftedPose>,
}

impl LiftedEstimate {
    pub fn get(&self, key: &PoseKey) -> Result<&LiftedPose, DpgoError> {
        self.poses.get(key).ok_or(DpgoError::MissingPose(*key))
    }

    /// Largest `‖YᵀY − I‖_F` over all poses.
    pub fn max_stiefel_residual(&self) -> f64 {
        self.poses.values().map(LiftedPose::stiefel_residual).fold(0.0, f64::max)
    }
}

/// `r × 4` residual of one measurement.
pub(crate) type Residual = nalgebra::OMatrix<f64, nalgebra::Dyn, nalgebra::U4>;

/// Weighted right factors of one measurement: the residual is
/// `E = X_to S_to − X_from S_from` and its cost is `‖E‖²_F`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EdgeFactors {
    pub s_from: Matrix4<f64>,
    pub s_to: Matrix4<f64>,
}

impl EdgeFactors {
    pub fn new(m: &RelativeMeasurement) -> Self {
        let (sk, st) = (m.kappa.sqrt(), m.tau.sqrt());
        let mut s_from = Matrix4::zeros();
        s_from.fixed_view_mut::<3, 3>(0, 0).copy_from(&(m.transform.rotation.matrix() * sk));
        s_from.fixed_view_mut::<3, 1>(0, 3).copy_from(&(m.transform.translation * st));
        s_from[(3, 3)] = st;
        let mut s_to = Matrix4::zeros();
        for k in 0..3 {
            s_to[(k, k)] = sk;
        }
        s_to[(3, 3)] = st;
        Self { s_from, s_to }
    }

    /// Residual for lifted poses given as `r × 4` column views.
    pub fn residual(&self, x_from: &nalgebra::DMatrixView<f64>, x_to: &nalgebra::DMatrixView<f64>) -> Residual {
        x_to * self.s_to - x_from * self.s_from
    }
}

/// Lifted cost of one measurement.
pub fn edge_cost(m: &RelativeMeasurement, from: &LiftedPose, to: &LiftedPose) -> f64 {
    let ey = &to.y - &from.y * m.transform.rotation.matrix();
    let et = &to.p - &from.p - &from.y * m.transform.translation;
    m.kappa * ey.norm_squared() + m.tau * et.norm_squared()
}

/// Total lifted cost, summed in measurement order.
pub fn lifted_cost(g: &MultiRobotPoseGraph, x: &LiftedEstimate) -> Result<f64, DpgoError> {
    lifted_cost_with(g, x, Execution::Sequential)
}

pub fn lifted_cost_with(g: &MultiRobotPoseGraph, x: &LiftedEstimate, exec: Execution) -> Result<f64, DpgoError> {
    let terms = par::map(exec, g.measurements(), |m| -> Result<f64, DpgoError> {
        Ok(edge_cost(m, x.get(&m.from)?, x.get(&m.to)?))
    });
    let mut sum = Neumaier::default();
    for t in terms {
        sum.add(t?);
    }
    let c = sum.value();
    if c.is_finite() {
        Ok(c)
    } else {
        Err(DpgoError::NonFinite)
    }
}

/// Compensated summation, so that recomputed totals agree to an ulp.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Breadth-first order over robots through inter-robot loops, starting from
/// the smallest robot id. Each reached robot records the first loop (by
/// measurement index) that reached it. Returns the unreachable robots as an
/// error.
pub(crate) fn robot_spanning_tree(g: &MultiRobotPoseGraph) -> Result<Vec<(u32, Option<usize>)>, DpgoError> {
    let robots: Vec<u32> = g.robots().collect();
    let Some(&root) = robots.first() else {
        return Ok(Vec::new());
    };
    let mut first_link: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (i, m) in g.loop_closures() {
        if m.from.robot != m.to.robot {
            let k = (m.from.robot.min(m.to.robot), m.from.robot.max(m.to.robot));
            first_link.entry(k).or_insert(i);
        }
    }
    let mut order = vec![(root, None)];
    let mut seen: std::collections::BTreeSet<u32> = [root].into();
    let mut head = 0;
    while head < order.len() {
        let r = order[head].0;
        head += 1;
        for (&(a, b), &i) in &first_link {
            let other = if a == r {
                b
            } else if b == r {
                a
            } else {
                continue;
            };
            if seen.insert(other) {
                order.push((other, Some(i)));
            }
        }
    }
    let missing: Vec<u32> = robots.into_iter().filter(|r| !seen.contains(r)).collect();
    if missing.is_empty() {
        Ok(order)
    } else {
        Err(DpgoError::Disconnected(missing))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::test_util::random_pose;
    use crate::pose_graph::pgo_cost;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rank_three_embedding_matches_pgo_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = MultiRobotPoseGraph::new();
        g.add_robot(0, 4);
        for i in 0..3 {
            g.add_measurement(RelativeMeasurement::new(
                PoseKey::new(0, i),
                PoseKey::new(0, i + 1),
                random_pose(&mut rng),
                2.0,
                0.5,
            ))
            .unwrap();
        }
        g.add_measurement(RelativeMeasurement::new(PoseKey::new(0, 0), PoseKey::new(0, 3), random_pose(&mut rng), 1.0, 3.0))
            .unwrap();
        let t: crate::pose_graph::Trajectory = g.keys().map(|k| (k, random_pose(&mut rng))).collect();
        for rank in [3, 5] {
            let x = lift(&t, rank);
            let a = lifted_cost(&g, &x).unwrap();
            let b = pgo_cost(&g, &t).unwrap();
            assert!((a - b).abs() < 1e-10 * b.max(1.0), "{a} vs {b}");
        }
        let l = LiftedPose::embed(t.get(&PoseKey::new(0, 1)).unwrap(), 3);
        assert_eq!(&l.y.fixed_view::<3, 3>(0, 0).into_owned(), t.get(&PoseKey::new(0, 1)).unwrap().rotation.matrix());
        assert!(l.stiefel_residual() < 1e-12);
    }

    #[test]
    fn edge_factors_reproduce_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = RelativeMeasurement::new(PoseKey::new(0, 0), PoseKey::new(1, 0), random_pose(&mut rng), 3.0, 0.7);
        let a = LiftedPose::embed(&random_pose(&mut rng), 5);
        let b = LiftedPose::embed(&random_pose(&mut rng), 5);
        let f = EdgeFactors::new(&m);
        let (xa, xb) = (a.stacked(), b.stacked());
        let e = f.residual(&xa.as_view(), &xb.as_view());
        assert!((e.norm_squared() - edge_cost(&m, &a, &b)).abs() < 1e-10);
    }

    #[test]
    fn neumaier_recovers_small_terms() {
        let mut s = Neumaier::default();
        for v in [1e16, 1.0, -1e16, 1.0] {
            s.add(v);
        }
        assert_eq!(s.value(), 2.0);
    }
}
