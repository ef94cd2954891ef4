use super::{DpgoError, EdgeFactors, LiftedPose, Neumaier, RbcdConfig, Residual};
use crate::par::{self, Execution};
use crate::pose_graph::{EdgeKind, MultiRobotPoseGraph, PoseKey};
use crate::sparse::{SpdFactor, SymmetricBuilder};
use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use std::collections::{BTreeMap, BTreeSet};

/// Poses owned by one robot. `poses[i]` is keyframe `(robot, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotBlock {
    pub robot: u32,
    pub poses: Vec<LiftedPose>,
    /// Own keys that are endpoints of inter-robot loops.
    pub public_keys: BTreeSet<PoseKey>,
}

impl RobotBlock {
    pub fn rank(&self) -> usize {
        self.poses.first().map_or(0, LiftedPose::rank)
    }

    /// The block's public poses, as sent to neighbours.
    pub fn publics(&self) -> BTreeMap<PoseKey, LiftedPose> {
        self.public_keys.iter().map(|k| (*k, self.poses[k.index as usize].clone())).collect()
    }

    pub(crate) fn to_matrix(&self) -> DMatrix<f64> {
        let r = self.rank();
        let mut x = DMatrix::zeros(r, 4 * self.poses.len());
        for (i, p) in self.poses.iter().enumerate() {
            x.columns_mut(4 * i, 3).copy_from(&p.y);
            x.column_mut(4 * i + 3).copy_from(&p.p);
        }
        x
    }

    pub(crate) fn set_from_matrix(&mut self, x: &DMatrix<f64>) {
        for (i, p) in self.poses.iter_mut().enumerate() {
            p.y.copy_from(&x.columns(4 * i, 3));
            p.p.copy_from(&x.column(4 * i + 3));
        }
    }
}

#[derive(Debug, Clone)]
struct LocalEdge {
    from: usize,
    to: usize,
    f: EdgeFactors,
}

#[derive(Debug, Clone)]
struct ExternalEdge {
    local: usize,
    other: PoseKey,
    local_is_from: bool,
    f: EdgeFactors,
}

/// Result of one block step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    pub step_size: f64,
    pub cost_before: f64,
    pub cost_after: f64,
    pub gradient_norm: f64,
}

/// The part of the lifted problem seen by one robot: its own measurements,
/// the inter-robot measurements touching it, and a factorization of its
/// block Hessian used as preconditioner.
#[derive(Debug)]
pub struct BlockProblem {
    robot: u32,
    n: usize,
    rank: usize,
    local: Vec<LocalEdge>,
    external: Vec<ExternalEdge>,
    public_keys: BTreeSet<PoseKey>,
    neighbor_keys: BTreeSet<PoseKey>,
    precond: SpdFactor,
    exec: Execution,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

impl BlockProblem {
    pub fn new(g: &MultiRobotPoseGraph, robot: u32, rank: usize, exec: Execution) -> Result<Self, DpgoError> {
        let n = g.pose_count(robot) as usize;
        let mut local = Vec::new();
        let mut external = Vec::new();
        let mut public_keys = BTreeSet::new();
        let mut neighbor_keys = BTreeSet::new();
        for m in g.measurements() {
            let f = EdgeFactors::new(m);
            match (m.from.robot == robot, m.to.robot == robot) {
                (true, true) => local.push(LocalEdge { from: m.from.index as usize, to: m.to.index as usize, f }),
                (true, false) => {
                    external.push(ExternalEdge { local: m.from.index as usize, other: m.to, local_is_from: true, f });
                }
                (false, true) => {
                    external.push(ExternalEdge { local: m.to.index as usize, other: m.from, local_is_from: false, f });
                }
                (false, false) => continue,
            }
            if m.kind == EdgeKind::InterLoop {
                let (own, other) = if m.from.robot == robot { (m.from, m.to) } else { (m.to, m.from) };
                public_keys.insert(own);
                neighbor_keys.insert(other);
            }
        }
        let precond = Self::preconditioner(n, &local, &external)?;
        Ok(Self { robot, n, rank, local, external, public_keys, neighbor_keys, precond, exec })
    }

    /// Factor of `2 Q_bb + μ I`, the block Hessian of the lifted cost with a
    /// small shift that removes the gauge null space of isolated blocks.
    fn preconditioner(n: usize, local: &[LocalEdge], external: &[ExternalEdge]) -> Result<SpdFactor, DpgoError> {
        let mut b = SymmetricBuilder::new(4 * n);
        let mut trace = 0.0;
        let mut diag = |b: &mut SymmetricBuilder, i: usize, s: &nalgebra::Matrix4<f64>| {
            let q = s * s.transpose() * 2.0;
            for r in 0..4 {
                trace += q[(r, r)];
                for c in 0..=r {
                    b.add(4 * i + r, 4 * i + c, q[(r, c)]);
                }
            }
        };
        for e in local {
            diag(&mut b, e.from, &e.f.s_from);
            diag(&mut b, e.to, &e.f.s_to);
        }
        for e in external {
            diag(&mut b, e.local, if e.local_is_from { &e.f.s_from } else { &e.f.s_to });
        }
        for e in local {
            let q = e.f.s_from * e.f.s_to.transpose() * -2.0;
            for r in 0..4 {
                for c in 0..4 {
                    b.add(4 * e.from + r, 4 * e.to + c, q[(r, c)]);
                }
            }
        }
        let mu = 1e-6 * (trace / (4 * n.max(1)) as f64).max(1e-12);
        b.add_diagonal(mu);
        Ok(b.factor()?)
    }

    pub fn robot(&self) -> u32 {
        self.robot
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn public_keys(&self) -> &BTreeSet<PoseKey> {
        &self.public_keys
    }

    /// Keys of other robots this block needs.
    pub fn neighbor_keys(&self) -> &BTreeSet<PoseKey> {
        &self.neighbor_keys
    }

    /// Neighbour poses as `r × 4` matrices, one per external edge.
    fn resolve(&self, publics: &BTreeMap<PoseKey, LiftedPose>) -> Result<Vec<DMatrix<f64>>, DpgoError> {
        self.external
            .iter()
            .map(|e| {
                let p = publics.get(&e.other).ok_or(DpgoError::MissingPublic(e.other))?;
                if p.rank() != self.rank {
                    return Err(DpgoError::RankMismatch { expected: self.rank, found: p.rank() });
                }
                Ok(p.stacked())
            })
            .collect()
    }

    fn check_shape(&self, x: &DMatrix<f64>) -> Result<(), DpgoError> {
        if x.nrows() != self.rank || x.ncols() != 4 * self.n {
            return Err(DpgoError::RankMismatch { expected: self.rank, found: x.nrows() });
        }
        Ok(())
    }

    /// Residuals of local edges followed by external edges.
    fn residuals(&self, x: &DMatrix<f64>, others: &[DMatrix<f64>]) -> Vec<Residual> {
        let nl = self.local.len();
        par::map_range(self.exec, nl + self.external.len(), |k| {
            if k < nl {
                let e = &self.local[k];
                e.f.residual(&x.columns(4 * e.from, 4), &x.columns(4 * e.to, 4))
            } else {
                let e = &self.external[k - nl];
                let own = x.columns(4 * e.local, 4);
                let other = others[k - nl].as_view();
                if e.local_is_from {
                    e.f.residual(&own, &other)
                } else {
                    e.f.residual(&other, &own)
                }
            }
        })
    }

    fn cost_of(&self, x: &DMatrix<f64>, others: &[DMatrix<f64>]) -> f64 {
        let mut s = Neumaier::default();
        for e in self.residuals(x, others) {
            s.add(e.norm_squared());
        }
        s.value()
    }

    fn gradient_of(&self, x: &DMatrix<f64>, others: &[DMatrix<f64>]) -> DMatrix<f64> {
        let res = self.residuals(x, others);
        let mut g = DMatrix::zeros(self.rank, 4 * self.n);
        let nl = self.local.len();
        for (k, e) in res.iter().enumerate() {
            if k < nl {
                let l = &self.local[k];
                let mut gf = g.columns_mut(4 * l.from, 4);
                gf -= e * l.f.s_from.transpose() * 2.0;
                let mut gt = g.columns_mut(4 * l.to, 4);
                gt += e * l.f.s_to.transpose() * 2.0;
            } else {
                let x = &self.external[k - nl];
                let mut gl = g.columns_mut(4 * x.local, 4);
                if x.local_is_from {
                    gl -= e * x.f.s_from.transpose() * 2.0;
                } else {
                    gl += e * x.f.s_to.transpose() * 2.0;
                }
            }
        }
        g
    }

    /// Projects `v` onto the tangent space of the block at `x`.
    fn project_tangent(&self, x: &DMatrix<f64>, v: &mut DMatrix<f64>) {
        for i in 0..self.n {
            let y = x.columns(4 * i, 3);
            let vy = v.columns(4 * i, 3).into_owned();
            let s = y.transpose() * &vy;
            let sym = (&s + s.transpose()) * 0.5;
            let mut c = v.columns_mut(4 * i, 3);
            c -= y * sym;
        }
    }

    /// Cost of the edges incident to this block.
    pub fn local_cost(&self, x: &DMatrix<f64>, publics: &BTreeMap<PoseKey, LiftedPose>) -> Result<f64, DpgoError> {
        self.check_shape(x)?;
        Ok(self.cost_of(x, &self.resolve(publics)?))
    }

    /// Euclidean gradient of [`local_cost`](Self::local_cost), `r × 4n`.
    pub fn euclidean_gradient(
        &self,
        x: &DMatrix<f64>,
        publics: &BTreeMap<PoseKey, LiftedPose>,
    ) -> Result<DMatrix<f64>, DpgoError> {
        self.check_shape(x)?;
        Ok(self.gradient_of(x, &self.resolve(publics)?))
    }

    /// Riemannian gradient on `(St(3, r) × ℝʳ)ⁿ`.
    pub fn riemannian_gradient(
        &self,
        x: &DMatrix<f64>,
        publics: &BTreeMap<PoseKey, LiftedPose>,
    ) -> Result<DMatrix<f64>, DpgoError> {
        let mut g = self.euclidean_gradient(x, publics)?;
        self.project_tangent(x, &mut g);
        Ok(g)
    }

    /// One preconditioned Riemannian descent step with Armijo backtracking.
    ///
    /// A step is accepted only if it lowers the block cost by more than
    /// `floor` on top of the Armijo condition, so callers can ignore
    /// decreases below the rounding noise of their running totals. If no
    /// step size qualifies, `x` is left untouched.
    pub fn step(
        &self,
        x: &mut DMatrix<f64>,
        publics: &BTreeMap<PoseKey, LiftedPose>,
        floor: f64,
    ) -> Result<StepOutcome, DpgoError> {
        self.check_shape(x)?;
        let others = self.resolve(publics)?;
        let f0 = self.cost_of(x, &others);
        if !f0.is_finite() {
            return Err(DpgoError::NonFinite);
        }
        let mut rg = self.gradient_of(x, &others);
        self.project_tangent(x, &mut rg);
        let gnorm = rg.norm();
        let mut out = StepOutcome { accepted: false, step_size: 0.0, cost_before: f0, cost_after: f0, gradient_norm: gnorm };
        if gnorm == 0.0 || f0 == 0.0 {
            return Ok(out);
        }
        let mut dir = -self.precond.solve(&rg.transpose()).transpose();
        self.project_tangent(x, &mut dir);
        let mut slope = rg.dot(&dir);
        if !(slope < 0.0) || !slope.is_finite() {
            dir = -&rg;
            slope = -gnorm * gnorm;
        }
        let mut alpha = 1.0;
        for _ in 0..MAX_BACKTRACKS {
            if let Some(xn) = self.retract(x, &dir, alpha) {
                let f1 = self.cost_of(&xn, &others);
                if f1 <= f0 + ARMIJO * alpha * slope && f0 - f1 > floor {
                    *x = xn;
                    out.accepted = true;
                    out.step_size = alpha;
                    out.cost_after = f1;
                    return Ok(out);
                }
            }
            alpha *= 0.5;
        }
        Ok(out)
    }

    /// `x + α d`, with each `Y` mapped back to the Stiefel manifold by its
    /// polar factor.
    fn retract(&self, x: &DMatrix<f64>, d: &DMatrix<f64>, alpha: f64) -> Option<DMatrix<f64>> {
        let mut xn = x + d * alpha;
        for i in 0..self.n {
            let m = xn.columns(4 * i, 3).into_owned();
            let q = stiefel_project(&m)?;
            xn.columns_mut(4 * i, 3).copy_from(&q);
        }
        Some(xn)
    }
}

/// Polar factor `M (MᵀM)^{-1/2}` of an `r × 3` matrix; `None` if `M` is
/// (numerically) rank deficient.
pub(crate) fn stiefel_project(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let s: Matrix3<f64> = (m.transpose() * m).fixed_view::<3, 3>(0, 0).into_owned();
    let eig = SymmetricEigen::new(s);
    let top = eig.eigenvalues.max();
    if !(eig.eigenvalues.min() > 1e-12 * top.max(1e-300)) {
        return None;
    }
    let inv_sqrt = eig.eigenvectors
        * Matrix3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
        * eig.eigenvectors.transpose();
    Some(DMatrix::from_column_slice(m.nrows(), 3, (m * inv_sqrt).as_slice()))
}

/// Improves one robot's block by a single descent step while every other
/// robot is held fixed. Only the neighbours' public poses are read.
pub fn block_update(
    block: &RobotBlock,
    neighbor_publics: &BTreeMap<PoseKey, LiftedPose>,
    g: &MultiRobotPoseGraph,
    cfg: &RbcdConfig,
) -> Result<RobotBlock, DpgoError> {
    cfg.validate()?;
    let problem = BlockProblem::new(g, block.robot, block.rank(), cfg.execution)?;
    if problem.len() != block.poses.len() {
        return Err(DpgoError::Config(format!(
            "block of robot {} has {} poses, graph has {}",
            block.robot,
            block.poses.len(),
            problem.len()
        )));
    }
    let mut x = block.to_matrix();
    let f0 = problem.local_cost(&x, neighbor_publics)?;
    problem.step(&mut x, neighbor_publics, 64.0 * f64::EPSILON * f0)?;
    let mut out = block.clone();
    out.set_from_matrix(&x);
    out.public_keys = problem.public_keys().clone();
    Ok(out)
}
