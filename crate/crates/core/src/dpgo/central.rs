use super::{align_robot_frames, robot_spanning_tree, DpgoError};
use crate::geometry::{hat, Mat3, Pose, Rotation, Vec3};
use crate::par::{self, Execution};
use crate::pose_graph::{pgo_cost, MultiRobotPoseGraph, PoseKey, Trajectory};
use crate::sparse::SymmetricBuilder;
use nalgebra::{DMatrix, SMatrix};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CentralizedConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub relative_tolerance: f64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for CentralizedConfig {
    fn default() -> Self {
        Self { max_iterations: 100, relative_tolerance: 1e-9, execution: Execution::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedSolution {
    pub trajectory: Trajectory,
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    /// False if the iteration cap was hit; the best iterate is returned.
    pub converged: bool,
}

/// Dense variable numbering with the first key held fixed.
struct Layout {
    keys: Vec<PoseKey>,
    index: HashMap<PoseKey, usize>,
}

impl Layout {
    fn new(g: &MultiRobotPoseGraph) -> Self {
        let keys: Vec<PoseKey> = g.keys().collect();
        let index = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        Self { keys, index }
    }

    /// Free-variable slot of a key, `None` for the anchor.
    fn free(&self, k: &PoseKey) -> Option<usize> {
        self.index[k].checked_sub(1)
    }

    fn n_free(&self) -> usize {
        self.keys.len().saturating_sub(1)
    }
}

fn check_connected(g: &MultiRobotPoseGraph) -> Result<(), DpgoError> {
    g.validate()?;
    robot_spanning_tree(g)?;
    Ok(())
}

/// Chordal relaxation: rotations from an unconstrained linear least-squares
/// problem over 3×3 matrices projected onto SO(3), then translations by
/// linear least squares with those rotations fixed. The first pose is the
/// identity.
pub fn chordal_relaxation(g: &MultiRobotPoseGraph) -> Result<Trajectory, DpgoError> {
    check_connected(g)?;
    let lay = Layout::new(g);
    let nf = lay.n_free();
    if lay.keys.is_empty() {
        return Ok(Trajectory::new());
    }
    // Rotation rows: unknown W (3n × 3) with block i = R_iᵀ.
    let mut lr = SymmetricBuilder::new(3 * nf);
    let mut br = DMatrix::<f64>::zeros(3 * nf, 3);
    let mut lt = SymmetricBuilder::new(nf);
    for m in g.measurements() {
        let r = m.transform.rotation.matrix();
        let k = m.kappa;
        let (fi, fj) = (lay.free(&m.from), lay.free(&m.to));
        for (slot, _) in [(fi, 0), (fj, 1)] {
            if let Some(s) = slot {
                for d in 0..3 {
                    lr.add(3 * s + d, 3 * s + d, k);
                }
                lt.add(s, s, m.tau);
            }
        }
        match (fi, fj) {
            (Some(i), Some(j)) => {
                for a in 0..3 {
                    for b in 0..3 {
                        lr.add(3 * i + a, 3 * j + b, -k * r[(a, b)]);
                    }
                }
                lt.add(i, j, -m.tau);
            }
            (None, Some(j)) => {
                let mut v = br.view_mut((3 * j, 0), (3, 3));
                v += r.transpose() * k;
            }
            (Some(i), None) => {
                let mut v = br.view_mut((3 * i, 0), (3, 3));
                v += r * k;
            }
            (None, None) => {}
        }
    }
    let mut rotations = vec![Rotation::identity(); lay.keys.len()];
    if nf > 0 {
        let w = lr.factor()?.solve(&br);
        for s in 0..nf {
            let block: Mat3 = w.fixed_view::<3, 3>(3 * s, 0).transpose();
            rotations[s + 1] = Rotation::project(&block);
        }
    }
    let mut bt = DMatrix::<f64>::zeros(nf, 3);
    for m in g.measurements() {
        let c = rotations[lay.index[&m.from]].rotate(&m.transform.translation) * m.tau;
        if let Some(j) = lay.free(&m.to) {
            let mut row = bt.row_mut(j);
            row += c.transpose();
        }
        if let Some(i) = lay.free(&m.from) {
            let mut row = bt.row_mut(i);
            row -= c.transpose();
        }
    }
    let mut out = Trajectory::new();
    out.insert(lay.keys[0], Pose::identity());
    if nf > 0 {
        let t = lt.factor()?.solve(&bt);
        for s in 0..nf {
            out.insert(lay.keys[s + 1], Pose::new(rotations[s + 1], Vec3::new(t[(s, 0)], t[(s, 1)], t[(s, 2)])));
        }
    }
    Ok(out)
}

type Jac = SMatrix<f64, 12, 6>;

/// Residual (12) and Jacobians with respect to `(δθ, δt)` of both endpoints,
/// for the perturbation `R ← R Exp(δθ)`, `t ← t + δt`.
fn linearize(m: &crate::pose_graph::RelativeMeasurement, a: &Pose, b: &Pose) -> (SMatrix<f64, 12, 1>, Jac, Jac) {
    let (sk, st) = (m.kappa.sqrt(), m.tau.sqrt());
    let rij = m.transform.rotation.matrix();
    let (ra, rb) = (a.rotation.matrix(), b.rotation.matrix());
    let er = rb - ra * rij;
    let et = b.translation - a.translation - ra * m.transform.translation;
    let mut r = SMatrix::<f64, 12, 1>::zeros();
    let mut ja = Jac::zeros();
    let mut jb = Jac::zeros();
    for c in 0..3 {
        r.fixed_view_mut::<3, 1>(3 * c, 0).copy_from(&(er.column(c) * sk));
        let e = Vec3::ith(c, 1.0);
        jb.fixed_view_mut::<3, 3>(3 * c, 0).copy_from(&(-rb * hat(&e) * sk));
        let col: Vec3 = rij.column(c).into_owned();
        ja.fixed_view_mut::<3, 3>(3 * c, 0).copy_from(&(ra * hat(&col) * sk));
    }
    r.fixed_view_mut::<3, 1>(9, 0).copy_from(&(et * st));
    ja.fixed_view_mut::<3, 3>(9, 0).copy_from(&(ra * hat(&m.transform.translation) * st));
    ja.fixed_view_mut::<3, 3>(9, 3).copy_from(&(-Mat3::identity() * st));
    jb.fixed_view_mut::<3, 3>(9, 3).copy_from(&(Mat3::identity() * st));
    (r, ja, jb)
}

fn retract(p: &Pose, d: &[f64]) -> Pose {
    let rot = p.rotation.compose(&Rotation::exp(&Vec3::new(d[0], d[1], d[2])));
    Pose::new(Rotation::project(rot.matrix()), p.translation + Vec3::new(d[3], d[4], d[5]))
}

/// Reference solver: chordal relaxation followed by Levenberg-Marquardt
/// (Gauss-Newton with an adaptive trust region) on the chordal cost.
pub fn centralized_solve(g: &MultiRobotPoseGraph, cfg: &CentralizedConfig) -> Result<CentralizedSolution, DpgoError> {
    let init = chordal_relaxation(g)?;
    refine(g, init, cfg)
}

/// Levenberg-Marquardt from a given trajectory; the first key stays fixed.
pub fn refine(g: &MultiRobotPoseGraph, init: Trajectory, cfg: &CentralizedConfig) -> Result<CentralizedSolution, DpgoError> {
    let lay = Layout::new(g);
    let nf = lay.n_free();
    let mut x: Vec<Pose> = lay.keys.iter().map(|k| init.get(k).copied()).collect::<Result<_, _>>()?;
    let to_traj = |x: &[Pose]| -> Trajectory { lay.keys.iter().copied().zip(x.iter().copied()).collect() };
    let mut cost = pgo_cost(g, &to_traj(&x))?;
    if !cost.is_finite() {
        return Err(DpgoError::NonFinite);
    }
    let initial_cost = cost;
    let mut lambda = 1e-6;
    let mut iterations = 0;
    let mut converged = nf == 0 || cost == 0.0;
    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let lin = par::map(cfg.execution, g.measurements(), |m| {
            linearize(m, &x[lay.index[&m.from]], &x[lay.index[&m.to]])
        });
        let mut h = SymmetricBuilder::new(6 * nf);
        let mut diag = vec![0.0; 6 * nf];
        let mut grad = DMatrix::<f64>::zeros(6 * nf, 1);
        for (m, (r, ja, jb)) in g.measurements().iter().zip(&lin) {
            let ends = [(lay.free(&m.from), ja), (lay.free(&m.to), jb)];
            for &(s, j) in &ends {
                let Some(s) = s else { continue };
                let hss = j.transpose() * j;
                for a in 0..6 {
                    diag[6 * s + a] += hss[(a, a)];
                    for b in 0..=a {
                        h.add(6 * s + a, 6 * s + b, hss[(a, b)]);
                    }
                }
                let gs = j.transpose() * r;
                let mut v = grad.view_mut((6 * s, 0), (6, 1));
                v += gs;
            }
            if let (Some(i), Some(j)) = (ends[0].0, ends[1].0) {
                let hij = ja.transpose() * jb;
                for a in 0..6 {
                    for b in 0..6 {
                        h.add(6 * i + a, 6 * j + b, hij[(a, b)]);
                    }
                }
            }
        }
        let mut accepted = false;
        for _ in 0..12 {
            let mut damped = h.clone();
            for (k, d) in diag.iter().enumerate() {
                damped.add(k, k, lambda * d.max(1e-9) + 1e-12);
            }
            let Ok(f) = damped.factor() else {
                lambda *= 4.0;
                continue;
            };
            let delta = -f.solve(&grad);
            let mut xn = x.clone();
            for (i, p) in xn.iter_mut().enumerate().skip(1) {
                *p = retract(p, &delta.as_slice()[6 * (i - 1)..6 * i]);
            }
            let cn = pgo_cost(g, &to_traj(&xn))?;
            if cn < cost {
                let rel = (cost - cn) / cost;
                x = xn;
                cost = cn;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if rel < cfg.relative_tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // No damping level improves: a stationary point at working precision.
            converged = true;
        }
    }
    if !converged {
        log::warn!("centralized solve stopped after {iterations} iterations without converging");
    }
    Ok(CentralizedSolution { trajectory: to_traj(&x), cost, initial_cost, iterations, converged })
}

/// Baseline: every robot optimizes its own measurements alone, then the
/// trajectories are placed in a common frame through a single inter-robot
/// loop per robot pair.
pub fn local_pgo_baseline(g: &MultiRobotPoseGraph, cfg: &CentralizedConfig) -> Result<Trajectory, DpgoError> {
    robot_spanning_tree(g)?;
    let robots: Vec<u32> = g.robots().collect();
    let inner = CentralizedConfig { execution: Execution::Sequential, ..cfg.clone() };
    let locals = par::map(cfg.execution, &robots, |&r| centralized_solve(&g.robot_subgraph(r), &inner).map(|s| (r, s.trajectory)))
        .into_iter()
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    align_robot_frames(g, &locals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::test_util::random_pose;
    use crate::pose_graph::{ate, generate_manhattan, partition, ManhattanConfig, RelativeMeasurement};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = RelativeMeasurement::new(PoseKey::new(0, 0), PoseKey::new(0, 5), random_pose(&mut rng), 2.0, 3.0);
        let (a, b) = (random_pose(&mut rng), random_pose(&mut rng));
        let (_, ja, jb) = linearize(&m, &a, &b);
        let h = 1e-6;
        for k in 0..6 {
            let mut d = [0.0; 6];
            d[k] = h;
            let fd_a = (linearize(&m, &retract(&a, &d), &b).0 - linearize(&m, &retract(&a, &d.map(|v| -v)), &b).0) / (2.0 * h);
            let fd_b = (linearize(&m, &a, &retract(&b, &d)).0 - linearize(&m, &a, &retract(&b, &d.map(|v| -v))).0) / (2.0 * h);
            assert!((fd_a - ja.column(k)).norm() < 1e-6, "a {k}");
            assert!((fd_b - jb.column(k)).norm() < 1e-6, "b {k}");
        }
    }

    #[test]
    fn noiseless_graph_is_solved_exactly() {
        let cfg = ManhattanConfig { poses: 200, sigma_rotation: 0.0, sigma_translation: 0.0, seed: 2, ..Default::default() };
        let g = partition(&generate_manhattan(&cfg), 2).unwrap();
        let s = centralized_solve(&g, &CentralizedConfig::default()).unwrap();
        assert!(s.cost < 1e-18, "{}", s.cost);
        assert!(ate(&s.trajectory, g.ground_truth.as_ref().unwrap()).unwrap() < 1e-9);
        let local = local_pgo_baseline(&g, &CentralizedConfig::default()).unwrap();
        assert!(ate(&local, g.ground_truth.as_ref().unwrap()).unwrap() < 1e-9);
    }

    #[test]
    fn noisy_solve_improves_on_init_and_is_deterministic() {
        let cfg = ManhattanConfig { poses: 400, seed: 5, ..Default::default() };
        let g = generate_manhattan(&cfg);
        let a = centralized_solve(&g, &CentralizedConfig::default()).unwrap();
        let b = centralized_solve(&g, &CentralizedConfig { execution: Execution::Sequential, ..Default::default() }).unwrap();
        assert!(a.converged);
        assert!(a.cost <= a.initial_cost);
        assert_eq!(a, b);
        // Single robot: the baseline is the centralized solution.
        let l = local_pgo_baseline(&g, &CentralizedConfig::default()).unwrap();
        assert_eq!(l, a.trajectory);
    }
}
