use super::{MeshError, TriMesh};
use crate::geometry::{hat, Mat3, Pose, Rotation, Vec3};
use crate::par::Execution;
use crate::pose_graph::PoseKey;
use crate::sparse::SymmetricBuilder;
use nalgebra::{DMatrix, SMatrix, SVector};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Keyframe `keyframe` observes mesh node `node`, whose rest position in
/// the keyframe's initial frame is `local`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframeEdge {
    pub keyframe: usize,
    pub node: usize,
    pub local: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformationGraph {
    /// Rest positions `g_k`.
    pub mesh_nodes: Vec<Vec3>,
    pub keyframe_nodes: Vec<(PoseKey, Pose)>,
    /// Undirected, `a < b`, sorted. The objective visits both directions.
    pub mesh_edges: Vec<(u32, u32)>,
    pub keyframe_edges: Vec<KeyframeEdge>,
}

/// Builds the graph from a simplified mesh (nodes and face adjacency) and
/// the keyframes with the node indices each one observes.
pub fn build_deformation_graph(
    simplified: &TriMesh,
    keyframes: &[(PoseKey, Pose)],
    observations: &BTreeMap<PoseKey, Vec<u32>>,
) -> Result<DeformationGraph, MeshError> {
    simplified.validate()?;
    let mut edges = BTreeSet::new();
    for f in &simplified.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            if a != b {
                edges.insert((a.min(b), a.max(b)));
            }
        }
    }
    let count = simplified.vertices.len();
    let mut keyframe_edges = Vec::new();
    for (i, (key, pose)) in keyframes.iter().enumerate() {
        let seen: BTreeSet<u32> = observations.get(key).map(|v| v.iter().copied().collect()).unwrap_or_default();
        if seen.is_empty() {
            log::warn!("keyframe {key} observes no mesh node");
        }
        let inv = pose.inverse();
        for n in seen {
            let g = simplified.vertices.get(n as usize).ok_or(MeshError::Observation { node: n, count })?;
            keyframe_edges.push(KeyframeEdge { keyframe: i, node: n as usize, local: inv.transform_point(g) });
        }
    }
    Ok(DeformationGraph {
        mesh_nodes: simplified.vertices.clone(),
        keyframe_nodes: keyframes.to_vec(),
        mesh_edges: edges.into_iter().collect(),
        keyframe_edges,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmoConfig {
    /// Inverse variance of the keyframe anchor term.
    pub anchor_weight: f64,
    /// Inverse variance of both rigidity terms.
    pub rigidity_weight: f64,
    pub gn_max_iterations: usize,
    /// Stop once an accepted step lowers the objective by less than this
    /// fraction.
    pub gn_tolerance: f64,
    pub interp_k: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for LmoConfig {
    fn default() -> Self {
        Self {
            anchor_weight: 100.0,
            rigidity_weight: 1.0,
            gn_max_iterations: 100,
            gn_tolerance: 1e-12,
            interp_k: 4,
            execution: Execution::default(),
        }
    }
}

impl LmoConfig {
    pub fn validate(&self) -> Result<(), MeshError> {
        let ok = |w: f64| w > 0.0 && w.is_finite();
        if !ok(self.anchor_weight) || !ok(self.rigidity_weight) {
            return Err(MeshError::Config("weights must be positive".into()));
        }
        if self.interp_k == 0 || self.gn_max_iterations == 0 {
            return Err(MeshError::Config("interp_k and gn_max_iterations must be at least 1".into()));
        }
        if !(self.gn_tolerance >= 0.0) {
            return Err(MeshError::Config("gn_tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformationResult {
    /// `M_k = (R^M_k, t^M_k)` per mesh node.
    pub mesh_node_transforms: Vec<Pose>,
    pub keyframe_poses: Vec<Pose>,
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
}

impl DeformationResult {
    /// Undeformed state: identity rotations at the rest positions and the
    /// initial keyframe poses.
    pub fn rest(dg: &DeformationGraph) -> Self {
        Self {
            mesh_node_transforms: dg.mesh_nodes.iter().map(|g| Pose::from_translation(*g)).collect(),
            keyframe_poses: dg.keyframe_nodes.iter().map(|(_, p)| *p).collect(),
            objective: f64::NAN,
            initial_objective: f64::NAN,
            iterations: 0,
        }
    }
}

/// Variables: keyframes first, then mesh nodes, six tangent coordinates
/// each (`R ← R Exp(δθ)`, `t ← t + δt`).
struct State<'a> {
    dg: &'a DeformationGraph,
    anchors: Vec<Pose>,
    wa: f64,
    wr: f64,
}

/// Inverse right Jacobian of SO(3).
fn right_jacobian_inverse(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let p = hat(phi);
    let c = if theta < 1e-6 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Mat3::identity() + p * 0.5 + p * p * c
}

type Block<const D: usize> = SMatrix<f64, D, 6>;

/// One residual with its Jacobians, for assembly.
enum Term {
    Anchor { var: usize, r: SVector<f64, 6>, j: Block<6> },
    Pair { a: usize, ja: Block<3>, b: usize, jb: Block<3>, r: Vec3 },
}

impl<'a> State<'a> {
    fn new(dg: &'a DeformationGraph, anchors: &BTreeMap<PoseKey, Pose>, cfg: &LmoConfig) -> Result<Self, MeshError> {
        cfg.validate()?;
        let anchors = dg
            .keyframe_nodes
            .iter()
            .map(|(k, _)| anchors.get(k).copied().ok_or(MeshError::MissingAnchor(*k)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { dg, anchors, wa: cfg.anchor_weight, wr: cfg.rigidity_weight })
    }

    fn n_kf(&self) -> usize {
        self.dg.keyframe_nodes.len()
    }

    fn anchor_residual(&self, i: usize, x: &Pose) -> Result<(SVector<f64, 6>, Vec3), MeshError> {
        let a = &self.anchors[i];
        let phi = a.rotation.transpose().compose(&x.rotation).log()?;
        let dt = a.rotation.transpose().rotate(&(x.translation - a.translation));
        let s = self.wa.sqrt();
        let mut r = SVector::<f64, 6>::zeros();
        r.fixed_rows_mut::<3>(0).copy_from(&(phi * s));
        r.fixed_rows_mut::<3>(3).copy_from(&(dt * s));
        Ok((r, phi))
    }

    /// Residual of `R_a d + t_a − t_b`, the form shared by both rigidity terms.
    fn pair_residual(&self, pa: &Pose, d: &Vec3, tb: &Vec3) -> Vec3 {
        (pa.rotation.rotate(d) + pa.translation - tb) * self.wr.sqrt()
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize, Vec3)> + '_ {
        let n = self.n_kf();
        let g = &self.dg.mesh_nodes;
        let mesh = self.dg.mesh_edges.iter().flat_map(move |&(k, l)| {
            let (k, l) = (k as usize, l as usize);
            [(n + k, n + l, g[l] - g[k]), (n + l, n + k, g[k] - g[l])]
        });
        let kf = self.dg.keyframe_edges.iter().map(move |e| (e.keyframe, n + e.node, e.local));
        mesh.chain(kf)
    }

    fn objective(&self, x: &[Pose]) -> Result<f64, MeshError> {
        let mut f = 0.0;
        for i in 0..self.n_kf() {
            f += self.anchor_residual(i, &x[i])?.0.norm_squared();
        }
        for (a, b, d) in self.pairs() {
            f += self.pair_residual(&x[a], &d, &x[b].translation).norm_squared();
        }
        if f.is_finite() {
            Ok(f)
        } else {
            Err(MeshError::NonFinite)
        }
    }

    fn terms(&self, x: &[Pose]) -> Result<Vec<Term>, MeshError> {
        let mut out = Vec::new();
        let sa = self.wa.sqrt();
        for i in 0..self.n_kf() {
            let (r, phi) = self.anchor_residual(i, &x[i])?;
            let mut j = Block::<6>::zeros();
            j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(right_jacobian_inverse(&phi) * sa));
            j.fixed_view_mut::<3, 3>(3, 3).copy_from(&(self.anchors[i].rotation.transpose().matrix() * sa));
            out.push(Term::Anchor { var: i, r, j });
        }
        let s = self.wr.sqrt();
        for (a, b, d) in self.pairs() {
            let r = self.pair_residual(&x[a], &d, &x[b].translation);
            let mut ja = Block::<3>::zeros();
            ja.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-x[a].rotation.matrix() * hat(&d) * s));
            ja.fixed_view_mut::<3, 3>(0, 3).copy_from(&(Mat3::identity() * s));
            let mut jb = Block::<3>::zeros();
            jb.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Mat3::identity() * s));
            out.push(Term::Pair { a, ja, b, jb, r });
        }
        Ok(out)
    }

    /// Gauss-Newton system `JᵀJ` (lower triangle) and gradient `Jᵀr`.
    fn normal_equations(&self, x: &[Pose]) -> Result<(SymmetricBuilder, DMatrix<f64>), MeshError> {
        let nv = x.len();
        let mut h = SymmetricBuilder::new(6 * nv);
        let mut g = DMatrix::zeros(6 * nv, 1);
        let add_diag = |h: &mut SymmetricBuilder, v: usize, m: &SMatrix<f64, 6, 6>| {
            for r in 0..6 {
                for c in 0..=r {
                    h.add(6 * v + r, 6 * v + c, m[(r, c)]);
                }
            }
        };
        for t in self.terms(x)? {
            match t {
                Term::Anchor { var, r, j } => {
                    add_diag(&mut h, var, &(j.transpose() * j));
                    let mut gv = g.view_mut((6 * var, 0), (6, 1));
                    gv += j.transpose() * r;
                }
                Term::Pair { a, ja, b, jb, r } => {
                    add_diag(&mut h, a, &(ja.transpose() * ja));
                    add_diag(&mut h, b, &(jb.transpose() * jb));
                    let hab = ja.transpose() * jb;
                    for rr in 0..6 {
                        for cc in 0..6 {
                            if hab[(rr, cc)] != 0.0 {
                                h.add(6 * a + rr, 6 * b + cc, hab[(rr, cc)]);
                            }
                        }
                    }
                    let mut ga = g.view_mut((6 * a, 0), (6, 1));
                    ga += ja.transpose() * r;
                    let mut gb = g.view_mut((6 * b, 0), (6, 1));
                    gb += jb.transpose() * r;
                }
            }
        }
        Ok((h, g))
    }
}

fn retract(p: &Pose, d: &[f64]) -> Pose {
    let rot = p.rotation.compose(&Rotation::exp(&Vec3::new(d[0], d[1], d[2])));
    Pose::new(Rotation::project(rot.matrix()), p.translation + Vec3::new(d[3], d[4], d[5]))
}

fn variables(res: &DeformationResult) -> Vec<Pose> {
    res.keyframe_poses.iter().chain(&res.mesh_node_transforms).copied().collect()
}

fn check_counts(dg: &DeformationGraph, res: &DeformationResult) -> Result<(), MeshError> {
    if res.keyframe_poses.len() != dg.keyframe_nodes.len() || res.mesh_node_transforms.len() != dg.mesh_nodes.len() {
        return Err(MeshError::Config("deformation result does not match the graph".into()));
    }
    Ok(())
}

/// Objective value at `res` for the given anchors.
pub fn lmo_objective(
    dg: &DeformationGraph,
    anchors: &BTreeMap<PoseKey, Pose>,
    cfg: &LmoConfig,
    res: &DeformationResult,
) -> Result<f64, MeshError> {
    check_counts(dg, res)?;
    State::new(dg, anchors, cfg)?.objective(&variables(res))
}

/// Gradient in tangent coordinates, keyframes first then mesh nodes, six
/// entries each (rotation then translation).
pub fn lmo_gradient(
    dg: &DeformationGraph,
    anchors: &BTreeMap<PoseKey, Pose>,
    cfg: &LmoConfig,
    res: &DeformationResult,
) -> Result<Vec<f64>, MeshError> {
    check_counts(dg, res)?;
    let (_, g) = State::new(dg, anchors, cfg)?.normal_equations(&variables(res))?;
    Ok(g.iter().map(|v| 2.0 * v).collect())
}

/// Minimizes the deformation objective (keyframe anchors plus mesh and
/// keyframe rigidity) by damped Gauss-Newton from the rest configuration.
/// Steps that do not lower the objective are rejected, so the objective
/// never increases.
pub fn lmo_optimize(
    dg: &DeformationGraph,
    anchors: &BTreeMap<PoseKey, Pose>,
    cfg: &LmoConfig,
) -> Result<DeformationResult, MeshError> {
    let st = State::new(dg, anchors, cfg)?;
    let mut x = variables(&DeformationResult::rest(dg));
    let mut f = st.objective(&x)?;
    let initial = f;
    let mut lambda = 1e-4;
    let mut iterations = 0;
    while iterations < cfg.gn_max_iterations && f > 0.0 {
        iterations += 1;
        let (h, g) = st.normal_equations(&x)?;
        let mut improved = None;
        for _ in 0..16 {
            let mut damped = h.clone();
            damped.add_diagonal(lambda);
            if let Ok(fac) = damped.factor() {
                let delta = -fac.solve(&g);
                let xn: Vec<Pose> = x.iter().enumerate().map(|(v, p)| retract(p, &delta.as_slice()[6 * v..6 * v + 6])).collect();
                match st.objective(&xn) {
                    Ok(fn_) if fn_ < f => {
                        improved = Some((xn, fn_));
                        lambda = (lambda / 10.0).max(1e-12);
                        break;
                    }
                    _ => {}
                }
            }
            lambda *= 10.0;
        }
        let Some((xn, fn_)) = improved else { break };
        let rel = (f - fn_) / f;
        x = xn;
        f = fn_;
        if rel < cfg.gn_tolerance {
            break;
        }
    }
    let n = dg.keyframe_nodes.len();
    Ok(DeformationResult {
        keyframe_poses: x[..n].to_vec(),
        mesh_node_transforms: x[n..].to_vec(),
        objective: f,
        initial_objective: initial,
        iterations,
    })
}
