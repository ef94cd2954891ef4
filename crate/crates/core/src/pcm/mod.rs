//! Pairwise consistency maximization: loop candidates become vertices of a
//! consistency graph whose maximum clique is the accepted inlier set.

mod bench;
mod bitset;
mod clique;
mod graph;

pub use bench::{incremental_benchmark, pcm_bench_csv, PcmBenchRow, PCM_BENCH_CSV_HEADER};
pub use bitset::BitSet;
pub use clique::{
    brute_force_max_clique, max_clique_batch, max_clique_incremental, CliqueMethod, CliqueResult, SearchOptions,
    BRUTE_FORCE_LIMIT,
};
pub use graph::AdjacencyGraph;

use crate::geometry::Pose;
use crate::par::{self, Execution};
use crate::pose_graph::{MultiRobotPoseGraph, OdometryAnchor, OdometryIndex, PoseGraphError, RelativeMeasurement};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PcmError {
    #[error("candidate id {id} does not exceed the last id {last}")]
    NonIncreasingId { id: u64, last: u64 },
    #[error("previous result is not a clique of the graph")]
    NotAClique,
    #[error("unknown candidate id {0}")]
    UnknownId(u64),
    #[error("graph has {vertices} vertices, brute force is limited to {limit}")]
    TooLarge { vertices: usize, limit: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] PoseGraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcmConfig {
    /// Base translation gate (m).
    pub trans_threshold: f64,
    /// Base rotation gate (rad).
    pub rot_threshold: f64,
    /// Widen the gates by the odometry noise accumulated along the cycle.
    pub use_covariance_scaling: bool,
    /// Number of standard deviations admitted when scaling is on.
    pub confidence: f64,
    pub search: SearchOptions,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for PcmConfig {
    fn default() -> Self {
        Self {
            trans_threshold: 0.5,
            rot_threshold: 0.26,
            use_covariance_scaling: true,
            confidence: 3.5,
            search: SearchOptions::default(),
            execution: Execution::default(),
        }
    }
}

impl PcmConfig {
    pub fn validate(&self) -> Result<(), PcmError> {
        if !(self.trans_threshold > 0.0 && self.rot_threshold > 0.0) {
            return Err(PcmError::Config("thresholds must be positive".into()));
        }
        if !(self.confidence >= 0.0) {
            return Err(PcmError::Config("confidence must be non-negative".into()));
        }
        Ok(())
    }

    fn accepts(&self, residual: &Pose, rot_var: f64, trans_var: f64) -> bool {
        let (mut r2, mut t2) = (self.rot_threshold.powi(2), self.trans_threshold.powi(2));
        if self.use_covariance_scaling {
            let g2 = self.confidence * self.confidence;
            r2 += g2 * rot_var;
            t2 += g2 * trans_var;
        }
        residual.rotation.angle().powi(2) <= r2 && residual.translation.norm_squared() <= t2
    }
}

/// A loop-closure candidate with the odometry state at both endpoints.
///
/// Measurements are stored with a canonical direction: from the smaller key
/// to the larger one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateLoop {
    pub id: u64,
    pub measurement: RelativeMeasurement,
    pub from_anchor: OdometryAnchor,
    pub to_anchor: OdometryAnchor,
}

impl CandidateLoop {
    /// Returns `None` when an endpoint is not covered by `odometry`.
    pub fn new(id: u64, m: RelativeMeasurement, odometry: &OdometryIndex) -> Option<Self> {
        let m = if (m.from.robot, m.from.index) > (m.to.robot, m.to.index) { m.reversed() } else { m };
        Some(Self { id, measurement: m, from_anchor: *odometry.anchor(&m.from)?, to_anchor: *odometry.anchor(&m.to)? })
    }

    pub fn robot_pair(&self) -> (u32, u32) {
        (self.measurement.from.robot, self.measurement.to.robot)
    }
}

/// Composed transform around the cycle formed by two loops and the
/// odometry between their endpoints, with its accumulated variances:
/// `T_a · (P_ja⁻¹ P_jb) · T_b⁻¹ · (P_ib⁻¹ P_ia)`. Returns `None` for loops
/// between different robot pairs.
pub fn cycle_residual(a: &CandidateLoop, b: &CandidateLoop) -> Option<(Pose, f64, f64)> {
    if a.robot_pair() != b.robot_pair() {
        return None;
    }
    let (a, b) = if (a.id, a.measurement.from, a.measurement.to) <= (b.id, b.measurement.from, b.measurement.to) {
        (a, b)
    } else {
        (b, a)
    };
    let (ta, tb) = (&a.measurement.transform, &b.measurement.transform);
    let odo_j = a.to_anchor.pose.between(&b.to_anchor.pose);
    let odo_i = b.from_anchor.pose.between(&a.from_anchor.pose);
    let residual = ta.compose(&odo_j).compose(&tb.inverse()).compose(&odo_i);
    let end_j = a.to_anchor.pose.compose(&ta.inverse()).translation;
    let end_i = a.from_anchor.pose.translation;
    let (rj, tj) = OdometryAnchor::segment_variance(&a.to_anchor, &b.to_anchor, &end_j);
    let (ri, ti) = OdometryAnchor::segment_variance(&b.from_anchor, &a.from_anchor, &end_i);
    Some((residual, rj + ri, tj + ti))
}

/// Whether two loops between the same robot pair agree with each other and
/// the odometry connecting them. Symmetric in its arguments.
pub fn pairwise_consistent(a: &CandidateLoop, b: &CandidateLoop, cfg: &PcmConfig) -> bool {
    match cycle_residual(a, b) {
        Some((residual, rv, tv)) => cfg.accepts(&residual, rv, tv),
        None => false,
    }
}

/// Rejects intra-robot loops that disagree with the odometry between their
/// endpoints. Inter-robot loops pass unchecked.
pub fn odometry_consistency_filter(l: &CandidateLoop, cfg: &PcmConfig) -> bool {
    let m = &l.measurement;
    if m.from.robot != m.to.robot {
        return true;
    }
    let odo = l.from_anchor.pose.between(&l.to_anchor.pose);
    let residual = m.transform.inverse().compose(&odo);
    let (rv, tv) = OdometryAnchor::segment_variance(&l.from_anchor, &l.to_anchor, &l.to_anchor.pose.translation);
    cfg.accepts(&residual, rv, tv)
}

/// Consistency graph over the loop candidates of one robot pair.
#[derive(Debug, Clone)]
pub struct ConsistencyGraph {
    pub cfg: PcmConfig,
    graph: AdjacencyGraph,
    candidates: Vec<CandidateLoop>,
    checks: u64,
}

impl ConsistencyGraph {
    pub fn new(cfg: PcmConfig) -> Self {
        Self { cfg, graph: AdjacencyGraph::new(), candidates: Vec::new(), checks: 0 }
    }

    pub fn graph(&self) -> &AdjacencyGraph {
        &self.graph
    }

    pub fn candidates(&self) -> &[CandidateLoop] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Total pairwise checks performed so far.
    pub fn checks(&self) -> u64 {
        self.checks
    }

    pub fn candidate(&self, id: u64) -> Option<&CandidateLoop> {
        self.graph.index_of(id).map(|i| &self.candidates[i])
    }

    /// Appends candidates and their consistency edges. Each new vertex is
    /// tested against every earlier one, so `k` additions to `n` vertices
    /// cost `k·n + k(k−1)/2` checks. Returns that count.
    pub fn add_candidates(&mut self, new: Vec<CandidateLoop>) -> Result<u64, PcmError> {
        let mut last = self.graph.ids().last().copied();
        for c in &new {
            if let Some(l) = last {
                if c.id <= l {
                    return Err(PcmError::NonIncreasingId { id: c.id, last: l });
                }
            }
            last = Some(c.id);
        }
        let mut count = 0;
        for c in new {
            let n = self.candidates.len();
            let existing = &self.candidates;
            let cfg = &self.cfg;
            let flags = par::map(self.cfg.execution, existing, |e| pairwise_consistent(e, &c, cfg));
            let neighbors: Vec<usize> = flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i).collect();
            self.graph.push_vertex(c.id, &neighbors)?;
            self.candidates.push(c);
            count += n as u64;
        }
        self.checks += count;
        Ok(count)
    }

    pub fn max_clique_batch(&self) -> CliqueResult {
        max_clique_batch(&self.graph, &self.cfg.search)
    }

    pub fn max_clique_incremental(&mut self, prev: &CliqueResult) -> Result<CliqueResult, PcmError> {
        max_clique_incremental(&mut self.graph, prev, &self.cfg.search)
    }

    pub fn inliers(&self, result: &CliqueResult) -> Vec<&CandidateLoop> {
        result.members.iter().filter_map(|&id| self.candidate(id)).collect()
    }
}

/// Outcome of running PCM over every loop closure of a graph.
#[derive(Debug, Clone, Default)]
pub struct PcmOutcome {
    /// Indices into the graph's measurements of the accepted loops.
    pub accepted: Vec<usize>,
    /// Loops removed by the odometry check.
    pub odometry_rejected: Vec<usize>,
    pub cliques: BTreeMap<(u32, u32), CliqueResult>,
    pub checks: u64,
}

/// Runs the odometry check and a batch clique search per robot pair
/// (intra-robot loops of robot `r` form pair `(r, r)`), with candidate ids
/// equal to measurement indices.
pub fn select_inliers(g: &MultiRobotPoseGraph, cfg: &PcmConfig) -> Result<PcmOutcome, PcmError> {
    cfg.validate()?;
    let odo = OdometryIndex::build(g)?;
    let mut groups: BTreeMap<(u32, u32), Vec<CandidateLoop>> = BTreeMap::new();
    let mut out = PcmOutcome::default();
    for (i, m) in g.loop_closures() {
        let c = CandidateLoop::new(i as u64, *m, &odo).expect("validated graph");
        if odometry_consistency_filter(&c, cfg) {
            groups.entry(c.robot_pair()).or_default().push(c);
        } else {
            out.odometry_rejected.push(i);
        }
    }
    for (pair, cands) in groups {
        let mut cg = ConsistencyGraph::new(*cfg);
        cg.add_candidates(cands)?;
        let r = cg.max_clique_batch();
        out.accepted.extend(r.members.iter().map(|&id| id as usize));
        out.checks += cg.checks();
        out.cliques.insert(pair, r);
    }
    out.accepted.sort_unstable();
    Ok(out)
}

/// Every loop closure of `g` as a candidate, ordered by when it could first
/// be detected (the later of its two pose indices, then measurement order).
/// Ids are positions in that order.
pub fn arrival_ordered(g: &MultiRobotPoseGraph) -> Result<Vec<CandidateLoop>, PcmError> {
    let odo = OdometryIndex::build(g)?;
    let mut loops: Vec<(u32, usize, RelativeMeasurement)> =
        g.loop_closures().map(|(i, m)| (m.from.index.max(m.to.index), i, *m)).collect();
    loops.sort_by_key(|&(t, i, _)| (t, i));
    Ok(loops
        .into_iter()
        .enumerate()
        .map(|(id, (_, _, m))| CandidateLoop::new(id as u64, m, &odo).expect("validated graph"))
        .collect())
}
