use super::block::{BlockProblem, RobotBlock};
use super::{chordal_init, lifted_cost_with, DpgoError, LiftedEstimate, LiftedPose};
use crate::par::{self, Execution};
use crate::pose_graph::{MultiRobotPoseGraph, PoseKey};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockOrder {
    #[default]
    RoundRobin,
    /// Robot with the largest Riemannian gradient norm goes next.
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbcdConfig {
    pub rank: usize,
    /// Block updates, not sweeps.
    pub max_iterations: usize,
    /// Stop once a full sweep lowers the cost by less than this fraction.
    pub cost_tolerance: f64,
    /// Hard cap on block updates for the early-stop variant.
    pub early_stop_iterations: Option<usize>,
    pub block_order: BlockOrder,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for RbcdConfig {
    fn default() -> Self {
        Self {
            rank: 5,
            max_iterations: 500,
            cost_tolerance: 1e-9,
            early_stop_iterations: None,
            block_order: BlockOrder::RoundRobin,
            execution: Execution::default(),
        }
    }
}

impl RbcdConfig {
    /// Default configuration capped at 50 block updates.
    pub fn early_stop() -> Self {
        Self { early_stop_iterations: Some(50), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), DpgoError> {
        if !(3..=10).contains(&self.rank) {
            return Err(DpgoError::Config(format!("rank {} outside 3..=10", self.rank)));
        }
        if self.max_iterations == 0 || self.early_stop_iterations == Some(0) {
            return Err(DpgoError::Config("iteration limit must be at least 1".into()));
        }
        if !(self.cost_tolerance >= 0.0 && self.cost_tolerance.is_finite()) {
            return Err(DpgoError::Config(format!("bad cost tolerance {}", self.cost_tolerance)));
        }
        Ok(())
    }

    pub fn iteration_limit(&self) -> usize {
        self.early_stop_iterations.map_or(self.max_iterations, |e| e.min(self.max_iterations))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub robot: u32,
    /// Total lifted cost after this update.
    pub cost: f64,
    pub wall_ms: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SolverTrace {
    pub initial_cost: f64,
    pub entries: Vec<TraceEntry>,
}

impl SolverTrace {
    pub fn final_cost(&self) -> f64 {
        self.entries.last().map_or(self.initial_cost, |e| e.cost)
    }

    pub fn iterations(&self) -> usize {
        self.entries.len()
    }

    /// Largest single-step increase (≤ 0 for a monotone trace).
    pub fn max_increase(&self) -> f64 {
        let mut prev = self.initial_cost;
        let mut worst = f64::NEG_INFINITY;
        for e in &self.entries {
            worst = worst.max(e.cost - prev);
            prev = e.cost;
        }
        worst
    }
}

/// Distributed solve from [`chordal_init`].
pub fn rbcd_solve(g: &MultiRobotPoseGraph, cfg: &RbcdConfig) -> Result<(LiftedEstimate, SolverTrace), DpgoError> {
    cfg.validate()?;
    let init = chordal_init(g, cfg.rank)?;
    rbcd_solve_from(g, init, cfg)
}

/// Riemannian block-coordinate descent from a given lifted estimate.
///
/// Each iteration updates one robot's block with the others fixed; the
/// updating robot reads only its neighbours' public poses. Every update is
/// a descent step, so the recorded cost never increases.
pub fn rbcd_solve_from(
    g: &MultiRobotPoseGraph,
    init: LiftedEstimate,
    cfg: &RbcdConfig,
) -> Result<(LiftedEstimate, SolverTrace), DpgoError> {
    cfg.validate()?;
    if init.rank != cfg.rank {
        return Err(DpgoError::RankMismatch { expected: cfg.rank, found: init.rank });
    }
    let mut solver = RbcdState::new(g, init, cfg)?;
    let start = Instant::now();
    let mut trace = SolverTrace { initial_cost: solver.cost, entries: Vec::new() };
    let nb = solver.problems.len();
    if nb == 0 {
        return Ok((solver.estimate, trace));
    }
    // Decreases below this are rounding noise of the measurement data.
    let noise = 1e-15 * g.measurements().iter().map(|m| 3.0 * m.kappa + m.tau * (1.0 + m.transform.translation.norm_squared())).sum::<f64>();
    let mut sweep_start = solver.cost;
    for it in 1..=cfg.iteration_limit() {
        let b = match cfg.block_order {
            BlockOrder::RoundRobin => (it - 1) % nb,
            BlockOrder::Greedy => solver.greediest()?,
        };
        let accepted = solver.update(b)?;
        trace.entries.push(TraceEntry {
            iteration: it,
            robot: solver.problems[b].robot(),
            cost: solver.cost,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            accepted,
        });
        if it % nb == 0 {
            if sweep_start - solver.cost <= cfg.cost_tolerance * sweep_start + noise {
                break;
            }
            sweep_start = solver.cost;
        }
    }
    Ok((solver.estimate, trace))
}

/// Working state of the solver: per-robot blocks and the public poses each
/// robot has published.
pub(crate) struct RbcdState<'g> {
    g: &'g MultiRobotPoseGraph,
    pub problems: Vec<BlockProblem>,
    blocks: Vec<RobotBlock>,
    matrices: Vec<nalgebra::DMatrix<f64>>,
    publics: BTreeMap<PoseKey, LiftedPose>,
    pub estimate: LiftedEstimate,
    pub cost: f64,
    exec: Execution,
}

impl<'g> RbcdState<'g> {
    pub fn new(g: &'g MultiRobotPoseGraph, init: LiftedEstimate, cfg: &RbcdConfig) -> Result<Self, DpgoError> {
        let robots: Vec<u32> = g.robots().collect();
        let problems = par::map(cfg.execution, &robots, |&r| BlockProblem::new(g, r, cfg.rank, Execution::Sequential))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let mut blocks = Vec::with_capacity(robots.len());
        for p in &problems {
            let r = p.robot();
            let poses = (0..g.pose_count(r))
                .map(|i| init.get(&PoseKey::new(r, i)).cloned())
                .collect::<Result<Vec<_>, _>>()?;
            if let Some(bad) = poses.iter().find(|l| l.rank() != cfg.rank) {
                return Err(DpgoError::RankMismatch { expected: cfg.rank, found: bad.rank() });
            }
            blocks.push(RobotBlock { robot: r, poses, public_keys: p.public_keys().clone() });
        }
        let matrices = blocks.iter().map(RobotBlock::to_matrix).collect();
        let publics = blocks.iter().flat_map(|b| b.publics()).collect();
        let cost = lifted_cost_with(g, &init, cfg.execution)?;
        Ok(Self { g, problems, blocks, matrices, publics, estimate: init, cost, exec: cfg.execution })
    }

    /// The public poses block `b` is allowed to read.
    fn neighbor_publics(&self, b: usize) -> BTreeMap<PoseKey, LiftedPose> {
        self.problems[b]
            .neighbor_keys()
            .iter()
            .filter_map(|k| self.publics.get(k).map(|p| (*k, p.clone())))
            .collect()
    }

    /// One step on block `b`; returns whether it moved.
    pub fn update(&mut self, b: usize) -> Result<bool, DpgoError> {
        let nbrs = self.neighbor_publics(b);
        let floor = 64.0 * f64::EPSILON * self.cost;
        let out = self.problems[b].step(&mut self.matrices[b], &nbrs, floor)?;
        if out.accepted {
            let block = &mut self.blocks[b];
            block.set_from_matrix(&self.matrices[b]);
            for (i, p) in block.poses.iter().enumerate() {
                self.estimate.poses.insert(PoseKey::new(block.robot, i as u32), p.clone());
            }
            self.publics.extend(block.publics());
            self.cost = lifted_cost_with(self.g, &self.estimate, self.exec)?;
        }
        Ok(out.accepted)
    }

    /// Index of the block with the largest Riemannian gradient norm.
    fn greediest(&self) -> Result<usize, DpgoError> {
        let idx: Vec<usize> = (0..self.problems.len()).collect();
        let norms = par::map(self.exec, &idx, |&b| {
            self.problems[b].riemannian_gradient(&self.matrices[b], &self.neighbor_publics(b)).map(|g| g.norm())
        });
        let mut best = (0, f64::NEG_INFINITY);
        for (b, n) in norms.into_iter().enumerate() {
            let n = n?;
            if n > best.1 {
                best = (b, n);
            }
        }
        Ok(best.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpgo::lift;
    use crate::pose_graph::{generate_manhattan, partition, ManhattanConfig};

    #[test]
    fn config_validation() {
        assert!(RbcdConfig::default().validate().is_ok());
        assert!(RbcdConfig { rank: 2, ..Default::default() }.validate().is_err());
        assert!(RbcdConfig { max_iterations: 0, ..Default::default() }.validate().is_err());
        assert_eq!(RbcdConfig::early_stop().iteration_limit(), 50);
    }

    #[test]
    fn ground_truth_start_stops_after_one_sweep() {
        let cfg = ManhattanConfig { poses: 120, sigma_rotation: 0.0, sigma_translation: 0.0, ..Default::default() };
        let g = partition(&generate_manhattan(&cfg), 3).unwrap();
        let init = lift(g.ground_truth.as_ref().unwrap(), 5);
        let (_, trace) = rbcd_solve_from(&g, init, &RbcdConfig::default()).unwrap();
        assert!(trace.initial_cost < 1e-20, "{}", trace.initial_cost);
        assert_eq!(trace.iterations(), 3);
    }

    #[test]
    fn noisy_graph_descends() {
        let cfg = ManhattanConfig { poses: 300, seed: 3, ..Default::default() };
        let g = partition(&generate_manhattan(&cfg), 3).unwrap();
        for order in [BlockOrder::RoundRobin, BlockOrder::Greedy] {
            let rc = RbcdConfig { block_order: order, max_iterations: 60, ..Default::default() };
            let (est, trace) = rbcd_solve(&g, &rc).unwrap();
            assert!(trace.max_increase() <= 1e-12, "{order:?}");
            assert!(trace.final_cost() < trace.initial_cost);
            assert!(est.max_stiefel_residual() <= 1e-8);
        }
    }
}
