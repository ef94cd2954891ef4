use super::{centralized_solve, local_pgo_baseline, rbcd_solve, round_solution, CentralizedConfig, DpgoError, RbcdConfig, SolverTrace};
use crate::pose_graph::{ate, pgo_cost, MultiRobotPoseGraph, Trajectory};
use serde::Serialize;
use std::fmt;
use std::time::Instant;

pub const DPGO_BENCH_CSV_HEADER: &str = "method,ate_m,pgo_cost,iterations,wall_ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    LocalPgo,
    Rbcd,
    RbcdEarlyStop,
    Centralized,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::LocalPgo => "local_pgo",
            Method::Rbcd => "rbcd",
            Method::RbcdEarlyStop => "rbcd_es",
            Method::Centralized => "centralized",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: Method,
    /// Against the graph's ground truth, when it has one.
    pub ate: Option<f64>,
    /// `pgo_cost` of the final SE(3) trajectory.
    pub cost: f64,
    pub iterations: usize,
    pub wall_ms: f64,
    pub trajectory: Trajectory,
    /// Lifted-cost trace for the two block-coordinate runs.
    pub trace: Option<SolverTrace>,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
#[error("{method}: {source}")]
pub struct MethodError {
    pub method: Method,
    pub source: DpgoError,
}

/// Runs every method on `g`. `rbcd` is used for the full run; the early-stop
/// run is the same configuration capped at `early_stop` block updates.
pub fn compare_methods(
    g: &MultiRobotPoseGraph,
    rbcd: &RbcdConfig,
    early_stop: usize,
    central: &CentralizedConfig,
) -> Result<Vec<MethodResult>, MethodError> {
    let tag = |method| move |source| MethodError { method, source };
    let finish = |method, t0: Instant, trajectory: Trajectory, iterations, trace| -> Result<MethodResult, MethodError> {
        let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        let cost = pgo_cost(g, &trajectory).map_err(|e| tag(method)(e.into()))?;
        let ate = match &g.ground_truth {
            Some(truth) => Some(ate(&trajectory, truth).map_err(|e| tag(method)(e.into()))?),
            None => None,
        };
        Ok(MethodResult { method, ate, cost, iterations, wall_ms, trajectory, trace })
    };
    let mut out = Vec::new();

    let t0 = Instant::now();
    let local = local_pgo_baseline(g, central).map_err(tag(Method::LocalPgo))?;
    out.push(finish(Method::LocalPgo, t0, local, 0, None)?);

    for (method, cfg) in [
        (Method::Rbcd, rbcd.clone()),
        (Method::RbcdEarlyStop, RbcdConfig { early_stop_iterations: Some(early_stop), ..rbcd.clone() }),
    ] {
        let t0 = Instant::now();
        let (x, trace) = rbcd_solve(g, &cfg).map_err(tag(method))?;
        let rounded = round_solution(&x);
        let it = trace.iterations();
        out.push(finish(method, t0, rounded.trajectory, it, Some(trace))?);
    }

    let t0 = Instant::now();
    let c = centralized_solve(g, central).map_err(tag(Method::Centralized))?;
    out.push(finish(Method::Centralized, t0, c.trajectory, c.iterations, None)?);
    Ok(out)
}

pub fn dpgo_bench_csv(results: &[MethodResult]) -> String {
    let mut s = format!("{DPGO_BENCH_CSV_HEADER}\n");
    for r in results {
        let ate = r.ate.map_or(String::new(), |a| a.to_string());
        s.push_str(&format!("{},{},{},{},{:.3}\n", r.method, ate, r.cost, r.iterations, r.wall_ms));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_graph::{generate_manhattan, partition, ManhattanConfig};

    #[test]
    fn noiseless_graph_gives_zero_error_everywhere() {
        let m = ManhattanConfig { poses: 150, blocks: 5, sigma_rotation: 0.0, sigma_translation: 0.0, seed: 3, ..Default::default() };
        let g = partition(&generate_manhattan(&m), 3).unwrap();
        let r = compare_methods(&g, &RbcdConfig::default(), 50, &CentralizedConfig::default()).unwrap();
        assert_eq!(r.len(), 4);
        for m in &r {
            assert!(m.ate.unwrap() < 1e-6, "{} ate {:?}", m.method, m.ate);
            assert!(m.cost < 1e-8, "{} cost {}", m.method, m.cost);
        }
        let csv = dpgo_bench_csv(&r);
        assert!(csv.starts_with(DPGO_BENCH_CSV_HEADER));
        assert_eq!(csv.lines().count(), 5);
    }
}
