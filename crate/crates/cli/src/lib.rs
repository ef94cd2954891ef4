//! Experiment harness: dataset generation, the clique-search and solver
//! benchmarks, the full multi-robot pipeline and a report over their CSVs.
//! Every command writes `manifest-<command>.toml` next to its artifacts.

pub mod config;
mod manifest;
mod report;

pub use config::{ExperimentConfig, Overrides, Source};
pub use manifest::{sha256_hex, Manifest};
pub use report::{check_csv, summarize};

use multislam::dpgo::{compare_methods, dpgo_bench_csv, trace_csv, write_tum};
use multislam::mesh::{write_ply, TriMesh};
use multislam::multirobot::{
    bandwidth_report, evaluate, generate_scenario, read_bundle, run_protocol, write_bundle, ProtocolOutput,
    RendezvousSchedule, Scenario,
};
use multislam::pcm::{arrival_ordered, incremental_benchmark, pcm_bench_csv, select_inliers};
use multislam::pose_graph::{
    generate_manhattan, inject_outliers_with, parse_g2o, partition, serialize_g2o, MultiRobotPoseGraph, Trajectory,
};
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad or inconsistent configuration; exit code 2.
    Config(String),
    /// Anything failing after the configuration was accepted; exit code 3.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    PcmBench,
    DpgoBench,
    Run,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::PcmBench => "pcm-bench",
            Command::DpgoBench => "dpgo-bench",
            Command::Run => "run",
            Command::Report => "report",
        }
    }
}

/// Commands sharing an output directory keep separate manifests.
pub fn manifest_name(cmd: Command) -> String {
    format!("manifest-{}.toml", cmd.name())
}

/// Collects artifacts of one command so the manifest can list their digests.
struct Output {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
        }
        std::fs::write(&p, text).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
        self.files.push((name.to_string(), sha256_hex(text.as_bytes())));
        Ok(())
    }

    fn finish(mut self, cmd: Command, cfg: &ExperimentConfig) -> Result<Vec<(String, String)>, CliError> {
        self.files.sort();
        let m = Manifest::new(cmd.name(), cfg, self.files.clone());
        let p = self.dir.join(manifest_name(cmd));
        std::fs::write(&p, m.to_toml()).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
        Ok(self.files)
    }
}

/// Loads the pose graph named by the dataset section (Manhattan graphs are
/// split into `robots` chains) and injects `outliers` loop closures.
pub fn load_graph(cfg: &ExperimentConfig) -> Result<MultiRobotPoseGraph, CliError> {
    let g = match cfg.dataset.source {
        Source::Manhattan => partition(&generate_manhattan(&cfg.dataset.manhattan), cfg.robots).map_err(runtime)?,
        Source::G2o => {
            let p = cfg.dataset.path.as_ref().ok_or_else(|| CliError::Config("dataset.path missing".into()))?;
            let text = std::fs::read_to_string(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
            parse_g2o(&text).map_err(runtime)?.graph
        }
        Source::Scenario | Source::Bundle => {
            return Err(CliError::Config("this command needs a pose-graph dataset (manhattan or g2o)".into()))
        }
    };
    Ok(if cfg.outliers > 0 { inject_outliers_with(&g, cfg.outliers, cfg.seed, &cfg.outlier_model) } else { g })
}

pub fn load_scenario(cfg: &ExperimentConfig) -> Result<Scenario, CliError> {
    let mut s = match cfg.dataset.source {
        Source::Scenario => generate_scenario(&cfg.dataset.scenario).map_err(|e| CliError::Config(e.to_string()))?,
        Source::Bundle => {
            let p = cfg.dataset.path.as_ref().ok_or_else(|| CliError::Config("dataset.path missing".into()))?;
            read_bundle(p).map_err(runtime)?
        }
        Source::Manhattan | Source::G2o => {
            return Err(CliError::Config("this command needs a scenario dataset (scenario or bundle)".into()))
        }
    };
    if let Some(p) = &cfg.dataset.schedule {
        let text = std::fs::read_to_string(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
        s.schedule = RendezvousSchedule::parse_csv(&text).map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(s)
}

fn tum_per_robot(out: &mut Output, prefix: &str, t: &Trajectory) -> Result<(), CliError> {
    let robots: std::collections::BTreeSet<u32> = t.keys().map(|k| k.robot).collect();
    for r in robots {
        out.write(&format!("{prefix}_robot{r}.tum"), &write_tum(&t.robot(r)))?;
    }
    Ok(())
}

/// Writes the dataset: a g2o graph (with injected outliers listed in
/// `outliers.csv`) and ground truth, or a scenario bundle.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Output::new(&cfg.out)?;
    match cfg.dataset.source {
        Source::Manhattan | Source::G2o => {
            let g = load_graph(cfg)?;
            let init = multislam::pose_graph::OdometryIndex::build(&g).map_err(runtime)?.trajectory();
            out.write("graph.g2o", &serialize_g2o(&g, &init).map_err(runtime)?)?;
            let mut o = String::from("measurement_index\n");
            for i in g.injected_outliers() {
                let _ = writeln!(o, "{i}");
            }
            out.write("outliers.csv", &o)?;
            if let Some(t) = &g.ground_truth {
                tum_per_robot(&mut out, "groundtruth", t)?;
            }
        }
        Source::Scenario | Source::Bundle => {
            let s = load_scenario(cfg)?;
            let dir = cfg.out.join("scenario");
            write_bundle(&s, &dir).map_err(runtime)?;
            for entry in walk(&dir)? {
                let bytes = std::fs::read(&entry).map_err(runtime)?;
                let rel = entry.strip_prefix(&cfg.out).unwrap_or(&entry).to_string_lossy().into_owned();
                out.files.push((rel, sha256_hex(&bytes)));
            }
        }
    }
    out.finish(Command::Generate, cfg)
}

fn walk(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(runtime)? {
            let p = e.map_err(runtime)?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    Ok(files)
}

/// Incremental against batch clique search as loop closures arrive, plus the
/// inlier set selected over all of them.
pub fn cmd_pcm_bench(cfg: &ExperimentConfig) -> Result<Vec<(String, String)>, CliError> {
    let g = load_graph(cfg)?;
    let candidates = arrival_ordered(&g).map_err(runtime)?;
    let b = &cfg.pcm_bench;
    let rows = incremental_benchmark(&candidates, &cfg.pcm, b.batch, b.max_vertices, b.repetitions).map_err(runtime)?;
    let mut out = Output::new(&cfg.out)?;
    out.write("pcm_bench.csv", &pcm_bench_csv(&rows))?;

    let sel = select_inliers(&g, &cfg.pcm).map_err(runtime)?;
    let outliers = g.injected_outliers();
    let loops = g.loop_closures().count();
    let accepted_outliers = sel.accepted.iter().filter(|i| outliers.contains(i)).count();
    let accepted_inliers = sel.accepted.len() - accepted_outliers;
    let mut s = format!("{}\n", report::PCM_SELECTION_HEADER);
    let _ = writeln!(
        s,
        "{loops},{},{accepted_inliers},{accepted_outliers},{},{}",
        outliers.len(),
        sel.odometry_rejected.len(),
        sel.checks
    );
    out.write("pcm_selection.csv", &s)?;
    out.finish(Command::PcmBench, cfg)
}

/// Local PGO, full and early-stopped block-coordinate descent and the
/// centralized solve on the same graph.
pub fn cmd_dpgo_bench(cfg: &ExperimentConfig) -> Result<Vec<(String, String)>, CliError> {
    let mut g = load_graph(cfg)?;
    if cfg.dpgo_bench.filter_outliers && g.loop_closures().next().is_some() && cfg.outliers > 0 {
        let sel = select_inliers(&g, &cfg.pcm).map_err(runtime)?;
        let keep: std::collections::BTreeSet<usize> = sel.accepted.into_iter().collect();
        g = g.filtered(|i, m| !m.kind.is_loop() || keep.contains(&i));
    }
    let results = compare_methods(&g, &cfg.rbcd, cfg.dpgo_bench.early_stop, &cfg.centralized).map_err(runtime)?;
    let mut out = Output::new(&cfg.out)?;
    out.write("dpgo_bench.csv", &dpgo_bench_csv(&results))?;
    for r in &results {
        if let Some(t) = &r.trace {
            out.write(&format!("trace_{}.csv", r.method), &trace_csv(t, true))?;
        }
        tum_per_robot(&mut out, &format!("trajectory_{}", r.method), &r.trajectory)?;
    }
    out.finish(Command::DpgoBench, cfg)
}

fn loops_csv(out: &ProtocolOutput) -> String {
    let mut s = String::from("from_robot,from_index,to_robot,to_index,tx,ty,tz\n");
    for m in out.accepted_loops() {
        let t = m.transform.translation;
        let _ = writeln!(s, "{},{},{},{},{},{},{}", m.from.robot, m.from.index, m.to.robot, m.to.index, t.x, t.y, t.z);
    }
    s
}

fn trace_rows(out: &ProtocolOutput) -> String {
    let mut s = String::from("iteration,robot_id,accepted,cost_before,cost_after\n");
    for t in &out.dpgo_trace {
        let _ = writeln!(s, "{},{},{},{:e},{:e}", t.iteration, t.robot, t.accepted, t.cost_before, t.cost_after);
    }
    s
}

fn merge<'a>(meshes: impl Iterator<Item = &'a TriMesh>) -> TriMesh {
    meshes.fold(TriMesh { vertices: vec![], faces: vec![], labels: Some(vec![]) }, |acc, m| acc.merged(m))
}

/// The whole pipeline on a scenario: trajectories, deformed meshes, the
/// communication breakdown and trajectory and mesh accuracy.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<Vec<(String, String)>, CliError> {
    let s = load_scenario(cfg)?;
    let result = run_protocol(&s, &s.schedule, &cfg.protocol).map_err(runtime)?;
    let eval = evaluate(&s, &result, &cfg.centralized, &cfg.accuracy).map_err(runtime)?;
    let mut out = Output::new(&cfg.out)?;
    tum_per_robot(&mut out, "trajectory", &result.trajectory())?;
    for r in &result.robots {
        out.write(&format!("mesh_before_robot{}.ply", r.robot), &write_ply(&r.mesh_before))?;
        out.write(&format!("mesh_after_robot{}.ply", r.robot), &write_ply(&r.mesh_after))?;
    }
    out.write("merged_before.ply", &write_ply(&merge(result.robots.iter().map(|r| &r.mesh_before))))?;
    out.write("merged_after.ply", &write_ply(&merge(result.robots.iter().map(|r| &r.mesh_after))))?;
    let bw = bandwidth_report(&result.ledger, &s, &cfg.report.dataset_name, cfg.report.image_bytes_per_keyframe);
    out.write("bandwidth.csv", &bw.to_csv())?;
    out.write("accuracy.csv", &eval.accuracy_csv())?;
    out.write("loops.csv", &loops_csv(&result))?;
    out.write("dpgo_trace.csv", &trace_rows(&result))?;
    let mut summary = format!("{}\n", report::SUMMARY_HEADER);
    let local = eval.ate_local_pgo.map_or(String::new(), |v| v.to_string());
    for (k, v) in [
        ("ate_m", eval.ate.to_string()),
        ("ate_initial_m", eval.ate_initial.to_string()),
        ("ate_local_pgo_m", local),
        ("accepted_loops", eval.accepted_loops.to_string()),
        ("dpgo_steps", result.dpgo_trace.len().to_string()),
        ("rounds", result.rounds.to_string()),
        ("messages", result.ledger.total_messages().to_string()),
        ("bytes", result.ledger.total_bytes().to_string()),
    ] {
        let _ = writeln!(summary, "{k},{v}");
    }
    out.write("summary.csv", &summary)?;
    let mut pairs = String::from("robot_a,robot_b,bytes\n");
    for ((a, b), n) in result.ledger.pair_bytes() {
        let _ = writeln!(pairs, "{a},{b},{n}");
    }
    out.write("pair_bytes.csv", &pairs)?;
    out.finish(Command::Run, cfg)
}

/// Validates every known CSV in the output directory against its header and
/// writes `report.txt` summarizing them. Returns the report text.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let text = summarize(&cfg.out)?;
    let mut out = Output::new(&cfg.out)?;
    out.write("report.txt", &text)?;
    out.finish(Command::Report, cfg)?;
    Ok(text)
}

