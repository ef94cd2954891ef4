use super::ledger::{Category, ChannelLedger};
use super::protocol::ProtocolOutput;
use super::wire::KEYPOINT_BYTES;
use super::{MultiRobotError, Scenario};
use crate::dpgo::{local_pgo_baseline, CentralizedConfig};
use crate::mesh::{mesh_accuracy, AccuracyConfig, MeshAccuracy, TriMesh};
use crate::pose_graph::{ate, MultiRobotPoseGraph, PoseKey};
use serde::Serialize;

pub const BANDWIDTH_CSV_HEADER: &str = "dataset,PR_MB,GV_MB,DPGO_MB,total_MB,centralized_image_MB,centralized_keypoints_MB";

/// Bytes per keyframe of the raw-image baseline: two 640×480 grayscale
/// images.
pub const DEFAULT_IMAGE_BYTES_PER_KEYFRAME: u64 = 614_400;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthReport {
    pub dataset: String,
    pub place_recognition: u64,
    pub verification: u64,
    pub dpgo: u64,
    pub total: u64,
    /// Every keyframe's images sent to a server.
    pub centralized_images: u64,
    /// Every keyframe's keypoints sent to a server.
    pub centralized_keypoints: u64,
}

impl BandwidthReport {
    /// Distributed total over the keypoint baseline; `None` when the
    /// baseline is empty.
    pub fn keypoint_fraction(&self) -> Option<f64> {
        (self.centralized_keypoints > 0).then(|| self.total as f64 / self.centralized_keypoints as f64)
    }

    /// Header plus one row, in megabytes (10⁶ bytes).
    pub fn to_csv(&self) -> String {
        let mb = |b: u64| b as f64 / 1e6;
        format!(
            "{BANDWIDTH_CSV_HEADER}\n{},{},{},{},{},{},{}\n",
            self.dataset,
            mb(self.place_recognition),
            mb(self.verification),
            mb(self.dpgo),
            mb(self.total),
            mb(self.centralized_images),
            mb(self.centralized_keypoints)
        )
    }
}

pub fn bandwidth_report(ledger: &ChannelLedger, scenario: &Scenario, dataset: &str, image_bytes_per_keyframe: u64) -> BandwidthReport {
    let keyframes: u64 = scenario.robots.iter().map(|r| r.keyframes.len() as u64).sum();
    let keypoints: u64 = scenario.robots.iter().flat_map(|r| &r.keyframes).map(|k| k.keypoints.len() as u64).sum();
    BandwidthReport {
        dataset: dataset.to_string(),
        place_recognition: ledger.category_bytes(Category::PlaceRecognition),
        verification: ledger.category_bytes(Category::GeometricVerification),
        dpgo: ledger.category_bytes(Category::Dpgo),
        total: ledger.total_bytes(),
        centralized_images: keyframes * image_bytes_per_keyframe,
        centralized_keypoints: keypoints * KEYPOINT_BYTES as u64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotMeshAccuracy {
    pub robot: u32,
    pub before: MeshAccuracy,
    pub after: MeshAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    /// Protocol output against ground truth.
    pub ate: f64,
    /// Odometry aligned through one loop per pair, before optimization.
    pub ate_initial: f64,
    /// Each robot optimized alone over the same accepted loops.
    pub ate_local_pgo: Option<f64>,
    pub accepted_loops: usize,
    pub merged_before: MeshAccuracy,
    pub merged_after: MeshAccuracy,
    pub robots: Vec<RobotMeshAccuracy>,
}

impl Evaluation {
    /// `robot_id,stage,mean_distance_m,label_accuracy` with a `merged` row
    /// pair at the end.
    pub fn accuracy_csv(&self) -> String {
        let mut s = String::from("robot_id,stage,mean_distance_m,label_accuracy\n");
        let label = |a: &MeshAccuracy| a.label_accuracy.map_or(String::new(), |v| v.to_string());
        let mut row = |id: &str, stage: &str, a: &MeshAccuracy| {
            s.push_str(&format!("{id},{stage},{},{}\n", a.mean_distance, label(a)));
        };
        for r in &self.robots {
            row(&r.robot.to_string(), "raw", &r.before);
            row(&r.robot.to_string(), "lmo", &r.after);
        }
        row("merged", "raw", &self.merged_before);
        row("merged", "lmo", &self.merged_after);
        s
    }
}

fn merge<'a>(meshes: impl Iterator<Item = &'a TriMesh>) -> TriMesh {
    meshes.fold(TriMesh { vertices: vec![], faces: vec![], labels: Some(vec![]) }, |acc, m| acc.merged(m))
}

/// Scores a protocol run against the scenario's ground truth. Estimated
/// meshes are expressed in the first robot's starting frame, so they are
/// first moved by that robot's true first pose.
pub fn evaluate(
    scenario: &Scenario,
    out: &ProtocolOutput,
    pgo: &CentralizedConfig,
    accuracy: &AccuracyConfig,
) -> Result<Evaluation, MultiRobotError> {
    let truth = scenario.ground_truth();
    let est = out.trajectory();
    let mut initial = crate::pose_graph::Trajectory::new();
    for r in &out.robots {
        initial.extend(r.initial_trajectory.clone());
    }
    let loops = out.accepted_loops();
    let mut g = MultiRobotPoseGraph::new();
    for r in &scenario.robots {
        g.add_robot(r.id, r.keyframes.len() as u32);
        for m in r.odometry.measurements() {
            g.add_measurement(*m)?;
        }
    }
    for m in &loops {
        g.add_measurement(*m)?;
    }
    let ate_local_pgo = if scenario.robots.len() > 1 && !loops.is_empty() {
        match local_pgo_baseline(&g, pgo) {
            Ok(t) => Some(ate(&t, &truth)?),
            Err(crate::dpgo::DpgoError::Disconnected(_)) => None,
            Err(source) => return Err(MultiRobotError::Dpgo { robot: 0, source }),
        }
    } else {
        None
    };

    let root = out.robots.first().map_or(0, |r| r.reference);
    let world = *truth.get(&PoseKey::new(root, 0))?;
    let mesh_err = |robot, source| MultiRobotError::Mesh { robot, source };
    let mut robots = Vec::new();
    for (r, data) in out.robots.iter().zip(&scenario.robots) {
        let before = mesh_accuracy(&r.mesh_before.transformed(&world), &data.truth_mesh, accuracy).map_err(|e| mesh_err(r.robot, e))?;
        let after = mesh_accuracy(&r.mesh_after.transformed(&world), &data.truth_mesh, accuracy).map_err(|e| mesh_err(r.robot, e))?;
        robots.push(RobotMeshAccuracy { robot: r.robot, before, after });
    }
    let truth_mesh = merge(scenario.robots.iter().map(|r| &r.truth_mesh));
    let merged_before = merge(out.robots.iter().map(|r| &r.mesh_before)).transformed(&world);
    let merged_after = merge(out.robots.iter().map(|r| &r.mesh_after)).transformed(&world);
    Ok(Evaluation {
        ate: ate(&est, &truth)?,
        ate_initial: ate(&initial, &truth)?,
        ate_local_pgo,
        accepted_loops: loops.len(),
        merged_before: mesh_accuracy(&merged_before, &truth_mesh, accuracy).map_err(|e| mesh_err(root, e))?,
        merged_after: mesh_accuracy(&merged_after, &truth_mesh, accuracy).map_err(|e| mesh_err(root, e))?,
        robots,
    })
}
