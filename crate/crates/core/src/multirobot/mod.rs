//! Simulated inter-robot protocol: place recognition, geometric
//! verification, consistency-clique selection, distributed pose-graph
//! optimization and per-robot mesh correction, with every transmitted byte
//! accounted for.
//!
//! Robots are isolated agents. The scheduler hands each one its own data
//! and afterwards only control signals and encoded messages; whatever a
//! robot learns about another arrives as bytes and is decoded on receipt.

mod agent;
mod ledger;
mod protocol;
mod report;
mod scenario;
mod verify;
pub mod wire;

pub use ledger::{Category, ChannelLedger, ChannelStats};
pub use protocol::{
    detect_loop_candidates, replay_agent, run_protocol, DpgoStepRecord, Input, Phase, ProtocolConfig, ProtocolOutput,
    RendezvousSchedule, Report, RobotOutput, TranscriptEntry,
};
pub use report::{
    bandwidth_report, evaluate, BandwidthReport, Evaluation, RobotMeshAccuracy, BANDWIDTH_CSV_HEADER,
    DEFAULT_IMAGE_BYTES_PER_KEYFRAME,
};
pub use scenario::{generate_scenario, read_bundle, write_bundle, RobotData, Scenario, ScenarioConfig};
pub use verify::{geometric_verification, hamming, match_keypoints, GvConfig, Verification};
pub use wire::{Message, MessageKind};

use crate::dpgo::DpgoError;
use crate::geometry::{GeometryError, Vec3};
use crate::mesh::MeshError;
use crate::pcm::PcmError;
use crate::pose_graph::{PoseGraphError, PoseKey};
use thiserror::Error;

/// Length of every place-recognition descriptor.
pub const DESCRIPTOR_DIM: usize = 32;
/// Bytes in a binary keypoint descriptor.
pub const KEYPOINT_DESCRIPTOR_BYTES: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MultiRobotError {
    #[error("descriptor lengths differ ({a} vs {b})")]
    DescriptorLength { a: usize, b: usize },
    #[error("descriptor must be non-negative with positive norm")]
    BadDescriptor,
    #[error("keyframe {key}: {points} keypoints but {descriptors} descriptors")]
    KeypointCount { key: PoseKey, points: usize, descriptors: usize },
    #[error("schedule references robot {0}, which is not in the scenario")]
    UnknownRobot(u32),
    #[error("malformed {kind:?} payload: {reason}")]
    Wire { kind: MessageKind, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bundle: {0}")]
    Bundle(String),
    #[error("robot {robot}: {source}")]
    Dpgo { robot: u32, source: DpgoError },
    #[error("robot {robot}: {source}")]
    Pcm { robot: u32, source: PcmError },
    #[error("robot {robot}: {source}")]
    Mesh { robot: u32, source: MeshError },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Graph(#[from] PoseGraphError),
}

/// Global place signature: non-negative and unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(Vec<f64>);

impl Descriptor {
    /// Normalizes `v`; it must be non-negative and not all zero. Vectors
    /// already of unit length (to 1e-12) are kept as given, so a descriptor
    /// read back from text is bit-identical to the one written.
    pub fn new(v: Vec<f64>) -> Result<Self, MultiRobotError> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n > 0.0 && n.is_finite()) || v.iter().any(|&x| x < 0.0) {
            return Err(MultiRobotError::BadDescriptor);
        }
        if (n - 1.0).abs() < 1e-12 {
            return Ok(Self(v));
        }
        Ok(Self(v.into_iter().map(|x| x / n).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Cosine similarity clamped to `[0, 1]`.
pub fn bow_similarity(a: &Descriptor, b: &Descriptor) -> Result<f64, MultiRobotError> {
    if a.len() != b.len() {
        return Err(MultiRobotError::DescriptorLength { a: a.len(), b: b.len() });
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(0.0, 1.0))
}

/// What a robot extracted at one keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeData {
    pub key: PoseKey,
    pub descriptor: Descriptor,
    /// In the keyframe's frame (m).
    pub keypoints: Vec<Vec3>,
    pub keypoint_descriptors: Vec<[u8; KEYPOINT_DESCRIPTOR_BYTES]>,
}

impl KeyframeData {
    pub fn validate(&self) -> Result<(), MultiRobotError> {
        if self.keypoints.len() != self.keypoint_descriptors.len() {
            return Err(MultiRobotError::KeypointCount {
                key: self.key,
                points: self.keypoints.len(),
                descriptors: self.keypoint_descriptors.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn similarity_basics() {
        let d = Descriptor::new(vec![1.0, 2.0, 2.0]).unwrap();
        assert!((d.as_slice().iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((bow_similarity(&d, &d).unwrap() - 1.0).abs() < 1e-12);
        let a = Descriptor::new(vec![1.0, 0.0]).unwrap();
        let b = Descriptor::new(vec![0.0, 3.0]).unwrap();
        assert_eq!(bow_similarity(&a, &b).unwrap(), 0.0);
        assert!(bow_similarity(&a, &d).is_err());
        assert!(Descriptor::new(vec![0.0, 0.0]).is_err());
        assert!(Descriptor::new(vec![1.0, -0.1]).is_err());
    }
}
