//! Wire schema. All integers and floats are little endian; payloads are
//! plain concatenations of fixed-layout records, so sizes follow directly
//! from record counts:
//!
//! | kind              | record                                                        | bytes          |
//! |-------------------|---------------------------------------------------------------|----------------|
//! | BowQuery          | keyframe index u32, 32 × f32 descriptor                       | 132            |
//! | BowMatch          | query index u32, target index u32, score f32                  | 12             |
//! | KeypointRequest   | keyframe index u32                                            | 4              |
//! | KeypointResponse  | index u32, count u32, odometry anchor 20 × f64, count × keypoint | 168 + 44·count |
//! | (keypoint)        | 3 × f32 position, 32-byte binary descriptor                   | 44             |
//! | LoopCandidate     | from key u64, to key u64, 12 × f64 pose, κ f64, τ f64, sender's odometry anchor 20 × f64 | 288 |
//! | PublicPoses       | key u64, r × 3 f64 `Y`, r f64 `p` (rank `r` fixed by config)  | 8 + 32·r       |
//! | CliqueUpdate      | from key u64, to key u64                                      | 16             |

use super::{Descriptor, MultiRobotError, DESCRIPTOR_DIM, KEYPOINT_DESCRIPTOR_BYTES};
use crate::dpgo::LiftedPose;
use crate::geometry::{Mat3, Pose, Rotation, Vec3};
use crate::pose_graph::{OdometryAnchor, PoseKey};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const DESCRIPTOR_RECORD_BYTES: usize = 4 + 4 * DESCRIPTOR_DIM;
pub const MATCH_RECORD_BYTES: usize = 12;
pub const KEYPOINT_REQUEST_BYTES: usize = 4;
pub const KEYPOINT_BYTES: usize = 12 + KEYPOINT_DESCRIPTOR_BYTES;
pub const KEYFRAME_HEADER_BYTES: usize = 8 + 8 * OdometryAnchor::WIRE_LEN;
pub const LOOP_RECORD_BYTES: usize = 16 + 8 * 14 + 8 * OdometryAnchor::WIRE_LEN;
pub const CLIQUE_RECORD_BYTES: usize = 16;

pub fn public_pose_bytes(rank: usize) -> usize {
    8 + 8 * 4 * rank
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    BowQuery,
    BowMatch,
    KeypointRequest,
    KeypointResponse,
    LoopCandidate,
    PublicPoses,
    CliqueUpdate,
}

impl MessageKind {
    pub const ALL: [MessageKind; 7] = [
        MessageKind::BowQuery,
        MessageKind::BowMatch,
        MessageKind::KeypointRequest,
        MessageKind::KeypointResponse,
        MessageKind::LoopCandidate,
        MessageKind::PublicPoses,
        MessageKind::CliqueUpdate,
    ];
}

/// An encoded message. Its size is the payload length; there is no header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub from: u32,
    pub to: u32,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(from: u32, to: u32, payload: &Payload) -> Self {
        Self { from, to, kind: payload.kind(), payload: payload.encode() }
    }

    pub fn byte_size(&self) -> usize {
        self.payload.len()
    }

    pub fn decode(&self, rank: usize) -> Result<Payload, MultiRobotError> {
        Payload::decode(self.kind, &self.payload, rank)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorRecord {
    pub index: u32,
    pub descriptor: Descriptor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchRecord {
    pub query: u32,
    pub target: u32,
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeKeypoints {
    pub index: u32,
    pub anchor: OdometryAnchor,
    pub keypoints: Vec<Vec3>,
    pub descriptors: Vec<[u8; KEYPOINT_DESCRIPTOR_BYTES]>,
}

/// A verified loop `transform ≈ X_from⁻¹ X_to`, with the sender's odometry
/// anchor at its own endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopRecord {
    pub from: PoseKey,
    pub to: PoseKey,
    pub transform: Pose,
    pub kappa: f64,
    pub tau: f64,
    pub anchor: OdometryAnchor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    BowQuery(Vec<DescriptorRecord>),
    BowMatch(Vec<MatchRecord>),
    KeypointRequest(Vec<u32>),
    KeypointResponse(Vec<KeyframeKeypoints>),
    LoopCandidate(Vec<LoopRecord>),
    PublicPoses(Vec<(PoseKey, LiftedPose)>),
    CliqueUpdate(Vec<(PoseKey, PoseKey)>),
}

fn key_bits(k: &PoseKey) -> u64 {
    (k.robot as u64) << 32 | k.index as u64
}

fn key_from(bits: u64) -> PoseKey {
    PoseKey::new((bits >> 32) as u32, bits as u32)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn pose(&mut self, p: &Pose) {
        let r = p.rotation.matrix();
        for i in 0..3 {
            for j in 0..3 {
                self.f64(r[(i, j)]);
            }
        }
        for i in 0..3 {
            self.f64(p.translation[i]);
        }
    }
    fn anchor(&mut self, a: &OdometryAnchor) {
        a.to_array().iter().for_each(|&v| self.f64(v));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    kind: MessageKind,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: &str) -> MultiRobotError {
        MultiRobotError::Wire { kind: self.kind, reason: reason.into() }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], MultiRobotError> {
        if self.bytes.len() < n {
            return Err(self.err("truncated"));
        }
        let (a, b) = self.bytes.split_at(n);
        self.bytes = b;
        Ok(a)
    }
    fn u32(&mut self) -> Result<u32, MultiRobotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, MultiRobotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f32(&mut self) -> Result<f32, MultiRobotError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn f64(&mut self) -> Result<f64, MultiRobotError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn pose(&mut self) -> Result<Pose, MultiRobotError> {
        let mut v = [0.0; 12];
        for x in &mut v {
            *x = self.f64()?;
        }
        let r = Mat3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
        Ok(Pose::new(Rotation::from_matrix_unchecked(r), Vec3::new(v[9], v[10], v[11])))
    }
    fn anchor(&mut self) -> Result<OdometryAnchor, MultiRobotError> {
        let mut v = [0.0; OdometryAnchor::WIRE_LEN];
        for x in &mut v {
            *x = self.f64()?;
        }
        Ok(OdometryAnchor::from_array(&v))
    }
    fn records<T>(
        &mut self,
        mut one: impl FnMut(&mut Self) -> Result<T, MultiRobotError>,
    ) -> Result<Vec<T>, MultiRobotError> {
        let mut out = Vec::new();
        while !self.bytes.is_empty() {
            out.push(one(self)?);
        }
        Ok(out)
    }
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::BowQuery(_) => MessageKind::BowQuery,
            Payload::BowMatch(_) => MessageKind::BowMatch,
            Payload::KeypointRequest(_) => MessageKind::KeypointRequest,
            Payload::KeypointResponse(_) => MessageKind::KeypointResponse,
            Payload::LoopCandidate(_) => MessageKind::LoopCandidate,
            Payload::PublicPoses(_) => MessageKind::PublicPoses,
            Payload::CliqueUpdate(_) => MessageKind::CliqueUpdate,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        match self {
            Payload::BowQuery(v) => {
                for r in v {
                    w.u32(r.index);
                    r.descriptor.as_slice().iter().for_each(|&x| w.f32(x as f32));
                }
            }
            Payload::BowMatch(v) => {
                for m in v {
                    w.u32(m.query);
                    w.u32(m.target);
                    w.f32(m.score);
                }
            }
            Payload::KeypointRequest(v) => v.iter().for_each(|&i| w.u32(i)),
            Payload::KeypointResponse(v) => {
                for k in v {
                    w.u32(k.index);
                    w.u32(k.keypoints.len() as u32);
                    w.anchor(&k.anchor);
                    for (p, d) in k.keypoints.iter().zip(&k.descriptors) {
                        (0..3).for_each(|i| w.f32(p[i] as f32));
                        w.0.extend_from_slice(d);
                    }
                }
            }
            Payload::LoopCandidate(v) => {
                for l in v {
                    w.u64(key_bits(&l.from));
                    w.u64(key_bits(&l.to));
                    w.pose(&l.transform);
                    w.f64(l.kappa);
                    w.f64(l.tau);
                    w.anchor(&l.anchor);
                }
            }
            Payload::PublicPoses(v) => {
                for (k, p) in v {
                    w.u64(key_bits(k));
                    // Column-major Y, then p.
                    p.y.iter().for_each(|&x| w.f64(x));
                    p.p.iter().for_each(|&x| w.f64(x));
                }
            }
            Payload::CliqueUpdate(v) => {
                for (a, b) in v {
                    w.u64(key_bits(a));
                    w.u64(key_bits(b));
                }
            }
        }
        w.0
    }

    /// Inverse of [`encode`](Self::encode). `rank` is needed for public
    /// poses only.
    pub fn decode(kind: MessageKind, bytes: &[u8], rank: usize) -> Result<Payload, MultiRobotError> {
        let mut r = Reader { bytes, kind };
        Ok(match kind {
            MessageKind::BowQuery => Payload::BowQuery(r.records(|r| {
                let index = r.u32()?;
                let v = (0..DESCRIPTOR_DIM).map(|_| r.f32().map(|x| x as f64)).collect::<Result<Vec<_>, _>>()?;
                let descriptor = Descriptor::new(v).map_err(|_| r.err("invalid descriptor"))?;
                Ok(DescriptorRecord { index, descriptor })
            })?),
            MessageKind::BowMatch => {
                Payload::BowMatch(r.records(|r| Ok(MatchRecord { query: r.u32()?, target: r.u32()?, score: r.f32()? }))?)
            }
            MessageKind::KeypointRequest => Payload::KeypointRequest(r.records(|r| r.u32())?),
            MessageKind::KeypointResponse => Payload::KeypointResponse(r.records(|r| {
                let index = r.u32()?;
                let n = r.u32()? as usize;
                let anchor = r.anchor()?;
                let mut keypoints = Vec::with_capacity(n.min(1 << 16));
                let mut descriptors = Vec::with_capacity(n.min(1 << 16));
                for _ in 0..n {
                    keypoints.push(Vec3::new(r.f32()? as f64, r.f32()? as f64, r.f32()? as f64));
                    descriptors.push(r.take(KEYPOINT_DESCRIPTOR_BYTES)?.try_into().expect("32 bytes"));
                }
                Ok(KeyframeKeypoints { index, anchor, keypoints, descriptors })
            })?),
            MessageKind::LoopCandidate => Payload::LoopCandidate(r.records(|r| {
                Ok(LoopRecord {
                    from: key_from(r.u64()?),
                    to: key_from(r.u64()?),
                    transform: r.pose()?,
                    kappa: r.f64()?,
                    tau: r.f64()?,
                    anchor: r.anchor()?,
                })
            })?),
            MessageKind::PublicPoses => {
                if rank == 0 {
                    return Err(r.err("rank must be positive"));
                }
                Payload::PublicPoses(r.records(|r| {
                    let key = key_from(r.u64()?);
                    let y = (0..3 * rank).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
                    let p = (0..rank).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
                    Ok((key, LiftedPose { y: DMatrix::from_vec(rank, 3, y), p: DVector::from_vec(p) }))
                })?)
            }
            MessageKind::CliqueUpdate => {
                Payload::CliqueUpdate(r.records(|r| Ok((key_from(r.u64()?), key_from(r.u64()?))))?)
            }
        })
    }
}
