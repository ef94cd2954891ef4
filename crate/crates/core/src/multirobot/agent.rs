//! One robot's side of the protocol. An agent owns its robot's data and
//! learns about others only from decoded messages.

use super::protocol::{bow_matches, Input, Phase, ProtocolConfig, Report, RobotOutput};
use super::verify::{verify_views, Verification, View};
use super::wire::{DescriptorRecord, KeyframeKeypoints, LoopRecord, Message, Payload};
use super::{MultiRobotError, RobotData};
use crate::dpgo::{BlockProblem, DpgoError, LiftedPose, RobotBlock};
use crate::geometry::{Pose, Rotation, Vec3};
use crate::mesh::{build_deformation_graph, interpolate_vertices, lmo_optimize, simplify_mesh, MeshError, TriMesh};
use crate::pcm::{CandidateLoop, CliqueResult, ConsistencyGraph};
use crate::pose_graph::{MultiRobotPoseGraph, OdometryAnchor, OdometryIndex, PoseKey, RelativeMeasurement, Trajectory};
use nalgebra::DMatrix;
use std::collections::{BTreeMap, BTreeSet};

type PairKey = (PoseKey, PoseKey);

/// Smaller key first.
fn canonical(m: &RelativeMeasurement) -> RelativeMeasurement {
    if m.from > m.to {
        m.reversed()
    } else {
        *m
    }
}

struct KnownLoop {
    measurement: RelativeMeasurement,
    /// The peer's odometry state at its endpoint.
    peer_anchor: OdometryAnchor,
}

struct Host {
    graph: ConsistencyGraph,
    clique: CliqueResult,
    next_id: u64,
    ids: BTreeMap<u64, PairKey>,
    queue: Vec<PairKey>,
}

#[derive(Default)]
struct Peer {
    /// Own descriptors `[0, sent)` have been offered to this peer.
    sent: u32,
    last_query: Option<u32>,
    /// `(own index, peer index)` waiting for the peer's keypoints.
    pending: Vec<(u32, u32)>,
    requested: BTreeSet<u32>,
    cache: BTreeMap<u32, KeyframeKeypoints>,
    loops: BTreeMap<PairKey, KnownLoop>,
    host: Option<Host>,
    accepted: BTreeSet<PairKey>,
}

struct Solve {
    problem: Option<BlockProblem>,
    block: RobotBlock,
    x: DMatrix<f64>,
    publics: BTreeMap<PoseKey, LiftedPose>,
    /// Own keys each peer reads.
    audience: BTreeMap<u32, Vec<PoseKey>>,
    noise: f64,
}

pub(crate) struct Agent {
    data: RobotData,
    cfg: ProtocolConfig,
    odo: OdometryIndex,
    recorded: u32,
    phase: Phase,
    peers: BTreeMap<u32, Peer>,
    frame: Option<Pose>,
    solve: Option<Solve>,
    reference: Option<(u32, LiftedPose)>,
    verified: usize,
    rejected: usize,
}

impl Agent {
    pub fn new(data: RobotData, cfg: ProtocolConfig) -> Result<Self, MultiRobotError> {
        let odo = OdometryIndex::build(&data.odometry)?;
        Ok(Self {
            data,
            cfg,
            odo,
            recorded: 0,
            phase: Phase::Mission,
            peers: BTreeMap::new(),
            frame: None,
            solve: None,
            reference: None,
            verified: 0,
            rejected: 0,
        })
    }

    fn id(&self) -> u32 {
        self.data.id
    }

    fn key(&self, index: u32) -> PoseKey {
        PoseKey::new(self.id(), index)
    }

    fn anchor(&self, index: u32) -> Result<OdometryAnchor, MultiRobotError> {
        self.odo.anchor(&self.key(index)).copied().ok_or(MultiRobotError::Graph(
            crate::pose_graph::PoseGraphError::MissingKey(self.key(index)),
        ))
    }

    fn peer(&mut self, p: u32) -> &mut Peer {
        let me = self.data.id;
        let pcm = self.cfg.pcm;
        self.peers.entry(p).or_insert_with(|| Peer {
            host: (me < p).then(|| Host {
                graph: ConsistencyGraph::new(pcm),
                clique: CliqueResult::empty(),
                next_id: 0,
                ids: BTreeMap::new(),
                queue: Vec::new(),
            }),
            ..Default::default()
        })
    }

    fn wire_err(&self, m: &Message, reason: &str) -> MultiRobotError {
        MultiRobotError::Wire { kind: m.kind, reason: format!("robot {} from {}: {reason}", self.id(), m.from) }
    }

    /// Processes the inbox, then the control inputs. Returns the messages
    /// to send, in order, and control-plane reports.
    pub fn handle(&mut self, inputs: &[Input], inbox: &[Message]) -> Result<(Vec<Message>, Vec<Report>), MultiRobotError> {
        let mut out = Vec::new();
        let mut reports = Vec::new();
        for m in inbox {
            if m.to != self.id() {
                return Err(self.wire_err(m, "misdelivered"));
            }
            let payload = m.decode(self.cfg.rbcd.rank)?;
            self.receive(m, payload, &mut out)?;
        }
        for i in inputs {
            self.input(i, &mut out, &mut reports)?;
        }
        self.run_pcm(&mut out)?;
        Ok((out, reports))
    }

    fn send(&self, out: &mut Vec<Message>, to: u32, p: Payload) {
        out.push(Message::new(self.id(), to, &p));
    }

    fn receive(&mut self, m: &Message, payload: Payload, out: &mut Vec<Message>) -> Result<(), MultiRobotError> {
        let from = m.from;
        match payload {
            Payload::BowQuery(q) => {
                let own = &self.data.keyframes[..self.recorded as usize];
                let matches = bow_matches(&q, own, self.cfg.bow_threshold)?;
                if !matches.is_empty() {
                    self.send(out, from, Payload::BowMatch(matches));
                }
            }
            Payload::BowMatch(matches) => {
                let sep = self.cfg.candidate_separation;
                let me = self.id();
                if matches.iter().any(|r| r.query >= self.recorded) {
                    return Err(self.wire_err(m, "match refers to an unrecorded keyframe"));
                }
                self.peer(from);
                let peer = self.peers.get_mut(&from).expect("peer");
                for r in matches {
                    let pair = canonical_pair(PoseKey::new(me, r.query), PoseKey::new(from, r.target));
                    if peer.loops.contains_key(&pair) || peer.last_query.is_some_and(|l| r.query < l + sep) {
                        continue;
                    }
                    peer.last_query = Some(r.query);
                    peer.pending.push((r.query, r.target));
                }
                let need: Vec<u32> = peer
                    .pending
                    .iter()
                    .map(|&(_, t)| t)
                    .filter(|t| !peer.cache.contains_key(t))
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .filter(|t| peer.requested.insert(*t))
                    .collect();
                if !need.is_empty() {
                    self.send(out, from, Payload::KeypointRequest(need));
                }
                self.verify_pending(from, out)?;
            }
            Payload::KeypointRequest(idx) => {
                let mut resp = Vec::with_capacity(idx.len());
                for i in idx {
                    let kf = self
                        .data
                        .keyframes
                        .get(i as usize)
                        .filter(|_| i < self.recorded)
                        .ok_or_else(|| self.wire_err(m, "request for an unrecorded keyframe"))?;
                    resp.push(KeyframeKeypoints {
                        index: i,
                        anchor: self.anchor(i)?,
                        keypoints: kf.keypoints.clone(),
                        descriptors: kf.keypoint_descriptors.clone(),
                    });
                }
                self.send(out, from, Payload::KeypointResponse(resp));
            }
            Payload::KeypointResponse(kfs) => {
                let peer = self.peer(from);
                for k in kfs {
                    peer.cache.insert(k.index, k);
                }
                self.verify_pending(from, out)?;
            }
            Payload::LoopCandidate(records) => {
                let me = self.id();
                for r in records {
                    if r.from.robot != from || r.to.robot != me || r.to.index >= self.data.keyframes.len() as u32 {
                        return Err(self.wire_err(m, "loop endpoints do not match the sender and receiver"));
                    }
                    let meas = canonical(&RelativeMeasurement::new(r.from, r.to, r.transform, r.kappa, r.tau));
                    let pair = (meas.from, meas.to);
                    let peer = self.peer(from);
                    if peer.loops.contains_key(&pair) {
                        continue;
                    }
                    peer.loops.insert(pair, KnownLoop { measurement: meas, peer_anchor: r.anchor });
                    if let Some(h) = peer.host.as_mut() {
                        h.queue.push(pair);
                    }
                }
            }
            Payload::CliqueUpdate(keys) => {
                let peer = self.peer(from);
                let set: BTreeSet<PairKey> = keys.into_iter().collect();
                if set.iter().any(|k| !peer.loops.contains_key(k)) {
                    return Err(self.wire_err(m, "clique names an unknown loop"));
                }
                peer.accepted = set;
            }
            Payload::PublicPoses(poses) => match self.phase {
                Phase::Mission => return Err(self.wire_err(m, "public poses before the solve")),
                Phase::Init => {
                    if self.frame.is_none() {
                        let (k, l) = poses.first().ok_or_else(|| self.wire_err(m, "empty alignment"))?;
                        self.align_from(from, *k, &l.truncated())
                            .ok_or_else(|| self.wire_err(m, "alignment key is not on an accepted loop"))?;
                        self.flood_frame(Some(from), out)?;
                    }
                }
                Phase::Solve => {
                    let s = self.solve.as_mut().ok_or_else(|| MultiRobotError::Config("solve not started".into()))?;
                    s.publics.extend(poses);
                }
                Phase::Rounding => {
                    if self.reference.is_none() {
                        let (k, l) = poses.into_iter().next().ok_or_else(|| self.wire_err(m, "empty reference"))?;
                        self.reference = Some((k.robot, l));
                        self.flood_reference(Some(from), out);
                    }
                }
            },
        }
        Ok(())
    }

    fn input(&mut self, i: &Input, out: &mut Vec<Message>, reports: &mut Vec<Report>) -> Result<(), MultiRobotError> {
        match i {
            Input::Advance(n) => self.recorded = (*n).min(self.data.keyframes.len() as u32).max(self.recorded),
            Input::Contact(p) => {
                if *p == self.id() {
                    return Err(MultiRobotError::Config("contact with self".into()));
                }
                let recorded = self.recorded;
                let start = self.peer(*p).sent;
                if recorded > start {
                    let q = self.data.keyframes[start as usize..recorded as usize]
                        .iter()
                        .map(|k| DescriptorRecord { index: k.key.index, descriptor: k.descriptor.clone() })
                        .collect();
                    self.peer(*p).sent = recorded;
                    self.send(out, *p, Payload::BowQuery(q));
                }
            }
            Input::Phase(ph) => self.phase = *ph,
            Input::InitRoot => {
                if self.frame.is_none() {
                    self.frame = Some(Pose::identity());
                    self.flood_frame(None, out)?;
                }
            }
            Input::StartSolve => self.start_solve(out)?,
            Input::Step => reports.push(self.step(out)?),
            Input::RoundingRoot => {
                if self.reference.is_none() {
                    let l = self.lifted()?[0].clone();
                    self.reference = Some((self.id(), l));
                    self.flood_reference(None, out);
                }
            }
            Input::Finish => reports.push(Report::Done(Box::new(self.finish()?))),
        }
        Ok(())
    }

    fn verify_pending(&mut self, p: u32, out: &mut Vec<Message>) -> Result<(), MultiRobotError> {
        let me = self.id();
        let gv = self.cfg.gv;
        let peer = self.peers.get_mut(&p).expect("peer");
        let ready: Vec<(u32, u32)> = peer.pending.iter().copied().filter(|(_, t)| peer.cache.contains_key(t)).collect();
        peer.pending.retain(|(_, t)| !peer.cache.contains_key(t));
        let mut records = Vec::new();
        for (q, t) in ready {
            let peer = &self.peers[&p];
            let own = &self.data.keyframes[q as usize];
            let theirs = &peer.cache[&t];
            let a = View { key: own.key, keypoints: &own.keypoints, descriptors: &own.keypoint_descriptors };
            let b = View { key: PoseKey::new(p, t), keypoints: &theirs.keypoints, descriptors: &theirs.descriptors };
            match verify_views(a, b, &gv)? {
                Verification::Accepted { measurement, .. } => {
                    self.verified += 1;
                    let canon = canonical(&measurement);
                    let pair = (canon.from, canon.to);
                    let anchor = self.anchor(q)?;
                    let peer = self.peers.get_mut(&p).expect("peer");
                    if peer.loops.contains_key(&pair) {
                        continue;
                    }
                    let peer_anchor = peer.cache[&t].anchor;
                    peer.loops.insert(pair, KnownLoop { measurement: canon, peer_anchor });
                    if let Some(h) = peer.host.as_mut() {
                        h.queue.push(pair);
                    }
                    records.push(LoopRecord {
                        from: PoseKey::new(me, q),
                        to: PoseKey::new(p, t),
                        transform: measurement.transform,
                        kappa: measurement.kappa,
                        tau: measurement.tau,
                        anchor,
                    });
                }
                Verification::Rejected { .. } => self.rejected += 1,
            }
        }
        if !records.is_empty() {
            self.send(out, p, Payload::LoopCandidate(records));
        }
        Ok(())
    }

    /// Adds queued candidates to each hosted consistency graph and tells
    /// the peer when the accepted set changes.
    fn run_pcm(&mut self, out: &mut Vec<Message>) -> Result<(), MultiRobotError> {
        let me = self.id();
        let mut updates = Vec::new();
        for (&p, peer) in self.peers.iter_mut() {
            let Some(h) = peer.host.as_mut() else { continue };
            if h.queue.is_empty() {
                continue;
            }
            let mut queue = std::mem::take(&mut h.queue);
            queue.sort();
            let mut batch = Vec::with_capacity(queue.len());
            for pair in queue {
                let k = &peer.loops[&pair];
                let own_key = if pair.0.robot == me { pair.0 } else { pair.1 };
                let own = *self.odo.anchor(&own_key).ok_or(MultiRobotError::UnknownRobot(own_key.robot))?;
                let (fa, ta) = if pair.0.robot == me { (own, k.peer_anchor) } else { (k.peer_anchor, own) };
                let id = h.next_id;
                h.next_id += 1;
                h.ids.insert(id, pair);
                batch.push(CandidateLoop { id, measurement: k.measurement, from_anchor: fa, to_anchor: ta });
            }
            let pcm_err = |source| MultiRobotError::Pcm { robot: me, source };
            h.graph.add_candidates(batch).map_err(pcm_err)?;
            let clique = h.graph.max_clique_incremental(&h.clique).map_err(pcm_err)?;
            if clique.members != h.clique.members {
                peer.accepted = clique.members.iter().map(|id| h.ids[id]).collect();
                updates.push((p, peer.accepted.iter().copied().collect::<Vec<_>>()));
            }
            h.clique = clique;
        }
        for (p, keys) in updates {
            self.send(out, p, Payload::CliqueUpdate(keys));
        }
        Ok(())
    }

    fn accepted_loops(&self, p: u32) -> impl Iterator<Item = &RelativeMeasurement> {
        self.peers.get(&p).into_iter().flat_map(|peer| peer.accepted.iter().map(|k| &peer.loops[k].measurement))
    }

    fn odometry_pose(&self, index: u32) -> Result<Pose, MultiRobotError> {
        Ok(self.anchor(index)?.pose)
    }

    /// Sends this robot's pose at its end of the first accepted loop to
    /// every peer it shares one with.
    fn flood_frame(&self, except: Option<u32>, out: &mut Vec<Message>) -> Result<(), MultiRobotError> {
        let frame = self.frame.expect("aligned before flooding");
        for &p in self.peers.keys() {
            if Some(p) == except {
                continue;
            }
            if let Some(m) = self.accepted_loops(p).next() {
                let own = if m.from.robot == self.id() { m.from } else { m.to };
                let pose = frame.compose(&self.odometry_pose(own.index)?);
                self.send(out, p, Payload::PublicPoses(vec![(own, LiftedPose::embed(&pose, self.cfg.rbcd.rank))]));
            }
        }
        Ok(())
    }

    fn align_from(&mut self, p: u32, key: PoseKey, pose: &Pose) -> Option<()> {
        let m = *self.accepted_loops(p).next().filter(|m| m.from == key || m.to == key)?;
        let (own, x_own) = if m.from == key { (m.to, pose.compose(&m.transform)) } else { (m.from, pose.compose(&m.transform.inverse())) };
        let odo = self.odometry_pose(own.index).ok()?;
        self.frame = Some(x_own.compose(&odo.inverse()));
        Some(())
    }

    fn flood_reference(&self, except: Option<u32>, out: &mut Vec<Message>) {
        let (root, l) = self.reference.clone().expect("reference set before flooding");
        for &p in self.peers.keys() {
            if Some(p) != except && self.accepted_loops(p).next().is_some() {
                self.send(out, p, Payload::PublicPoses(vec![(PoseKey::new(root, 0), l.clone())]));
            }
        }
    }

    fn initial_trajectory(&self) -> Result<Vec<Pose>, MultiRobotError> {
        let frame = self.frame.unwrap_or_else(Pose::identity);
        (0..self.data.keyframes.len() as u32).map(|i| Ok(frame.compose(&self.odometry_pose(i)?))).collect()
    }

    fn lifted(&self) -> Result<Vec<LiftedPose>, MultiRobotError> {
        match &self.solve {
            Some(s) => Ok(s.block.poses.clone()),
            None => Ok(self.initial_trajectory()?.iter().map(|p| LiftedPose::embed(p, self.cfg.rbcd.rank)).collect()),
        }
    }

    fn start_solve(&mut self, out: &mut Vec<Message>) -> Result<(), MultiRobotError> {
        let me = self.id();
        let rank = self.cfg.rbcd.rank;
        let n = self.data.keyframes.len() as u32;
        let mut g = MultiRobotPoseGraph::new();
        g.add_robot(me, n);
        let mut loops = Vec::new();
        let mut audience = BTreeMap::new();
        for &p in self.peers.keys() {
            let mut keys = BTreeSet::new();
            let mut top = 0;
            for m in self.accepted_loops(p) {
                let (own, other) = if m.from.robot == me { (m.from, m.to) } else { (m.to, m.from) };
                keys.insert(own);
                top = top.max(other.index + 1);
                loops.push(*m);
            }
            if !keys.is_empty() {
                g.add_robot(p, top);
                audience.insert(p, keys.into_iter().collect::<Vec<_>>());
            }
        }
        for m in self.data.odometry.measurements() {
            g.add_measurement(*m)?;
        }
        for m in loops {
            g.add_measurement(m)?;
        }
        let poses: Vec<LiftedPose> = self.initial_trajectory()?.iter().map(|p| LiftedPose::embed(p, rank)).collect();
        let dpgo_err = |source: DpgoError| MultiRobotError::Dpgo { robot: me, source };
        let problem = if audience.is_empty() {
            None
        } else {
            Some(BlockProblem::new(&g, me, rank, self.cfg.rbcd.execution).map_err(dpgo_err)?)
        };
        let block = RobotBlock {
            robot: me,
            poses,
            public_keys: problem.as_ref().map(|p| p.public_keys().clone()).unwrap_or_default(),
        };
        let noise = 1e-15
            * g.measurements()
                .iter()
                .map(|m| 3.0 * m.kappa + m.tau * (1.0 + m.transform.translation.norm_squared()))
                .sum::<f64>();
        let s = Solve { problem, x: block.to_matrix(), block, publics: BTreeMap::new(), audience, noise };
        self.solve = Some(s);
        self.publish(out);
        Ok(())
    }

    fn publish(&self, out: &mut Vec<Message>) {
        let s = self.solve.as_ref().expect("solve started");
        for (&p, keys) in &s.audience {
            let poses = keys.iter().map(|k| (*k, s.block.poses[k.index as usize].clone())).collect();
            self.send(out, p, Payload::PublicPoses(poses));
        }
    }

    fn step(&mut self, out: &mut Vec<Message>) -> Result<Report, MultiRobotError> {
        let me = self.id();
        let s = self.solve.as_mut().ok_or_else(|| MultiRobotError::Config("step before the solve started".into()))?;
        let Some(problem) = s.problem.as_ref() else {
            return Ok(Report::Step { accepted: false, cost_before: 0.0, cost_after: 0.0, noise: 0.0 });
        };
        let dpgo_err = |source: DpgoError| MultiRobotError::Dpgo { robot: me, source };
        let cost = problem.local_cost(&s.x, &s.publics).map_err(dpgo_err)?;
        let o = problem.step(&mut s.x, &s.publics, 64.0 * f64::EPSILON * cost).map_err(dpgo_err)?;
        if o.accepted {
            s.block.set_from_matrix(&s.x);
            self.publish(out);
        }
        let noise = self.solve.as_ref().map_or(0.0, |s| s.noise);
        Ok(Report::Step { accepted: o.accepted, cost_before: o.cost_before, cost_after: o.cost_after, noise })
    }

    /// Rounds against the reference pose, then corrects the mesh with the
    /// rounded keyframes as anchors.
    fn finish(&mut self) -> Result<RobotOutput, MultiRobotError> {
        let me = self.id();
        let lifted = self.lifted()?;
        let (reference, y0) = self.reference.clone().unwrap_or((me, lifted[0].clone()));
        let trajectory: Trajectory = lifted
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let r = (y0.y.transpose() * &l.y).fixed_view::<3, 3>(0, 0).into_owned();
                let t = y0.y.transpose() * (&l.p - &y0.p);
                (self.key(i as u32), Pose::new(Rotation::project(&r), Vec3::new(t[0], t[1], t[2])))
            })
            .collect();
        let initial_trajectory: Trajectory =
            self.initial_trajectory()?.into_iter().enumerate().map(|(i, p)| (self.key(i as u32), p)).collect();
        let (mesh_before, mesh_after, lmo_objective, lmo_iterations) = self.correct_mesh(&trajectory)?;
        let mut accepted_loops = Vec::new();
        for &p in self.peers.keys() {
            accepted_loops.extend(self.accepted_loops(p).copied());
        }
        Ok(RobotOutput {
            robot: me,
            reference,
            initial_trajectory,
            trajectory,
            accepted_loops,
            verified_loops: self.verified,
            rejected_verifications: self.rejected,
            mesh_before,
            mesh_after,
            lmo_objective,
            lmo_iterations,
        })
    }

    fn correct_mesh(&self, rounded: &Trajectory) -> Result<(TriMesh, TriMesh, (f64, f64), usize), MultiRobotError> {
        let me = self.id();
        let mesh_err = |source: MeshError| MultiRobotError::Mesh { robot: me, source };
        let first = *rounded.get(&self.key(0))?;
        let before = self.data.mesh.transformed(&first);
        if before.faces.is_empty() {
            return Ok((before.clone(), before, (0.0, 0.0), 0));
        }
        let (simple, map) = simplify_mesh(&before, self.cfg.simplify_cell).map_err(mesh_err)?;
        let keyframes = (0..self.data.keyframes.len() as u32)
            .map(|i| Ok((self.key(i), first.compose(&self.odometry_pose(i)?))))
            .collect::<Result<Vec<_>, MultiRobotError>>()?;
        let mut obs = BTreeMap::new();
        for (k, vs) in &self.data.observations {
            let nodes: BTreeSet<u32> = vs
                .iter()
                .map(|&v| map.get(v as usize).copied().ok_or(MeshError::Observation { node: v, count: map.len() }))
                .collect::<Result<_, _>>()
                .map_err(mesh_err)?;
            obs.insert(*k, nodes.into_iter().collect::<Vec<_>>());
        }
        let dg = build_deformation_graph(&simple, &keyframes, &obs).map_err(mesh_err)?;
        let res = lmo_optimize(&dg, &rounded.poses, &self.cfg.lmo).map_err(mesh_err)?;
        let after = interpolate_vertices(&before, &dg, &res, &self.cfg.lmo).map_err(mesh_err)?;
        Ok((before, after, (res.initial_objective, res.objective), res.iterations))
    }
}

fn canonical_pair(a: PoseKey, b: PoseKey) -> PairKey {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}
