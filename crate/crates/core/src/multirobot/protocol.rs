use super::agent::Agent;
use super::ledger::ChannelLedger;
use super::verify::GvConfig;
use super::wire::{DescriptorRecord, MatchRecord, Payload};
use super::{bow_similarity, KeyframeData, MultiRobotError, RobotData, Scenario};
use crate::dpgo::RbcdConfig;
use crate::mesh::{LmoConfig, TriMesh};
use crate::pcm::PcmConfig;
use crate::pose_graph::{PoseKey, RelativeMeasurement, Trajectory};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// When robots can talk. Times count recorded keyframes: at time `t` every
/// robot has its first `t` keyframes (or all of them, if it has fewer).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum RendezvousSchedule {
    /// Every pair meets every `contact_period` keyframes and once more at
    /// the end of the mission.
    #[default]
    AlwaysConnected,
    /// Explicit `(time, robot_a, robot_b)` contacts.
    Windows(Vec<(u64, u32, u32)>),
}

impl RendezvousSchedule {
    pub fn validate(&self, robots: &BTreeSet<u32>) -> Result<(), MultiRobotError> {
        if let RendezvousSchedule::Windows(w) = self {
            for &(_, a, b) in w {
                for r in [a, b] {
                    if !robots.contains(&r) {
                        return Err(MultiRobotError::UnknownRobot(r));
                    }
                }
                if a == b {
                    return Err(MultiRobotError::Config(format!("robot {a} cannot meet itself")));
                }
            }
        }
        Ok(())
    }

    /// Contacts grouped by time, each pair once per time with the lower id
    /// first.
    pub fn contacts(&self, robots: &BTreeSet<u32>, period: u64, mission: u64) -> BTreeMap<u64, BTreeSet<(u32, u32)>> {
        let mut out: BTreeMap<u64, BTreeSet<(u32, u32)>> = BTreeMap::new();
        match self {
            RendezvousSchedule::AlwaysConnected => {
                let pairs: BTreeSet<(u32, u32)> =
                    robots.iter().flat_map(|&a| robots.range(a + 1..).map(move |&b| (a, b))).collect();
                if pairs.is_empty() {
                    return out;
                }
                let mut t = period.max(1);
                while t < mission {
                    out.insert(t, pairs.clone());
                    t += period.max(1);
                }
                out.insert(mission, pairs);
            }
            RendezvousSchedule::Windows(w) => {
                for &(t, a, b) in w {
                    out.entry(t).or_default().insert((a.min(b), a.max(b)));
                }
            }
        }
        out
    }

    /// `time,robot_a,robot_b` rows, or a single `always` line.
    pub fn to_csv(&self) -> String {
        match self {
            RendezvousSchedule::AlwaysConnected => "always\n".into(),
            RendezvousSchedule::Windows(w) => {
                let mut s = String::from("time,robot_a,robot_b\n");
                for (t, a, b) in w {
                    s.push_str(&format!("{t},{a},{b}\n"));
                }
                s
            }
        }
    }

    pub fn parse_csv(text: &str) -> Result<Self, MultiRobotError> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        match lines.next() {
            Some("always") => Ok(RendezvousSchedule::AlwaysConnected),
            Some("time,robot_a,robot_b") => {
                let mut w = Vec::new();
                for (i, l) in lines.enumerate() {
                    let f: Vec<&str> = l.split(',').collect();
                    let bad = || MultiRobotError::Bundle(format!("schedule line {}: expected time,robot_a,robot_b", i + 2));
                    if f.len() != 3 {
                        return Err(bad());
                    }
                    w.push((
                        f[0].trim().parse().map_err(|_| bad())?,
                        f[1].trim().parse().map_err(|_| bad())?,
                        f[2].trim().parse().map_err(|_| bad())?,
                    ));
                }
                Ok(RendezvousSchedule::Windows(w))
            }
            _ => Err(MultiRobotError::Bundle("schedule must start with `always` or `time,robot_a,robot_b`".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Place-recognition score a match must reach.
    pub bow_threshold: f64,
    /// Keyframes between meetings under [`RendezvousSchedule::AlwaysConnected`].
    pub contact_period: u64,
    /// A robot verifies at most one match per this many of its own
    /// keyframes and peer; 1 verifies every match.
    pub candidate_separation: u32,
    pub gv: GvConfig,
    pub pcm: PcmConfig,
    pub rbcd: RbcdConfig,
    pub lmo: LmoConfig,
    /// Vertex-clustering cell for the deformation graph (m).
    pub simplify_cell: f64,
    /// Run each robot on its own thread within a round.
    pub threaded: bool,
    /// Keep every robot's inputs and outputs for replay.
    pub record_transcripts: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            bow_threshold: 0.5,
            contact_period: 10,
            candidate_separation: 5,
            gv: GvConfig::default(),
            pcm: PcmConfig::default(),
            rbcd: RbcdConfig::default(),
            lmo: LmoConfig::default(),
            simplify_cell: 1.0,
            threaded: false,
            record_transcripts: false,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), MultiRobotError> {
        if !(0.0..=1.0).contains(&self.bow_threshold) {
            return Err(MultiRobotError::Config("bow_threshold must lie in [0, 1]".into()));
        }
        if self.contact_period == 0 || self.candidate_separation == 0 {
            return Err(MultiRobotError::Config("contact_period and candidate_separation must be at least 1".into()));
        }
        if !(self.simplify_cell > 0.0) {
            return Err(MultiRobotError::Config("simplify_cell must be positive".into()));
        }
        self.gv.validate()?;
        self.pcm.validate().map_err(|e| MultiRobotError::Config(e.to_string()))?;
        self.rbcd.validate().map_err(|e| MultiRobotError::Config(e.to_string()))?;
        self.lmo.validate().map_err(|e| MultiRobotError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Stage of the mission an agent is in; changes how public poses are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Mission,
    /// Public poses carry frame alignments.
    Init,
    /// Public poses are solver iterates.
    Solve,
    /// Public poses carry the rounding reference.
    Rounding,
}

/// Control signals from the scheduler. These carry no robot data.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    /// The robot has recorded this many keyframes.
    Advance(u32),
    /// A peer is in range: start place recognition with it.
    Contact(u32),
    Phase(Phase),
    /// Become the reference of your component unless already aligned.
    InitRoot,
    /// Build the local problem and send initial public poses.
    StartSolve,
    /// One block update.
    Step,
    RoundingRoot,
    /// Round, correct the mesh and report.
    Finish,
}

/// Control-plane replies to the scheduler.
#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    Step {
        accepted: bool,
        cost_before: f64,
        cost_after: f64,
        /// Rounding noise of the robot's local cost.
        noise: f64,
    },
    Done(Box<RobotOutput>),
}

/// What one agent saw and produced in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptEntry {
    pub round: u64,
    pub inputs: Vec<Input>,
    pub inbox: Vec<super::Message>,
    pub outbox: Vec<super::Message>,
    pub reports: Vec<Report>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotOutput {
    pub robot: u32,
    /// Robot whose first pose defines this robot's output frame.
    pub reference: u32,
    /// Odometry placed in the reference frame before optimization.
    pub initial_trajectory: Trajectory,
    pub trajectory: Trajectory,
    /// Loops this robot ended up using.
    pub accepted_loops: Vec<RelativeMeasurement>,
    /// Loops it verified itself, accepted or not later.
    pub verified_loops: usize,
    pub rejected_verifications: usize,
    /// Rigidly aligned odometry mesh.
    pub mesh_before: TriMesh,
    pub mesh_after: TriMesh,
    pub lmo_objective: (f64, f64),
    pub lmo_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpgoStepRecord {
    pub iteration: usize,
    pub robot: u32,
    pub accepted: bool,
    pub cost_before: f64,
    pub cost_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOutput {
    pub robots: Vec<RobotOutput>,
    pub ledger: ChannelLedger,
    pub dpgo_trace: Vec<DpgoStepRecord>,
    /// Scheduler rounds used.
    pub rounds: u64,
    pub transcripts: Option<BTreeMap<u32, Vec<TranscriptEntry>>>,
}

impl ProtocolOutput {
    pub fn trajectory(&self) -> Trajectory {
        let mut t = Trajectory::new();
        for r in &self.robots {
            t.extend(r.trajectory.clone());
        }
        t
    }

    /// Union of every robot's accepted loops, each once.
    pub fn accepted_loops(&self) -> Vec<RelativeMeasurement> {
        let mut seen = BTreeMap::new();
        for r in &self.robots {
            for m in &r.accepted_loops {
                seen.entry((m.from, m.to)).or_insert(*m);
            }
        }
        seen.into_values().collect()
    }
}

/// Best target keyframe per query, kept if its score reaches `threshold`.
/// Ties go to the lower index.
pub(crate) fn bow_matches(
    queries: &[DescriptorRecord],
    targets: &[KeyframeData],
    threshold: f64,
) -> Result<Vec<MatchRecord>, MultiRobotError> {
    let mut out = Vec::new();
    for q in queries {
        let mut best: Option<(f64, u32)> = None;
        for t in targets {
            let s = bow_similarity(&q.descriptor, &t.descriptor)?;
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, t.key.index));
            }
        }
        if let Some((s, idx)) = best.filter(|(s, _)| *s >= threshold) {
            out.push(MatchRecord { query: q.index, target: idx, score: s as f32 });
        }
    }
    Ok(out)
}

/// One place-recognition exchange from `query` to `target`: the query
/// robot sends the descriptors of `keyframes`, the target answers with its
/// best match per descriptor at or above `threshold`. Both messages are
/// booked in `ledger` at `time`. Returns `(query key, target key)` pairs.
pub fn detect_loop_candidates(
    query: &RobotData,
    target: &RobotData,
    keyframes: std::ops::Range<usize>,
    threshold: f64,
    ledger: &mut ChannelLedger,
    time: u64,
) -> Result<Vec<(PoseKey, PoseKey)>, MultiRobotError> {
    let records: Vec<DescriptorRecord> = query.keyframes[keyframes]
        .iter()
        .map(|k| DescriptorRecord { index: k.key.index, descriptor: k.descriptor.clone() })
        .collect();
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let sent = super::Message::new(query.id, target.id, &Payload::BowQuery(records));
    ledger.record(&sent, time);
    let Payload::BowQuery(received) = sent.decode(0)? else { unreachable!("kind is fixed by the payload") };
    let matches = bow_matches(&received, &target.keyframes, threshold)?;
    if matches.is_empty() {
        return Ok(Vec::new());
    }
    let reply = super::Message::new(target.id, query.id, &Payload::BowMatch(matches));
    ledger.record(&reply, time);
    let Payload::BowMatch(m) = reply.decode(0)? else { unreachable!("kind is fixed by the payload") };
    Ok(m.iter().map(|r| (PoseKey::new(query.id, r.query), PoseKey::new(target.id, r.target))).collect())
}

struct Engine {
    agents: Vec<Agent>,
    ids: Vec<u32>,
    ledger: ChannelLedger,
    in_flight: Vec<super::Message>,
    round: u64,
    threaded: bool,
    transcripts: Option<Vec<Vec<TranscriptEntry>>>,
}

type RoundResult = Result<(Vec<super::Message>, Vec<Report>), MultiRobotError>;

impl Engine {
    fn slot(&self, robot: u32) -> Result<usize, MultiRobotError> {
        self.ids.binary_search(&robot).map_err(|_| MultiRobotError::UnknownRobot(robot))
    }

    /// Delivers everything in flight, applies `inputs`, and collects what
    /// the agents send and report. Inboxes are ordered by sender, then by
    /// send order.
    fn round(&mut self, mut inputs: BTreeMap<u32, Vec<Input>>) -> Result<Vec<(u32, Report)>, MultiRobotError> {
        self.round += 1;
        let mut inboxes: Vec<Vec<super::Message>> = vec![Vec::new(); self.agents.len()];
        let mut flight = std::mem::take(&mut self.in_flight);
        flight.sort_by_key(|m| (m.to, m.from));
        for m in flight {
            let to = self.slot(m.to)?;
            self.ledger.record_received(&m, self.round);
            inboxes[to].push(m);
        }
        let jobs: Vec<(Vec<Input>, Vec<super::Message>)> = self
            .ids
            .iter()
            .zip(inboxes)
            .map(|(id, inbox)| (inputs.remove(id).unwrap_or_default(), inbox))
            .collect();
        let results: Vec<RoundResult> = if self.threaded {
            std::thread::scope(|s| {
                let handles: Vec<_> = self
                    .agents
                    .iter_mut()
                    .zip(&jobs)
                    .map(|(a, (inp, inbox))| s.spawn(move || a.handle(inp, inbox)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("agent thread panicked")).collect()
            })
        } else {
            self.agents.iter_mut().zip(&jobs).map(|(a, (inp, inbox))| a.handle(inp, inbox)).collect()
        };
        let mut reports = Vec::new();
        for (k, ((res, (inp, inbox)), &id)) in results.into_iter().zip(jobs).zip(&self.ids).enumerate() {
            let (out, rep) = res?;
            for m in &out {
                self.slot(m.to)?;
                self.ledger.record_sent(m);
            }
            if let Some(t) = self.transcripts.as_mut() {
                if !inp.is_empty() || !inbox.is_empty() || !out.is_empty() || !rep.is_empty() {
                    t[k].push(TranscriptEntry { round: self.round, inputs: inp, inbox, outbox: out.clone(), reports: rep.clone() });
                }
            }
            self.in_flight.extend(out);
            reports.extend(rep.into_iter().map(|r| (id, r)));
        }
        Ok(reports)
    }

    /// Runs `inputs`, then empty rounds until no message is in flight.
    fn settle(&mut self, inputs: BTreeMap<u32, Vec<Input>>) -> Result<Vec<(u32, Report)>, MultiRobotError> {
        let mut reports = self.round(inputs)?;
        while !self.in_flight.is_empty() {
            reports.extend(self.round(BTreeMap::new())?);
        }
        Ok(reports)
    }

    fn broadcast(&mut self, input: Input) -> Result<Vec<(u32, Report)>, MultiRobotError> {
        let all = self.ids.iter().map(|&r| (r, vec![input.clone()])).collect();
        self.settle(all)
    }

    fn one(&mut self, robot: u32, input: Input) -> Result<Vec<(u32, Report)>, MultiRobotError> {
        self.settle(BTreeMap::from([(robot, vec![input])]))
    }
}

/// Runs the whole mission: meetings per `schedule` with place recognition,
/// verification and consistency checks, then the distributed solve,
/// rounding and per-robot mesh correction. Deterministic; the threaded mode
/// produces identical results.
pub fn run_protocol(
    scenario: &Scenario,
    schedule: &RendezvousSchedule,
    cfg: &ProtocolConfig,
) -> Result<ProtocolOutput, MultiRobotError> {
    cfg.validate()?;
    let ids: BTreeSet<u32> = scenario.robots.iter().map(|r| r.id).collect();
    if ids.len() != scenario.robots.len() {
        return Err(MultiRobotError::Config("robot ids must be unique".into()));
    }
    schedule.validate(&ids)?;
    let mut robots: Vec<&RobotData> = scenario.robots.iter().collect();
    robots.sort_by_key(|r| r.id);
    for r in &robots {
        r.odometry.validate()?;
        for k in &r.keyframes {
            k.validate()?;
        }
    }
    let mission = robots.iter().map(|r| r.keyframes.len() as u64).max().unwrap_or(0);
    let mut engine = Engine {
        agents: robots.iter().map(|r| Agent::new((*r).clone(), cfg.clone())).collect::<Result<_, _>>()?,
        ids: ids.iter().copied().collect(),
        ledger: ChannelLedger::new(),
        in_flight: Vec::new(),
        round: 0,
        threaded: cfg.threaded,
        transcripts: cfg.record_transcripts.then(|| vec![Vec::new(); robots.len()]),
    };

    for (t, pairs) in schedule.contacts(&ids, cfg.contact_period, mission) {
        let mut inputs: BTreeMap<u32, Vec<Input>> =
            engine.ids.iter().map(|&r| (r, vec![Input::Advance(t.min(u32::MAX as u64) as u32)])).collect();
        for (a, b) in pairs {
            inputs.entry(a).or_default().push(Input::Contact(b));
            inputs.entry(b).or_default().push(Input::Contact(a));
        }
        engine.settle(inputs)?;
    }

    engine.broadcast(Input::Phase(Phase::Init))?;
    for r in engine.ids.clone() {
        engine.one(r, Input::InitRoot)?;
    }
    engine.broadcast(Input::Phase(Phase::Solve))?;
    engine.broadcast(Input::StartSolve)?;
    let mut trace = Vec::new();
    let n = engine.ids.len();
    let limit = cfg.rbcd.iteration_limit();
    let (mut decrease, mut scale, mut noise) = (0.0, 0.0, 0.0);
    for it in 1..=limit {
        let robot = engine.ids[(it - 1) % n];
        for (r, rep) in engine.one(robot, Input::Step)? {
            if let Report::Step { accepted, cost_before, cost_after, noise: nz } = rep {
                trace.push(DpgoStepRecord { iteration: it, robot: r, accepted, cost_before, cost_after });
                decrease += cost_before - cost_after;
                scale += cost_before;
                noise += nz;
            }
        }
        if it % n == 0 {
            if decrease <= cfg.rbcd.cost_tolerance * scale + noise {
                break;
            }
            (decrease, scale, noise) = (0.0, 0.0, 0.0);
        }
    }
    engine.broadcast(Input::Phase(Phase::Rounding))?;
    for r in engine.ids.clone() {
        engine.one(r, Input::RoundingRoot)?;
    }
    let mut outputs = Vec::new();
    for (_, rep) in engine.broadcast(Input::Finish)? {
        if let Report::Done(o) = rep {
            outputs.push(*o);
        }
    }
    outputs.sort_by_key(|o| o.robot);
    let transcripts =
        engine.transcripts.take().map(|t| engine.ids.iter().copied().zip(t).collect::<BTreeMap<_, _>>());
    Ok(ProtocolOutput { robots: outputs, ledger: engine.ledger, dpgo_trace: trace, rounds: engine.round, transcripts })
}

/// Re-runs one robot from its recorded transcript, starting from nothing
/// but its own data. Returns what it sends and reports, round by round.
pub fn replay_agent(
    robot: &RobotData,
    cfg: &ProtocolConfig,
    transcript: &[TranscriptEntry],
) -> Result<Vec<(Vec<super::Message>, Vec<Report>)>, MultiRobotError> {
    let mut a = Agent::new(robot.clone(), cfg.clone())?;
    transcript.iter().map(|e| a.handle(&e.inputs, &e.inbox)).collect()
}
