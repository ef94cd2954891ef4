//! g2o text I/O.
//!
//! Multi-robot keys are flattened into g2o vertex ids as
//! `robot * ROBOT_KEY_STRIDE + index`.

use super::{EdgeKind, MultiRobotPoseGraph, PoseGraphError, PoseKey, RelativeMeasurement, Trajectory};
use crate::geometry::{Pose, Rotation, Vec3};
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write;

pub const ROBOT_KEY_STRIDE: u64 = 1_000_000;

/// A parsed g2o file: the graph plus the vertex estimates it carried.
#[derive(Debug, Clone, PartialEq)]
pub struct G2oData {
    pub graph: MultiRobotPoseGraph,
    pub initial: Trajectory,
}

fn key_of(id: u64) -> PoseKey {
    PoseKey::new((id / ROBOT_KEY_STRIDE) as u32, (id % ROBOT_KEY_STRIDE) as u32)
}

fn id_of(key: &PoseKey) -> u64 {
    key.robot as u64 * ROBOT_KEY_STRIDE + key.index as u64
}

struct Line<'a> {
    no: usize,
    fields: std::str::SplitWhitespace<'a>,
}

impl Line<'_> {
    fn err(&self, message: impl Into<String>) -> PoseGraphError {
        PoseGraphError::Parse { line: self.no, message: message.into() }
    }

    fn id(&mut self) -> Result<u64, PoseGraphError> {
        let f = self.fields.next().ok_or_else(|| self.err("missing vertex id"))?;
        f.parse().map_err(|_| self.err(format!("bad vertex id '{f}'")))
    }

    fn nums<const N: usize>(&mut self) -> Result<[f64; N], PoseGraphError> {
        let mut out = [0.0f64; N];
        for (i, o) in out.iter_mut().enumerate() {
            let f = self.fields.next().ok_or_else(|| self.err(format!("expected {N} numbers, got {i}")))?;
            *o = f.parse().map_err(|_| self.err(format!("bad number '{f}'")))?;
            if !o.is_finite() {
                return Err(self.err(format!("non-finite number '{f}'")));
            }
        }
        Ok(out)
    }

    fn finish(&mut self) -> Result<(), PoseGraphError> {
        match self.fields.next() {
            Some(f) => Err(self.err(format!("unexpected trailing field '{f}'"))),
            None => Ok(()),
        }
    }
}

struct RawEdge {
    line: usize,
    from: u64,
    to: u64,
    transform: Pose,
    kappa: f64,
    tau: f64,
}

/// Parses `VERTEX_SE2`/`EDGE_SE2` and `VERTEX_SE3:QUAT`/`EDGE_SE3:QUAT`
/// records. Blank lines, `#` comments and `FIX` records are ignored.
///
/// Information matrices are reduced to the mean diagonal of their rotation
/// block (`kappa`) and translation block (`tau`). The first edge between
/// consecutive indices of a robot is odometry; later ones are loops.
pub fn parse_g2o(text: &str) -> Result<G2oData, PoseGraphError> {
    let mut vertices: BTreeMap<u64, Pose> = BTreeMap::new();
    let mut edges = Vec::new();
    let mut saw_2d = false;
    let mut saw_3d = false;
    for (i, raw) in text.lines().enumerate() {
        let mut fields = raw.split_whitespace();
        let Some(tag) = fields.next() else { continue };
        let mut line = Line { no: i + 1, fields };
        match tag {
            t if t.starts_with('#') => continue,
            "FIX" => continue,
            "VERTEX_SE2" => {
                let id = line.id()?;
                let [x, y, th] = line.nums::<3>()?;
                line.finish()?;
                saw_2d = true;
                if vertices.insert(id, Pose::planar(x, y, th)).is_some() {
                    return Err(line.err(format!("duplicate vertex {id}")));
                }
            }
            "VERTEX_SE3:QUAT" => {
                let id = line.id()?;
                let v = line.nums::<7>()?;
                line.finish()?;
                saw_3d = true;
                let pose = Pose::new(Rotation::from_quaternion(v[3], v[4], v[5], v[6]), Vec3::new(v[0], v[1], v[2]));
                if vertices.insert(id, pose).is_some() {
                    return Err(line.err(format!("duplicate vertex {id}")));
                }
            }
            "EDGE_SE2" => {
                let (from, to) = (line.id()?, line.id()?);
                let [x, y, th] = line.nums::<3>()?;
                let info = line.nums::<6>()?;
                line.finish()?;
                saw_2d = true;
                // Upper triangle of the 3×3 information over (x, y, θ).
                let tau = 0.5 * (info[0] + info[3]);
                let kappa = info[5];
                edges.push(RawEdge { line: line.no, from, to, transform: Pose::planar(x, y, th), kappa, tau });
            }
            "EDGE_SE3:QUAT" => {
                let (from, to) = (line.id()?, line.id()?);
                let v = line.nums::<7>()?;
                let info = line.nums::<21>()?;
                line.finish()?;
                saw_3d = true;
                // Upper triangle of the 6×6 information over (x, y, z, rx, ry, rz).
                let tau = (info[0] + info[6] + info[11]) / 3.0;
                let kappa = (info[15] + info[18] + info[20]) / 3.0;
                let transform =
                    Pose::new(Rotation::from_quaternion(v[3], v[4], v[5], v[6]), Vec3::new(v[0], v[1], v[2]));
                edges.push(RawEdge { line: line.no, from, to, transform, kappa, tau });
            }
            other => return Err(line.err(format!("unknown record type '{other}'"))),
        }
    }

    let mut graph = MultiRobotPoseGraph::new();
    graph.planar = saw_2d && !saw_3d;
    let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
    for &id in vertices.keys() {
        let k = key_of(id);
        let next = counts.entry(k.robot).or_insert(0);
        if k.index != *next {
            return Err(PoseGraphError::Parse {
                line: 0,
                message: format!("robot {} vertex indices are not contiguous at {}", k.robot, k.index),
            });
        }
        *next += 1;
    }
    for (&r, &n) in &counts {
        graph.add_robot(r, n);
    }

    let mut odometry_seen = HashSet::new();
    for e in edges {
        for id in [e.from, e.to] {
            if !vertices.contains_key(&id) {
                return Err(PoseGraphError::UnknownVertex { line: e.line, id });
            }
        }
        let (a, b) = (key_of(e.from), key_of(e.to));
        let mut m = RelativeMeasurement::new(a, b, e.transform, e.kappa, e.tau);
        if a.robot == b.robot && a.index == b.index + 1 && !odometry_seen.contains(&b) {
            m = m.reversed().with_kind(EdgeKind::Odometry);
        }
        if m.kind == EdgeKind::Odometry && !odometry_seen.insert(m.from) {
            m.kind = EdgeKind::IntraLoop;
        }
        graph.add_measurement(m).map_err(|err| PoseGraphError::Parse { line: e.line, message: err.to_string() })?;
    }
    graph.validate()?;
    let initial = vertices.into_iter().map(|(id, p)| (key_of(id), p)).collect();
    Ok(G2oData { graph, initial })
}

/// Writes `g` with vertex values from `init`. Planar graphs are written as
/// SE2 records. Measurements are emitted in insertion order.
pub fn serialize_g2o(g: &MultiRobotPoseGraph, init: &Trajectory) -> Result<String, PoseGraphError> {
    let mut out = String::new();
    for key in g.keys() {
        let p = init.get(&key)?;
        let id = id_of(&key);
        let t = &p.translation;
        if g.planar {
            writeln!(out, "VERTEX_SE2 {id} {} {} {}", t.x, t.y, p.rotation.yaw()).unwrap();
        } else {
            let [qx, qy, qz, qw] = p.rotation.to_quaternion();
            writeln!(out, "VERTEX_SE3:QUAT {id} {} {} {} {qx} {qy} {qz} {qw}", t.x, t.y, t.z).unwrap();
        }
    }
    for m in g.measurements() {
        let (a, b) = (id_of(&m.from), id_of(&m.to));
        let t = &m.transform.translation;
        let (k, w) = (m.kappa, m.tau);
        if g.planar {
            let yaw = m.transform.rotation.yaw();
            writeln!(out, "EDGE_SE2 {a} {b} {} {} {yaw} {w} 0 0 {w} 0 {k}", t.x, t.y).unwrap();
        } else {
            let [qx, qy, qz, qw] = m.transform.rotation.to_quaternion();
            write!(out, "EDGE_SE3:QUAT {a} {b} {} {} {} {qx} {qy} {qz} {qw}", t.x, t.y, t.z).unwrap();
            for row in 0..6 {
                for col in row..6 {
                    let v = if row != col {
                        0.0
                    } else if row < 3 {
                        w
                    } else {
                        k
                    };
                    write!(out, " {v}").unwrap();
                }
            }
            out.push('\n');
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = "VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 1 0 0.5\nEDGE_SE2 0 1 1 0 0.5 4 0 0 4 0 9\n";

    #[test]
    fn two_vertex_file() {
        let d = parse_g2o(TWO).unwrap();
        assert_eq!(d.graph.measurements().len(), 1);
        let m = d.graph.measurements()[0];
        assert_eq!(m.kind, EdgeKind::Odometry);
        assert_eq!((m.kappa, m.tau), (9.0, 4.0));
        assert!(d.graph.planar);
        assert!((d.initial.get(&PoseKey::new(0, 1)).unwrap().rotation.yaw() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = "VERTEX_SE2 0 0 0 0\n\nVERTEX_SE2 1 1 zero 0\n";
        assert!(matches!(parse_g2o(bad), Err(PoseGraphError::Parse { line: 3, .. })));
        let dangling = "VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 0 0 0\nEDGE_SE2 0 1 1 0 0 1 0 0 1 0 1\nEDGE_SE2 0 7 1 0 0 1 0 0 1 0 1\n";
        assert_eq!(parse_g2o(dangling), Err(PoseGraphError::UnknownVertex { line: 4, id: 7 }));
        let short = "VERTEX_SE3:QUAT 0 1 2 3 0 0 0\n";
        assert!(matches!(parse_g2o(short), Err(PoseGraphError::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_graph_serializes_to_nothing() {
        assert_eq!(serialize_g2o(&MultiRobotPoseGraph::new(), &Trajectory::new()).unwrap(), "");
    }

    #[test]
    fn missing_initial_value_is_named() {
        let d = parse_g2o(TWO).unwrap();
        let mut init = d.initial.clone();
        init.poses.remove(&PoseKey::new(0, 1));
        assert_eq!(serialize_g2o(&d.graph, &init), Err(PoseGraphError::MissingKey(PoseKey::new(0, 1))));
    }

    #[test]
    fn se3_round_trip_with_duplicate_odometry() {
        let text = "VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\n\
                    VERTEX_SE3:QUAT 1 1 0 0 0 0 0.2 0.98\n\
                    VERTEX_SE3:QUAT 1000000 5 5 0 0 0 0 1\n\
                    EDGE_SE3:QUAT 0 1 1 0 0 0 0 0.1 1 2 0 0 0 0 0 2 0 0 0 0 2 0 0 0 5 0 0 5 0 5\n\
                    EDGE_SE3:QUAT 0 1 1 0 0 0 0 0.1 1 2 0 0 0 0 0 2 0 0 0 0 2 0 0 0 5 0 0 5 0 5\n\
                    EDGE_SE3:QUAT 1 1000000 4 5 0 0 0 0 1 2 0 0 0 0 0 2 0 0 0 0 2 0 0 0 5 0 0 5 0 5\n";
        let d = parse_g2o(text).unwrap();
        let kinds: Vec<_> = d.graph.measurements().iter().map(|m| m.kind).collect();
        assert_eq!(kinds, [EdgeKind::Odometry, EdgeKind::IntraLoop, EdgeKind::InterLoop]);
        assert_eq!(d.graph.measurements()[0].kappa, 5.0);
        let again = parse_g2o(&serialize_g2o(&d.graph, &d.initial).unwrap()).unwrap();
        assert_eq!(again.graph.measurements().len(), 3);
        for (a, b) in again.graph.measurements().iter().zip(d.graph.measurements()) {
            assert_eq!((a.from, a.to, a.kind, a.kappa, a.tau), (b.from, b.to, b.kind, b.kappa, b.tau));
            assert!((a.transform.rotation.matrix() - b.transform.rotation.matrix()).norm() < 1e-12);
        }
    }
}
