use super::{MeshError, TriMesh};
use crate::geometry::Vec3;
use crate::pose_graph::PoseKey;
use std::collections::BTreeMap;
use std::fmt::Write;

/// ASCII PLY with double-precision vertices and, if present, an integer
/// `label` per face.
pub fn write_ply(m: &TriMesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "ply\nformat ascii 1.0\nelement vertex {}", m.vertices.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    let _ = writeln!(s, "element face {}", m.faces.len());
    s.push_str("property list uchar int vertex_indices\n");
    if m.labels.is_some() {
        s.push_str("property int label\n");
    }
    s.push_str("end_header\n");
    for v in &m.vertices {
        let _ = writeln!(s, "{:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for (f, face) in m.faces.iter().enumerate() {
        let _ = write!(s, "3 {} {} {}", face[0], face[1], face[2]);
        if let Some(l) = m.label(f) {
            let _ = write!(s, " {l}");
        }
        s.push('\n');
    }
    s
}

#[derive(Debug)]
enum Prop {
    Scalar(String),
    List(String),
}

/// Reads ASCII PLY. Vertex properties other than `x y z` and face
/// properties other than the index list and `label` are skipped.
pub fn parse_ply(text: &str) -> Result<TriMesh, MeshError> {
    let err = |line: usize, message: &str| MeshError::Parse { line, message: message.into() };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    if lines.next().map(|(_, l)| l) != Some("ply") {
        return Err(err(1, "missing ply magic"));
    }
    let mut elements: Vec<(String, usize, Vec<Prop>)> = Vec::new();
    loop {
        let (ln, l) = lines.next().ok_or_else(|| err(0, "unterminated header"))?;
        let mut w = l.split_whitespace();
        match w.next() {
            Some("format") => {
                if w.next() != Some("ascii") {
                    return Err(err(ln, "only ascii PLY is supported"));
                }
            }
            Some("element") => {
                let name = w.next().ok_or_else(|| err(ln, "element without name"))?;
                let count = w.next().and_then(|c| c.parse().ok()).ok_or_else(|| err(ln, "bad element count"))?;
                elements.push((name.to_string(), count, Vec::new()));
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| err(ln, "property before element"))?;
                let parts: Vec<&str> = w.collect();
                let prop = match parts.as_slice() {
                    ["list", _, _, name] => Prop::List(name.to_string()),
                    [_, name] => Prop::Scalar(name.to_string()),
                    _ => return Err(err(ln, "malformed property")),
                };
                el.2.push(prop);
            }
            Some("end_header") => break,
            Some("comment" | "obj_info") | None => {}
            Some(_) => return Err(err(ln, "unknown header line")),
        }
    }
    let mut mesh = TriMesh::default();
    let mut labels = Vec::new();
    let mut has_labels = false;
    for (name, count, props) in &elements {
        for _ in 0..*count {
            let (ln, l) = lines.next().ok_or_else(|| err(0, "unexpected end of data"))?;
            let mut tok = l.split_whitespace();
            let mut next_num = |what: &str| -> Result<f64, MeshError> {
                tok.next().and_then(|t| t.parse::<f64>().ok()).ok_or_else(|| err(ln, &format!("bad {what}")))
            };
            let mut xyz = [0.0; 3];
            let mut face: Option<[u32; 3]> = None;
            let mut label = None;
            for p in props {
                match p {
                    Prop::Scalar(n) => {
                        let v = next_num(n)?;
                        match (name.as_str(), n.as_str()) {
                            ("vertex", "x") => xyz[0] = v,
                            ("vertex", "y") => xyz[1] = v,
                            ("vertex", "z") => xyz[2] = v,
                            ("face", "label") => label = Some(v as u32),
                            _ => {}
                        }
                    }
                    Prop::List(n) => {
                        let len = next_num("list length")? as usize;
                        let mut idx = Vec::with_capacity(len);
                        for _ in 0..len {
                            idx.push(next_num("list entry")? as u32);
                        }
                        if name == "face" && (n == "vertex_indices" || n == "vertex_index") {
                            if len != 3 {
                                return Err(err(ln, "only triangles are supported"));
                            }
                            face = Some([idx[0], idx[1], idx[2]]);
                        }
                    }
                }
            }
            match name.as_str() {
                "vertex" => mesh.vertices.push(Vec3::from(xyz)),
                "face" => {
                    mesh.faces.push(face.ok_or_else(|| err(ln, "face without indices"))?);
                    has_labels |= label.is_some();
                    labels.push(label.unwrap_or(0));
                }
                _ => {}
            }
        }
    }
    if has_labels {
        mesh.labels = Some(labels);
    }
    mesh.validate()?;
    Ok(mesh)
}

/// `keyframe_index,mesh_vertex_index` rows with a header.
pub fn write_observations(obs: &BTreeMap<PoseKey, Vec<u32>>) -> String {
    let mut s = String::from("keyframe_index,mesh_vertex_index\n");
    for (k, nodes) in obs {
        for n in nodes {
            let _ = writeln!(s, "{},{}", k.index, n);
        }
    }
    s
}

pub fn parse_observations(text: &str, robot: u32) -> Result<BTreeMap<PoseKey, Vec<u32>>, MeshError> {
    let mut out: BTreeMap<PoseKey, Vec<u32>> = BTreeMap::new();
    for (i, l) in text.lines().enumerate() {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') || (i == 0 && l.starts_with("keyframe")) {
            continue;
        }
        let bad = || MeshError::Parse { line: i + 1, message: "expected keyframe_index,mesh_vertex_index".into() };
        let (a, b) = l.split_once(',').ok_or_else(bad)?;
        let k: u32 = a.trim().parse().map_err(|_| bad())?;
        let v: u32 = b.trim().parse().map_err(|_| bad())?;
        out.entry(PoseKey::new(robot, k)).or_default().push(v);
    }
    Ok(out)
}
