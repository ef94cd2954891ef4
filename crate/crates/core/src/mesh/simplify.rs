use super::{MeshError, TriMesh};
use crate::geometry::Vec3;
use std::collections::{HashMap, HashSet};

/// Vertex clustering on a uniform grid of side `cell`.
///
/// Each occupied cell becomes one vertex at the centroid of its members;
/// clusters are numbered in order of first appearance. Faces that collapse
/// are dropped, and of several faces landing on the same triangle the first
/// one (with its label) is kept. Returns the simplified mesh and the
/// original-to-cluster vertex map.
pub fn simplify_mesh(m: &TriMesh, cell: f64) -> Result<(TriMesh, Vec<u32>), MeshError> {
    if !(cell > 0.0 && cell.is_finite()) {
        return Err(MeshError::Config(format!("cell size {cell} must be positive")));
    }
    m.validate()?;
    let mut cluster_of: HashMap<[i64; 3], u32> = HashMap::new();
    let mut sums: Vec<(Vec3, usize)> = Vec::new();
    let mut map = Vec::with_capacity(m.vertices.len());
    for v in &m.vertices {
        let key = [v.x, v.y, v.z].map(|c| (c / cell).floor() as i64);
        let id = *cluster_of.entry(key).or_insert_with(|| {
            sums.push((Vec3::zeros(), 0));
            sums.len() as u32 - 1
        });
        sums[id as usize].0 += v;
        sums[id as usize].1 += 1;
        map.push(id);
    }
    let vertices = sums.into_iter().map(|(s, n)| if n == 1 { s } else { s / n as f64 }).collect();
    let mut seen = HashSet::new();
    let mut faces = Vec::new();
    let mut labels = m.labels.as_ref().map(|_| Vec::new());
    for (f, face) in m.faces.iter().enumerate() {
        let c = face.map(|v| map[v as usize]);
        if c[0] == c[1] || c[1] == c[2] || c[0] == c[2] {
            continue;
        }
        let mut key = c;
        key.sort_unstable();
        if !seen.insert(key) {
            continue;
        }
        faces.push(c);
        if let (Some(out), Some(l)) = (labels.as_mut(), m.label(f)) {
            out.push(l);
        }
    }
    Ok((TriMesh { vertices, faces, labels }, map))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube() -> TriMesh {
        let vertices = (0..8).map(|i| Vec3::new((i & 1) as f64, (i >> 1 & 1) as f64, (i >> 2 & 1) as f64)).collect();
        let faces = vec![
            [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
            [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
        ];
        TriMesh::new(vertices, faces, Some((0..12).collect())).unwrap()
    }

    #[test]
    fn fine_cell_is_identity() {
        let m = cube();
        let (s, map) = simplify_mesh(&m, 0.5).unwrap();
        assert_eq!(s, m);
        assert_eq!(map, (0..8).collect::<Vec<u32>>());
    }

    #[test]
    fn coarse_cell_collapses_everything() {
        let (s, map) = simplify_mesh(&cube(), 10.0).unwrap();
        assert_eq!(s.vertices, vec![Vec3::new(0.5, 0.5, 0.5)]);
        assert!(s.faces.is_empty());
        assert_eq!(s.labels, Some(vec![]));
        assert!(map.iter().all(|&c| c == 0));
    }

    #[test]
    fn grid_halves_and_keeps_labels_consistent() {
        let mut m = TriMesh::grid(8, 8, 0.25);
        m.labels = Some((0..m.faces.len() as u32).collect());
        let (s, map) = simplify_mesh(&m, 0.5).unwrap();
        assert!(s.vertices.len() < m.vertices.len());
        assert!(s.validate().is_ok());
        assert_eq!(map.len(), m.vertices.len());
        // Every kept face carries the label of an original face with the same clusters.
        for (f, face) in s.faces.iter().enumerate() {
            let l = s.labels.as_ref().unwrap()[f] as usize;
            assert_eq!(m.faces[l].map(|v| map[v as usize]), *face);
        }
        assert!(simplify_mesh(&m, 0.0).is_err());
        assert_eq!(simplify_mesh(&TriMesh::default(), 1.0).unwrap().0, TriMesh::default());
    }
}
