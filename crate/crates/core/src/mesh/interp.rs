use super::{DeformationGraph, DeformationResult, LmoConfig, MeshError, PointIndex, TriMesh};
use crate::geometry::Vec3;
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationWeights {
    /// The `k` nearest mesh nodes, nearest first.
    pub nodes: Vec<usize>,
    /// `(1 − d/d_max)²` before normalization.
    pub raw: Vec<f64>,
    /// Normalized to sum to one.
    pub weights: Vec<f64>,
    /// Distance to the `(k+1)`-th nearest mesh node.
    pub d_max: f64,
}

fn weights_from(index: &PointIndex, v: &Vec3, k: usize) -> Result<InterpolationWeights, MeshError> {
    if index.len() < k + 1 {
        return Err(MeshError::TooFewNodes { need: k + 1, have: index.len() });
    }
    let mut near = index.nearest(v, k + 1);
    let d_max = near.pop().map(|(_, d)| d).unwrap_or(0.0);
    let raw: Vec<f64> =
        near.iter().map(|&(_, d)| if d_max > 0.0 { (1.0 - d / d_max).powi(2) } else { 0.0 }).collect();
    let total: f64 = raw.iter().sum();
    let weights = if total > 0.0 { raw.iter().map(|w| w / total).collect() } else { vec![1.0 / k as f64; k] };
    Ok(InterpolationWeights { nodes: near.into_iter().map(|(i, _)| i).collect(), raw, weights, d_max })
}

/// Blend weights of the `k` mesh nodes nearest to `v`.
pub fn interpolation_weights(v: &Vec3, dg: &DeformationGraph, k: usize) -> Result<InterpolationWeights, MeshError> {
    if k == 0 {
        return Err(MeshError::Config("k must be at least 1".into()));
    }
    weights_from(&PointIndex::new(dg.mesh_nodes.clone()), v, k)
}

/// Moves every vertex of `full` by the weighted blend of its nearest node
/// transforms, `Σ_j w_j (R_j (v − g_j) + t_j)`. Faces and labels are copied.
pub fn interpolate_vertices(
    full: &TriMesh,
    dg: &DeformationGraph,
    res: &DeformationResult,
    cfg: &LmoConfig,
) -> Result<TriMesh, MeshError> {
    cfg.validate()?;
    if res.mesh_node_transforms.len() != dg.mesh_nodes.len() {
        return Err(MeshError::Config("deformation result does not match the graph".into()));
    }
    let index = PointIndex::new(dg.mesh_nodes.clone());
    let moved = par::map(cfg.execution, &full.vertices, |v| {
        let w = weights_from(&index, v, cfg.interp_k)?;
        let mut out = Vec3::zeros();
        for (&j, &wj) in w.nodes.iter().zip(&w.weights) {
            let m = &res.mesh_node_transforms[j];
            out += (m.rotation.rotate(&(v - dg.mesh_nodes[j])) + m.translation) * wj;
        }
        Ok(out)
    });
    Ok(TriMesh {
        vertices: moved.into_iter().collect::<Result<_, MeshError>>()?,
        faces: full.faces.clone(),
        labels: full.labels.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_graph(n: usize) -> DeformationGraph {
        DeformationGraph {
            mesh_nodes: (0..n).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect(),
            keyframe_nodes: vec![],
            mesh_edges: vec![],
            keyframe_edges: vec![],
        }
    }

    #[test]
    fn collinear_nodes_hand_evaluated() {
        let w = interpolation_weights(&Vec3::zeros(), &line_graph(5), 4).unwrap();
        assert_eq!(w.nodes, vec![0, 1, 2, 3]);
        assert_eq!(w.d_max, 4.0);
        let expect = [1.0, 0.5625, 0.25, 0.0625];
        for (r, e) in w.raw.iter().zip(expect) {
            assert!((r - e).abs() < 1e-15);
        }
        let total: f64 = expect.iter().sum();
        assert!((w.weights[0] - 1.0 / total).abs() < 1e-15);
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coincident_node_is_one_hot_when_others_sit_at_d_max() {
        // Node 0 at the query, the rest on a sphere of radius 1.
        let mut dg = line_graph(1);
        dg.mesh_nodes.extend([Vec3::x(), Vec3::y(), Vec3::z(), -Vec3::x()]);
        let w = interpolation_weights(&Vec3::zeros(), &dg, 3).unwrap();
        assert_eq!(w.d_max, 1.0);
        assert_eq!(w.nodes[0], 0);
        assert_eq!(w.weights, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn equidistant_nodes_fall_back_to_uniform() {
        let mut dg = line_graph(0);
        dg.mesh_nodes.extend([Vec3::x(), Vec3::y(), Vec3::z()]);
        let w = interpolation_weights(&Vec3::zeros(), &dg, 2).unwrap();
        assert_eq!(w.weights, vec![0.5, 0.5]);
        assert_eq!(
            interpolation_weights(&Vec3::zeros(), &dg, 3),
            Err(MeshError::TooFewNodes { need: 4, have: 3 })
        );
    }
}
