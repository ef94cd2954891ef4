//! Semantic triangle meshes and their correction by a deformation graph
//! anchored to optimized keyframe poses.

mod accuracy;
mod deform;
mod index;
mod interp;
mod ply;
mod simplify;

pub use accuracy::{mesh_accuracy, sample_surface, AccuracyConfig, MeshAccuracy, SurfaceSample};
pub use deform::{
    build_deformation_graph, lmo_gradient, lmo_objective, lmo_optimize, DeformationGraph, DeformationResult, KeyframeEdge,
    LmoConfig,
};
pub use index::PointIndex;
pub use interp::{interpolate_vertices, interpolation_weights, InterpolationWeights};
pub use ply::{parse_observations, parse_ply, write_observations, write_ply};
pub use simplify::simplify_mesh;

use crate::geometry::{GeometryError, Pose, Vec3};
use crate::pose_graph::PoseKey;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("face {face} references vertex {vertex} of {count}")]
    FaceIndex { face: usize, vertex: u32, count: usize },
    #[error("{labels} labels for {faces} faces")]
    LabelCount { labels: usize, faces: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("observation of node {node} out of {count}")]
    Observation { node: u32, count: usize },
    #[error("no anchor for keyframe {0}")]
    MissingAnchor(PoseKey),
    #[error("need at least {need} mesh nodes, have {have}")]
    TooFewNodes { need: usize, have: usize },
    #[error("mesh has zero area")]
    ZeroArea,
    #[error("non-finite objective")]
    NonFinite,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("linear solve failed: {0}")]
    Linear(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl From<crate::sparse::FactorError> for MeshError {
    fn from(e: crate::sparse::FactorError) -> Self {
        MeshError::Linear(e.0)
    }
}

/// Triangle mesh with optional per-face semantic labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub labels: Option<Vec<u32>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>, labels: Option<Vec<u32>>) -> Result<Self, MeshError> {
        let m = Self { vertices, faces, labels };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.vertices.len();
        for (f, face) in self.faces.iter().enumerate() {
            if let Some(&v) = face.iter().find(|&&v| v as usize >= n) {
                return Err(MeshError::FaceIndex { face: f, vertex: v, count: n });
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != self.faces.len() {
                return Err(MeshError::LabelCount { labels: l.len(), faces: self.faces.len() });
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i as usize]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn label(&self, f: usize) -> Option<u32> {
        self.labels.as_ref().map(|l| l[f])
    }

    /// Copy with every vertex moved by `t`.
    pub fn transformed(&self, t: &Pose) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| t.transform_point(v)).collect(),
            faces: self.faces.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Concatenation; faces of `other` are re-indexed. Labels are kept only
    /// if both meshes carry them.
    pub fn merged(&self, other: &TriMesh) -> TriMesh {
        let off = self.vertices.len() as u32;
        let mut out = self.clone();
        out.vertices.extend_from_slice(&other.vertices);
        out.faces.extend(other.faces.iter().map(|f| f.map(|v| v + off)));
        out.labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        out
    }

    /// Axis-aligned grid of `nx × ny` unit quads (two triangles each) with
    /// spacing `step`, in the `z = 0` plane. Handy for tests and scenarios.
    pub fn grid(nx: u32, ny: u32, step: f64) -> TriMesh {
        let mut vertices = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push(Vec3::new(i as f64 * step, j as f64 * step, 0.0));
            }
        }
        let id = |i: u32, j: u32| j * (nx + 1) + i;
        let mut faces = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        TriMesh { vertices, faces, labels: None }
    }
}
