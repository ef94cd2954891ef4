use super::{MeshError, PointIndex, TriMesh};
use crate::geometry::{arun_align, Correspondences, Pose, Vec3};
use crate::par::{self, Execution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccuracyConfig {
    /// Surface samples per square metre.
    pub sample_density: f64,
    pub icp_iterations: usize,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for AccuracyConfig {
    fn default() -> Self {
        Self { sample_density: 1000.0, icp_iterations: 30, seed: 0, execution: Execution::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeshAccuracy {
    /// Mean distance from ground-truth samples to their nearest estimate
    /// sample, after rigid alignment.
    pub mean_distance: f64,
    /// Fraction of ground-truth samples whose nearest estimate sample has
    /// the same label; `None` unless both meshes are labelled.
    pub label_accuracy: Option<f64>,
    pub truth_samples: usize,
    pub estimate_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub point: Vec3,
    pub label: Option<u32>,
}

/// Area-weighted uniform samples, `ceil(area · density)` of them.
pub fn sample_surface<R: Rng>(m: &TriMesh, density: f64, rng: &mut R) -> Result<Vec<SurfaceSample>, MeshError> {
    m.validate()?;
    if !(density > 0.0 && density.is_finite()) {
        return Err(MeshError::Config("sample density must be positive".into()));
    }
    let mut cumulative = Vec::with_capacity(m.faces.len());
    let mut total = 0.0;
    for f in 0..m.faces.len() {
        total += m.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(MeshError::ZeroArea);
    }
    let n = (total * density).ceil() as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random::<f64>() * total;
        let f = cumulative.partition_point(|&c| c <= u).min(m.faces.len() - 1);
        let [a, b, c] = m.faces[f].map(|i| m.vertices[i as usize]);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let point = a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2);
        out.push(SurfaceSample { point, label: m.label(f) });
    }
    Ok(out)
}

/// Samples both meshes, aligns the truth samples onto the estimate with
/// point-to-point ICP and reports nearest-neighbour distance and label
/// agreement.
pub fn mesh_accuracy(estimate: &TriMesh, truth: &TriMesh, cfg: &AccuracyConfig) -> Result<MeshAccuracy, MeshError> {
    // Both meshes draw from the same stream, so identical meshes give
    // identical samples.
    let est = sample_surface(estimate, cfg.sample_density, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let tru = sample_surface(truth, cfg.sample_density, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let index = PointIndex::new(est.iter().map(|s| s.point).collect());
    let nearest = |t: &Pose| par::map(cfg.execution, &tru, |s| index.nearest(&t.transform_point(&s.point), 1)[0]);

    let mut t = Pose::identity();
    for _ in 0..cfg.icp_iterations {
        let nn = nearest(&t);
        let c = Correspondences::new(
            tru.iter().map(|s| s.point).collect(),
            nn.iter().map(|&(i, _)| index.points()[i]).collect(),
        );
        match arun_align(&c) {
            Ok(next) => {
                let done = next.between(&t).log().map(|x| x.norm() < 1e-12).unwrap_or(false);
                t = next;
                if done {
                    break;
                }
            }
            // Degenerate association; keep the current alignment.
            Err(_) => break,
        }
    }
    let nn = nearest(&t);
    let mean_distance = nn.iter().map(|&(_, d)| d).sum::<f64>() / nn.len() as f64;
    let label_accuracy = (estimate.labels.is_some() && truth.labels.is_some()).then(|| {
        let hits = tru.iter().zip(&nn).filter(|(s, &(i, _))| s.label == est[i].label).count();
        hits as f64 / tru.len() as f64
    });
    Ok(MeshAccuracy { mean_distance, label_accuracy, truth_samples: tru.len(), estimate_samples: est.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;

    fn labelled(n: u32) -> TriMesh {
        let mut m = TriMesh::grid(n, n, 0.25);
        m.labels = Some((0..m.faces.len() as u32).map(|f| f / 8 % 3).collect());
        m
    }

    #[test]
    fn sampling_is_area_weighted() {
        let m = TriMesh::grid(4, 1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_surface(&m, 500.0, &mut rng).unwrap();
        assert_eq!(s.len(), 2000);
        let left = s.iter().filter(|p| p.point.x < 2.0).count() as f64 / s.len() as f64;
        assert!((left - 0.5).abs() < 0.05, "{left}");
        assert!(s.iter().all(|p| (0.0..=4.0).contains(&p.point.x) && (0.0..=1.0).contains(&p.point.y)));
        let flat = TriMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0], vec![[0, 1, 2]], None).unwrap();
        assert_eq!(sample_surface(&flat, 10.0, &mut rng).unwrap_err(), MeshError::ZeroArea);
    }

    #[test]
    fn identical_meshes_score_perfectly() {
        let m = labelled(8);
        let cfg = AccuracyConfig { sample_density: 200.0, ..Default::default() };
        let a = mesh_accuracy(&m, &m, &cfg).unwrap();
        assert!(a.mean_distance < 1e-12, "{}", a.mean_distance);
        assert_eq!(a.label_accuracy, Some(1.0));
        assert!(mesh_accuracy(&TriMesh::grid(8, 8, 0.25), &m, &cfg).unwrap().label_accuracy.is_none());
    }

    #[test]
    fn rigid_offset_is_absorbed() {
        let mut m = labelled(8);
        for v in &mut m.vertices {
            v.z = (v.x * 3.0).sin() * 0.3 + v.y * v.y * 0.2;
        }
        let cfg = AccuracyConfig { sample_density: 300.0, ..Default::default() };
        let base = mesh_accuracy(&m, &m, &cfg).unwrap();
        let moved = m.transformed(&Pose::new(Rotation::about_z(0.02), Vec3::new(0.05, -0.03, 0.04)));
        let a = mesh_accuracy(&moved, &m, &cfg).unwrap();
        assert!(a.mean_distance < base.mean_distance * 1.5 + 1e-3, "{} vs {}", a.mean_distance, base.mean_distance);
    }
}
