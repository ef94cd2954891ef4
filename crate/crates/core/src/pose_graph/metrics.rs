use super::{MultiRobotPoseGraph, PoseGraphError, Trajectory};
use crate::geometry::{arun_align, Correspondences, GeometryError, Pose, Vec3};

/// Chordal PGO cost:
/// `Σ κ‖R_to − R_from R_ij‖²_F + τ‖t_to − t_from − R_from t_ij‖²`.
pub fn pgo_cost(g: &MultiRobotPoseGraph, t: &Trajectory) -> Result<f64, PoseGraphError> {
    let mut cost = 0.0;
    for m in g.measurements() {
        let a = t.get(&m.from)?;
        let b = t.get(&m.to)?;
        let er = b.rotation.matrix() - a.rotation.matrix() * m.transform.rotation.matrix();
        let et = b.translation - a.translation - a.rotation.rotate(&m.transform.translation);
        cost += m.kappa * er.norm_squared() + m.tau * et.norm_squared();
    }
    Ok(cost)
}

/// Absolute trajectory error: RMSE of positions after rigidly aligning the
/// estimate onto the truth. Degenerate (collinear or tiny) trajectories fall
/// back to a translation-only alignment.
pub fn ate(estimate: &Trajectory, truth: &Trajectory) -> Result<f64, PoseGraphError> {
    if estimate.len() != truth.len() || estimate.keys().zip(truth.keys()).any(|(a, b)| a != b) {
        return Err(PoseGraphError::KeyMismatch);
    }
    if estimate.is_empty() {
        return Ok(0.0);
    }
    let a: Vec<Vec3> = estimate.iter().map(|(_, p)| p.translation).collect();
    let b: Vec<Vec3> = truth.iter().map(|(_, p)| p.translation).collect();
    let align = match arun_align(&Correspondences::new(a.clone(), b.clone())) {
        Ok(t) => t,
        Err(GeometryError::RankDeficient { .. } | GeometryError::TooFewCorrespondences { .. }) => {
            let n = a.len() as f64;
            let shift = b.iter().sum::<Vec3>() / n - a.iter().sum::<Vec3>() / n;
            Pose::from_translation(shift)
        }
        Err(e) => return Err(e.into()),
    };
    let sq: f64 = a.iter().zip(&b).map(|(p, q)| (align.transform_point(p) - q).norm_squared()).sum();
    Ok((sq / a.len() as f64).sqrt())
}
