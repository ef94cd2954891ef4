use super::{KeyframeData, MultiRobotError, KEYPOINT_DESCRIPTOR_BYTES};
use crate::geometry::{ransac_align, Correspondences, RansacConfig, RansacOutcome, Vec3};
use crate::pose_graph::{PoseKey, RelativeMeasurement};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GvConfig {
    /// Largest Hamming distance for a putative correspondence.
    pub max_hamming: u32,
    /// `min_inliers` is the acceptance threshold.
    pub ransac: RansacConfig,
    /// Weights given to accepted loops.
    pub kappa: f64,
    pub tau: f64,
}

impl Default for GvConfig {
    fn default() -> Self {
        Self {
            max_hamming: 64,
            ransac: RansacConfig { inlier_threshold: 0.1, max_iterations: 500, min_inliers: 15, ..Default::default() },
            kappa: 1e4,
            tau: 400.0,
        }
    }
}

impl GvConfig {
    pub fn validate(&self) -> Result<(), MultiRobotError> {
        if !(self.kappa > 0.0 && self.tau > 0.0 && self.kappa.is_finite() && self.tau.is_finite()) {
            return Err(MultiRobotError::Config("loop weights must be positive".into()));
        }
        if !(self.ransac.inlier_threshold > 0.0) || self.ransac.max_iterations == 0 {
            return Err(MultiRobotError::Config("ransac needs a positive threshold and iteration count".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verification {
    Accepted {
        measurement: RelativeMeasurement,
        /// `(index in kf_i, index in kf_j)` of the inlier correspondences.
        inliers: Vec<(usize, usize)>,
    },
    Rejected {
        matches: usize,
        inliers: usize,
    },
}

impl Verification {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Verification::Accepted { .. })
    }
}

pub fn hamming(a: &[u8; KEYPOINT_DESCRIPTOR_BYTES], b: &[u8; KEYPOINT_DESCRIPTOR_BYTES]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Mutual nearest neighbours in Hamming distance, at most `max_distance`
/// apart. Ties go to the lower index. Sorted by index in `a`.
pub fn match_keypoints(
    a: &[[u8; KEYPOINT_DESCRIPTOR_BYTES]],
    b: &[[u8; KEYPOINT_DESCRIPTOR_BYTES]],
    max_distance: u32,
) -> Vec<(usize, usize)> {
    let best = |q: &[u8; KEYPOINT_DESCRIPTOR_BYTES], set: &[[u8; KEYPOINT_DESCRIPTOR_BYTES]]| {
        set.iter().enumerate().map(|(i, d)| (hamming(q, d), i)).min()
    };
    let mut out = Vec::new();
    for (i, da) in a.iter().enumerate() {
        let Some((d, j)) = best(da, b) else { break };
        if d <= max_distance && best(&b[j], a).map(|(_, k)| k) == Some(i) {
            out.push((i, j));
        }
    }
    out
}

/// Descriptor matching followed by RANSAC on the matched 3D keypoints.
/// Accepted loops carry the estimated `X_i⁻¹ X_j` and the configured
/// weights.
pub fn geometric_verification(
    kf_i: &KeyframeData,
    kf_j: &KeyframeData,
    cfg: &GvConfig,
) -> Result<Verification, MultiRobotError> {
    kf_i.validate()?;
    kf_j.validate()?;
    verify_views(
        View { key: kf_i.key, keypoints: &kf_i.keypoints, descriptors: &kf_i.keypoint_descriptors },
        View { key: kf_j.key, keypoints: &kf_j.keypoints, descriptors: &kf_j.keypoint_descriptors },
        cfg,
    )
}

/// Keypoints of one keyframe, wherever they came from.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub key: PoseKey,
    pub keypoints: &'a [Vec3],
    pub descriptors: &'a [[u8; KEYPOINT_DESCRIPTOR_BYTES]],
}

pub(crate) fn verify_views(a: View, b: View, cfg: &GvConfig) -> Result<Verification, MultiRobotError> {
    cfg.validate()?;
    let matches = match_keypoints(a.descriptors, b.descriptors, cfg.max_hamming);
    if matches.len() < cfg.ransac.min_inliers.max(3) {
        return Ok(Verification::Rejected { matches: matches.len(), inliers: 0 });
    }
    let c = Correspondences::new(
        matches.iter().map(|&(i, _)| a.keypoints[i]).collect(),
        matches.iter().map(|&(_, j)| b.keypoints[j]).collect(),
    );
    // A per-pair seed keeps the outcome independent of verification order.
    let mut ransac = cfg.ransac;
    let pair = [a.key.robot, a.key.index, b.key.robot, b.key.index];
    ransac.seed = pair.iter().fold(cfg.ransac.seed ^ 0x9e37_79b9_7f4a_7c15, |h, &v| {
        (h ^ v as u64).wrapping_mul(0x0000_0100_0000_01b3)
    });
    Ok(match ransac_align(&c, &ransac)? {
        RansacOutcome::Accepted { pose, inliers } => Verification::Accepted {
            // RANSAC maps a's points into b's frame: that is X_b⁻¹ X_a.
            measurement: RelativeMeasurement::new(a.key, b.key, pose.inverse(), cfg.kappa, cfg.tau),
            inliers: inliers.iter().map(|&k| matches[k]).collect(),
        },
        RansacOutcome::Rejected { best_inliers } => {
            Verification::Rejected { matches: matches.len(), inliers: best_inliers }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mutual_matching() {
        let a = [[0u8; 32], [0xff; 32], [0x0f; 32]];
        let mut b = [[0u8; 32], [0x0f; 32]];
        b[0][0] = 1;
        assert_eq!(match_keypoints(&a, &b, 8), vec![(0, 0), (2, 1)]);
        assert_eq!(match_keypoints(&a, &b, 0), vec![(2, 1)]);
        assert_eq!(hamming(&a[0], &a[1]), 256);
        assert!(match_keypoints(&a, &[], 8).is_empty());
    }
}
