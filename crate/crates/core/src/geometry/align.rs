//! Point-set registration: closed-form least-squares alignment and a
//! 3-point RANSAC wrapper around it.

use super::{GeometryError, Mat3, Pose, Rotation, Vec3};
use crate::par::{self, Execution};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Paired point lists; `points_b[i]` is the counterpart of `points_a[i]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Correspondences {
    pub points_a: Vec<Vec3>,
    pub points_b: Vec<Vec3>,
}

impl Correspondences {
    pub fn new(points_a: Vec<Vec3>, points_b: Vec<Vec3>) -> Self {
        Self { points_a, points_b }
    }

    pub fn len(&self) -> usize {
        self.points_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points_a.is_empty()
    }

    fn check(&self) -> Result<(), GeometryError> {
        if self.points_a.len() != self.points_b.len() {
            return Err(GeometryError::LengthMismatch { a: self.points_a.len(), b: self.points_b.len() });
        }
        if self.points_a.len() < 3 {
            return Err(GeometryError::TooFewCorrespondences { needed: 3, got: self.points_a.len() });
        }
        Ok(())
    }
}

/// Relative threshold on the second singular value of the cross-covariance
/// below which the configuration counts as collinear.
const RANK_TOLERANCE: f64 = 1e-10;

/// Least-squares rigid transform `T` with `points_b ≈ T · points_a`.
pub fn arun_align(c: &Correspondences) -> Result<Pose, GeometryError> {
    c.check()?;
    arun_subset(&c.points_a, &c.points_b, None)
}

fn arun_subset(a: &[Vec3], b: &[Vec3], idx: Option<&[usize]>) -> Result<Pose, GeometryError> {
    let ids: Box<dyn Iterator<Item = usize>> = match idx {
        Some(ix) => Box::new(ix.iter().copied()),
        None => Box::new(0..a.len()),
    };
    let ids: Vec<usize> = ids.collect();
    let n = ids.len() as f64;
    let ca = ids.iter().fold(Vec3::zeros(), |s, &i| s + a[i]) / n;
    let cb = ids.iter().fold(Vec3::zeros(), |s, &i| s + b[i]) / n;
    let mut h = Mat3::zeros();
    for &i in &ids {
        h += (a[i] - ca) * (b[i] - cb).transpose();
    }
    let svd = h.svd(true, true);
    let s = svd.singular_values;
    let mut sv = [s[0], s[1], s[2]];
    sv.sort_by(|x, y| y.total_cmp(x));
    if sv[0] <= f64::MIN_POSITIVE || sv[1] <= RANK_TOLERANCE * sv[0] {
        return Err(GeometryError::RankDeficient { singular_values: sv });
    }
    let u = svd.u.expect("svd u");
    let v = svd.v_t.expect("svd v_t").transpose();
    let mut d = Mat3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        // Flip the axis belonging to the smallest singular value.
        let (k, _) = s.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1)).unwrap();
        d[(k, k)] = -1.0;
    }
    let r = v * d * u.transpose();
    let rotation = Rotation::from_matrix_unchecked(r);
    Ok(Pose::new(rotation, cb - r * ca))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// Residual ‖T a − b‖ below which a correspondence is an inlier (m).
    pub inlier_threshold: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { inlier_threshold: 0.1, max_iterations: 1000, min_inliers: 15, seed: 0, execution: Execution::Parallel }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RansacOutcome {
    Accepted { pose: Pose, inliers: Vec<usize> },
    /// Best hypothesis had fewer than `min_inliers` support.
    Rejected { best_inliers: usize },
}

impl RansacOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, RansacOutcome::Accepted { .. })
    }
}

/// Number of hypotheses drawn and scored together; the early exit is only
/// checked between chunks.
const CHUNK: usize = 64;

/// 3-point RANSAC over [`arun_align`]. Bit-reproducible for a fixed seed,
/// independent of the execution mode.
pub fn ransac_align(c: &Correspondences, cfg: &RansacConfig) -> Result<RansacOutcome, GeometryError> {
    c.check()?;
    let n = c.len();
    let thr2 = cfg.inlier_threshold * cfg.inlier_threshold;
    let count = |pose: &Pose| -> usize {
        c.points_a
            .iter()
            .zip(&c.points_b)
            .filter(|(a, b)| (pose.transform_point(a) - *b).norm_squared() <= thr2)
            .count()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, Pose)> = None;
    let mut drawn = 0;
    while drawn < cfg.max_iterations {
        let m = CHUNK.min(cfg.max_iterations - drawn);
        let samples: Vec<Vec<usize>> = (0..m).map(|_| sample(&mut rng, n, 3).into_vec()).collect();
        drawn += m;
        let scored = par::map(cfg.execution, &samples, |s| {
            arun_subset(&c.points_a, &c.points_b, Some(s)).ok().map(|p| (count(&p), p))
        });
        // Earliest hypothesis wins ties.
        for (k, p) in scored.into_iter().flatten() {
            if best.as_ref().is_none_or(|(bk, _)| k > *bk) {
                best = Some((k, p));
            }
        }
        // Nothing can strictly beat a model that explains every pair.
        if best.as_ref().is_some_and(|(k, _)| *k == n) {
            break;
        }
    }

    let Some((_, model)) = best else {
        return Ok(RansacOutcome::Rejected { best_inliers: 0 });
    };
    let inliers: Vec<usize> = (0..n)
        .filter(|&i| (model.transform_point(&c.points_a[i]) - c.points_b[i]).norm_squared() <= thr2)
        .collect();
    if inliers.len() < cfg.min_inliers.max(3) {
        return Ok(RansacOutcome::Rejected { best_inliers: inliers.len() });
    }
    let pose = match arun_subset(&c.points_a, &c.points_b, Some(&inliers)) {
        Ok(p) => p,
        Err(_) => model,
    };
    Ok(RansacOutcome::Accepted { pose, inliers })
}

#[cfg(test)]
mod tests {
    use super::super::pose::test_util::random_pose;
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
            .collect()
    }

    fn pose_err(a: &Pose, b: &Pose) -> f64 {
        (a.rotation.matrix() - b.rotation.matrix()).norm() + (a.translation - b.translation).norm()
    }

    #[test]
    fn identity_and_exact_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = cloud(&mut rng, 12);
        let id = arun_align(&Correspondences::new(a.clone(), a.clone())).unwrap();
        assert!(pose_err(&id, &Pose::identity()) < 1e-12);
        for _ in 0..50 {
            let t = random_pose(&mut rng);
            let b = a.iter().map(|p| t.transform_point(p)).collect();
            let est = arun_align(&Correspondences::new(a.clone(), b)).unwrap();
            assert!(pose_err(&est, &t) < 1e-9);
        }
    }

    #[test]
    fn planar_points_are_fine_collinear_are_not() {
        let a: Vec<Vec3> = (0..6).map(|i| Vec3::new(i as f64, (i * i) as f64 * 0.1, 0.0)).collect();
        let t = Pose::new(Rotation::exp(&Vec3::new(0.3, 0.1, -0.2)), Vec3::new(1.0, 0.0, 2.0));
        let b = a.iter().map(|p| t.transform_point(p)).collect();
        assert!(pose_err(&arun_align(&Correspondences::new(a, b)).unwrap(), &t) < 1e-9);

        let line: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        let err = arun_align(&Correspondences::new(line.clone(), line)).unwrap_err();
        assert!(matches!(err, GeometryError::RankDeficient { .. }));
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = cloud(&mut rng, 20);
        let t = random_pose(&mut rng);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let b: Vec<Vec3> = a
            .iter()
            .map(|p| t.transform_point(p) + Vec3::from_fn(|_, _| noise.sample(&mut rng)))
            .collect();
        let base = arun_align(&Correspondences::new(a.clone(), b.clone())).unwrap();
        let mut order: Vec<usize> = (0..a.len()).collect();
        order.reverse();
        order.swap(3, 11);
        let pa = order.iter().map(|&i| a[i]).collect();
        let pb = order.iter().map(|&i| b[i]).collect();
        let perm = arun_align(&Correspondences::new(pa, pb)).unwrap();
        assert!(pose_err(&base, &perm) < 1e-12);
    }

    #[test]
    fn noisy_translation_error_monte_carlo() {
        // Oracle: over seeded trials the translation error of the centroid
        // estimate concentrates below 3σ/√N.
        let sigma = 0.01;
        let n = 50;
        let bound = 3.0 * sigma / (n as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut within = 0;
        let mut sum = 0.0;
        for _ in 0..100 {
            let t = random_pose(&mut rng);
            // Centred cloud so translation error is not inflated by lever arm.
            let mut a = cloud(&mut rng, n);
            let c = a.iter().fold(Vec3::zeros(), |s, p| s + p) / n as f64;
            a.iter_mut().for_each(|p| *p -= c);
            let b = a
                .iter()
                .map(|p| t.transform_point(p) + Vec3::from_fn(|_, _| noise.sample(&mut rng)))
                .collect();
            let est = arun_align(&Correspondences::new(a, b)).unwrap();
            let e = (est.translation - t.translation).norm();
            sum += e;
            if e < bound {
                within += 1;
            }
        }
        assert!(sum / 100.0 < bound, "mean error {}", sum / 100.0);
        assert!(within >= 90, "{within}/100 trials below 3σ/√N");
    }

    #[test]
    fn ransac_exact_and_planted_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = random_pose(&mut rng);
        let a = cloud(&mut rng, 20);
        let b: Vec<Vec3> = a.iter().map(|p| t.transform_point(p)).collect();
        let cfg = RansacConfig { min_inliers: 3, ..Default::default() };
        match ransac_align(&Correspondences::new(a.clone(), b.clone()), &cfg).unwrap() {
            RansacOutcome::Accepted { pose, inliers } => {
                assert_eq!(inliers.len(), 20);
                assert!(pose_err(&pose, &t) < 1e-9);
            }
            other => panic!("{other:?}"),
        }

        let mut pa = a.clone();
        let mut pb = b.clone();
        pa.extend(cloud(&mut rng, 10));
        pb.extend(cloud(&mut rng, 10));
        match ransac_align(&Correspondences::new(pa, pb), &cfg).unwrap() {
            RansacOutcome::Accepted { inliers, .. } => assert_eq!(inliers, (0..20).collect::<Vec<_>>()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ransac_preconditions_and_rejection() {
        let two = Correspondences::new(vec![Vec3::zeros(), Vec3::x()], vec![Vec3::zeros(), Vec3::x()]);
        assert!(matches!(
            ransac_align(&two, &RansacConfig::default()),
            Err(GeometryError::TooFewCorrespondences { .. })
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = cloud(&mut rng, 10);
        let out = ransac_align(&Correspondences::new(a.clone(), a), &RansacConfig::default()).unwrap();
        assert_eq!(out, RansacOutcome::Rejected { best_inliers: 10 });
    }

    #[test]
    fn ransac_reproducible_across_execution_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = random_pose(&mut rng);
        let a = cloud(&mut rng, 40);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let mut b: Vec<Vec3> =
            a.iter().map(|p| t.transform_point(p) + Vec3::from_fn(|_, _| noise.sample(&mut rng))).collect();
        for p in b.iter_mut().take(15) {
            *p += Vec3::new(1.0, -2.0, 0.5);
        }
        let c = Correspondences::new(a, b);
        let seq = RansacConfig { execution: Execution::Sequential, seed: 5, ..Default::default() };
        let par = RansacConfig { execution: Execution::Parallel, ..seq };
        let r1 = ransac_align(&c, &seq).unwrap();
        let r2 = ransac_align(&c, &par).unwrap();
        let r3 = ransac_align(&c, &seq).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1, r3);
    }
}
