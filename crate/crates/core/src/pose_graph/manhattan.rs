use super::{MultiRobotPoseGraph, PoseKey, RelativeMeasurement, Trajectory};
use crate::geometry::{Pose, Rotation, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Planar grid-world trajectory in the style of the Manhattan benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManhattanConfig {
    /// Grid cells per side; the walk stays in `[0, blocks]²`.
    pub blocks: u32,
    /// Distance between neighbouring cells (m).
    pub step: f64,
    pub poses: u32,
    /// Odometry rotation noise σ (rad).
    pub sigma_rotation: f64,
    /// Odometry translation noise σ per axis (m).
    pub sigma_translation: f64,
    /// Probability that a revisit produces a loop closure.
    pub loop_prob: f64,
    /// Probability of a 90° turn at each step.
    pub turn_prob: f64,
    pub seed: u64,
}

impl Default for ManhattanConfig {
    fn default() -> Self {
        Self {
            blocks: 20,
            step: 1.0,
            poses: 3500,
            sigma_rotation: 0.01,
            sigma_translation: 0.05,
            loop_prob: 0.7,
            turn_prob: 0.3,
            seed: 0,
        }
    }
}

const HEADINGS: [(i32, i32); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

fn weight(sigma: f64) -> f64 {
    if sigma > 0.0 {
        1.0 / (sigma * sigma)
    } else {
        1.0
    }
}

/// Generates a single-robot planar graph with ground truth. Loop closures
/// link the current pose to a uniformly chosen earlier visit of the same
/// cell and are exact; only odometry is noisy.
pub fn generate_manhattan(cfg: &ManhattanConfig) -> MultiRobotPoseGraph {
    assert!(cfg.blocks >= 1, "blocks must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rot_noise = Normal::new(0.0, cfg.sigma_rotation.max(0.0)).expect("sigma");
    let trans_noise = Normal::new(0.0, cfg.sigma_translation.max(0.0)).expect("sigma");
    let n = cfg.poses.max(1);
    let b = cfg.blocks as i32;
    let (kappa, tau) = (weight(cfg.sigma_rotation), weight(cfg.sigma_translation));

    let mut cells = Vec::with_capacity(n as usize);
    let mut headings = Vec::with_capacity(n as usize);
    let (mut x, mut y, mut h) = (0i32, 0i32, 0usize);
    for _ in 0..n {
        cells.push((x, y));
        headings.push(h);
        let mut next = h;
        if rng.random::<f64>() < cfg.turn_prob {
            next = if rng.random::<bool>() { (h + 1) % 4 } else { (h + 3) % 4 };
        }
        let inside = |d: usize| {
            let (nx, ny) = (x + HEADINGS[d].0, y + HEADINGS[d].1);
            (0..=b).contains(&nx) && (0..=b).contains(&ny)
        };
        if !inside(next) {
            let options: Vec<usize> = [(h + 1) % 4, (h + 3) % 4, h, (h + 2) % 4].into_iter().filter(|&d| inside(d)).collect();
            next = options[rng.random_range(0..options.len().min(2).max(1))];
        }
        h = next;
        x += HEADINGS[h].0;
        y += HEADINGS[h].1;
    }

    let truth: Vec<Pose> = cells
        .iter()
        .zip(&headings)
        .map(|(&(cx, cy), &hd)| Pose::planar(cx as f64 * cfg.step, cy as f64 * cfg.step, hd as f64 * std::f64::consts::FRAC_PI_2))
        .collect();

    let mut g = MultiRobotPoseGraph::new();
    g.planar = true;
    g.add_robot(0, n);
    for i in 0..n as usize - 1 {
        let exact = truth[i].between(&truth[i + 1]);
        let noise = Pose::new(
            Rotation::about_z(rot_noise.sample(&mut rng)),
            Vec3::new(trans_noise.sample(&mut rng), trans_noise.sample(&mut rng), 0.0),
        );
        let m = RelativeMeasurement::new(PoseKey::new(0, i as u32), PoseKey::new(0, i as u32 + 1), exact.compose(&noise), kappa, tau);
        g.add_measurement(m).expect("odometry edge");
    }

    let mut visits: HashMap<(i32, i32), Vec<u32>> = HashMap::new();
    for (i, c) in cells.iter().enumerate() {
        let earlier = visits.entry(*c).or_default();
        if !earlier.is_empty() && rng.random::<f64>() < cfg.loop_prob {
            let j = earlier[rng.random_range(0..earlier.len())];
            let m = RelativeMeasurement::new(
                PoseKey::new(0, j),
                PoseKey::new(0, i as u32),
                truth[j as usize].between(&truth[i]),
                kappa,
                tau,
            );
            g.add_measurement(m).expect("loop edge");
        }
        earlier.push(i as u32);
    }
    g.ground_truth = Some(truth.into_iter().enumerate().map(|(i, p)| (PoseKey::new(0, i as u32), p)).collect::<Trajectory>());
    g
}
