//! Synthetic multi-robot missions: robots drive a street grid over a
//! labelled terrain, recording noisy odometry, place descriptors, keypoints
//! of nearby landmarks and a local mesh built from their drifting
//! odometry.

use super::protocol::RendezvousSchedule;
use super::{Descriptor, KeyframeData, MultiRobotError, DESCRIPTOR_DIM, KEYPOINT_DESCRIPTOR_BYTES};
use crate::geometry::{Pose, Rotation, TangentVector, Vec3};
use crate::mesh::{parse_observations, parse_ply, write_observations, write_ply, PointIndex, TriMesh};
use crate::pose_graph::{parse_g2o, serialize_g2o, MultiRobotPoseGraph, PoseKey, RelativeMeasurement, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub robots: u32,
    pub keyframes_per_robot: u32,
    /// Streets per side of the square grid.
    pub streets: u32,
    pub street_spacing: f64,
    /// Distance between consecutive keyframes (m).
    pub step: f64,
    pub landmarks: usize,
    /// Each keyframe sees its this many nearest landmarks.
    pub keypoints_per_keyframe: usize,
    pub keypoint_noise: f64,
    pub bit_flip_prob: f64,
    /// Width of the place kernels behind the global descriptors (m).
    pub place_sigma: f64,
    pub descriptor_noise: f64,
    /// Probability that a keyframe looks like somewhere else entirely.
    pub alias_prob: f64,
    pub sigma_rotation: f64,
    pub sigma_translation: f64,
    pub mesh_resolution: f64,
    /// Terrain within this distance of a robot's path ends up in its mesh.
    pub mesh_radius: f64,
    pub label_regions: u32,
    /// Fraction of mesh faces given a wrong label.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            robots: 3,
            keyframes_per_robot: 150,
            streets: 4,
            street_spacing: 6.0,
            step: 1.0,
            landmarks: 2000,
            keypoints_per_keyframe: 300,
            keypoint_noise: 0.01,
            bit_flip_prob: 0.02,
            place_sigma: 2.5,
            descriptor_noise: 0.02,
            alias_prob: 0.03,
            sigma_rotation: 0.003,
            sigma_translation: 0.02,
            mesh_resolution: 0.5,
            mesh_radius: 2.0,
            label_regions: 12,
            label_noise: 0.1,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), MultiRobotError> {
        let bad = |m: &str| Err(MultiRobotError::Config(m.into()));
        if self.robots == 0 || self.keyframes_per_robot < 2 || self.streets == 0 {
            return bad("need at least one robot, two keyframes and one street");
        }
        if !(self.street_spacing >= self.step && self.step > 0.0) {
            return bad("street spacing must be at least one step, and the step positive");
        }
        if self.keypoints_per_keyframe > self.landmarks || self.landmarks == 0 {
            return bad("keypoints per keyframe cannot exceed the landmark count");
        }
        if !(self.mesh_resolution > 0.0 && self.mesh_radius > 0.0 && self.place_sigma > 0.0) {
            return bad("mesh resolution, mesh radius and place sigma must be positive");
        }
        for p in [self.bit_flip_prob, self.alias_prob, self.label_noise] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        if self.sigma_rotation < 0.0 || self.sigma_translation < 0.0 || self.keypoint_noise < 0.0 || self.descriptor_noise < 0.0 {
            return bad("noise levels must be non-negative");
        }
        if self.label_regions == 0 {
            return bad("need at least one label region");
        }
        Ok(())
    }
}

/// Everything one robot records during its mission.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotData {
    pub id: u32,
    pub keyframes: Vec<KeyframeData>,
    /// Odometry chain of this robot only.
    pub odometry: MultiRobotPoseGraph,
    pub ground_truth: Trajectory,
    /// Mesh in the robot's odometry frame.
    pub mesh: TriMesh,
    /// The same faces at their true positions with true labels.
    pub truth_mesh: TriMesh,
    /// Keyframe to mesh vertex indices it observed.
    pub observations: BTreeMap<PoseKey, Vec<u32>>,
}

impl RobotData {
    pub fn keyframe_count(&self) -> usize {
        self.keyframes.len()
    }

    /// Dead-reckoned poses, starting at the identity.
    pub fn odometry_trajectory(&self) -> Trajectory {
        let mut t = Trajectory::new();
        let mut cur = Pose::identity();
        t.insert(PoseKey::new(self.id, 0), cur);
        let mut steps: Vec<&RelativeMeasurement> = self.odometry.measurements().iter().collect();
        steps.sort_by_key(|m| m.from.index);
        for m in steps {
            cur = cur.compose(&m.transform);
            t.insert(m.to, cur);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub robots: Vec<RobotData>,
    pub schedule: RendezvousSchedule,
}

impl Scenario {
    pub fn robot(&self, id: u32) -> Option<&RobotData> {
        self.robots.iter().find(|r| r.id == id)
    }

    pub fn ground_truth(&self) -> Trajectory {
        let mut t = Trajectory::new();
        for r in &self.robots {
            t.extend(r.ground_truth.clone());
        }
        t
    }
}

struct World {
    landmarks: Vec<Vec3>,
    landmark_descriptors: Vec<[u8; KEYPOINT_DESCRIPTOR_BYTES]>,
    index: PointIndex,
    words: Vec<Vec3>,
    mesh: TriMesh,
}

fn terrain_height(x: f64, y: f64) -> f64 {
    0.3 * (0.7 * x).sin() * (0.5 * y).cos() + 0.15 * (1.3 * y + 0.4 * x).sin()
}

fn build_world(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> World {
    let size = cfg.streets as f64 * cfg.street_spacing;
    let margin = cfg.mesh_radius + 1.0;
    let landmarks: Vec<Vec3> = (0..cfg.landmarks)
        .map(|_| {
            Vec3::new(rng.random_range(-margin..size + margin), rng.random_range(-margin..size + margin), rng.random_range(0.0..3.0))
        })
        .collect();
    let landmark_descriptors = (0..cfg.landmarks).map(|_| rng.random()).collect();
    let words = (0..DESCRIPTOR_DIM)
        .map(|_| Vec3::new(rng.random_range(-margin..size + margin), rng.random_range(-margin..size + margin), 0.0))
        .collect();

    let n = ((size + 2.0 * margin) / cfg.mesh_resolution).ceil() as u32;
    let mut mesh = TriMesh::grid(n, n, cfg.mesh_resolution);
    for v in &mut mesh.vertices {
        v.x -= margin;
        v.y -= margin;
        v.z = terrain_height(v.x, v.y);
    }
    let seeds: Vec<Vec3> = (0..cfg.label_regions)
        .map(|_| Vec3::new(rng.random_range(-margin..size + margin), rng.random_range(-margin..size + margin), 0.0))
        .collect();
    let labels = mesh
        .faces
        .iter()
        .map(|f| {
            let c = f.iter().fold(Vec3::zeros(), |s, &i| s + mesh.vertices[i as usize]) / 3.0;
            let c = Vec3::new(c.x, c.y, 0.0);
            (0..seeds.len()).min_by(|&a, &b| (seeds[a] - c).norm().total_cmp(&(seeds[b] - c).norm())).unwrap_or(0) as u32
        })
        .collect();
    mesh.labels = Some(labels);
    World { index: PointIndex::new(landmarks.clone()), landmarks, landmark_descriptors, words, mesh }
}

const HEADINGS: [(i32, i32); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

/// Ground-truth keyframes of a walk along the street grid at height 1 m.
fn street_walk(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<Pose> {
    let per_segment = ((cfg.street_spacing / cfg.step).round() as u32).max(1);
    let s = cfg.streets as i32;
    let mut cell = (rng.random_range(0..=s), rng.random_range(0..=s));
    let inside = |c: (i32, i32), h: usize| {
        let (dx, dy) = HEADINGS[h];
        (0..=s).contains(&(c.0 + dx)) && (0..=s).contains(&(c.1 + dy))
    };
    let mut heading = loop {
        let h = rng.random_range(0..4);
        if inside(cell, h) {
            break h;
        }
    };
    let mut poses = Vec::new();
    'walk: loop {
        for k in 0..per_segment {
            if poses.len() == cfg.keyframes_per_robot as usize {
                break 'walk;
            }
            let (dx, dy) = HEADINGS[heading];
            let f = k as f64 / per_segment as f64;
            let x = (cell.0 as f64 + dx as f64 * f) * cfg.street_spacing;
            let y = (cell.1 as f64 + dy as f64 * f) * cfg.street_spacing;
            poses.push(Pose::new(Rotation::about_z(heading as f64 * std::f64::consts::FRAC_PI_2), Vec3::new(x, y, 1.0)));
        }
        let (dx, dy) = HEADINGS[heading];
        cell = (cell.0 + dx, cell.1 + dy);
        let back = (heading + 2) % 4;
        let options: Vec<usize> = (0..4).filter(|&h| h != back && inside(cell, h)).collect();
        heading = if options.is_empty() { back } else { options[rng.random_range(0..options.len())] };
    }
    poses
}

fn place_descriptor(world: &World, p: &Vec3, cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Descriptor {
    let s2 = 2.0 * cfg.place_sigma * cfg.place_sigma;
    let v: Vec<f64> = world
        .words
        .iter()
        .map(|w| {
            let d2 = (w.x - p.x).powi(2) + (w.y - p.y).powi(2);
            (-d2 / s2).exp() + cfg.descriptor_noise * rng.random::<f64>()
        })
        .collect();
    Descriptor::new(v).unwrap_or_else(|_| Descriptor::new(vec![1.0; DESCRIPTOR_DIM]).expect("constant"))
}

fn observe(world: &World, at: &Pose, cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> (Vec<Vec3>, Vec<[u8; 32]>) {
    let noise = Normal::new(0.0, cfg.keypoint_noise).expect("sigma");
    let inv = at.inverse();
    let mut pts = Vec::new();
    let mut descs = Vec::new();
    for (i, _) in world.index.nearest(&at.translation, cfg.keypoints_per_keyframe) {
        let p = inv.transform_point(&world.landmarks[i]);
        pts.push(p + Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng)));
        let mut d = world.landmark_descriptors[i];
        for byte in &mut d {
            for bit in 0..8 {
                if rng.random_bool(cfg.bit_flip_prob) {
                    *byte ^= 1 << bit;
                }
            }
        }
        descs.push(d);
    }
    (pts, descs)
}

fn weight(sigma: f64) -> f64 {
    if sigma > 0.0 {
        1.0 / (sigma * sigma)
    } else {
        1.0
    }
}

fn make_robot(id: u32, world: &World, cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<RobotData, MultiRobotError> {
    let truth = street_walk(cfg, rng);
    let n = truth.len() as u32;
    let rot = Normal::new(0.0, cfg.sigma_rotation).expect("sigma");
    let trans = Normal::new(0.0, cfg.sigma_translation).expect("sigma");
    let mut odometry = MultiRobotPoseGraph::new();
    odometry.add_robot(id, n);
    let mut est = vec![Pose::identity()];
    for k in 0..n as usize - 1 {
        let xi = TangentVector::new(
            Vec3::new(rot.sample(rng), rot.sample(rng), rot.sample(rng)),
            Vec3::new(trans.sample(rng), trans.sample(rng), trans.sample(rng)),
        );
        let z = truth[k].between(&truth[k + 1]).boxplus(&xi);
        odometry.add_measurement(RelativeMeasurement::new(
            PoseKey::new(id, k as u32),
            PoseKey::new(id, k as u32 + 1),
            z,
            weight(cfg.sigma_rotation),
            weight(cfg.sigma_translation),
        ))?;
        est.push(est[k].compose(&z));
    }
    let ground_truth: Trajectory = truth.iter().enumerate().map(|(k, p)| (PoseKey::new(id, k as u32), *p)).collect();
    odometry.ground_truth = Some(ground_truth.clone());

    let size = cfg.streets as f64 * cfg.street_spacing;
    let mut keyframes = Vec::with_capacity(truth.len());
    for (k, pose) in truth.iter().enumerate() {
        // An aliased keyframe sees a random distant place as if it were
        // there. Any point has a corner at least 0.7·size away.
        let seen_from = if rng.random_bool(cfg.alias_prob) {
            loop {
                let p = Vec3::new(rng.random_range(0.0..size), rng.random_range(0.0..size), 1.0);
                if (p - pose.translation).norm() > (3.0 * cfg.street_spacing).min(0.6 * size) {
                    break Pose::new(Rotation::about_z(rng.random_range(-3.1..3.1)), p);
                }
            }
        } else {
            *pose
        };
        let descriptor = place_descriptor(world, &seen_from.translation, cfg, rng);
        let (keypoints, keypoint_descriptors) = observe(world, &seen_from, cfg, rng);
        keyframes.push(KeyframeData { key: PoseKey::new(id, k as u32), descriptor, keypoints, keypoint_descriptors });
    }

    // Terrain near the path, re-indexed, with each vertex attached to the
    // nearest keyframe and carried along by that keyframe's drift.
    let r2 = cfg.mesh_radius * cfg.mesh_radius;
    let planar = |a: &Vec3, b: &Vec3| (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
    let path = PointIndex::new(truth.iter().map(|p| Vec3::new(p.translation.x, p.translation.y, 0.0)).collect());
    let wm = &world.mesh;
    let keep: Vec<usize> = (0..wm.faces.len())
        .filter(|&f| {
            let c = wm.faces[f].iter().fold(Vec3::zeros(), |s, &i| s + wm.vertices[i as usize]) / 3.0;
            path.nearest(&Vec3::new(c.x, c.y, 0.0), 1).first().is_some_and(|&(_, d)| d * d <= r2)
        })
        .collect();
    let mut remap: BTreeMap<u32, u32> = BTreeMap::new();
    for &f in &keep {
        for &v in &wm.faces[f] {
            let next = remap.len() as u32;
            remap.entry(v).or_insert(next);
        }
    }
    let mut truth_vertices = vec![Vec3::zeros(); remap.len()];
    for (&old, &new) in &remap {
        truth_vertices[new as usize] = wm.vertices[old as usize];
    }
    let faces: Vec<[u32; 3]> = keep.iter().map(|&f| wm.faces[f].map(|v| remap[&v])).collect();
    let world_labels = wm.labels.as_ref().expect("labelled world");
    let truth_labels: Vec<u32> = keep.iter().map(|&f| world_labels[f]).collect();
    let noisy_labels = truth_labels
        .iter()
        .map(|&l| if rng.random_bool(cfg.label_noise) { rng.random_range(0..cfg.label_regions) } else { l })
        .collect();
    let drifted = truth_vertices
        .iter()
        .map(|v| {
            let (k, _) = path.nearest(&Vec3::new(v.x, v.y, 0.0), 1)[0];
            est[k].compose(&truth[k].inverse()).transform_point(v)
        })
        .collect();
    let truth_mesh = TriMesh::new(truth_vertices.clone(), faces.clone(), Some(truth_labels)).map_err(|e| MultiRobotError::Mesh { robot: id, source: e })?;
    let mesh = TriMesh::new(drifted, faces, Some(noisy_labels)).map_err(|e| MultiRobotError::Mesh { robot: id, source: e })?;
    let mut observations = BTreeMap::new();
    for (k, p) in truth.iter().enumerate() {
        let seen: Vec<u32> =
            (0..truth_vertices.len() as u32).filter(|&v| planar(&truth_vertices[v as usize], &p.translation) <= r2).collect();
        observations.insert(PoseKey::new(id, k as u32), seen);
    }
    Ok(RobotData { id, keyframes, odometry, ground_truth, mesh, truth_mesh, observations })
}

/// Builds a scenario; identical configurations give identical scenarios.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario, MultiRobotError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let world = build_world(cfg, &mut rng);
    let robots = (0..cfg.robots)
        .map(|r| make_robot(r, &world, cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1 + r as u64))))
        .collect::<Result<_, _>>()?;
    Ok(Scenario { robots, schedule: RendezvousSchedule::AlwaysConnected })
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> MultiRobotError {
    MultiRobotError::Bundle(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), MultiRobotError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_file(path: &Path) -> Result<String, MultiRobotError> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; KEYPOINT_DESCRIPTOR_BYTES]> {
    if s.len() != 2 * KEYPOINT_DESCRIPTOR_BYTES {
        return None;
    }
    let mut out = [0u8; KEYPOINT_DESCRIPTOR_BYTES];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

/// Writes the scenario as a directory: `schedule.csv` plus, per robot,
/// `robot_<id>/` with `odometry.g2o`, `keyframes.csv`, `keypoints.csv`,
/// `mesh.ply`, `truth_mesh.ply`, `observations.csv` and `groundtruth.tum`.
pub fn write_bundle(s: &Scenario, dir: &Path) -> Result<(), MultiRobotError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_file(&dir.join("schedule.csv"), &s.schedule.to_csv())?;
    for r in &s.robots {
        let d = dir.join(format!("robot_{}", r.id));
        std::fs::create_dir_all(&d).map_err(|e| io_err(&d, e))?;
        write_file(&d.join("odometry.g2o"), &serialize_g2o(&r.odometry, &r.odometry_trajectory())?)?;
        let mut kf = String::from("index");
        (0..DESCRIPTOR_DIM).for_each(|i| {
            let _ = write!(kf, ",d{i}");
        });
        kf.push('\n');
        let mut kp = String::from("keyframe_index,x,y,z,descriptor\n");
        for k in &r.keyframes {
            let _ = write!(kf, "{}", k.key.index);
            k.descriptor.as_slice().iter().for_each(|v| {
                let _ = write!(kf, ",{v:?}");
            });
            kf.push('\n');
            for (p, desc) in k.keypoints.iter().zip(&k.keypoint_descriptors) {
                let _ = writeln!(kp, "{},{:?},{:?},{:?},{}", k.key.index, p.x, p.y, p.z, hex(desc));
            }
        }
        write_file(&d.join("keyframes.csv"), &kf)?;
        write_file(&d.join("keypoints.csv"), &kp)?;
        write_file(&d.join("mesh.ply"), &write_ply(&r.mesh))?;
        write_file(&d.join("truth_mesh.ply"), &write_ply(&r.truth_mesh))?;
        write_file(&d.join("observations.csv"), &write_observations(&r.observations))?;
        let mut tum = String::new();
        for (k, p) in r.ground_truth.iter() {
            let q = p.rotation.to_quaternion();
            let v = p.translation;
            let _ = writeln!(tum, "{} {:?} {:?} {:?} {:?} {:?} {:?} {:?}", k.index, v.x, v.y, v.z, q[0], q[1], q[2], q[3]);
        }
        write_file(&d.join("groundtruth.tum"), &tum)?;
    }
    Ok(())
}

/// Reads a directory written by [`write_bundle`]. Robots are the
/// `robot_<id>` subdirectories.
pub fn read_bundle(dir: &Path) -> Result<Scenario, MultiRobotError> {
    let schedule = RendezvousSchedule::parse_csv(&read_file(&dir.join("schedule.csv"))?)?;
    let mut ids = BTreeSet::new();
    for e in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let e = e.map_err(|e| io_err(dir, e))?;
        if let Some(id) = e.file_name().to_str().and_then(|n| n.strip_prefix("robot_")).and_then(|n| n.parse::<u32>().ok()) {
            ids.insert(id);
        }
    }
    if ids.is_empty() {
        return Err(MultiRobotError::Bundle(format!("{}: no robot_<id> directories", dir.display())));
    }
    let mut robots = Vec::new();
    for id in ids {
        let d = dir.join(format!("robot_{id}"));
        let parse_err = |file: &str, line: usize, what: &str| MultiRobotError::Bundle(format!("{}/{file}:{line}: {what}", d.display()));
        let g = parse_g2o(&read_file(&d.join("odometry.g2o"))?)?;
        let mut odometry = g.graph;
        if odometry.robots().collect::<Vec<_>>() != vec![id] {
            return Err(parse_err("odometry.g2o", 0, "vertices must belong to the directory's robot"));
        }
        let mut keyframes: Vec<KeyframeData> = Vec::new();
        for (ln, line) in read_file(&d.join("keyframes.csv"))?.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let idx: u32 = f.first().and_then(|s| s.parse().ok()).ok_or_else(|| parse_err("keyframes.csv", ln + 1, "bad index"))?;
            let v = f[1..].iter().map(|s| s.parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(|_| parse_err("keyframes.csv", ln + 1, "bad value"))?;
            if v.len() != DESCRIPTOR_DIM || idx as usize != keyframes.len() {
                return Err(parse_err("keyframes.csv", ln + 1, "wrong descriptor length or index order"));
            }
            let descriptor = Descriptor::new(v).map_err(|_| parse_err("keyframes.csv", ln + 1, "invalid descriptor"))?;
            keyframes.push(KeyframeData { key: PoseKey::new(id, idx), descriptor, keypoints: vec![], keypoint_descriptors: vec![] });
        }
        for (ln, line) in read_file(&d.join("keypoints.csv"))?.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || parse_err("keypoints.csv", ln + 1, "expected keyframe_index,x,y,z,descriptor");
            if f.len() != 5 {
                return Err(bad());
            }
            let idx: usize = f[0].parse().map_err(|_| bad())?;
            let p = Vec3::new(f[1].parse().map_err(|_| bad())?, f[2].parse().map_err(|_| bad())?, f[3].parse().map_err(|_| bad())?);
            let desc = unhex(f[4]).ok_or_else(bad)?;
            let kf = keyframes.get_mut(idx).ok_or_else(bad)?;
            kf.keypoints.push(p);
            kf.keypoint_descriptors.push(desc);
        }
        let mesh = parse_ply(&read_file(&d.join("mesh.ply"))?).map_err(|e| MultiRobotError::Mesh { robot: id, source: e })?;
        let truth_mesh = parse_ply(&read_file(&d.join("truth_mesh.ply"))?).map_err(|e| MultiRobotError::Mesh { robot: id, source: e })?;
        let observations = parse_observations(&read_file(&d.join("observations.csv"))?, id).map_err(|e| MultiRobotError::Mesh { robot: id, source: e })?;
        let mut ground_truth = Trajectory::new();
        for (ln, line) in read_file(&d.join("groundtruth.tum"))?.lines().enumerate() {
            let v: Vec<f64> = line.split_whitespace().map(|s| s.parse::<f64>()).collect::<Result<_, _>>().map_err(|_| parse_err("groundtruth.tum", ln + 1, "bad number"))?;
            if v.len() != 8 {
                return Err(parse_err("groundtruth.tum", ln + 1, "expected 8 fields"));
            }
            let rot = Rotation::from_quaternion(v[4], v[5], v[6], v[7]);
            ground_truth.insert(PoseKey::new(id, v[0] as u32), Pose::new(rot, Vec3::new(v[1], v[2], v[3])));
        }
        if keyframes.len() != odometry.pose_count(id) as usize || ground_truth.len() != keyframes.len() {
            return Err(parse_err("keyframes.csv", 0, "keyframe, odometry and ground-truth counts differ"));
        }
        odometry.ground_truth = Some(ground_truth.clone());
        robots.push(RobotData { id, keyframes, odometry, ground_truth, mesh, truth_mesh, observations });
    }
    Ok(Scenario { robots, schedule })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig { keyframes_per_robot: 30, landmarks: 400, keypoints_per_keyframe: 40, ..Default::default() }
    }

    #[test]
    fn generation_is_deterministic_and_consistent() {
        let a = generate_scenario(&small()).unwrap();
        let b = generate_scenario(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.robots.len(), 3);
        for r in &a.robots {
            assert_eq!(r.keyframes.len(), 30);
            assert!(r.odometry.validate().is_ok());
            assert!(r.keyframes.iter().all(|k| k.validate().is_ok() && k.keypoints.len() == 40));
            assert!(!r.mesh.faces.is_empty());
            assert_eq!(r.mesh.faces, r.truth_mesh.faces);
            // Consecutive keyframes are one step apart.
            let t: Vec<&Pose> = r.ground_truth.iter().map(|(_, p)| p).collect();
            assert!(t.windows(2).all(|w| ((w[0].translation - w[1].translation).norm() - 1.0).abs() < 1e-9));
        }
    }

    #[test]
    fn noiseless_drift_free_mesh_matches_truth() {
        let cfg = ScenarioConfig { sigma_rotation: 0.0, sigma_translation: 0.0, ..small() };
        let s = generate_scenario(&cfg).unwrap();
        for r in &s.robots {
            // The odometry frame is the first keyframe's frame.
            let t0 = r.ground_truth.get(&PoseKey::new(r.id, 0)).unwrap().inverse();
            for (a, b) in r.mesh.vertices.iter().zip(&r.truth_mesh.vertices) {
                assert!((a - t0.transform_point(b)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn bundle_round_trip() {
        let s = generate_scenario(&small()).unwrap();
        let dir = std::env::temp_dir().join(format!("multislam-bundle-{}", std::process::id()));
        write_bundle(&s, &dir).unwrap();
        let back = read_bundle(&dir).unwrap();
        std::fs::remove_dir_all(&dir).ok();
        assert_eq!(back.schedule, s.schedule);
        for (a, b) in back.robots.iter().zip(&s.robots) {
            assert_eq!(a.keyframes, b.keyframes);
            assert_eq!(a.mesh, b.mesh);
            assert_eq!(a.truth_mesh, b.truth_mesh);
            assert_eq!(a.observations, b.observations);
            for (m, n) in a.odometry.measurements().iter().zip(b.odometry.measurements()) {
                assert!((m.transform.translation - n.transform.translation).norm() < 1e-9);
            }
            for ((_, p), (_, q)) in a.ground_truth.iter().zip(b.ground_truth.iter()) {
                assert!((p.translation - q.translation).norm() < 1e-12);
                assert!((p.rotation.matrix() - q.rotation.matrix()).norm() < 1e-9);
            }
        }
    }
}
