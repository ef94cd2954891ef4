//! Helpers shared by the integration tests.
#![allow(dead_code)]

use multislam::geometry::{Pose, Rotation, Vec3};
use multislam::multirobot::{Descriptor, KeyframeData};
use multislam::pose_graph::PoseKey;
use rand::Rng;

fn random_pose(rng: &mut impl Rng, spread: f64) -> Pose {
    let w = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let t = Vec3::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread), rng.random_range(-spread..spread));
    Pose::new(Rotation::exp(&w), t)
}

fn view(key: PoseKey, points: Vec<Vec3>, descriptors: Vec<[u8; 32]>) -> KeyframeData {
    KeyframeData { key, descriptor: Descriptor::new(vec![1.0; 32]).unwrap(), keypoints: points, keypoint_descriptors: descriptors }
}

/// Two noiseless views of `shared` common landmarks, each with `unique`
/// landmarks of its own and `spurious` pairs whose descriptors agree but
/// whose positions are unrelated. Returns both keyframes and the true
/// `X_a⁻¹ X_b`.
pub fn planted_scene(rng: &mut impl Rng, shared: usize, unique: usize, spurious: usize) -> (KeyframeData, KeyframeData, Pose) {
    let (xa, xb) = (random_pose(rng, 2.0), random_pose(rng, 2.0));
    let landmark = |rng: &mut dyn rand::RngCore| {
        Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))
    };
    let (ia, ib) = (xa.inverse(), xb.inverse());
    let (mut pa, mut da, mut pb, mut db) = (vec![], vec![], vec![], vec![]);
    for _ in 0..shared {
        let l = landmark(rng);
        let d: [u8; 32] = rng.random();
        pa.push(ia.transform_point(&l));
        pb.push(ib.transform_point(&l));
        da.push(d);
        db.push(d);
    }
    for _ in 0..spurious {
        let d: [u8; 32] = rng.random();
        pa.push(ia.transform_point(&landmark(rng)));
        pb.push(ib.transform_point(&landmark(rng)));
        da.push(d);
        db.push(d);
    }
    for _ in 0..unique {
        pa.push(ia.transform_point(&landmark(rng)));
        da.push(rng.random());
        pb.push(ib.transform_point(&landmark(rng)));
        db.push(rng.random());
    }
    (view(PoseKey::new(0, 3), pa, da), view(PoseKey::new(1, 7), pb, db), xa.between(&xb))
}
