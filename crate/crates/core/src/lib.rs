pub mod dpgo;
pub mod geometry;
pub mod mesh;
pub mod multirobot;
pub mod par;
pub mod pcm;
pub mod pose_graph;
pub mod sparse;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
