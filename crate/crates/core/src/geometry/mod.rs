//! Rigid-body math shared by every other module.
//!
//! Tangent-space convention: this crate uses the *decoupled* SE(3)
//! parameterisation everywhere. A tangent vector `ξ = (ω, ρ)` acts on a pose
//! `b` as
//!
//! ```text
//! b ⊞ ξ = (R_b · Exp(ω),  t_b + R_b · ρ)
//! a ⊟ b = (Log(R_bᵀ R_a),  R_bᵀ (t_a − t_b))
//! ```
//!
//! i.e. the rotation uses the SO(3) exponential and the translation is the
//! plain difference expressed in `b`'s frame. It is *not* the SE(3) twist
//! exponential. All Jacobians in `mesh` and `dpgo` are derived for this
//! convention, so [`Pose::boxplus`] / [`Pose::boxminus`] are the only entry
//! points other modules should use.

mod align;
mod pose;
mod rotation;

pub use align::{arun_align, ransac_align, Correspondences, RansacConfig, RansacOutcome};
pub use pose::{boxminus, Pose, TangentVector};
#[cfg(test)]
pub(crate) use pose::test_util;
pub use rotation::{hat, Rotation};

use thiserror::Error;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation logarithm is degenerate: angle {angle} is within {tolerance} of pi")]
    DegenerateLog { angle: f64, tolerance: f64 },
    #[error("correspondence lists differ in length ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },
    #[error("point configuration is rank deficient (singular values {singular_values:?})")]
    RankDeficient { singular_values: [f64; 3] },
}

/// Angle between two rotations, in `[0, π]`.
pub fn rotation_geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
    a.transpose().compose(b).angle()
}
