use super::LiftedEstimate;
use crate::geometry::{Mat3, Pose, Rotation, Vec3};
use crate::pose_graph::Trajectory;
use nalgebra::{DMatrix, SymmetricEigen};

#[derive(Debug, Clone, PartialEq)]
pub struct RoundedSolution {
    pub trajectory: Trajectory,
    /// Top three singular values of the stacked `Y` blocks, descending.
    pub singular_values: [f64; 3],
    /// The third singular value is negligible next to the first; the
    /// projection is still returned.
    pub rank_collapse: bool,
}

/// Projects a lifted estimate back to SE(3).
///
/// The dominant 3-dimensional subspace `U` of all `Y` blocks is found from
/// `Σ Y_i Y_iᵀ`; each `Uᵀ Y_i` is mapped to its nearest rotation and
/// translations become `Uᵀ p_i`. `U` is reflected if most `Uᵀ Y_i` have
/// negative determinant. The first pose of the first robot is moved to the
/// identity.
pub fn round_solution(lifted: &LiftedEstimate) -> RoundedSolution {
    let r = lifted.rank;
    let mut gram = DMatrix::<f64>::zeros(r, r);
    for l in lifted.poses.values() {
        gram += &l.y * l.y.transpose();
    }
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut u = DMatrix::<f64>::zeros(r, 3);
    let mut sv = [0.0; 3];
    for (c, &k) in order.iter().take(3).enumerate() {
        u.set_column(c, &eig.eigenvectors.column(k));
        sv[c] = eig.eigenvalues[k].max(0.0).sqrt();
    }
    let rank_collapse = !(sv[2] > 1e-8 * sv[0]);

    let factor = |y: &DMatrix<f64>, u: &DMatrix<f64>| -> Mat3 { (u.transpose() * y).fixed_view::<3, 3>(0, 0).into_owned() };
    let negative = lifted.poses.values().filter(|l| factor(&l.y, &u).determinant() < 0.0).count();
    if 2 * negative > lifted.poses.len() {
        let flipped = -u.column(2);
        u.set_column(2, &flipped);
    }

    let mut trajectory: Trajectory = lifted
        .poses
        .iter()
        .map(|(k, l)| {
            let t = u.transpose() * &l.p;
            (*k, Pose::new(Rotation::project(&factor(&l.y, &u)), Vec3::new(t[0], t[1], t[2])))
        })
        .collect();
    if let Some(anchor) = trajectory.poses.values().next().map(Pose::inverse) {
        trajectory = trajectory.transformed(&anchor);
    }
    RoundedSolution { trajectory, singular_values: sv, rank_collapse }
}
