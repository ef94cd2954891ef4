use super::{GeometryError, Mat3, Vec3};
use nalgebra::Quaternion;

/// Rotations whose angle is closer than this to π have no unique logarithm.
pub(crate) const LOG_PI_TOLERANCE: f64 = 1e-9;

/// Skew-symmetric matrix `[v]×` such that `[v]× w = v × w`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Element of SO(3), stored as a 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Wraps a matrix that is already a rotation. No projection is done.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Self(m)
    }

    /// Nearest rotation in Frobenius norm (SVD projection with determinant
    /// correction).
    pub fn project(m: &Mat3) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let mut d = Mat3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Self(u * d * v_t)
    }

    pub fn about_z(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// SO(3) exponential map (Rodrigues).
    pub fn exp(omega: &Vec3) -> Self {
        let theta2 = omega.norm_squared();
        let k = hat(omega);
        let (a, b) = if theta2 < 1e-12 {
            (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
        } else {
            let theta = theta2.sqrt();
            (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
        };
        Self(Mat3::identity() + k * a + k * k * b)
    }

    /// SO(3) logarithm as an axis-angle vector.
    pub fn log(&self) -> Result<Vec3, GeometryError> {
        let r = &self.0;
        let w = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
        let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let sin = w.norm();
        let theta = sin.atan2(cos);
        if std::f64::consts::PI - theta <= LOG_PI_TOLERANCE {
            return Err(GeometryError::DegenerateLog { angle: theta, tolerance: LOG_PI_TOLERANCE });
        }
        if theta < 1e-6 {
            // sin θ / θ ≈ 1 − θ²/6
            return Ok(w * (1.0 + theta * theta / 6.0));
        }
        if theta < 3.0 {
            return Ok(w * (theta / sin));
        }
        // Near π the antisymmetric part vanishes; recover the axis from the
        // symmetric part instead and take the sign from `w`.
        let s = (r + r.transpose()) * 0.5 - Mat3::identity() * cos;
        let one_minus_cos = 1.0 - cos;
        let mut best = 0;
        for i in 1..3 {
            if s[(i, i)] > s[(best, best)] {
                best = i;
            }
        }
        let mut axis = s.column(best).into_owned() / one_minus_cos;
        axis /= axis.norm();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        Ok(axis * theta)
    }

    /// Rotation angle in `[0, π]`. Never fails.
    pub fn angle(&self) -> f64 {
        let r = &self.0;
        let w = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
        let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        w.norm().atan2(cos)
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Rotation {
        self.transpose()
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    /// ‖RᵀR − I‖_F.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Mat3::identity()).norm()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    /// Unit quaternion `(x, y, z, w)` with `w ≥ 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
        let mut c = [q.i, q.j, q.k, q.w];
        if c[3] < 0.0 {
            c.iter_mut().for_each(|x| *x = -*x);
        }
        c
    }

    /// Builds a rotation from a (not necessarily normalised) quaternion
    /// `(x, y, z, w)`.
    pub fn from_quaternion(x: f64, y: f64, z: f64, w: f64) -> Self {
        let q = nalgebra::UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
        Self(*q.to_rotation_matrix().matrix())
    }

    /// Yaw angle of the rotation about z (exact for planar rotations).
    pub fn yaw(&self) -> f64 {
        self.0[(1, 0)].atan2(self.0[(0, 0)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn exp_log_small_and_large_angles() {
        for &theta in &[0.0, 1e-9, 1e-4, 0.3, 1.5, 2.9, 3.05, PI - 1e-5] {
            let axis = Vec3::new(0.3, -0.5, 0.8).normalize();
            let r = Rotation::exp(&(axis * theta));
            assert!(r.orthonormality_error() < 1e-12);
            let back = r.log().unwrap();
            assert!((back - axis * theta).norm() < 1e-7, "theta {theta}: {back:?}");
        }
    }

    #[test]
    fn log_at_pi_is_an_error() {
        let r = Rotation::about_z(PI);
        assert!(matches!(r.log(), Err(GeometryError::DegenerateLog { .. })));
    }

    #[test]
    fn quaternion_round_trip() {
        let r = Rotation::exp(&Vec3::new(0.4, 1.1, -0.7));
        let q = r.to_quaternion();
        let back = Rotation::from_quaternion(q[0], q[1], q[2], q[3]);
        assert!((back.matrix() - r.matrix()).norm() < 1e-14);
    }

    #[test]
    fn projection_fixes_reflections() {
        let mut m = *Rotation::exp(&Vec3::new(0.1, 0.2, 0.3)).matrix();
        m.set_column(2, &(-m.column(2)));
        let r = Rotation::project(&m);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }
}
