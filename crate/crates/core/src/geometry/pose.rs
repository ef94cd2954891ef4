use super::{GeometryError, Rotation, Vec3};

/// Rigid transform `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

/// Element of the pose tangent space in the decoupled convention (see the
/// module docs).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TangentVector {
    pub rotation: Vec3,
    pub translation: Vec3,
}

impl TangentVector {
    pub fn new(rotation: Vec3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn norm(&self) -> f64 {
        (self.rotation.norm_squared() + self.translation.norm_squared()).sqrt()
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Rotation::identity(), t)
    }

    /// Planar pose `(x, y, yaw)` lifted to 3D.
    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Self::new(Rotation::about_z(yaw), Vec3::new(x, y, 0.0))
    }

    /// `self ∘ other`: `(R_a R_b, R_a t_b + t_a)`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -rt.rotate(&self.translation) }
    }

    /// `self⁻¹ ∘ other`, the pose of `other` seen from `self`.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    pub fn exp(xi: &TangentVector) -> Pose {
        Pose::new(Rotation::exp(&xi.rotation), xi.translation)
    }

    pub fn log(&self) -> Result<TangentVector, GeometryError> {
        Ok(TangentVector::new(self.rotation.log()?, self.translation))
    }

    /// `self ⊞ ξ = self ∘ exp(ξ)`.
    pub fn boxplus(&self, xi: &TangentVector) -> Pose {
        self.compose(&Pose::exp(xi))
    }

    /// `self ⊟ base = log(base⁻¹ ∘ self)`.
    pub fn boxminus(&self, base: &Pose) -> Result<TangentVector, GeometryError> {
        base.between(self).log()
    }
}

/// `a ⊟ b` as a free function.
pub fn boxminus(a: &Pose, b: &Pose) -> Result<TangentVector, GeometryError> {
    a.boxminus(b)
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;
    use rand::Rng;

    pub fn random_rotation<R: Rng>(rng: &mut R, max_angle: f64) -> Rotation {
        let axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        Rotation::exp(&(axis * rng.random_range(0.0..max_angle)))
    }

    pub fn random_pose<R: Rng>(rng: &mut R) -> Pose {
        Pose::new(
            random_rotation(rng, std::f64::consts::PI - 0.1),
            Vec3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ),
        )
    }
}
