use nalgebra::{Isometry3, Matrix3, Translation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// Rigid transform in SE(3).
///
/// When used as a camera pose it maps camera coordinates to world
/// coordinates (`p_w = R p_c + t`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose3 {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Builds a pose from a rotation vector (axis * angle, radians) and a translation.
    pub fn from_rotvec(rotvec: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::from_scaled_axis(rotvec), translation)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose3) -> Pose3 {
        Pose3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose3 {
        let inv = self.rotation.inverse();
        Pose3 {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Pose difference in tangent coordinates `[translation; rotation vector]`.
    pub fn log(&self) -> Vector6<f64> {
        let w = self.rotation.scaled_axis();
        Vector6::new(
            self.translation.x,
            self.translation.y,
            self.translation.z,
            w.x,
            w.y,
            w.z,
        )
    }

    /// Inverse of [`Pose3::log`].
    pub fn exp(v: &Vector6<f64>) -> Pose3 {
        Pose3::from_rotvec(Vector3::new(v[3], v[4], v[5]), Vector3::new(v[0], v[1], v[2]))
    }

    /// Left perturbation `p ↦ Exp(φ)·p + ρ` applied to the transform,
    /// with `delta = [ρ; φ]`. This is the update used by the optimizer.
    pub fn retract_left(&self, delta: &Vector6<f64>) -> Pose3 {
        let dr = UnitQuaternion::from_scaled_axis(Vector3::new(delta[3], delta[4], delta[5]));
        Pose3 {
            rotation: dr * self.rotation,
            translation: dr * self.translation + Vector3::new(delta[0], delta[1], delta[2]),
        }
    }

    /// Rotation angle of the transform, radians.
    pub fn angle(&self) -> f64 {
        self.rotation.angle()
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Pose3 {
        Pose3::new(iso.rotation, iso.translation.vector)
    }

    /// Rotation and translation distance to `other`.
    pub fn distance(&self, other: &Pose3) -> (f64, f64) {
        let d = self.inverse().compose(other);
        (d.translation.norm(), d.angle())
    }

    /// Renormalizes the quaternion.
    pub fn normalized(&self) -> Pose3 {
        Pose3 {
            rotation: UnitQuaternion::new_normalize(self.rotation.into_inner()),
            translation: self.translation,
        }
    }
}

impl std::ops::Mul for Pose3 {
    type Output = Pose3;
    fn mul(self, rhs: Pose3) -> Pose3 {
        self.compose(&rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_pose() -> impl Strategy<Value = Pose3> {
        (
            prop::array::uniform3(-3.0f64..3.0),
            prop::array::uniform3(-10.0f64..10.0),
        )
            .prop_map(|(r, t)| Pose3::from_rotvec(Vector3::from(r), Vector3::from(t)))
    }

    #[test]
    fn quaternion_stays_unit() {
        let p = Pose3::from_rotvec(Vector3::new(0.3, -1.2, 0.5), Vector3::new(1.0, 2.0, 3.0));
        assert!((p.rotation.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exp_log_round_trip() {
        let v = Vector6::new(0.1, -0.2, 0.3, 0.05, -0.4, 0.2);
        let back = Pose3::exp(&v).log();
        assert!((back - v).norm() < 1e-12);
    }

    #[test]
    fn retract_zero_is_identity() {
        let p = Pose3::from_rotvec(Vector3::new(0.3, 0.1, -0.2), Vector3::new(1.0, 2.0, -1.0));
        let q = p.retract_left(&Vector6::zeros());
        assert!(p.distance(&q).0 < 1e-15 && p.distance(&q).1 < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn inverse_compose_is_identity(p in arb_pose(), x in prop::array::uniform3(-5.0f64..5.0)) {
            let id = p.inverse().compose(&p);
            prop_assert!(id.translation.norm() < 1e-9);
            prop_assert!(id.angle() < 1e-9);
            let x = Vector3::from(x);
            prop_assert!((p.inverse().transform_point(&p.transform_point(&x)) - x).norm() < 1e-9);
        }

        #[test]
        fn composition_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            let (dt, dr) = l.distance(&r);
            prop_assert!(dt < 1e-9 && dr < 1e-9);
        }
    }
}
