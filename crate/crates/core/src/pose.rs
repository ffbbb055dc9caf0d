//! Rigid transforms.
//!
//! A [`Pose`] maps points from one frame into another. Camera poses held by
//! the tracker, mapper and renderer are world-to-camera; trajectories stored
//! on disk follow the TUM convention (camera-to-world) and say so explicitly.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3, Vector6};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Builds a pose from raw quaternion components without renormalizing.
    ///
    /// Used by readers that need bit-exact round trips of stored poses.
    pub fn from_raw(q: [f64; 4], translation: [f64; 3]) -> Self {
        let [w, x, y, z] = q;
        Self {
            rotation: UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z)),
            translation: Vector3::from(translation),
        }
    }

    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*rotation);
        Self {
            rotation: UnitQuaternion::from_rotation_matrix(&rot),
            translation,
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    /// Camera center in world coordinates, for a world-to-camera pose.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// SE(3) exponential of a twist `(ω, v)`.
    pub fn exp(twist: &Vector6<f64>) -> Pose {
        let omega = Vector3::new(twist[0], twist[1], twist[2]);
        let v = Vector3::new(twist[3], twist[4], twist[5]);
        let theta = omega.norm();
        let wx = skew(&omega);
        let (a, b) = if theta < 1e-8 {
            (0.5 - theta * theta / 24.0, 1.0 / 6.0 - theta * theta / 120.0)
        } else {
            (
                (1.0 - theta.cos()) / (theta * theta),
                (theta - theta.sin()) / (theta * theta * theta),
            )
        };
        let left_jacobian = Matrix3::identity() + wx * a + wx * wx * b;
        Pose {
            rotation: UnitQuaternion::from_scaled_axis(omega),
            translation: left_jacobian * v,
        }
    }

    /// Left-multiplies by `exp(twist)`.
    pub fn perturbed(&self, twist: &Vector6<f64>) -> Pose {
        Pose::exp(twist).compose(self)
    }

    /// Rotation angle (radians) and translation norm of `self⁻¹ ∘ other`.
    pub fn distance_to(&self, other: &Pose) -> (f64, f64) {
        let delta = self.inverse().compose(other);
        (delta.rotation.angle(), delta.translation.norm())
    }

    /// Camera-to-world pose looking from `eye` toward `target` with `up`
    /// pointing roughly upward in the image (camera +y is image-down).
    pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Pose {
        let forward = (target - eye).normalize();
        let right = forward.cross(up).normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_columns(&[right, down, forward]);
        Pose::from_matrix(&rot, *eye)
    }
}

pub fn se3_compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn se3_inverse(a: &Pose) -> Pose {
    a.inverse()
}

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn pose_close(a: &Pose, b: &Pose, tol: f64) -> bool {
        let (r, t) = a.distance_to(b);
        r < tol && t < tol
    }

    #[test]
    fn identity_is_neutral() {
        let p = Pose::new(
            UnitQuaternion::from_euler_angles(0.1, -0.4, 1.2),
            Vector3::new(0.3, -2.0, 5.0),
        );
        let q = Pose::identity().compose(&p);
        assert_eq!(q, p);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let p = Pose::new(
            UnitQuaternion::from_euler_angles(0.7, 0.2, -2.1),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let id = p.compose(&p.inverse());
        assert!(id.translation.norm() < 1e-9);
        assert!(id.rotation.angle() < 1e-9);
    }

    #[test]
    fn quarter_turns_compose_to_half_turn() {
        let q = Pose::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2),
            Vector3::zeros(),
        );
        let h = q.compose(&q);
        assert!((h.rotation.angle() - std::f64::consts::PI).abs() < 1e-12);
        let p = h.transform_point(&Vector3::new(1.0, 0.0, 0.0));
        assert!((p - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let eye = Vector3::new(1.0, 2.0, 1.5);
        let target = Vector3::new(-1.0, 0.5, 0.7);
        let cam_to_world = Pose::look_at(&eye, &target, &Vector3::z());
        let world_to_cam = cam_to_world.inverse();
        let p = world_to_cam.transform_point(&target);
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12 && p.z > 0.0);
        // world up maps to image-up (negative camera y)
        let up = world_to_cam.rotation * Vector3::z();
        assert!(up.y < 0.0);
    }

    #[test]
    fn exp_of_small_twist_matches_first_order() {
        let twist = Vector6::new(1e-7, -2e-7, 3e-7, 1e-6, 0.0, -1e-6);
        let p = Vector3::new(0.5, -1.0, 2.0);
        let moved = Pose::exp(&twist).transform_point(&p);
        let omega = Vector3::new(twist[0], twist[1], twist[2]);
        let v = Vector3::new(twist[3], twist[4], twist[5]);
        let expected = p + omega.cross(&p) + v;
        assert!((moved - expected).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn group_laws_hold(
            a in prop::array::uniform3(-3.0f64..3.0),
            b in prop::array::uniform3(-3.0f64..3.0),
            ta in prop::array::uniform3(-5.0f64..5.0),
            tb in prop::array::uniform3(-5.0f64..5.0),
        ) {
            let pa = Pose::new(UnitQuaternion::from_scaled_axis(Vector3::from(a)), Vector3::from(ta));
            let pb = Pose::new(UnitQuaternion::from_scaled_axis(Vector3::from(b)), Vector3::from(tb));
            let pc = Pose::exp(&Vector6::new(0.3, -0.2, 0.1, 1.0, 2.0, -1.0));
            // associativity
            let left = pa.compose(&pb).compose(&pc);
            let right = pa.compose(&pb.compose(&pc));
            prop_assert!(pose_close(&left, &right, 1e-9));
            // inverse of a product
            let inv = pa.compose(&pb).inverse();
            let inv2 = pb.inverse().compose(&pa.inverse());
            prop_assert!(pose_close(&inv, &inv2, 1e-9));
            prop_assert!(pose_close(&pa.inverse().compose(&pa), &Pose::identity(), 1e-9));
            prop_assert!((pa.rotation.norm() - 1.0).abs() < 1e-6);
        }
    }
}
