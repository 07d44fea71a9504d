//! Rigid transforms in SE(3) and the angle-axis exchange format.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::Vec3;

/// A rigid transform `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Rodrigues rotation of `w` (axis scaled by angle) followed by translation `t`.
    pub fn from_angle_axis(w: Vec3, t: Vec3) -> Self {
        Self::new(*Rotation3::new(w).matrix(), t)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, t: Vec3) -> Self {
        Self::new(*q.to_rotation_matrix().matrix(), t)
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    /// Rotates a direction; translation is ignored.
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self.compose(b).apply(x) == self.apply(b.apply(x))`.
    pub fn compose(&self, b: &Pose) -> Pose {
        Pose::new(
            self.rotation * b.rotation,
            self.rotation * b.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    pub fn angle_axis(&self) -> AngleAxis {
        AngleAxis(Rotation3::from_matrix_unchecked(self.rotation).scaled_axis())
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    /// Geodesic rotation angle between two poses, in radians.
    pub fn rotation_distance(&self, other: &Pose) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn translation_distance(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Row-major 3x4 `[R | t]`.
    pub fn to_rows(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn from_rows(m: &[f64; 12]) -> Pose {
        Pose::new(
            Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]),
            Vec3::new(m[3], m[7], m[11]),
        )
    }

    /// Max deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        e.max((self.rotation.determinant() - 1.0).abs())
    }

    /// Re-projects the rotation onto SO(3) (after long chains of updates).
    pub fn renormalized(&self) -> Pose {
        let q = self.quaternion();
        Pose::from_quaternion(&q, self.translation)
    }

    /// Largest absolute entry difference over the 12 parameters.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        self.to_rows()
            .iter()
            .zip(other.to_rows().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Exponential-map increment: left multiplication by `exp(δ)`, with the
/// rotation part `δw` as a scaled axis.
pub fn exp_se3(dw: &Vec3, dt: &Vec3) -> Pose {
    Pose::from_angle_axis(*dw, *dt)
}

/// Rotation vector `w`, with angle `‖w‖`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleAxis(pub Vec3);

impl AngleAxis {
    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn to_rotation(&self) -> Matrix3<f64> {
        *Rotation3::new(self.0).matrix()
    }
}

/// Serde adapter: a pose as 12 row-major numbers.
pub mod rows {
    use super::Pose;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &Pose, s: S) -> Result<S::Ok, S::Error> {
        p.to_rows().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Pose, D::Error> {
        let m = <[f64; 12]>::deserialize(d)?;
        Ok(Pose::from_rows(&m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rz(a: f64) -> Pose {
        Pose::from_angle_axis(Vec3::new(0.0, 0.0, a), Vec3::zeros())
    }

    fn close(a: &Vec3, b: &Vec3, tol: f64) -> bool {
        (a - b).amax() < tol
    }

    #[test]
    fn apply_examples() {
        let x = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(Pose::identity().apply(&x), x);
        let t = Pose::from_translation(Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(t.apply(&Vec3::zeros()), Vec3::new(0.0, 0.0, 1.0));
        assert!(close(
            &rz(FRAC_PI_2).apply(&Vec3::x()),
            &Vec3::new(0.0, 1.0, 0.0),
            1e-15
        ));
    }

    #[test]
    fn compose_examples() {
        let p = Pose::from_angle_axis(Vec3::new(0.3, -0.2, 0.9), Vec3::new(1.0, -2.0, 0.5));
        assert!(Pose::identity().compose(&p).max_abs_diff(&p) < 1e-15);
        assert!(p.compose(&p.inverse()).max_abs_diff(&Pose::identity()) < 1e-9);
        let r = rz(FRAC_PI_2).compose(&rz(FRAC_PI_2));
        assert!(close(&r.apply(&Vec3::x()), &Vec3::new(-1.0, 0.0, 0.0), 1e-15));
    }

    #[test]
    fn angle_axis_examples() {
        assert_eq!(
            Pose::from_angle_axis(Vec3::zeros(), Vec3::zeros()).rotation,
            Matrix3::identity()
        );
        let p = Pose::from_angle_axis(Vec3::new(0.0, 0.0, FRAC_PI_2), Vec3::zeros());
        assert!(close(&p.apply(&Vec3::x()), &Vec3::y(), 1e-15));
        let p = Pose::from_angle_axis(Vec3::new(PI, 0.0, 0.0), Vec3::zeros());
        assert!(close(&p.apply(&Vec3::y()), &-Vec3::y(), 1e-15));
    }

    #[test]
    fn rows_round_trip() {
        let p = Pose::from_angle_axis(Vec3::new(0.1, 0.2, 0.3), Vec3::new(4.0, 5.0, 6.0));
        assert_eq!(Pose::from_rows(&p.to_rows()), p);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pose() -> impl Strategy<Value = Pose> {
            (
                prop::array::uniform3(-1.8f64..1.8),
                prop::array::uniform3(-10.0f64..10.0),
            )
                .prop_map(|(w, t)| Pose::from_angle_axis(Vec3::from(w), Vec3::from(t)))
        }

        proptest! {
            #[test]
            fn valid_rotation(p in pose()) {
                prop_assert!(p.orthonormality_error() < 1e-9);
                prop_assert!(p.compose(&p.inverse()).max_abs_diff(&Pose::identity()) < 1e-9);
            }

            #[test]
            fn composition_associative(a in pose(), b in pose(), c in pose(),
                                       x in prop::array::uniform3(-5.0f64..5.0)) {
                let x = Vec3::from(x);
                prop_assert!(a.compose(&b).compose(&c).max_abs_diff(&a.compose(&b.compose(&c))) < 1e-9);
                prop_assert!((a.compose(&b).apply(&x) - a.apply(&b.apply(&x))).amax() < 1e-9);
            }

            #[test]
            fn angle_axis_round_trip(w in prop::array::uniform3(-1.8f64..1.8)) {
                let w = Vec3::from(w);
                prop_assume!(w.norm() < PI - 1e-3);
                let back = Pose::from_angle_axis(w, Vec3::zeros()).angle_axis();
                prop_assert!((back.0 - w).amax() < 1e-8);
            }
        }
    }
}
