//! Point pair features, their quantization and the local coordinate frames
//! that turn a matched pair into a full rigid pose.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{skew, Pose, Vec3};

/// `(‖d‖, ∠(n1, d), ∠(n2, d), ∠(n1, n2))` with `d = p1 - p2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ppf {
    pub dist: f64,
    pub angle_nd1: f64,
    pub angle_nd2: f64,
    pub angle_nn: f64,
}

impl Ppf {
    pub fn as_array(&self) -> [f64; 4] {
        [self.dist, self.angle_nd1, self.angle_nd2, self.angle_nn]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuantizedPpf(pub [u32; 4]);

fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

pub fn compute_ppf(p1: &Vec3, n1: &Vec3, p2: &Vec3, n2: &Vec3) -> Result<Ppf> {
    let d = p1 - p2;
    let dist = d.norm();
    if dist < 1e-12 {
        return Err(Error::CoincidentPoints);
    }
    Ok(Ppf {
        dist,
        angle_nd1: angle_between(n1, &d),
        angle_nd2: angle_between(n2, &d),
        angle_nn: angle_between(n1, n2),
    })
}

/// Bin widths for the four feature components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    pub dist_step: f64,
    pub angle_step: f64,
    /// Upper end of the distance domain; when set, a distance equal to it
    /// falls in the last bin instead of opening a new one.
    #[serde(default)]
    pub max_dist: Option<f64>,
}

impl Quantizer {
    pub fn new(dist_step: f64, angle_step: f64) -> Result<Self> {
        if !(dist_step > 0.0 && angle_step > 0.0 && angle_step <= PI) {
            return Err(Error::InvalidArgument(format!(
                "quantization steps must be positive (dist {dist_step}, angle {angle_step})"
            )));
        }
        Ok(Self {
            dist_step,
            angle_step,
            max_dist: None,
        })
    }

    pub fn with_max_dist(mut self, max_dist: f64) -> Self {
        self.max_dist = Some(max_dist);
        self
    }

    /// Number of bins covering `[0, π]`; an exact divisor of π is not
    /// rounded up by floating-point noise.
    pub fn n_angle_bins(&self) -> u32 {
        bins_covering(PI / self.angle_step)
    }

    pub fn n_dist_bins(&self) -> Option<u32> {
        self.max_dist.map(|m| bins_covering(m / self.dist_step).max(1))
    }

    /// Un-floored bin coordinates.
    pub fn continuous(&self, f: &Ppf) -> [f64; 4] {
        [
            f.dist / self.dist_step,
            f.angle_nd1 / self.angle_step,
            f.angle_nd2 / self.angle_step,
            f.angle_nn / self.angle_step,
        ]
    }

    pub fn quantize(&self, f: &Ppf) -> QuantizedPpf {
        let top = self.n_angle_bins() - 1;
        let dist_top = self.n_dist_bins().map_or(u32::MAX, |n| n - 1);
        let c = self.continuous(f);
        QuantizedPpf([
            (c[0].floor().max(0.0) as u32).min(dist_top),
            (c[1].floor().max(0.0) as u32).min(top),
            (c[2].floor().max(0.0) as u32).min(top),
            (c[3].floor().max(0.0) as u32).min(top),
        ])
    }
}

fn bins_covering(r: f64) -> u32 {
    if (r - r.round()).abs() < 1e-9 {
        r.round() as u32
    } else {
        r.ceil() as u32
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Rotation taking the unit vector `n` onto `+x`.
pub fn rotation_to_x(n: &Vec3) -> Matrix3<f64> {
    // R = I + [v]ₓ + [v]ₓ² / (1 + c) with v = n × x, c = n·x; stable unless
    // n is close to -x, where we first turn by π about z.
    let align = |n: &Vec3| -> Matrix3<f64> {
        let v = n.cross(&Vec3::x());
        let c = n.x;
        let k = skew(&v);
        Matrix3::identity() + k + k * k / (1.0 + c)
    };
    if n.x < -0.5 {
        let rz = Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        align(&(rz * n)) * rz
    } else {
        align(n)
    }
}

/// Local coordinate frame: moves `p` to the origin and turns `n` onto `+x`.
pub fn lcf(p: &Vec3, n: &Vec3) -> Pose {
    let r = rotation_to_x(n);
    Pose::new(r, -(r * p))
}

pub fn rot_x(alpha: f64) -> Matrix3<f64> {
    let (s, c) = alpha.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Angle in `(-π, π]` which, applied as a rotation about `+x` inside the
/// reference point's local frame, brings the paired point into the `y > 0`
/// half of the x–y plane.
pub fn compute_alpha(ref_p: &Vec3, ref_n: &Vec3, paired_p: &Vec3) -> Result<f64> {
    alpha_in_frame(&lcf(ref_p, ref_n), paired_p)
}

/// [`compute_alpha`] with the reference frame already built.
pub fn alpha_in_frame(frame: &Pose, paired_p: &Vec3) -> Result<f64> {
    let u = frame.apply(paired_p);
    if u.y * u.y + u.z * u.z < 1e-18 {
        return Err(Error::DegeneratePair);
    }
    let a = (-u.z).atan2(u.y);
    Ok(if a <= -PI { PI } else { a })
}

/// Model-to-scene pose from a matched reference pair and the rotation
/// `alpha` about the aligned normals: `LCF(s)⁻¹ ∘ Rx(α) ∘ LCF(m)`.
///
/// With `α_m`, `α_s` computed by [`compute_alpha`] on the model and scene
/// pairs, the aligning angle is `α_m - α_s`.
pub fn pose_from_correspondence(scene_p: &Vec3, scene_n: &Vec3, model_p: &Vec3, model_n: &Vec3, alpha: f64) -> Pose {
    let ls = lcf(scene_p, scene_n);
    let lm = lcf(model_p, model_n);
    ls.inverse()
        .compose(&Pose::new(rot_x(alpha), Vec3::zeros()))
        .compose(&lm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn ppf(a: [f64; 3], na: [f64; 3], b: [f64; 3], nb: [f64; 3]) -> [f64; 4] {
        compute_ppf(&a.into(), &na.into(), &b.into(), &nb.into())
            .unwrap()
            .as_array()
    }

    fn assert_close4(a: [f64; 4], b: [f64; 4]) {
        for k in 0..4 {
            assert!((a[k] - b[k]).abs() < 1e-15, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn feature_examples() {
        assert_close4(
            ppf([0., 0., 0.], [0., 0., 1.], [1., 0., 0.], [0., 0., 1.]),
            [1.0, FRAC_PI_2, FRAC_PI_2, 0.0],
        );
        assert_close4(
            ppf([0., 0., 0.], [0., 0., 1.], [0., 0., 1.], [1., 0., 0.]),
            [1.0, PI, FRAC_PI_2, FRAC_PI_2],
        );
        assert_close4(
            ppf([0., 0., 0.], [0., 0., 1.], [2., 0., 0.], [0., 0., -1.]),
            [2.0, FRAC_PI_2, FRAC_PI_2, PI],
        );
        assert!(matches!(
            compute_ppf(&Vec3::zeros(), &Vec3::z(), &Vec3::zeros(), &Vec3::z()),
            Err(Error::CoincidentPoints)
        ));
    }

    #[test]
    fn swapping_the_pair_swaps_the_normal_angles() {
        let (p1, n1) = (Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.0, 2.0, -1.0).normalize());
        let (p2, n2) = (Vec3::new(-0.4, 0.5, 0.0), Vec3::new(0.0, -1.0, 3.0).normalize());
        let a = compute_ppf(&p1, &n1, &p2, &n2).unwrap();
        let b = compute_ppf(&p2, &n2, &p1, &n1).unwrap();
        // b is built on -d: ∠(n, -d) = π - ∠(n, d)
        assert!((b.angle_nd1 - (PI - a.angle_nd2)).abs() < 1e-12);
        assert!((b.angle_nd2 - (PI - a.angle_nd1)).abs() < 1e-12);
        assert_eq!(a.dist, b.dist);
        assert!((a.angle_nn - b.angle_nn).abs() < 1e-15);
    }

    #[test]
    fn quantize_examples() {
        let q = Quantizer::new(0.4, PI / 6.0).unwrap();
        let zero = Ppf {
            dist: 0.0,
            angle_nd1: 0.0,
            angle_nd2: 0.0,
            angle_nn: 0.0,
        };
        assert_eq!(q.quantize(&zero), QuantizedPpf([0, 0, 0, 0]));
        let f = Ppf {
            dist: 1.0,
            angle_nd1: FRAC_PI_2,
            angle_nd2: FRAC_PI_2,
            angle_nn: 0.0,
        };
        assert_eq!(q.quantize(&f), QuantizedPpf([2, 3, 3, 0]));
        let top = Ppf { angle_nn: PI, ..f };
        assert_eq!(q.quantize(&top).0[3], 5);
        assert_eq!(Quantizer::new(1.0, PI / 15.0).unwrap().n_angle_bins(), 15);
        assert_eq!(Quantizer::new(1.0, 0.5).unwrap().n_angle_bins(), 7);
    }

    #[test]
    fn alpha_examples() {
        let a = compute_alpha(&Vec3::zeros(), &Vec3::x(), &Vec3::new(1.0, 1.0, 0.0)).unwrap();
        assert_eq!(a, 0.0);

        let paired = Vec3::new(1.0, 0.0, 1.0);
        let a = compute_alpha(&Vec3::zeros(), &Vec3::x(), &paired).unwrap();
        assert!((a.abs() - FRAC_PI_2).abs() < 1e-15);
        let moved = rot_x(a) * paired;
        assert!(moved.y > 0.0 && moved.z.abs() < 1e-9);
        assert_eq!(a, compute_alpha(&Vec3::zeros(), &Vec3::x(), &paired).unwrap());

        assert!(matches!(
            compute_alpha(&Vec3::zeros(), &Vec3::x(), &Vec3::new(3.0, 0.0, 0.0)),
            Err(Error::DegeneratePair)
        ));
        // -π is folded to π
        let a = compute_alpha(&Vec3::zeros(), &Vec3::x(), &Vec3::new(0.0, -1.0, 0.0)).unwrap();
        assert_eq!(a, PI);
    }

    #[test]
    fn rotation_to_x_handles_all_directions() {
        for n in [
            Vec3::x(),
            -Vec3::x(),
            Vec3::y(),
            Vec3::new(-1.0, 1e-9, 0.0).normalize(),
            Vec3::new(-0.6, 0.0, 0.8),
            Vec3::new(0.3, -0.4, 0.5).normalize(),
        ] {
            let r = rotation_to_x(&n);
            assert!((r * n - Vec3::x()).amax() < 1e-12, "{n:?}");
            assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn correspondence_examples() {
        let p = Vec3::new(0.3, -0.2, 0.1);
        let n = Vec3::new(0.2, 0.9, -0.3).normalize();
        let id = pose_from_correspondence(&p, &n, &p, &n, 0.0);
        assert!(id.max_abs_diff(&Pose::identity()) < 1e-12);

        let t = pose_from_correspondence(&Vec3::repeat(1.0), &Vec3::z(), &Vec3::zeros(), &Vec3::z(), 0.0);
        assert!(t.max_abs_diff(&Pose::from_translation(Vec3::repeat(1.0))) < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-15);
        assert!((wrap_angle(-5.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn unit() -> impl Strategy<Value = Vec3> {
            prop::array::uniform3(-1.0f64..1.0)
                .prop_filter("non-zero", |v| Vec3::from(*v).norm() > 0.1)
                .prop_map(|v| Vec3::from(v).normalize())
        }

        fn pose() -> impl Strategy<Value = Pose> {
            (prop::array::uniform3(-1.8f64..1.8), prop::array::uniform3(-5.0f64..5.0))
                .prop_map(|(w, t)| Pose::from_angle_axis(w.into(), t.into()))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]

            #[test]
            fn feature_is_rigid_invariant(
                p1 in prop::array::uniform3(-1.0f64..1.0), n1 in unit(),
                p2 in prop::array::uniform3(-1.0f64..1.0), n2 in unit(),
                t in pose(),
            ) {
                let (p1, p2) = (Vec3::from(p1), Vec3::from(p2));
                prop_assume!((p1 - p2).norm() > 1e-3);
                let a = compute_ppf(&p1, &n1, &p2, &n2).unwrap().as_array();
                let b = compute_ppf(&t.apply(&p1), &t.rotate(&n1), &t.apply(&p2), &t.rotate(&n2))
                    .unwrap().as_array();
                for k in 0..4 {
                    prop_assert!((a[k] - b[k]).abs() < 1e-9);
                }
            }

            #[test]
            fn matched_pair_recovers_pose(
                m in prop::array::uniform3(-1.0f64..1.0), nm in unit(),
                mi in prop::array::uniform3(-1.0f64..1.0),
                t in pose(),
            ) {
                let (m, mi) = (Vec3::from(m), Vec3::from(mi));
                let off_axis = (mi - m) - nm * nm.dot(&(mi - m));
                prop_assume!(off_axis.norm() > 1e-3);
                let s = t.apply(&m);
                let ns = t.rotate(&nm);
                let si = t.apply(&mi);
                let alpha_m = compute_alpha(&m, &nm, &mi).unwrap();
                let alpha_s = compute_alpha(&s, &ns, &si).unwrap();
                let pose = pose_from_correspondence(&s, &ns, &m, &nm, alpha_m - alpha_s);
                prop_assert!(pose.max_abs_diff(&t) < 1e-6);
                prop_assert!((pose.apply(&m) - s).amax() < 1e-9);
                prop_assert!((pose.rotate(&nm) - ns).amax() < 1e-9);
            }
        }
    }
}
