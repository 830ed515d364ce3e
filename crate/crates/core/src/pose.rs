//! Rigid-body transforms for the object-centric representation.
//!
//! A [`Pose`] is a unit quaternion plus a translation. Every observation and
//! action in the insertion loop is expressed relative to the nut, which is
//! obtained with [`relative`]: `inverse(obj) ∘ tool`. Because any common
//! transform applied on the left of both poses cancels, the policy never sees
//! where the nut sits in the world or how the tool was grasped.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::Mul;

/// Unit quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Builds a quaternion and normalizes it.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }.normalized()
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = norm3(axis);
        if n == 0.0 || angle == 0.0 {
            return Quat::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    /// Rotation about the world z axis.
    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = (0.5 * yaw).sin_cos();
        Quat { w: c, x: 0.0, y: 0.0, z: s }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        Quat { w: self.w / n, x: self.x / n, y: self.y / n, z: self.z / n }
    }

    pub fn conjugate(self) -> Self {
        Quat { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn dot(&self, other: &Quat) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        // v' = v + 2w (u × v) + 2 u × (u × v), u = vector part
        let u = [self.x, self.y, self.z];
        let uv = cross(u, v);
        let uuv = cross(u, uv);
        [
            v[0] + 2.0 * (self.w * uv[0] + uuv[0]),
            v[1] + 2.0 * (self.w * uv[1] + uuv[1]),
            v[2] + 2.0 * (self.w * uv[2] + uuv[2]),
        ]
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let v = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        2.0 * v.atan2(self.w.abs())
    }

    /// Yaw of the ZYX Euler decomposition.
    pub fn yaw(&self) -> f64 {
        (2.0 * (self.w * self.z + self.x * self.y))
            .atan2(1.0 - 2.0 * (self.y * self.y + self.z * self.z))
    }

    /// Row-major 3×3 rotation matrix.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let Quat { w, x, y, z } = *self;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    /// Shortest-arc spherical interpolation; `s = 0` gives `self`.
    pub fn slerp(self, to: Quat, s: f64) -> Quat {
        let mut delta = self.conjugate() * to;
        if delta.w < 0.0 {
            delta = Quat { w: -delta.w, x: -delta.x, y: -delta.y, z: -delta.z };
        }
        let axis = [delta.x, delta.y, delta.z];
        (self * Quat::from_axis_angle(axis, s * delta.angle())).normalized()
    }
}

impl Mul for Quat {
    type Output = Quat;

    fn mul(self, r: Quat) -> Quat {
        Quat {
            w: self.w * r.w - self.x * r.x - self.y * r.y - self.z * r.z,
            x: self.w * r.x + self.x * r.w + self.y * r.z - self.z * r.y,
            y: self.w * r.y - self.x * r.z + self.y * r.w + self.z * r.x,
            z: self.w * r.z + self.x * r.y - self.y * r.x + self.z * r.w,
        }
    }
}

/// Rigid transform in SE(3): rotate, then translate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Quat,
    /// Meters.
    pub translation: [f64; 3],
}

impl Default for Pose {
    fn default() -> Self {
        Pose::IDENTITY
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose { rotation: Quat::IDENTITY, translation: [0.0; 3] };

    pub fn new(rotation: Quat, translation: [f64; 3]) -> Self {
        Pose { rotation: rotation.normalized(), translation }
    }

    pub fn from_translation(translation: [f64; 3]) -> Self {
        Pose { rotation: Quat::IDENTITY, translation }
    }

    /// `[qw, qx, qy, qz, tx, ty, tz]`, the on-disk layout.
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.rotation;
        let t = self.translation;
        [q.w, q.x, q.y, q.z, t[0], t[1], t[2]]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Pose::new(Quat { w: a[0], x: a[1], y: a[2], z: a[3] }, [a[4], a[5], a[6]])
    }

    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        add3(self.rotation.rotate(p), self.translation)
    }

    /// Homogeneous 4×4 matrix, row-major.
    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let r = self.rotation.to_matrix();
        let t = self.translation;
        [
            [r[0][0], r[0][1], r[0][2], t[0]],
            [r[1][0], r[1][1], r[1][2], t[1]],
            [r[2][0], r[2][1], r[2][2], t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }
}

/// `a ∘ b`: apply `b` first, then `a`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        rotation: (a.rotation * b.rotation).normalized(),
        translation: a.transform_point(b.translation),
    }
}

pub fn inverse(p: &Pose) -> Pose {
    let q = p.rotation.conjugate();
    let t = q.rotate(p.translation);
    Pose { rotation: q, translation: [-t[0], -t[1], -t[2]] }
}

/// Pose of the tool expressed in the object frame, `inverse(obj) ∘ tool`.
pub fn relative(tool_cam: &Pose, obj_cam: &Pose) -> Pose {
    compose(&inverse(obj_cam), tool_cam)
}

/// Geodesic angle between two rotations, `2·acos(|⟨q1, q2⟩|)`.
///
/// Evaluated through `atan2` on the relative rotation, which keeps full
/// precision near zero where `acos` loses about half the digits.
pub fn rotation_distance(a: &Pose, b: &Pose) -> f64 {
    (a.rotation.conjugate() * b.rotation).angle()
}

pub fn translation_distance(a: &Pose, b: &Pose) -> f64 {
    norm3(sub3(a.translation, b.translation))
}

/// Per-step bound used for paths and action clamping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepBound {
    /// Meters.
    pub pos: f64,
    /// Radians.
    pub rot: f64,
}

/// Sub-goals from `from` (exclusive) to `to` (inclusive).
///
/// The number of sub-goals is `ceil(max(d_pos / pos, d_rot / rot))`, at least
/// one, and the last element is `to` itself.
pub fn interpolate_path(from: &Pose, to: &Pose, max_step: StepBound) -> Vec<Pose> {
    assert!(
        max_step.pos > 0.0 && max_step.rot > 0.0,
        "interpolation step bounds must be strictly positive"
    );
    let ratio = (translation_distance(from, to) / max_step.pos)
        .max(rotation_distance(from, to) / max_step.rot);
    // Absorb round-off so that an exact multiple of the step is not split again.
    let n = ((ratio - 1e-9).ceil() as usize).max(1);
    let mut path = Vec::with_capacity(n);
    for k in 1..n {
        let s = k as f64 / n as f64;
        let t = [
            from.translation[0] + s * (to.translation[0] - from.translation[0]),
            from.translation[1] + s * (to.translation[1] - from.translation[1]),
            from.translation[2] + s * (to.translation[2] - from.translation[2]),
        ];
        path.push(Pose { rotation: from.rotation.slerp(to.rotation, s), translation: t });
    }
    path.push(*to);
    path
}

/// Adds uniform translation noise in `±pos_noise` per axis and a uniform yaw
/// offset in `±yaw_noise` about the z axis. Roll and pitch are untouched.
pub fn perturb<R: Rng + ?Sized>(p: &Pose, pos_noise: f64, yaw_noise: f64, rng: &mut R) -> Pose {
    let offset = [
        symmetric_uniform(rng, pos_noise),
        symmetric_uniform(rng, pos_noise),
        symmetric_uniform(rng, pos_noise),
    ];
    let dyaw = symmetric_uniform(rng, yaw_noise);
    Pose {
        rotation: (Quat::from_yaw(dyaw) * p.rotation).normalized(),
        translation: add3(p.translation, offset),
    }
}

/// Uniform sample in `[-bound, bound]`; exactly zero when `bound == 0`.
pub fn symmetric_uniform<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> f64 {
    let u: f64 = rng.random();
    bound * (2.0 * u - 1.0)
}

/// Four-degree-of-freedom pose: position plus yaw about the z axis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanarPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Radians in `(-π, π]`.
    pub yaw: f64,
}

impl PlanarPose {
    pub const ZERO: PlanarPose = PlanarPose { x: 0.0, y: 0.0, z: 0.0, yaw: 0.0 };

    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        PlanarPose { x, y, z, yaw }
    }

    pub fn to_pose(&self) -> Pose {
        Pose { rotation: Quat::from_yaw(self.yaw), translation: [self.x, self.y, self.z] }
    }

    /// Projects onto x, y, z and yaw. Lossless when roll = pitch = 0.
    pub fn from_pose(p: &Pose) -> Self {
        let t = p.translation;
        PlanarPose { x: t[0], y: t[1], z: t[2], yaw: p.rotation.yaw() }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.z, self.yaw]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        PlanarPose { x: a[0], y: a[1], z: a[2], yaw: a[3] }
    }

    pub fn xy_norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Component-wise clamp to a step bound (position per axis, yaw).
    pub fn clamped(&self, bound: StepBound) -> Self {
        PlanarPose {
            x: self.x.clamp(-bound.pos, bound.pos),
            y: self.y.clamp(-bound.pos, bound.pos),
            z: self.z.clamp(-bound.pos, bound.pos),
            yaw: self.yaw.clamp(-bound.rot, bound.rot),
        }
    }
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Yaw error modulo the receptacle's rotational symmetry, in `(-π/n, π/n]`.
pub fn symmetric_yaw_error(yaw: f64, symmetry_order: u32) -> f64 {
    let period = 2.0 * PI / symmetry_order.max(1) as f64;
    let mut r = yaw.rem_euclid(period);
    if r > 0.5 * period {
        r -= period;
    }
    r
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn add3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm3(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, Strategy};
    use proptest::prelude::prop;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type Mat4 = [[f64; 4]; 4];

    fn matmul(a: &Mat4, b: &Mat4) -> Mat4 {
        let mut c = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        c
    }

    // Rigid inverse from the matrix blocks: [Rᵀ, -Rᵀt].
    fn matinv_rigid(m: &Mat4) -> Mat4 {
        let mut r = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = m[j][i];
            }
        }
        for i in 0..3 {
            r[i][3] = -(0..3).map(|k| m[k][i] * m[k][3]).sum::<f64>();
        }
        r[3][3] = 1.0;
        r
    }

    fn assert_mat_close(a: &Mat4, b: &Mat4, tol: f64) {
        for i in 0..4 {
            for j in 0..4 {
                assert!((a[i][j] - b[i][j]).abs() < tol, "{a:?} vs {b:?}");
            }
        }
    }

    fn assert_pose_close(a: &Pose, b: &Pose, tol: f64) {
        assert!(rotation_distance(a, b) < tol, "rotation {a:?} vs {b:?}");
        assert!(translation_distance(a, b) < tol, "translation {a:?} vs {b:?}");
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let q = Quat::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        Pose::new(q, [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
    }

    #[test]
    fn identity_is_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_pose(&mut rng);
        assert_pose_close(&compose(&Pose::IDENTITY, &p), &p, 1e-12);
        assert_pose_close(&compose(&p, &Pose::IDENTITY), &p, 1e-12);
        assert_pose_close(&compose(&p, &inverse(&p)), &Pose::IDENTITY, 1e-12);
    }

    #[test]
    fn yaw_composition_matches_matrix_product() {
        let a = PlanarPose::new(0.0, 0.0, 0.0, 30f64.to_radians()).to_pose();
        let b = PlanarPose::new(0.0, 0.0, 0.0, 60f64.to_radians()).to_pose();
        let expected = matmul(&a.to_matrix(), &b.to_matrix());
        let got = compose(&a, &b);
        assert_mat_close(&got.to_matrix(), &expected, 1e-12);
        assert!((PlanarPose::from_pose(&got).yaw - 90f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn inverse_cases() {
        assert_eq!(inverse(&Pose::IDENTITY).to_array(), Pose::IDENTITY.to_array());
        let t = inverse(&Pose::from_translation([1.0, 2.0, 3.0]));
        assert_eq!(t.translation, [-1.0, -2.0, -3.0]);
        assert_eq!(t.rotation, Quat::IDENTITY);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            assert_mat_close(&inverse(&p).to_matrix(), &matinv_rigid(&p.to_matrix()), 1e-12);
        }
    }

    #[test]
    fn relative_of_rotated_object() {
        // Object at yaw 90° and (1, 0, 0); tool at identity.
        // Oracle: inv(M_obj) · M_tool = [Rz(-90°), -Rz(-90°)·(1,0,0)] = yaw -90°, t = (0, 1, 0).
        let obj = PlanarPose::new(1.0, 0.0, 0.0, 90f64.to_radians()).to_pose();
        let tool = Pose::IDENTITY;
        let oracle = matmul(&matinv_rigid(&obj.to_matrix()), &tool.to_matrix());
        let rel = relative(&tool, &obj);
        assert_mat_close(&rel.to_matrix(), &oracle, 1e-12);
        let planar = PlanarPose::from_pose(&rel);
        assert!((planar.x - 0.0).abs() < 1e-12);
        assert!((planar.y - 1.0).abs() < 1e-12);
        assert!((planar.yaw + 90f64.to_radians()).abs() < 1e-12);

        assert_pose_close(&relative(&obj, &obj), &Pose::IDENTITY, 1e-12);
    }

    #[test]
    fn translation_path_spacing() {
        let from = Pose::IDENTITY;
        let to = Pose::from_translation([0.05, 0.0, 0.0]);
        let path = interpolate_path(&from, &to, StepBound { pos: 0.01, rot: 0.1 });
        assert_eq!(path.len(), 5);
        let mut prev = from;
        for p in &path {
            assert!((translation_distance(&prev, p) - 0.01).abs() < 1e-12);
            prev = *p;
        }
        assert_eq!(*path.last().unwrap(), to);
    }

    #[test]
    fn rotation_path_count() {
        let to = PlanarPose::new(0.0, 0.0, 0.0, 90f64.to_radians()).to_pose();
        let path = interpolate_path(&Pose::IDENTITY, &to, StepBound { pos: 0.01, rot: 10f64.to_radians() });
        assert_eq!(path.len(), 9);
        let mut prev = Pose::IDENTITY;
        for p in &path {
            assert!((rotation_distance(&prev, p) - 10f64.to_radians()).abs() < 1e-9);
            prev = *p;
        }
    }

    #[test]
    fn degenerate_path_is_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_pose(&mut rng);
        assert_eq!(interpolate_path(&p, &p, StepBound { pos: 0.01, rot: 0.1 }), vec![p]);
    }

    #[test]
    fn zero_noise_perturb_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_pose(&mut rng);
        let q = perturb(&p, 0.0, 0.0, &mut rng);
        assert_eq!(q.translation, p.translation);
        assert!(rotation_distance(&p, &q) < 1e-15);
    }

    #[test]
    fn perturb_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = PlanarPose::new(0.1, -0.2, 0.3, 0.4);
        let pos = 0.002;
        let yaw = 10f64.to_radians();
        for _ in 0..10_000 {
            let q = PlanarPose::from_pose(&perturb(&base.to_pose(), pos, yaw, &mut rng));
            assert!((q.x - base.x).abs() <= pos + 1e-15);
            assert!((q.y - base.y).abs() <= pos + 1e-15);
            assert!((q.z - base.z).abs() <= pos + 1e-15);
            assert!(wrap_angle(q.yaw - base.yaw).abs() <= yaw + 1e-12);
        }
    }

    #[test]
    fn perturb_keeps_roll_and_pitch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tilted = Pose::new(Quat::from_axis_angle([1.0, 0.0, 0.0], 0.3), [0.0; 3]);
        let q = perturb(&tilted, 0.0, 0.5, &mut rng);
        // The z axis of the body frame keeps its angle to the world z axis.
        let before = tilted.rotation.rotate([0.0, 0.0, 1.0])[2];
        let after = q.rotation.rotate([0.0, 0.0, 1.0])[2];
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn perturb_mean_offset_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000;
        let mut sum = [0.0; 3];
        for _ in 0..n {
            let q = perturb(&Pose::IDENTITY, 0.002, 0.0, &mut rng);
            for (s, t) in sum.iter_mut().zip(q.translation) {
                *s += t;
            }
        }
        for s in sum {
            assert!((s / n as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn symmetric_yaw_error_folds_hex() {
        assert!(symmetric_yaw_error(60f64.to_radians(), 6).abs() < 1e-12);
        assert!((symmetric_yaw_error(65f64.to_radians(), 6) - 5f64.to_radians()).abs() < 1e-12);
        assert!((symmetric_yaw_error(-25f64.to_radians(), 6) + 25f64.to_radians()).abs() < 1e-12);
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform4(-1.0f64..1.0),
            prop::array::uniform3(-2.0f64..2.0),
        )
            .prop_filter("non-degenerate quaternion", |(q, _)| {
                q.iter().map(|v| v * v).sum::<f64>() > 1e-3
            })
            .prop_map(|(q, t)| Pose::new(Quat::new(q[0], q[1], q[2], q[3]), t))
    }

    proptest! {
        #[test]
        fn unit_norm_is_preserved(a in arb_pose(), b in arb_pose()) {
            prop_assert!((compose(&a, &b).rotation.norm() - 1.0).abs() < 1e-9);
            prop_assert!((inverse(&a).rotation.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn path_spacing_is_bounded(a in arb_pose(), b in arb_pose(), pos in 0.05f64..1.0, rot in 0.05f64..1.0) {
            let bound = StepBound { pos, rot };
            let path = interpolate_path(&a, &b, bound);
            let ratio = (translation_distance(&a, &b) / pos).max(rotation_distance(&a, &b) / rot);
            prop_assert_eq!(path.len(), ((ratio - 1e-9).ceil() as usize).max(1));
            let mut prev = a;
            for p in &path {
                prop_assert!(translation_distance(&prev, p) <= pos * (1.0 + 1e-9));
                prop_assert!(rotation_distance(&prev, p) <= rot * (1.0 + 1e-9));
                prev = *p;
            }
            prop_assert_eq!(*path.last().unwrap(), b);
        }

        #[test]
        fn planar_round_trip(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0, yaw in -std::f64::consts::PI..std::f64::consts::PI) {
            let p = PlanarPose::new(x, y, z, yaw);
            let back = PlanarPose::from_pose(&p.to_pose());
            prop_assert!((back.x - x).abs() < 1e-9);
            prop_assert!((back.y - y).abs() < 1e-9);
            prop_assert!((back.z - z).abs() < 1e-9);
            prop_assert!(wrap_angle(back.yaw - yaw).abs() < 1e-9);
        }
    }
}
