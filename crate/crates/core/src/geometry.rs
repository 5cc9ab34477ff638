//! Rigid-body poses and transforms.
//!
//! Translations are in millimetres and rotations in radians throughout. The
//! orientation of a [`Pose`] is held as a unit quaternion; Euler angles only
//! appear at I/O boundaries and use the intrinsic Z-Y-X (yaw, pitch, roll)
//! convention: `R = Rz(alpha) * Ry(beta) * Rx(theta)`.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3, Vector6, SVD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
}

/// 6-d.o.f. pose: translation (mm) plus unit-quaternion orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub translation: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(translation: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            orientation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    /// Builds a pose from `(x, y, z, alpha, beta, theta)` with Z-Y-X Euler angles.
    pub fn from_euler(x: f64, y: f64, z: f64, alpha: f64, beta: f64, theta: f64) -> Self {
        Self::new(
            Vector3::new(x, y, z),
            UnitQuaternion::from_euler_angles(theta, beta, alpha),
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::from_euler(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    /// `(alpha, beta, theta)`: yaw about z, pitch about y, roll about x.
    pub fn euler(&self) -> (f64, f64, f64) {
        let (roll, pitch, yaw) = self.orientation.euler_angles();
        (yaw, pitch, roll)
    }

    /// `[x, y, z, alpha, beta, theta]`.
    pub fn to_vector(&self) -> Vector6<f64> {
        let (a, b, c) = self.euler();
        let t = &self.translation;
        Vector6::new(t.x, t.y, t.z, a, b, c)
    }

    pub fn to_transform(&self) -> Transform {
        Transform {
            rotation: self.orientation.to_rotation_matrix(),
            translation: self.translation,
        }
    }

    pub fn from_transform(t: &Transform) -> Self {
        Self::new(t.translation, UnitQuaternion::from_rotation_matrix(&t.rotation))
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        let q = self.orientation * other.orientation;
        Pose {
            translation: self.orientation * other.translation + self.translation,
            orientation: UnitQuaternion::new_normalize(q.into_inner()),
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose {
            translation: -(inv * self.translation),
            orientation: inv,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * p + self.translation
    }

    /// Geodesic rotation angle between the two orientations, in `[0, pi]`.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        self.orientation.angle_to(&other.orientation)
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }
}

/// Homogeneous rigid transform `[R t; 0 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Rotation3::identity(), Vector3::new(x, y, z))
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Reads the rigid part of a homogeneous matrix; the rotation block is
    /// projected onto SO(3).
    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let t = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
        Self::new(Rotation3::from_matrix(&r), t)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_pose(&self) -> Pose {
        Pose::from_transform(self)
    }
}

/// `a ∘ b`: the transform that applies `b` first, then `a`.
pub fn compose(a: &Transform, b: &Transform) -> Transform {
    Transform {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

pub fn inverse(t: &Transform) -> Transform {
    let rt = t.rotation.inverse();
    Transform {
        rotation: rt,
        translation: -(rt * t.translation),
    }
}

/// Maps an object target pose to the gripping tool's target pose:
/// `target_tool = target_object * grip^-1`, where `grip` is the object pose in
/// the tool frame.
pub fn retarget(needle_target: &Transform, grip: &Transform) -> Transform {
    compose(needle_target, &inverse(grip))
}

/// Pose error of the tool relative to its target, expressed in the current
/// tool frame: `tool_in_cam^-1 * mandrel_in_cam * target_in_mandrel`.
///
/// The result is the identity exactly when the tool sits on its target.
pub fn servo_error(
    tool_in_cam: &Transform,
    mandrel_in_cam: &Transform,
    target_in_mandrel: &Transform,
) -> Transform {
    compose(
        &inverse(tool_in_cam),
        &compose(mandrel_in_cam, target_in_mandrel),
    )
}

/// Matched points observed in two frames (`robot[i]` ↔ `camera[i]`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub robot: Vec<Vector3<f64>>,
    pub camera: Vec<Vector3<f64>>,
}

impl CorrespondenceSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, robot: Vector3<f64>, camera: Vector3<f64>) {
        self.robot.push(robot);
        self.camera.push(camera);
    }

    /// Uses the positions of paired poses (e.g. tool in robot base frame and
    /// the same tool observed in the camera frame).
    pub fn from_poses(robot: &[Pose], camera: &[Pose]) -> Self {
        Self {
            robot: robot.iter().map(|p| p.translation).collect(),
            camera: camera.iter().map(|p| p.translation).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.robot.len().min(self.camera.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Least-squares rigid transform `camera_H_robot` minimising
/// `sum |H * robot_i - camera_i|^2` (SVD form of the absolute orientation
/// problem, with reflection correction).
pub fn register_absolute_orientation(
    c: &CorrespondenceSet,
) -> Result<Transform, GeometryError> {
    if c.robot.len() != c.camera.len() {
        return Err(GeometryError::DegenerateGeometry(format!(
            "unpaired correspondences: {} robot vs {} camera points",
            c.robot.len(),
            c.camera.len()
        )));
    }
    let n = c.len();
    if n < 3 {
        return Err(GeometryError::DegenerateGeometry(format!(
            "need at least 3 correspondences, got {n}"
        )));
    }
    let src_c = centroid(&c.robot);
    let dst_c = centroid(&c.camera);

    let mut spread = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for (p, q) in c.robot.iter().zip(&c.camera) {
        let ps = p - src_c;
        let qs = q - dst_c;
        spread += ps * ps.transpose();
        cross += qs * ps.transpose();
    }

    // Collinear (or coincident) source points leave rotation about the line
    // undetermined.
    let ev = spread.symmetric_eigenvalues();
    let mut ev = [ev[0], ev[1], ev[2]];
    ev.sort_by(f64::total_cmp);
    let (mid, hi) = (ev[1], ev[2]);
    if hi <= 0.0 || mid <= 1e-12 * hi {
        return Err(GeometryError::DegenerateGeometry(
            "correspondence points are collinear".into(),
        ));
    }

    let svd = SVD::new(cross, true, true);
    let u = svd.u.expect("SVD computed with U");
    let v_t = svd.v_t.expect("SVD computed with V^T");
    let d = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    let rotation = Rotation3::from_matrix_unchecked(r);
    let translation = dst_c - rotation * src_c;
    Ok(Transform::new(rotation, translation))
}

/// Linear interpolation of translation with shortest-arc slerp of
/// orientation. `s` is clamped to `[0, 1]`.
pub fn interpolate(p0: &Pose, p1: &Pose, s: f64) -> Pose {
    let s = s.clamp(0.0, 1.0);
    if s == 0.0 {
        return *p0;
    }
    if s == 1.0 {
        return *p1;
    }
    let translation = p0.translation.lerp(&p1.translation, s);
    let mut q1 = p1.orientation;
    if p0.orientation.coords.dot(&q1.coords) < 0.0 {
        q1 = UnitQuaternion::new_unchecked(-q1.into_inner());
    }
    let orientation = p0
        .orientation
        .try_slerp(&q1, s, 1e-12)
        .unwrap_or_else(|| UnitQuaternion::new_normalize(p0.orientation.nlerp(&q1, s).into_inner()));
    Pose::new(translation, orientation)
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Weighted pose distance: `|dt| + w * angle`, with `w` in mm/rad.
pub fn pose_distance(a: &Pose, b: &Pose, rot_weight: f64) -> f64 {
    a.distance_to(b) + rot_weight * a.angle_to(b)
}

/// Pose with a timestamp in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPose {
    pub t: f64,
    pub pose: Pose,
}

impl TimedPose {
    pub fn new(t: f64, pose: Pose) -> Self {
        debug_assert!(t.is_finite() && t >= 0.0, "timestamp must be finite and >= 0");
        Self { t, pose }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn rz(angle: f64, t: Vector3<f64>) -> Transform {
        Transform::new(Rotation3::from_axis_angle(&Vector3::z_axis(), angle), t)
    }

    fn random_transform(rng: &mut impl Rng) -> Transform {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let axis = nalgebra::Unit::new_normalize(axis + Vector3::new(1e-3, 0.0, 0.0));
        let rot = Rotation3::from_axis_angle(&axis, rng.random_range(-PI..PI));
        let t = Vector3::new(
            rng.random_range(-200.0..200.0),
            rng.random_range(-200.0..200.0),
            rng.random_range(-200.0..200.0),
        );
        Transform::new(rot, t)
    }

    fn assert_tf_eq(a: &Transform, b: &Transform, tol: f64) {
        assert_abs_diff_eq!(a.to_matrix(), b.to_matrix(), epsilon = tol);
    }

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_transform(&mut rng);
        assert_tf_eq(&compose(&Transform::identity(), &t), &t, 1e-12);
        assert_tf_eq(&compose(&t, &inverse(&t)), &Transform::identity(), 1e-9);
    }

    #[test]
    fn compose_matches_matrix_product() {
        let a = rz(FRAC_PI_2, Vector3::new(1.0, 0.0, 0.0));
        let c = compose(&a, &a);
        // 4x4 product oracle
        let m = a.to_matrix() * a.to_matrix();
        assert_tf_eq(&c, &Transform::from_matrix(&m), 1e-12);
        assert_tf_eq(&c, &rz(PI, Vector3::new(1.0, 1.0, 0.0)), 1e-12);
    }

    #[test]
    fn inverse_cases() {
        assert_tf_eq(&inverse(&Transform::identity()), &Transform::identity(), 0.0);
        let t = Transform::from_translation(1.0, 2.0, 3.0);
        assert_tf_eq(&inverse(&t), &Transform::from_translation(-1.0, -2.0, -3.0), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let t = random_transform(&mut rng);
            let m = t.to_matrix().try_inverse().unwrap();
            assert_abs_diff_eq!(inverse(&t).to_matrix(), m, epsilon = 1e-9);
        }
    }

    #[test]
    fn retarget_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = random_transform(&mut rng);
        let g = random_transform(&mut rng);
        assert_tf_eq(&retarget(&n, &Transform::identity()), &n, 1e-12);
        assert_tf_eq(&retarget(&g, &g), &Transform::identity(), 1e-9);
        let m = n.to_matrix() * g.to_matrix().try_inverse().unwrap();
        assert_abs_diff_eq!(retarget(&n, &g).to_matrix(), m, epsilon = 1e-9);
    }

    #[test]
    fn servo_error_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_transform(&mut rng);
        let target = random_transform(&mut rng);
        let tool = compose(&m, &target);
        assert_tf_eq(&servo_error(&tool, &m, &target), &Transform::identity(), 1e-9);

        // aligned orientations, tool 5 mm further along mandrel x than target
        let m = Transform::from_translation(100.0, 50.0, 300.0);
        let target = Transform::from_translation(10.0, 0.0, 0.0);
        let tool = compose(&m, &Transform::from_translation(15.0, 0.0, 0.0));
        let e = servo_error(&tool, &m, &target);
        assert_abs_diff_eq!(e.translation, Vector3::new(-5.0, 0.0, 0.0), epsilon = 1e-12);

        let tool = random_transform(&mut rng);
        let oracle = tool.to_matrix().try_inverse().unwrap() * m.to_matrix() * target.to_matrix();
        assert_abs_diff_eq!(servo_error(&tool, &m, &target).to_matrix(), oracle, epsilon = 1e-9);
    }

    #[test]
    fn registration_identity_and_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vector3<f64>> = (0..10)
            .map(|_| Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)))
            .collect();
        let c = CorrespondenceSet { robot: pts.clone(), camera: pts.clone() };
        assert_tf_eq(&register_absolute_orientation(&c).unwrap(), &Transform::identity(), 1e-9);

        let truth = random_transform(&mut rng);
        let c = CorrespondenceSet {
            robot: pts.clone(),
            camera: pts.iter().map(|p| truth.transform_point(p)).collect(),
        };
        assert_tf_eq(&register_absolute_orientation(&c).unwrap(), &truth, 1e-9);
    }

    #[test]
    fn registration_three_points_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = random_transform(&mut rng);
        let pts = vec![Vector3::zeros(), Vector3::new(10.0, 0.0, 0.0), Vector3::new(0.0, 7.0, 0.0)];
        let c = CorrespondenceSet {
            robot: pts.clone(),
            camera: pts.iter().map(|p| truth.transform_point(p)).collect(),
        };
        assert_tf_eq(&register_absolute_orientation(&c).unwrap(), &truth, 1e-9);
    }

    #[test]
    fn registration_rejects_degenerate() {
        let pts: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.5)).collect();
        let c = CorrespondenceSet { robot: pts.clone(), camera: pts };
        assert!(matches!(register_absolute_orientation(&c), Err(GeometryError::DegenerateGeometry(_))));
        let c = CorrespondenceSet {
            robot: vec![Vector3::zeros(), Vector3::x()],
            camera: vec![Vector3::zeros(), Vector3::x()],
        };
        assert!(register_absolute_orientation(&c).is_err());
    }

    #[test]
    fn interpolate_endpoints_and_half_angle() {
        let p0 = Pose::identity();
        let p1 = Pose::new(Vector3::new(2.0, 4.0, 6.0), UnitQuaternion::from_euler_angles(0.0, 0.0, FRAC_PI_2));
        assert_eq!(interpolate(&p0, &p1, 0.0), p0);
        assert_eq!(interpolate(&p0, &p1, 1.0), p1);
        let mid = interpolate(&p0, &p1, 0.5);
        let (alpha, beta, theta) = mid.euler();
        assert_abs_diff_eq!(alpha, FRAC_PI_4, epsilon = 1e-9);
        assert_abs_diff_eq!(beta, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(theta, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(mid.translation, Vector3::new(1.0, 2.0, 3.0), epsilon = 1e-12);
    }

    #[test]
    fn interpolate_takes_shortest_arc() {
        let p0 = Pose::from_euler(0.0, 0.0, 0.0, 3.0, 0.0, 0.0);
        let p1 = Pose::from_euler(0.0, 0.0, 0.0, -3.0, 0.0, 0.0);
        let mid = interpolate(&p0, &p1, 0.5);
        assert_abs_diff_eq!(mid.angle_to(&p0), 2.0 * PI / 2.0 - 3.0, epsilon = 1e-9);
    }

    #[test]
    fn wrap_angle_range() {
        assert_abs_diff_eq!(wrap_angle(PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(0.3), 0.3, epsilon = 1e-15);
    }

    fn arb_transform() -> impl Strategy<Value = Transform> {
        (
            -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -PI..PI,
            -100.0f64..100.0, -100.0f64..100.0, -100.0f64..100.0,
        )
            .prop_map(|(ax, ay, az, ang, x, y, z)| {
                let axis = nalgebra::Unit::new_normalize(Vector3::new(ax, ay, az + 1.5));
                Transform::new(Rotation3::from_axis_angle(&axis, ang), Vector3::new(x, y, z))
            })
    }

    proptest! {
        #[test]
        fn compose_is_associative(a in arb_transform(), b in arb_transform(), c in arb_transform()) {
            let l = compose(&compose(&a, &b), &c);
            let r = compose(&a, &compose(&b, &c));
            prop_assert!((l.to_matrix() - r.to_matrix()).amax() < 1e-9);
            let rot = l.rotation.matrix();
            prop_assert!((rot * rot.transpose() - Matrix3::identity()).amax() < 1e-9);
            prop_assert!((rot.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn servo_error_identity_iff_on_target(m in arb_transform(), t in arb_transform(), d in arb_transform()) {
            let on = compose(&m, &t);
            prop_assert!((servo_error(&on, &m, &t).to_matrix() - Matrix4::identity()).amax() < 1e-9);
            let off = compose(&on, &d);
            let moved = (d.to_matrix() - Matrix4::identity()).amax() > 1e-6;
            let e = servo_error(&off, &m, &t);
            prop_assert_eq!((e.to_matrix() - Matrix4::identity()).amax() > 1e-9, moved);
        }

        #[test]
        fn registration_exact_on_noiseless_sets(tf in arb_transform(), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<_> = (0..8)
                .map(|_| Vector3::new(rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0)))
                .collect();
            let c = CorrespondenceSet { camera: pts.iter().map(|p| tf.transform_point(p)).collect(), robot: pts };
            let est = register_absolute_orientation(&c).unwrap();
            prop_assert!((est.to_matrix() - tf.to_matrix()).amax() < 1e-9);
        }

        #[test]
        fn euler_round_trip(a in -PI+1e-6..PI-1e-6, b in -FRAC_PI_2+0.1..FRAC_PI_2-0.1, c in -PI+1e-6..PI-1e-6) {
            let p = Pose::from_euler(1.0, 2.0, 3.0, a, b, c);
            prop_assert!((p.orientation.norm() - 1.0).abs() < 1e-9);
            let (a2, b2, c2) = p.euler();
            prop_assert!(wrap_angle(a2 - a).abs() < 1e-9);
            prop_assert!((b2 - b).abs() < 1e-9);
            prop_assert!(wrap_angle(c2 - c).abs() < 1e-9);
        }

        #[test]
        fn interpolate_angle_monotone(a in -3.0f64..3.0, b in -1.4f64..1.4, c in -3.0f64..3.0) {
            let p0 = Pose::identity();
            let p1 = Pose::from_euler(0.0, 0.0, 0.0, a, b, c);
            let mut last = 0.0;
            for k in 0..=20 {
                let s = k as f64 / 20.0;
                let ang = interpolate(&p0, &p1, s).angle_to(&p0);
                prop_assert!(ang + 1e-9 >= last);
                last = ang;
            }
        }
    }
}
