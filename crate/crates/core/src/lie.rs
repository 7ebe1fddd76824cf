//! SO(3)/SE(3) primitives and the yaw-plus-planar-translation embedding.
//!
//! Rotations are stored as 3x3 matrices. Tangent vectors of SE(3) are laid
//! out rotation first, translation second.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3, Vector6};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Vec6 = Vector6<f64>;

/// Below this angle `so3_exp` uses the second-order Taylor expansion.
pub const EXP_TAYLOR_THRESHOLD: f64 = 1e-8;
/// Below this angle the right Jacobian (and its inverse) use series forms.
pub const JACOBIAN_TAYLOR_THRESHOLD: f64 = 1e-5;
/// Orthonormality tolerance for accepting a matrix as a rotation.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`]; reads the antisymmetric part.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

/// An element of SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Validates orthonormality and a positive determinant.
    pub fn from_matrix(m: Mat3) -> Result<Self> {
        let deviation = orthonormality_deviation(&m);
        if deviation > ORTHONORMAL_TOLERANCE || !deviation.is_finite() {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Rotation(m))
    }

    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    pub fn exp(phi: &Vec3) -> Self {
        so3_exp(phi)
    }

    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Rotation(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn log(&self) -> Vec3 {
        log_unchecked(&self.0)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn act(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Heading of the body x axis projected on the world xy plane.
    pub fn yaw(&self) -> f64 {
        self.0[(1, 0)].atan2(self.0[(0, 0)])
    }

    /// Re-orthonormalizes after long products.
    pub fn normalized(&self) -> Self {
        let q = UnitQuaternion::from_matrix(&self.0);
        Rotation(*q.to_rotation_matrix().matrix())
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.0)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Rotation(*q.to_rotation_matrix().matrix())
    }

    /// Rotation angle in [0, pi].
    pub fn angle(&self) -> f64 {
        self.log().norm()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

fn orthonormality_deviation(m: &Mat3) -> f64 {
    let e = m * m.transpose() - Mat3::identity();
    let det_err = (m.determinant() - 1.0).abs();
    e.amax().max(det_err)
}

/// Rodrigues' formula.
pub fn so3_exp(phi: &Vec3) -> Rotation {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let k2 = k * k;
    if theta < EXP_TAYLOR_THRESHOLD {
        return Rotation(Mat3::identity() + k + 0.5 * k2);
    }
    let (s, c) = theta.sin_cos();
    Rotation(Mat3::identity() + (s / theta) * k + ((1.0 - c) / theta2) * k2)
}

/// Principal logarithm with an orthonormality check.
pub fn so3_log(r: &Mat3) -> Result<Vec3> {
    let deviation = orthonormality_deviation(r);
    if deviation > ORTHONORMAL_TOLERANCE || !deviation.is_finite() {
        return Err(Error::NotOrthonormal { deviation });
    }
    Ok(log_unchecked(r))
}

fn log_unchecked(r: &Mat3) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    // w = sin(theta) * axis
    let w = vee(r);
    let sin = w.norm();
    let theta = sin.atan2(cos);
    if theta < EXP_TAYLOR_THRESHOLD {
        return w * (1.0 + theta * theta / 6.0);
    }
    if cos > -0.9 {
        return w * (theta / sin);
    }
    // Near pi the antisymmetric part vanishes; read the axis off the
    // symmetric part instead, which equals (1 - cos) n n^T.
    let b = 0.5 * (r + r.transpose()) - cos * Mat3::identity();
    let k = (0..3)
        .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
        .unwrap_or(0);
    let mut axis: Vec3 = b.column(k).into_owned();
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Right Jacobian of SO(3).
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = skew(phi);
    let k2 = k * k;
    if theta < JACOBIAN_TAYLOR_THRESHOLD {
        return Mat3::identity() - 0.5 * k + k2 / 6.0;
    }
    let theta2 = theta * theta;
    let (s, c) = theta.sin_cos();
    Mat3::identity() - ((1.0 - c) / theta2) * k + ((theta - s) / (theta2 * theta)) * k2
}

/// Inverse of the right Jacobian, closed form.
///
/// Satisfies `log(exp(phi) * exp(delta)) ~= phi + J_r^-1(phi) * delta`.
pub fn right_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < JACOBIAN_TAYLOR_THRESHOLD {
        return Mat3::identity() + 0.5 * k;
    }
    let (s, c) = theta.sin_cos();
    let coeff = 1.0 / (theta * theta) - (1.0 + c) / (2.0 * theta * s);
    Mat3::identity() + 0.5 * k + coeff * (k * k)
}

pub fn left_jacobian(phi: &Vec3) -> Mat3 {
    right_jacobian(&-phi)
}

pub fn left_jacobian_inv(phi: &Vec3) -> Mat3 {
    right_jacobian_inv(&-phi)
}

/// Planar pose: heading about world z and a translation in the xy plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Se2Pose {
    yaw: f64,
    pub d: Vector2<f64>,
}

impl Se2Pose {
    pub fn new(yaw: f64, x: f64, y: f64) -> Self {
        Se2Pose {
            yaw: wrap_angle(yaw),
            d: Vector2::new(x, y),
        }
    }

    pub fn identity() -> Self {
        Se2Pose::new(0.0, 0.0, 0.0)
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn set_yaw(&mut self, yaw: f64) {
        self.yaw = wrap_angle(yaw);
    }

    /// Drops roll, pitch and z of a full transform.
    pub fn project(t: &Transform) -> Self {
        Se2Pose::new(t.rot.yaw(), t.trans.x, t.trans.y)
    }

    pub fn to_transform(&self) -> Transform {
        let (rot, trans) = se2_lift(self);
        Transform { rot, trans }
    }
}

/// Embeds a planar pose in SE(3): rotation about z only, zero height.
pub fn se2_lift(pose: &Se2Pose) -> (Rotation, Vec3) {
    (
        Rotation::from_yaw(pose.yaw),
        Vec3::new(pose.d.x, pose.d.y, 0.0),
    )
}

/// Rigid transform mapping body coordinates into the parent frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub rot: Rotation,
    pub trans: Vec3,
}

impl Default for Transform {
    fn default() -> Self {
        Transform::identity()
    }
}

impl Transform {
    pub fn new(rot: Rotation, trans: Vec3) -> Self {
        Transform { rot, trans }
    }

    pub fn identity() -> Self {
        Transform {
            rot: Rotation::identity(),
            trans: Vec3::zeros(),
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rot.inverse();
        Transform {
            rot: rt,
            trans: -(rt.act(&self.trans)),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rot.act(p) + self.trans
    }

    pub fn exp(xi: &Vec6) -> Self {
        se3_exp(xi)
    }

    pub fn log(&self) -> Vec6 {
        se3_log(self)
    }

    /// 4x4 homogeneous matrix.
    pub fn to_homogeneous(&self) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rot.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.trans);
        m
    }

    /// `exp(alpha * log(self))`.
    pub fn scaled(&self, alpha: f64) -> Self {
        se3_exp(&(self.log() * alpha))
    }
}

impl Mul for Transform {
    type Output = Transform;
    fn mul(self, rhs: Transform) -> Transform {
        &self * &rhs
    }
}

impl Mul<&Transform> for &Transform {
    type Output = Transform;
    fn mul(self, rhs: &Transform) -> Transform {
        Transform {
            rot: &self.rot * &rhs.rot,
            trans: self.rot.act(&rhs.trans) + self.trans,
        }
    }
}

pub fn se3_exp(xi: &Vec6) -> Transform {
    let omega = xi.fixed_rows::<3>(0).into_owned();
    let rho = xi.fixed_rows::<3>(3).into_owned();
    Transform {
        rot: so3_exp(&omega),
        trans: left_jacobian(&omega) * rho,
    }
}

pub fn se3_log(t: &Transform) -> Vec6 {
    let omega = t.rot.log();
    let rho = left_jacobian_inv(&omega) * t.trans;
    let mut xi = Vec6::zeros();
    xi.fixed_rows_mut::<3>(0).copy_from(&omega);
    xi.fixed_rows_mut::<3>(3).copy_from(&rho);
    xi
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &Mat3, b: &Mat3, tol: f64) -> bool {
        (a - b).amax() < tol
    }

    #[test]
    fn skew_examples() {
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
        let z = skew(&Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(z, Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let v = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(skew(&v) * v, Vec3::zeros());
    }

    #[test]
    fn exp_quarter_turn() {
        assert_eq!(*so3_exp(&Vec3::zeros()).matrix(), Mat3::identity());
        let r = so3_exp(&Vec3::new(0.0, 0.0, PI / 2.0));
        let x = r.act(&Vec3::x());
        assert!((x - Vec3::y()).amax() < 1e-12);
    }

    #[test]
    fn log_examples() {
        assert_eq!(so3_log(&Mat3::identity()).unwrap(), Vec3::zeros());
        let phi = so3_log(so3_exp(&Vec3::new(0.0, 0.0, 0.5)).matrix()).unwrap();
        assert!((phi - Vec3::new(0.0, 0.0, 0.5)).amax() < 1e-10);
        // rotation by pi about x built directly
        let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let phi = so3_log(&rx).unwrap();
        assert!((phi - Vec3::new(PI, 0.0, 0.0)).amax() < 1e-7, "{phi}");
    }

    #[test]
    fn log_near_pi_keeps_direction() {
        for axis in [Vec3::x(), Vec3::y(), Vec3::new(1.0, -2.0, 0.5).normalize()] {
            let phi = axis * (PI - 1e-6);
            let back = so3_log(so3_exp(&phi).matrix()).unwrap();
            assert!((back - phi).amax() < 1e-8, "{back} vs {phi}");
        }
    }

    #[test]
    fn log_rejects_non_rotation() {
        let mut m = Mat3::identity();
        m[(0, 0)] = 1.01;
        assert!(matches!(so3_log(&m), Err(Error::NotOrthonormal { .. })));
        let reflection = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(so3_log(&reflection).is_err());
    }

    #[test]
    fn exp_log_roundtrip_at_norm_point_three() {
        let phi = Vec3::new(0.1, -0.2, 0.2).normalize() * 0.3;
        let back = so3_exp(&phi).log();
        assert!((back - phi).amax() < 1e-10);
    }

    #[test]
    fn right_jacobian_inv_small_angle() {
        assert_eq!(right_jacobian_inv(&Vec3::zeros()), Mat3::identity());
        let phi = Vec3::new(1e-7, 0.0, 0.0);
        assert_eq!(right_jacobian_inv(&phi), Mat3::identity() + 0.5 * skew(&phi));
    }

    #[test]
    fn right_jacobian_inv_defining_property() {
        let phi = Vec3::new(0.2, 0.0, 0.0);
        let delta = Vec3::new(0.0, 1e-6, 0.0);
        let lhs = (so3_exp(&phi) * so3_exp(&delta)).log();
        let rhs = phi + right_jacobian_inv(&phi) * delta;
        assert!((lhs - rhs).amax() < 1e-9);
    }

    #[test]
    fn right_jacobian_pair_is_inverse() {
        let phi = Vec3::new(0.3, -0.5, 0.8).normalize();
        let prod = right_jacobian_inv(&phi) * right_jacobian(&phi);
        assert!(close(&prod, &Mat3::identity(), 1e-9));
    }

    #[test]
    fn right_jacobian_matches_exp_derivative() {
        // exp(phi + d) ~= exp(phi) exp(J_r(phi) d)
        let phi = Vec3::new(0.4, 0.1, -0.7);
        let d = Vec3::new(1e-6, -2e-6, 0.5e-6);
        let lhs = so3_exp(&(phi + d));
        let rhs = so3_exp(&phi) * so3_exp(&(right_jacobian(&phi) * d));
        assert!(close(lhs.matrix(), rhs.matrix(), 1e-11));
    }

    #[test]
    fn se2_lift_examples() {
        let (r, p) = se2_lift(&Se2Pose::identity());
        assert_eq!(*r.matrix(), Mat3::identity());
        assert_eq!(p, Vec3::zeros());
        let (r, p) = se2_lift(&Se2Pose::new(PI / 2.0, 1.0, 2.0));
        assert!((r.act(&Vec3::x()) - Vec3::y()).amax() < 1e-12);
        assert_eq!(p, Vec3::new(1.0, 2.0, 0.0));
    }

    #[test]
    fn yaw_wraps_into_half_open_interval() {
        assert!((Se2Pose::new(3.0 * PI, 0.0, 0.0).yaw() - PI).abs() < 1e-12);
        assert!((Se2Pose::new(-PI, 0.0, 0.0).yaw() - PI).abs() < 1e-12);
        assert!((Se2Pose::new(-0.5, 0.0, 0.0).yaw() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn se3_examples() {
        let t = se3_exp(&Vec6::zeros());
        assert_eq!(t, Transform::identity());
        let t = se3_exp(&Vec6::new(0.0, 0.0, 0.0, 1.0, 2.0, 3.0));
        assert_eq!(*t.rot.matrix(), Mat3::identity());
        assert_eq!(t.trans, Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn se3_scaled_at_one_reproduces() {
        let t = se3_exp(&Vec6::new(0.3, -0.2, 0.9, 1.5, -0.4, 2.0));
        let back = t.scaled(1.0);
        assert!(close(back.rot.matrix(), t.rot.matrix(), 1e-9));
        assert!((back.trans - t.trans).amax() < 1e-9);
    }

    #[test]
    fn interpolation_composes_back() {
        let t = se3_exp(&Vec6::new(0.05, -0.02, 0.4, 0.8, 0.1, -0.05));
        for (n, big_n) in [(1, 4), (2, 10), (5, 5)] {
            let step = t.scaled(n as f64 / big_n as f64);
            let mut acc = Transform::identity();
            for _ in 0..(big_n / n) {
                acc = acc * step;
            }
            assert!(close(acc.rot.matrix(), t.rot.matrix(), 1e-7));
            assert!((acc.trans - t.trans).amax() < 1e-7);
        }
    }

    fn vec3_in(r: f64) -> impl Strategy<Value = Vec3> {
        (-r..r, -r..r, -r..r).prop_map(|(a, b, c)| Vec3::new(a, b, c))
    }

    proptest! {
        #[test]
        fn skew_anticommutes(v in vec3_in(10.0), w in vec3_in(10.0)) {
            prop_assert!((skew(&v) * w + skew(&w) * v).amax() < 1e-12);
        }

        #[test]
        fn so3_roundtrip(v in vec3_in(1.8)) {
            prop_assume!(v.norm() < PI - 1e-3);
            let back = so3_exp(&v).log();
            prop_assert!((back - v).amax() < 1e-9);
        }

        #[test]
        fn exp_is_rotation(v in vec3_in(5.0)) {
            let r = so3_exp(&v);
            prop_assert!(Rotation::from_matrix(*r.matrix()).is_ok());
            let m = r.matrix();
            prop_assert!((m * m.transpose() - Mat3::identity()).amax() < 1e-9);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn se2_lift_is_planar(yaw in -10.0..10.0f64, x in -50.0..50.0f64, y in -50.0..50.0f64) {
            let (r, p) = se2_lift(&Se2Pose::new(yaw, x, y));
            prop_assert_eq!(p.z, 0.0);
            let m = r.matrix();
            prop_assert!((m.row(2) - Vec3::z().transpose()).amax() < 1e-12);
            prop_assert!((m.column(2) - Vec3::z()).amax() < 1e-12);
        }

        #[test]
        fn se3_roundtrip(w in vec3_in(1.5), t in vec3_in(20.0)) {
            prop_assume!(w.norm() < PI - 1e-2);
            let mut xi = Vec6::zeros();
            xi.fixed_rows_mut::<3>(0).copy_from(&w);
            xi.fixed_rows_mut::<3>(3).copy_from(&t);
            let back = se3_log(&se3_exp(&xi));
            prop_assert!((back - xi).amax() < 1e-9);
        }
    }
}
