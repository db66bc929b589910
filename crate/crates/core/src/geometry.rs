//! Rotation-group helpers shared by the plant and the controllers.
//!
//! Orientation is carried as a full rotation matrix. Every consumer reads the
//! body z-axis (`R e3`) directly, so there is no quaternion round trip.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// World-frame up axis, also the body thrust axis in body coordinates.
pub const E3: Vec3 = Vec3::new(0.0, 0.0, 1.0);

/// Skew-symmetric matrix with `hat(v) * w == v.cross(&w)`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] applied to the antisymmetric part of `m`.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

/// Body-to-world rotation. Kept orthonormal with `det = +1`.
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

    /// Wraps a matrix after projecting it back onto SO(3).
    pub fn from_matrix(m: Mat3) -> Self {
        Self(orthonormalize(&m))
    }

    /// Wraps a matrix that the caller guarantees is already a rotation.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Self(m)
    }

    /// Rotation by `angle` about the world z-axis.
    pub fn from_yaw(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Body z-axis expressed in the world frame.
    pub fn z_axis(&self) -> Vec3 {
        self.0.column(2).into_owned()
    }

    /// Body vector to world frame.
    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// World vector to body frame.
    pub fn apply_inverse(&self, v: &Vec3) -> Vec3 {
        self.0.tr_mul(v)
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    /// Heading of the body x-axis projected on the horizontal plane (ZYX yaw).
    pub fn yaw(&self) -> f64 {
        self.0[(1, 0)].atan2(self.0[(0, 0)])
    }

    /// Largest entry of `R R^T - I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0 * self.0.transpose() - Mat3::identity()).amax()
    }
}

/// Exponential map from a rotation vector (axis times angle, rad) to SO(3).
pub fn exp_so3(phi: &Vec3) -> Rotation {
    let theta2 = phi.norm_squared();
    let k = hat(phi);
    let k2 = k * k;
    let (a, b) = if theta2 < 1e-16 {
        // second-order series: sin t / t ~ 1 - t^2/6, (1 - cos t)/t^2 ~ 1/2 - t^2/24
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation(Mat3::identity() + k * a + k2 * b)
}

/// Advances `r` by a constant body rate over `dt`: `R exp([w dt])`.
pub fn integrate_rotation(r: &Rotation, omega: &Vec3, dt: f64) -> Rotation {
    let step = exp_so3(&(omega * dt));
    Rotation(orthonormalize(&(r.0 * step.0)))
}

/// Nearest rotation via Gram-Schmidt on the columns, z-axis first.
///
/// The thrust axis is the quantity every controller consumes, so it is the
/// column that is preserved exactly (up to normalization).
pub fn orthonormalize(m: &Mat3) -> Mat3 {
    let z = m.column(2).normalize();
    let x_raw = m.column(0) - z * z.dot(&m.column(0));
    let x = x_raw.normalize();
    let y = z.cross(&x);
    Mat3::from_columns(&[x, y, z])
}
