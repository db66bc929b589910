//! Feedback-linearizing position controller with dynamic extension.
//!
//! Position is differentiated four times; the thrust input enters at the
//! third derivative and the body angular acceleration at the fourth. With a
//! first-order thrust lag in the model, the desired thrust is moved into the
//! controller state and its rate becomes the input, giving a well-defined
//! relative degree of four on every axis. The snap is then assigned by a
//! linear law on the position, velocity, acceleration and jerk errors.
//!
//! The inner-loop law is written in the body frame and needs only the body
//! gravity vector, the body rates and the world snap feedforward rotated into
//! the body. It evaluates no trigonometric functions.

use crate::dynamics::{PlantCommand, VehicleState, GRAVITY};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Vec3, E3};
use crate::trajectories::FlatReference;

/// World gravity assumed by the controllers.
pub fn gravity() -> Vec3 {
    Vec3::new(0.0, 0.0, -GRAVITY)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FblGains {
    /// Position gain, diagonal (1/s^4).
    pub k1: Vec3,
    /// Velocity gain, diagonal (1/s^3).
    pub k2: Vec3,
    /// Acceleration gain (1/s^2), applied isotropically.
    pub k3: f64,
    /// Jerk gain (1/s), applied isotropically.
    pub k4: f64,
    /// Thrust-lag rate assumed by the controller (1/s).
    pub tau_u: f64,
    pub k_yaw: f64,
    pub k_yaw_rate: f64,
    /// Thrust below which the inversion is refused (m/s^2).
    pub u_min: f64,
    /// When false, thrust is treated as instantaneous and the classic double
    /// integrator extension on thrust is used instead.
    pub delay_compensation: bool,
}

impl Default for FblGains {
    fn default() -> Self {
        Self {
            k1: Vec3::new(1040.0, 1040.0, 1900.0),
            k2: Vec3::new(600.0, 600.0, 1140.0),
            k3: 190.0,
            k4: 25.0,
            tau_u: 10.0,
            k_yaw: 30.0,
            k_yaw_rate: 10.0,
            u_min: 1.0,
            delay_compensation: true,
        }
    }
}

/// Routh-Hurwitz test for `s^4 + a3 s^3 + a2 s^2 + a1 s + a0`.
pub fn quartic_is_hurwitz(a3: f64, a2: f64, a1: f64, a0: f64) -> bool {
    let b = a3 * a2 - a1;
    a3 > 0.0 && a2 > 0.0 && a1 > 0.0 && a0 > 0.0 && b > 0.0 && b * a1 - a3 * a3 * a0 > 0.0
}

impl FblGains {
    pub fn validate(&self) -> Result<()> {
        for axis in 0..3 {
            if !quartic_is_hurwitz(self.k4, self.k3, self.k2[axis], self.k1[axis]) {
                return Err(Error::InvalidParameter(format!(
                    "error dynamics on axis {axis} are not Hurwitz \
                     (k1={}, k2={}, k3={}, k4={})",
                    self.k1[axis], self.k2[axis], self.k3, self.k4
                )));
            }
        }
        if !(self.tau_u > 0.0) || !(self.u_min > 0.0) {
            return Err(Error::InvalidParameter(
                "controller tau_u and u_min must be positive".into(),
            ));
        }
        if !(self.k_yaw >= 0.0 && self.k_yaw_rate >= 0.0) {
            return Err(Error::InvalidParameter("yaw gains must be non-negative".into()));
        }
        Ok(())
    }
}

/// Dynamic-extension states carried between control steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FblControllerState {
    /// Estimated realized thrust (m/s^2).
    pub u: f64,
    /// Integrated desired thrust (m/s^2). Unused without delay compensation.
    pub u_des: f64,
    /// Thrust rate (m/s^3).
    pub u_dot: f64,
}

impl FblControllerState {
    /// Hover-consistent engagement: the thrust that cancels the net vertical
    /// load along the current body axis, with zero rate.
    pub fn engage(x: &VehicleState, fe: &Vec3, gains: &FblGains) -> Self {
        let u = (-(gravity() + fe).dot(&x.z_axis())).max(gains.u_min);
        Self {
            u,
            u_des: u,
            u_dot: 0.0,
        }
    }
}

/// Learned (or estimated) disturbance and its first two time derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DisturbanceTriple {
    pub fe: Vec3,
    pub fe_dot: Vec3,
    pub fe_ddot: Vec3,
}

impl DisturbanceTriple {
    pub fn constant(fe: Vec3) -> Self {
        Self {
            fe,
            ..Self::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.fe, self.fe_dot, self.fe_ddot]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Body z-axis and its first two world-frame derivatives for a given body
/// angular acceleration.
pub fn thrust_axis_derivatives(x: &VehicleState, alpha: &Vec3) -> (Vec3, Vec3, Vec3) {
    let z = x.z_axis();
    let w = x.omega_world();
    let z_dot = w.cross(&z);
    let z_ddot = x.r.apply(alpha).cross(&z) + w.cross(&z_dot);
    (z, z_dot, z_ddot)
}

/// Acceleration and jerk reconstructed from the model instead of measured.
pub fn feedback_acc_jerk(x: &VehicleState, ctl: &FblControllerState, d: &DisturbanceTriple) -> (Vec3, Vec3) {
    let z = x.z_axis();
    let mut omega_xy = x.omega;
    omega_xy.z = 0.0;
    let z_dot = x.r.apply(&omega_xy).cross(&z);
    let a = z * ctl.u + gravity() + d.fe;
    let j = z * ctl.u_dot + z_dot * ctl.u + d.fe_dot;
    (a, j)
}

/// The part of the commanded snap that does not depend on the current
/// thrust state: position/velocity feedback plus feedforward, with the
/// disturbance and its derivatives already folded in.
pub fn snap_feedforward(
    p_err: &Vec3,
    v_err: &Vec3,
    reference: &FlatReference,
    gains: &FblGains,
    d: &DisturbanceTriple,
) -> Vec3 {
    -gains.k1.component_mul(p_err) - gains.k2.component_mul(v_err)
        + (reference.a - d.fe) * gains.k3
        + (reference.j - d.fe_dot) * gains.k4
        + reference.s
        - d.fe_ddot
}

/// Snap feedforward from the current state error against `reference`.
pub fn snap_feedforward_at(
    x: &VehicleState,
    reference: &FlatReference,
    gains: &FblGains,
    d: &DisturbanceTriple,
) -> Vec3 {
    snap_feedforward(&(x.p - reference.p), &(x.v - reference.v), reference, gains, d)
}

/// Body-frame inversion. Returns the body x/y angular acceleration (z entry
/// zero) and the thrust second derivative that realize the snap implied by
/// `s_ff` and the acceleration/jerk feedback.
pub fn body_frame_law(
    x: &VehicleState,
    ctl: &FblControllerState,
    s_ff: &Vec3,
    gains: &FblGains,
) -> (Vec3, f64) {
    let s_b = x.r.apply_inverse(s_ff);
    let g_b = x.r.apply_inverse(&gravity());
    let w = x.omega;
    let w_xy = Vec3::new(w.x, w.y, 0.0);
    let u = ctl.u;
    let alpha_xy = (E3.cross(&s_b) - E3.cross(&g_b) * gains.k3 - w_xy * (2.0 * ctl.u_dot)) / u
        - w_xy * gains.k4
        - E3.cross(&w) * w.z;
    let u_ddot = s_b.z - gains.k3 * (u + g_b.z) - gains.k4 * ctl.u_dot + u * w_xy.norm_squared();
    (alpha_xy, u_ddot)
}

/// Yaw law: PD on wrapped heading error plus acceleration feedforward, used
/// directly as the body-z angular acceleration.
pub fn yaw_alpha(x: &VehicleState, reference: &FlatReference, gains: &FblGains) -> f64 {
    let err = wrap_angle(reference.yaw - x.yaw());
    let rate_err = reference.yaw_rate - x.omega_world().z;
    gains.k_yaw * err + gains.k_yaw_rate * rate_err + reference.yaw_accel
}

/// Inner-loop step with a precomputed snap feedforward and yaw command.
///
/// Returns the plant command to hold over `dt` and the advanced extension
/// state.
pub fn fbl_apply(
    x: &VehicleState,
    ctl: &FblControllerState,
    s_ff: &Vec3,
    alpha_z: f64,
    gains: &FblGains,
    dt: f64,
) -> Result<(PlantCommand, FblControllerState)> {
    if !(ctl.u >= gains.u_min) {
        return Err(Error::ThrustSingularity {
            u: ctl.u,
            u_min: gains.u_min,
        });
    }
    let (mut alpha, u_ddot) = body_frame_law(x, ctl, s_ff, gains);
    alpha.z = alpha_z;

    let (u_cmd, next) = if gains.delay_compensation {
        let tau = gains.tau_u;
        let u_dot = -tau * (ctl.u - ctl.u_des);
        let rate = u_ddot / tau + u_dot;
        // u_des ramps at `rate`; u is the exact first-order response to it.
        let decay = (-tau * dt).exp();
        let u_des = ctl.u_des + rate * dt;
        let u = ctl.u_des + rate * dt - rate / tau + (ctl.u - ctl.u_des + rate / tau) * decay;
        let next = FblControllerState {
            u,
            u_des,
            u_dot: -tau * (u - u_des),
        };
        (ctl.u_des + 0.5 * rate * dt, next)
    } else {
        let next = FblControllerState {
            u: ctl.u + ctl.u_dot * dt + 0.5 * u_ddot * dt * dt,
            u_des: 0.0,
            u_dot: ctl.u_dot + u_ddot * dt,
        };
        let mid = ctl.u + 0.5 * ctl.u_dot * dt + 0.125 * u_ddot * dt * dt;
        (
            mid,
            FblControllerState {
                u_des: next.u,
                ..next
            },
        )
    };
    Ok((PlantCommand { u_des: u_cmd, alpha }, next))
}

/// Full control step from a reference: snap feedforward, body-frame law,
/// yaw law and extension integration.
pub fn fbl_control(
    x: &VehicleState,
    ctl: &FblControllerState,
    reference: &FlatReference,
    d: &DisturbanceTriple,
    gains: &FblGains,
    dt: f64,
) -> Result<(PlantCommand, FblControllerState)> {
    let s_ff = snap_feedforward_at(x, reference, gains, d);
    fbl_apply(x, ctl, &s_ff, yaw_alpha(x, reference, gains), gains, dt)
}
