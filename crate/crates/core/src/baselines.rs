//! Comparison controllers: a cascaded geometric SO(3) controller, a
//! tilt-prioritized (reduced attitude) variant, and an L1-style acceleration
//! disturbance estimator that can be layered on either.
//!
//! Both attitude controllers share the same position loop. They differ only
//! in the attitude error: the geometric controller uses the full SO(3) error
//! `vee(Rd^T R - R^T Rd) / 2`, the reduced controller separates the rotation
//! that aligns the thrust axis from the residual rotation about it.

use crate::dynamics::{PlantCommand, VehicleState};
use crate::error::{Error, Result};
use crate::fbl::{gravity, DisturbanceTriple};
use crate::geometry::{exp_so3, vee, wrap_angle, Mat3, Rotation, Vec3, E3};
use crate::trajectories::FlatReference;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadedGains {
    pub k_p: Vec3,
    pub k_v: Vec3,
    pub k_theta: Vec3,
    pub k_omega: Vec3,
    /// Minimum norm of the desired thrust vector (m/s^2).
    pub u_min: f64,
}

impl Default for CascadedGains {
    fn default() -> Self {
        Self {
            k_p: Vec3::new(5.47, 5.47, 10.0),
            k_v: Vec3::new(3.16, 3.16, 6.0),
            k_theta: Vec3::new(190.0, 190.0, 30.0),
            k_omega: Vec3::new(25.0, 25.0, 10.0),
            u_min: 1.0,
        }
    }
}

impl CascadedGains {
    pub fn validate(&self) -> Result<()> {
        let all = [self.k_p, self.k_v, self.k_theta, self.k_omega];
        if all.iter().all(|k| k.iter().all(|x| *x > 0.0)) && self.u_min > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter("cascaded gains must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttitudeLaw {
    /// Full SO(3) error.
    Geometric,
    /// Tilt first, then yaw about the body thrust axis.
    Reduced,
}

/// Output of the position loop, held by the attitude loop between updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeTarget {
    /// Commanded acceleration including disturbance cancellation.
    pub a_cmd: Vec3,
    pub r_des: Rotation,
    /// Desired angular velocity in the desired body frame.
    pub omega_des: Vec3,
    /// Its time derivative, also in the desired body frame.
    pub omega_dot_des: Vec3,
}

/// Position loop: PD plus acceleration feedforward, minus the disturbance
/// estimate; builds the desired attitude from the thrust direction and
/// reference heading. The disturbance rates, when known, enter the attitude
/// rate and acceleration feedforward.
pub fn position_loop(
    x: &VehicleState,
    reference: &FlatReference,
    gains: &CascadedGains,
    d: &DisturbanceTriple,
) -> Result<AttitudeTarget> {
    let a_cmd = -gains.k_p.component_mul(&(x.p - reference.p))
        - gains.k_v.component_mul(&(x.v - reference.v))
        + reference.a
        - d.fe;
    let thrust_vec = a_cmd - gravity();
    let n = thrust_vec.norm();
    if !(n > gains.u_min) {
        return Err(Error::FreeFallCommand(n));
    }
    let z_d = thrust_vec / n;
    let (sy, cy) = reference.yaw.sin_cos();
    let heading = Vec3::new(cy, sy, 0.0);
    let mut w = z_d.cross(&heading);
    if w.norm() < 1e-6 {
        // heading parallel to thrust: keep the current body y direction
        w = z_d.cross(&x.r.matrix().column(0).into_owned());
    }
    let m = w.norm();
    let y_d = w / m;
    let x_d = y_d.cross(&z_d);
    let r_des = Rotation::from_matrix_unchecked(Mat3::from_columns(&[x_d, y_d, z_d]));

    // Rate and angular-acceleration feedforward from the reference jerk and
    // snap less the disturbance rates, taken as the thrust-vector derivatives.
    let (j, s) = (reference.j - d.fe_dot, reference.s - d.fe_ddot);
    let z_dot = (j - z_d * z_d.dot(&j)) / n;
    let z_ddot = (s - z_d * z_d.dot(&s) - z_dot * (2.0 * z_d.dot(&j)) - z_d * z_dot.dot(&j)) / n;
    let h_dot = Vec3::new(-sy, cy, 0.0) * reference.yaw_rate;
    let h_ddot = Vec3::new(-sy, cy, 0.0) * reference.yaw_accel - heading * reference.yaw_rate.powi(2);
    let w_dot = z_dot.cross(&heading) + z_d.cross(&h_dot);
    let w_ddot = z_ddot.cross(&heading) + z_dot.cross(&h_dot) * 2.0 + z_d.cross(&h_ddot);
    let p = -z_dot.dot(&y_d);
    let q = z_dot.dot(&x_d);
    let r = -x_d.dot(&w_dot) / m;
    let x_d_dot = y_d * r - z_d * q;
    let m_dot = y_d.dot(&w_dot);
    let omega_des = Vec3::new(p, q, r);
    let omega_dot_des = Vec3::new(
        -z_ddot.dot(&y_d) + q * r,
        z_ddot.dot(&x_d) - p * r,
        -(x_d_dot.dot(&w_dot) + x_d.dot(&w_ddot)) / m + x_d.dot(&w_dot) * m_dot / (m * m),
    );
    Ok(AttitudeTarget {
        a_cmd,
        r_des,
        omega_des,
        omega_dot_des,
    })
}

/// Attitude error as used by the geometric controller; zero at `R = Rd`.
pub fn so3_error(r: &Rotation, r_des: &Rotation) -> Vec3 {
    let m = r_des.matrix().transpose() * r.matrix() - r.matrix().transpose() * r_des.matrix();
    vee(&m) * 0.5
}

/// Tilt and yaw errors in the body frame, both pointing from the current
/// attitude towards the desired one. The tilt part has zero z entry and
/// magnitude `sin` of the tilt angle; the yaw part is the wrapped angle about
/// the body thrust axis that remains once the thrust axes agree.
pub fn tilt_yaw_error(r: &Rotation, r_des: &Rotation) -> (Vec3, f64) {
    let b = r.apply_inverse(&r_des.z_axis());
    let tilt = E3.cross(&b);
    let s = tilt.norm();
    let angle = s.atan2(b.z);
    let axis = if s > 1e-12 {
        tilt / s
    } else if b.z > 0.0 {
        Vec3::zeros()
    } else {
        Vec3::x()
    };
    let r_tilt = r.compose(&exp_so3(&(axis * angle)));
    let m = r_tilt.matrix().transpose() * r_des.matrix();
    let yaw = wrap_angle(m[(1, 0)].atan2(m[(0, 0)]));
    (tilt, yaw)
}

/// Attitude loop producing body angular acceleration; thrust is the
/// projection of the commanded acceleration on the current body axis.
pub fn attitude_loop(
    x: &VehicleState,
    target: &AttitudeTarget,
    gains: &CascadedGains,
    law: AttitudeLaw,
) -> PlantCommand {
    let u_des = (target.a_cmd - gravity()).dot(&x.z_axis());
    let rel = x.r.transpose().compose(&target.r_des);
    let omega_ref = rel.apply(&target.omega_des);
    let e_omega = x.omega - omega_ref;
    let feedforward = rel.apply(&target.omega_dot_des) - x.omega.cross(&omega_ref);
    let alpha = match law {
        AttitudeLaw::Geometric => {
            let e_r = so3_error(&x.r, &target.r_des);
            -gains.k_theta.component_mul(&e_r) - gains.k_omega.component_mul(&e_omega) + feedforward
        }
        AttitudeLaw::Reduced => {
            let (tilt, yaw) = tilt_yaw_error(&x.r, &target.r_des);
            gains.k_theta.component_mul(&(tilt + E3 * yaw)) - gains.k_omega.component_mul(&e_omega)
                + feedforward
        }
    };
    PlantCommand { u_des, alpha }
}

pub fn cascaded_control(
    x: &VehicleState,
    reference: &FlatReference,
    gains: &CascadedGains,
    d_hat: &Vec3,
) -> Result<PlantCommand> {
    let target = position_loop(x, reference, gains, &DisturbanceTriple::constant(*d_hat))?;
    Ok(attitude_loop(x, &target, gains, AttitudeLaw::Geometric))
}

pub fn reduced_attitude_control(
    x: &VehicleState,
    reference: &FlatReference,
    gains: &CascadedGains,
    d_hat: &Vec3,
) -> Result<PlantCommand> {
    let target = position_loop(x, reference, gains, &DisturbanceTriple::constant(*d_hat))?;
    Ok(attitude_loop(x, &target, gains, AttitudeLaw::Reduced))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveParams {
    /// Adaptation rate of the raw estimate (1/s).
    pub gain: f64,
    /// Low-pass bandwidth applied to the raw estimate (rad/s).
    pub bandwidth: f64,
    /// Norm bound on both estimates (m/s^2).
    pub bound: f64,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        Self {
            gain: 100.0,
            bandwidth: 5.0,
            bound: 15.0,
        }
    }
}

/// Velocity-predictor disturbance estimator with a low-pass output filter.
///
/// Each update compares the measured velocity with the one-step prediction
/// made at the previous update (nominal thrust and gravity plus the current
/// raw estimate). The prediction error moves the raw estimate towards the
/// finite-difference disturbance with rate `gain`; the output is the raw
/// estimate filtered at `bandwidth`. Both discrete updates are the exact
/// zero-order-hold equivalents of the continuous first-order lags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveEstimatorState {
    pub params: AdaptiveParams,
    pub raw: Vec3,
    pub d_hat: Vec3,
    predicted_v: Option<Vec3>,
}

impl AdaptiveEstimatorState {
    pub fn new(params: AdaptiveParams) -> Self {
        Self {
            params,
            raw: Vec3::zeros(),
            d_hat: Vec3::zeros(),
            predicted_v: None,
        }
    }
}

fn project(v: Vec3, bound: f64) -> Vec3 {
    let n = v.norm();
    if n > bound {
        v * (bound / n)
    } else {
        v
    }
}

fn lag_factor(rate: f64, dt: f64) -> f64 {
    if rate.is_infinite() {
        1.0
    } else {
        1.0 - (-rate * dt).exp()
    }
}

/// One estimator update; `dt` is the interval to the next update and
/// `u_applied` the thrust the caller believes acts over it.
pub fn adaptive_update(
    est: &AdaptiveEstimatorState,
    x: &VehicleState,
    u_applied: f64,
    dt: f64,
) -> AdaptiveEstimatorState {
    let mut next = *est;
    let p = est.params;
    if let Some(predicted) = est.predicted_v {
        let innovation = (x.v - predicted) / dt;
        next.raw = project(est.raw + innovation * lag_factor(p.gain, dt), p.bound);
        next.d_hat = project(
            est.d_hat + (next.raw - est.d_hat) * lag_factor(p.bandwidth, dt),
            p.bound,
        );
    }
    next.predicted_v = Some(x.v + (x.z_axis() * u_applied + gravity() + next.raw) * dt);
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::GRAVITY;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn hover_commands() {
        let g = CascadedGains::default();
        let x = VehicleState::hover(Vec3::new(1.0, -1.0, 2.0), 0.4);
        let r = FlatReference::hold(x.p, 0.4);
        for cmd in [
            cascaded_control(&x, &r, &g, &Vec3::zeros()).unwrap(),
            reduced_attitude_control(&x, &r, &g, &Vec3::zeros()).unwrap(),
        ] {
            assert_relative_eq!(cmd.u_des, GRAVITY, epsilon = 1e-12);
            assert!(cmd.alpha.amax() < 1e-12);
        }
    }

    #[test]
    fn position_gain_example() {
        let g = CascadedGains::default();
        let x = VehicleState::hover(Vec3::x(), 0.0);
        let t = position_loop(&x, &FlatReference::default(), &g, &DisturbanceTriple::default()).unwrap();
        assert_relative_eq!(t.a_cmd, Vec3::new(-5.47, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn free_fall_is_rejected() {
        let g = CascadedGains::default();
        let x = VehicleState::hover(Vec3::zeros(), 0.0);
        let r = FlatReference {
            a: gravity(),
            ..FlatReference::default()
        };
        assert!(matches!(
            position_loop(&x, &r, &g, &DisturbanceTriple::default()),
            Err(Error::FreeFallCommand(_))
        ));
    }

    #[test]
    fn pure_yaw_error_has_no_tilt_torque() {
        let g = CascadedGains::default();
        let x = VehicleState::hover(Vec3::zeros(), 0.0);
        let r = FlatReference::hold(Vec3::zeros(), FRAC_PI_2);
        let cmd = reduced_attitude_control(&x, &r, &g, &Vec3::zeros()).unwrap();
        assert_eq!(cmd.alpha.x, 0.0);
        assert_eq!(cmd.alpha.y, 0.0);
        assert_relative_eq!(cmd.alpha.z, 30.0 * FRAC_PI_2, epsilon = 1e-9);
    }

    #[test]
    fn tilt_only_errors_agree() {
        use rand::{Rng, SeedableRng};
        let g = CascadedGains::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let mut x = VehicleState::hover(Vec3::zeros(), 0.0);
            x.r = exp_so3(&Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-PI..PI),
            ));
            x.omega = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            // desired attitude: current tilted further about a horizontal body axis
            let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0);
            let r_des = x.r.compose(&exp_so3(&axis));
            let target = AttitudeTarget {
                a_cmd: r_des.z_axis() * 12.0 + gravity(),
                r_des,
                omega_des: Vec3::new(0.1, -0.2, 0.0),
                omega_dot_des: Vec3::new(0.3, 0.1, 0.0),
            };
            let (_, yaw) = tilt_yaw_error(&x.r, &r_des);
            assert!(yaw.abs() < 1e-9);
            let a = attitude_loop(&x, &target, &g, AttitudeLaw::Geometric);
            let b = attitude_loop(&x, &target, &g, AttitudeLaw::Reduced);
            assert!((a.alpha - b.alpha).amax() < 1e-9, "{} {}", a.alpha, b.alpha);
            assert_eq!(a.u_des, b.u_des);
        }
    }

    #[test]
    fn rate_feedforward_matches_attitude_differences() {
        use crate::trajectories::{weave_reference, WeaveParams};
        let params = WeaveParams::with_envelope(Vec3::new(0.0, 0.0, 1.5), 2.7, 5.5);
        let reference = |t: f64| {
            let mut r = weave_reference(t, &params);
            r.yaw = 0.3 * t + 0.2 * t * t;
            r.yaw_rate = 0.3 + 0.4 * t;
            r.yaw_accel = 0.4;
            r
        };
        let target = |t: f64| {
            let r = reference(t);
            let mut x = VehicleState::hover(r.p, 0.0);
            x.v = r.v;
            position_loop(&x, &r, &CascadedGains::default(), &DisturbanceTriple::default()).unwrap()
        };
        let h = 1e-4;
        for k in 0..40 {
            let t = 0.37 * k as f64;
            let now = target(t);
            let rd = now.r_des.matrix();
            let rd_dot = (target(t + h).r_des.matrix() - target(t - h).r_des.matrix()) / (2.0 * h);
            let omega_fd = vee(&(rd.transpose() * rd_dot));
            let omega_dot_fd = (target(t + h).omega_des - target(t - h).omega_des) / (2.0 * h);
            assert!(
                (omega_fd - now.omega_des).amax() < 1e-6,
                "{omega_fd} {}",
                now.omega_des
            );
            assert!(
                (omega_dot_fd - now.omega_dot_des).amax() < 1e-5,
                "{omega_dot_fd} {}",
                now.omega_dot_des
            );
        }
    }

    fn hover_with(v: Vec3) -> VehicleState {
        let mut x = VehicleState::hover(Vec3::zeros(), 0.0);
        x.v = v;
        x
    }

    #[test]
    fn adaptive_stays_zero_without_disturbance() {
        let mut est = AdaptiveEstimatorState::new(AdaptiveParams::default());
        for _ in 0..1000 {
            est = adaptive_update(&est, &hover_with(Vec3::zeros()), GRAVITY, 0.002);
        }
        assert!(est.d_hat.norm() < 1e-12);
    }

    #[test]
    fn adaptive_constant_disturbance_follows_cascaded_lags() {
        let p = AdaptiveParams::default();
        let dt = 0.002;
        let sigma = Vec3::x();
        let mut est = AdaptiveEstimatorState::new(p);
        let mut v = Vec3::zeros();
        let mut t = 0.0;
        let mut checked = false;
        for _ in 0..2000 {
            est = adaptive_update(&est, &hover_with(v), GRAVITY, dt);
            // closed form for two cascaded first-order lags driven by a step
            // that begins one sample after the first update
            let tau = t - dt;
            if tau > 0.0 && (tau - 3.0 / p.bandwidth).abs() < 0.5 * dt {
                let (g, w) = (p.gain, p.bandwidth);
                let expect = 1.0 - (g * (-w * tau).exp() - w * (-g * tau).exp()) / (g - w);
                assert!((est.d_hat.x - expect).abs() < 0.01, "{} {}", est.d_hat.x, expect);
                checked = true;
            }
            v += sigma * dt;
            t += dt;
        }
        assert!(checked);
        assert!((est.d_hat - sigma).norm() < 0.01);
    }

    #[test]
    fn adaptive_degenerate_limit_is_finite_difference() {
        let p = AdaptiveParams {
            gain: f64::INFINITY,
            bandwidth: f64::INFINITY,
            bound: 1e9,
        };
        let dt = 0.01;
        let mut est = AdaptiveEstimatorState::new(p);
        let mut prev: Option<Vec3> = None;
        for k in 0..200 {
            let t = k as f64 * dt;
            let v = Vec3::new((2.0 * t).sin(), 0.3 * t, (t * t).cos());
            est = adaptive_update(&est, &hover_with(v), GRAVITY, dt);
            if let Some(pv) = prev {
                let raw_fd = (v - pv) / dt;
                assert!((est.d_hat - raw_fd).amax() < 1e-9);
            }
            prev = Some(v);
        }
    }

    #[test]
    fn adaptive_bound_projects() {
        let p = AdaptiveParams {
            bound: 2.0,
            ..AdaptiveParams::default()
        };
        let mut est = AdaptiveEstimatorState::new(p);
        let mut v = Vec3::zeros();
        for _ in 0..5000 {
            est = adaptive_update(&est, &hover_with(v), GRAVITY, 0.002);
            v += Vec3::new(10.0, 0.0, 0.0) * 0.002;
        }
        assert!(est.d_hat.norm() <= 2.0 + 1e-12);
        assert!(est.raw.norm() <= 2.0 + 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn hover_agrees_with_fbl(px in -5.0..5.0f64, py in -5.0..5.0f64, pz in 0.0..5.0f64, yaw in -PI..PI) {
            use crate::fbl::{fbl_control, DisturbanceTriple, FblControllerState, FblGains};
            let x = VehicleState::hover(Vec3::new(px, py, pz), yaw);
            let r = FlatReference::hold(x.p, yaw);
            let fg = FblGains::default();
            let ctl = FblControllerState::engage(&x, &Vec3::zeros(), &fg);
            let (fbl, _) = fbl_control(&x, &ctl, &r, &DisturbanceTriple::default(), &fg, 0.002).unwrap();
            let g = CascadedGains::default();
            for cmd in [
                cascaded_control(&x, &r, &g, &Vec3::zeros()).unwrap(),
                reduced_attitude_control(&x, &r, &g, &Vec3::zeros()).unwrap(),
            ] {
                proptest::prop_assert!((cmd.u_des - fbl.u_des).abs() < 1e-12);
                proptest::prop_assert!((cmd.alpha - fbl.alpha).amax() < 1e-9);
            }
        }
    }
}
