//! Multirotor plant with first-order thrust lag and an additive acceleration
//! disturbance, plus the synthetic wind fields used as ground truth.
//!
//! World frame is z-up, so gravity is `(0, 0, -9.81)` and hover thrust is
//! `9.81 m/s^2`.

use crate::error::{Error, Result};
use crate::geometry::{exp_so3, integrate_rotation, Rotation, Vec3};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub p: Vec3,
    pub v: Vec3,
    pub r: Rotation,
    /// Body-frame angular velocity.
    pub omega: Vec3,
    /// Realized mass-normalized thrust along the body z-axis.
    pub u: f64,
}

impl VehicleState {
    /// At rest at `p` with zero tilt, heading `yaw`, thrust balancing gravity.
    pub fn hover(p: Vec3, yaw: f64) -> Self {
        Self {
            p,
            v: Vec3::zeros(),
            r: Rotation::from_yaw(yaw),
            omega: Vec3::zeros(),
            u: GRAVITY,
        }
    }

    pub fn z_axis(&self) -> Vec3 {
        self.r.z_axis()
    }

    pub fn yaw(&self) -> f64 {
        self.r.yaw()
    }

    /// Angular velocity in the world frame.
    pub fn omega_world(&self) -> Vec3 {
        self.r.apply(&self.omega)
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
            && self.omega.iter().all(|x| x.is_finite())
            && self.r.matrix().iter().all(|x| x.is_finite())
            && self.u.is_finite()
    }

    fn validate(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::InvalidState("non-finite vehicle state".into()));
        }
        if self.u < 0.0 {
            return Err(Error::InvalidState(format!("negative thrust {}", self.u)));
        }
        Ok(())
    }
}

/// Plant input: desired thrust (m/s^2) and body angular acceleration (rad/s^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantCommand {
    pub u_des: f64,
    pub alpha: Vec3,
}

impl PlantCommand {
    pub fn hover() -> Self {
        Self {
            u_des: GRAVITY,
            alpha: Vec3::zeros(),
        }
    }

    /// Clamps `u_des` into `[0, u_max]`; the flag reports whether it moved.
    pub fn clamped(&self, params: &PlantParams) -> (PlantCommand, bool) {
        let u = self.u_des.clamp(0.0, params.u_max);
        (
            PlantCommand {
                u_des: u,
                alpha: self.alpha,
            },
            u != self.u_des,
        )
    }

    fn validate(&self) -> Result<()> {
        if self.u_des.is_finite() && self.alpha.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidState("non-finite command".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantParams {
    /// True thrust-lag rate of the simulated vehicle (1/s).
    pub tau_u: f64,
    pub u_max: f64,
    pub gravity: Vec3,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self::new(10.0, 5.0).expect("default plant parameters are valid")
    }
}

impl PlantParams {
    /// `thrust_to_weight` sets `u_max = thrust_to_weight * 9.81`.
    pub fn new(tau_u: f64, thrust_to_weight: f64) -> Result<Self> {
        let p = Self {
            tau_u,
            u_max: thrust_to_weight * GRAVITY,
            gravity: Vec3::new(0.0, 0.0, -GRAVITY),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_u > 0.0 && self.tau_u.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "plant tau_u must be positive, got {}",
                self.tau_u
            )));
        }
        if !(self.u_max > self.gravity.norm()) {
            return Err(Error::InvalidParameter(format!(
                "u_max {} must exceed |g| {}",
                self.u_max,
                self.gravity.norm()
            )));
        }
        Ok(())
    }
}

/// Gaussian jet: `peak * exp(-|(p - center) / width|^2 / 2) - drag * v`.
///
/// An infinite width along an axis removes the dependence on that axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JetParams {
    pub center: Vec3,
    pub width: Vec3,
    pub peak: Vec3,
    pub drag: f64,
}

impl JetParams {
    fn profile(&self, p: &Vec3) -> f64 {
        let d = (p - self.center).component_div(&self.width);
        (-0.5 * d.norm_squared()).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindShape {
    None,
    UniformGust {
        accel: Vec3,
        drag: f64,
    },
    Jet(JetParams),
    /// Jet scaled by `(1 + cos(yaw - yaw0)) / 2`, emulating a plate whose
    /// exposed area depends on heading.
    YawPlate {
        jet: JetParams,
        yaw0: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindField {
    pub shape: WindShape,
    /// Output norm is clipped to this value.
    pub max_norm: f64,
}

impl Default for WindField {
    fn default() -> Self {
        Self::none()
    }
}

impl WindField {
    pub const DEFAULT_MAX_NORM: f64 = 30.0;

    pub fn none() -> Self {
        Self::new(WindShape::None)
    }

    pub fn new(shape: WindShape) -> Self {
        Self {
            shape,
            max_norm: Self::DEFAULT_MAX_NORM,
        }
    }
}

/// Ground-truth disturbance acceleration at position `p`, velocity `v`, yaw.
pub fn eval_wind(field: &WindField, p: &Vec3, v: &Vec3, yaw: f64) -> Vec3 {
    let f = match &field.shape {
        WindShape::None => return Vec3::zeros(),
        WindShape::UniformGust { accel, drag } => accel - v * *drag,
        WindShape::Jet(jet) => jet.peak * jet.profile(p) - v * jet.drag,
        WindShape::YawPlate { jet, yaw0 } => {
            let exposure = 0.5 * (1.0 + (yaw - yaw0).cos());
            jet.peak * (jet.profile(p) * exposure) - v * jet.drag
        }
    };
    let n = f.norm();
    if n > field.max_norm {
        f * (field.max_norm / n)
    } else {
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub p_dot: Vec3,
    pub v_dot: Vec3,
    /// World-frame angular velocity; `R_dot = R [omega]_x`.
    pub omega_world: Vec3,
    pub omega_dot: Vec3,
    pub u_dot: f64,
}

pub fn plant_derivative(
    x: &VehicleState,
    cmd: &PlantCommand,
    params: &PlantParams,
    field: &WindField,
) -> Result<StateDerivative> {
    x.validate()?;
    cmd.validate()?;
    let (cmd, _) = cmd.clamped(params);
    let fe = eval_wind(field, &x.p, &x.v, x.yaw());
    Ok(StateDerivative {
        p_dot: x.v,
        v_dot: x.z_axis() * x.u + params.gravity + fe,
        omega_world: x.omega_world(),
        omega_dot: cmd.alpha,
        u_dot: -params.tau_u * (x.u - cmd.u_des),
    })
}

/// Advances the plant by `dt` with the command held constant.
///
/// Translation uses classic RK4 with the disturbance evaluated at stage
/// states. Thrust lag and body rate are linear with constant input, so they
/// are propagated in closed form and sampled at the stage times; the attitude
/// at a stage time `h` is `R exp((w + a h / 2) h)`.
pub fn step(
    x: &VehicleState,
    cmd: &PlantCommand,
    params: &PlantParams,
    field: &WindField,
    dt: f64,
) -> Result<VehicleState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    x.validate()?;
    cmd.validate()?;
    let (cmd, _) = cmd.clamped(params);
    let thrust_at = |h: f64| cmd.u_des + (x.u - cmd.u_des) * (-params.tau_u * h).exp();
    let rotation_at = |h: f64| {
        let phi = (x.omega + cmd.alpha * (0.5 * h)) * h;
        x.r.compose(&exp_so3(&phi))
    };
    let accel = |h: f64, p: &Vec3, v: &Vec3| {
        let r = rotation_at(h);
        r.z_axis() * thrust_at(h) + params.gravity + eval_wind(field, p, v, r.yaw())
    };

    let half = 0.5 * dt;
    let k1v = accel(0.0, &x.p, &x.v);
    let k1p = x.v;
    let p2 = x.p + k1p * half;
    let v2 = x.v + k1v * half;
    let k2v = accel(half, &p2, &v2);
    let k2p = v2;
    let p3 = x.p + k2p * half;
    let v3 = x.v + k2v * half;
    let k3v = accel(half, &p3, &v3);
    let k3p = v3;
    let p4 = x.p + k3p * dt;
    let v4 = x.v + k3v * dt;
    let k4v = accel(dt, &p4, &v4);
    let k4p = v4;

    let next = VehicleState {
        p: x.p + (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (dt / 6.0),
        v: x.v + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0),
        r: integrate_rotation(&x.r, &(x.omega + cmd.alpha * half), dt),
        omega: x.omega + cmd.alpha * dt,
        u: thrust_at(dt).max(0.0),
    };
    if !next.is_finite() {
        return Err(Error::InvalidState(
            "integration produced non-finite state".into(),
        ));
    }
    Ok(next)
}
