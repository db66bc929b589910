//! Two-rate closed-loop simulation.

use super::config::{Compensation, ControllerKind, ScenarioConfig};
use crate::baselines::{
    adaptive_update, attitude_loop, position_loop, AdaptiveEstimatorState, AttitudeLaw, AttitudeTarget,
};
use crate::dynamics::{eval_wind, step, PlantCommand, VehicleState};
use crate::error::Result;
use crate::fbl::{fbl_apply, snap_feedforward_at, yaw_alpha, DisturbanceTriple, FblControllerState};
use crate::geometry::Vec3;
use crate::learner::{build_pair, disturbance_triple_for_state, DisturbanceModel};
use crate::trajectories::{FlatReference, Trajectory};

/// One inner-loop sample, taken before the plant step it commands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub t: f64,
    pub p: Vec3,
    pub v: Vec3,
    pub yaw: f64,
    pub omega: Vec3,
    pub u: f64,
    pub p_des: Vec3,
    pub v_des: Vec3,
    pub yaw_des: f64,
    pub u_cmd: f64,
    pub alpha: Vec3,
    pub fe_true: Vec3,
    pub fe_pred: Vec3,
    pub d_hat: Vec3,
    pub saturated: bool,
}

impl Record {
    pub fn position_error(&self) -> f64 {
        (self.p - self.p_des).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub records: Vec<Record>,
    /// Reason the run stopped early, if it did.
    pub aborted: Option<String>,
    /// Outer ticks at which the learner ran. The first has no previous
    /// sample and so builds no pair.
    pub learner_ticks: usize,
    /// Pairs passed to the learner, including skipped outliers.
    pub learner_updates: usize,
    pub learner_skipped: usize,
    /// Inner steps whose command hit a plant limit.
    pub saturated_steps: usize,
}

impl RunLog {
    pub fn is_complete(&self) -> bool {
        self.aborted.is_none()
    }
}

/// Everything carried across outer ticks.
struct Loop<'a> {
    cfg: &'a ScenarioConfig,
    x: VehicleState,
    fbl: FblControllerState,
    adaptive: AdaptiveEstimatorState,
    model: Option<DisturbanceModel>,
    /// Realized-thrust estimate for the baselines: the applied command
    /// passed through the thrust-lag model at `controller.tau_u`.
    u_est: f64,
    yaw_accel_cmd: f64,
}

/// Runs a scenario to completion or to the first controller or plant failure.
///
/// Configuration errors are returned as `Err`; failures during the run stop
/// it and are reported through [`RunLog::aborted`] with the records so far.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunLog> {
    run_with_model(cfg, None).map(|(log, _)| log)
}

/// Like [`run_scenario`], optionally warm-starting the learner, and returning
/// the final model when one was used.
pub fn run_with_model(
    cfg: &ScenarioConfig,
    warm_start: Option<DisturbanceModel>,
) -> Result<(RunLog, Option<DisturbanceModel>)> {
    let pose = cfg.trajectory.initial_pose();
    let mut x0 = VehicleState::hover(pose.p, pose.yaw);
    if !matches!(cfg.trajectory, Trajectory::Steps { .. }) {
        x0.v = cfg.trajectory.sample(0.0).v;
    }
    let model = if cfg.compensation.is_learned() {
        match warm_start {
            Some(m) => Some(m),
            None => Some(DisturbanceModel::new(cfg.learner.features.clone())?),
        }
    } else {
        None
    };
    let mut fbl_gains = cfg.fbl;
    fbl_gains.delay_compensation = cfg.controller != ControllerKind::FblNoDelayComp;
    let mut state = Loop {
        cfg,
        fbl: FblControllerState::engage(&x0, &Vec3::zeros(), &fbl_gains),
        x: x0,
        adaptive: AdaptiveEstimatorState::new(cfg.adaptive),
        model,
        u_est: x0.u,
        yaw_accel_cmd: 0.0,
    };
    let mut log = RunLog {
        records: Vec::with_capacity(cfg.outer_steps() * cfg.inner_steps_per_outer()),
        aborted: None,
        learner_ticks: 0,
        learner_updates: 0,
        learner_skipped: 0,
        saturated_steps: 0,
    };
    let inner = cfg.inner_steps_per_outer();
    let mut prev: Option<(VehicleState, f64)> = None;

    for k in 0..cfg.outer_steps() {
        let t_outer = k as f64 * cfg.dt_outer;
        if let Err(e) = state.learn(&mut prev, &mut log) {
            log.aborted = Some(format!("t={t_outer:.3}: {e}"));
            break;
        }
        let reference = cfg.trajectory.sample(t_outer);
        let d = match state.disturbance() {
            Ok(d) => d,
            Err(e) => {
                log.aborted = Some(format!("t={t_outer:.3}: {e}"));
                break;
            }
        };
        let outer = match state.outer(&reference, &d) {
            Ok(o) => o,
            Err(e) => {
                log::warn!("{}: aborting at t={t_outer:.3}: {e}", cfg.name);
                log.aborted = Some(format!("t={t_outer:.3}: {e}"));
                break;
            }
        };
        for i in 0..inner {
            let t = t_outer + i as f64 * cfg.dt_inner;
            if let Err(e) = state.inner(t, &reference, &d, &outer, &mut log) {
                log::warn!("{}: aborting at t={t:.3}: {e}", cfg.name);
                log.aborted = Some(format!("t={t:.3}: {e}"));
                break;
            }
        }
        if log.aborted.is_some() {
            break;
        }
    }
    if let Some(m) = &state.model {
        log.learner_skipped = m.skipped();
    }
    Ok((log, state.model))
}

enum Outer {
    Fbl {
        s_ff: Vec3,
    },
    Cascaded {
        target: AttitudeTarget,
        law: AttitudeLaw,
    },
}

impl Loop<'_> {
    fn learn(&mut self, prev: &mut Option<(VehicleState, f64)>, log: &mut RunLog) -> Result<()> {
        let Some(model) = self.model.as_mut() else {
            return Ok(());
        };
        log.learner_ticks += 1;
        if let Some((px, pu)) = prev {
            let pair = build_pair(px, *pu, &self.x, self.cfg.dt_outer, self.cfg.learner.selection);
            model.update(&pair)?;
            log.learner_updates += 1;
        }
        *prev = Some((self.x, self.thrust_estimate()));
        Ok(())
    }

    /// Estimated realized thrust: the extension state for FBL, the lag
    /// model of the applied command otherwise.
    fn thrust_estimate(&self) -> f64 {
        if self.cfg.controller.is_fbl() {
            self.fbl.u
        } else {
            self.u_est
        }
    }

    fn disturbance(&self) -> Result<DisturbanceTriple> {
        let cfg = self.cfg;
        Ok(match cfg.compensation {
            Compensation::None => DisturbanceTriple::default(),
            Compensation::Adaptive => DisturbanceTriple::constant(self.adaptive.d_hat),
            Compensation::Learned | Compensation::LearnedNoDynamics => {
                let model = self.model.as_ref().expect("learned compensation has a model");
                let u_dot = if cfg.controller.is_fbl() {
                    self.fbl.u_dot
                } else {
                    0.0
                };
                let u = self.thrust_estimate();
                let full = disturbance_triple_for_state(
                    model,
                    cfg.learner.selection,
                    &self.x,
                    u,
                    u_dot,
                    self.yaw_accel_cmd,
                )?;
                if cfg.compensation == Compensation::Learned {
                    full
                } else {
                    DisturbanceTriple::constant(full.fe)
                }
            }
        })
    }

    fn outer(&self, reference: &FlatReference, d: &DisturbanceTriple) -> Result<Outer> {
        let cfg = self.cfg;
        Ok(match cfg.controller {
            ControllerKind::Fbl | ControllerKind::FblNoDelayComp => Outer::Fbl {
                s_ff: snap_feedforward_at(&self.x, reference, &self.fbl_gains(), d),
            },
            ControllerKind::Cascaded | ControllerKind::ReducedAttitude => Outer::Cascaded {
                target: position_loop(&self.x, reference, &cfg.cascaded, d)?,
                law: if cfg.controller == ControllerKind::Cascaded {
                    AttitudeLaw::Geometric
                } else {
                    AttitudeLaw::Reduced
                },
            },
        })
    }

    fn fbl_gains(&self) -> crate::fbl::FblGains {
        let mut g = self.cfg.fbl;
        g.delay_compensation = self.cfg.controller != ControllerKind::FblNoDelayComp;
        g
    }

    fn inner(
        &mut self,
        t: f64,
        reference: &FlatReference,
        d: &DisturbanceTriple,
        outer: &Outer,
        log: &mut RunLog,
    ) -> Result<()> {
        let cfg = self.cfg;
        let dt = cfg.dt_inner;
        let u_before = self.thrust_estimate();
        let cmd: PlantCommand = match outer {
            Outer::Fbl { s_ff } => {
                let gains = self.fbl_gains();
                let alpha_z = yaw_alpha(&self.x, reference, &gains);
                let (cmd, next) = fbl_apply(&self.x, &self.fbl, s_ff, alpha_z, &gains, dt)?;
                self.fbl = next;
                cmd
            }
            Outer::Cascaded { target, law } => attitude_loop(&self.x, target, &cfg.cascaded, *law),
        };
        self.yaw_accel_cmd = cmd.alpha.z;
        let (applied, saturated) = cmd.clamped(&cfg.plant);
        if !cfg.controller.is_fbl() {
            let decay = (-cfg.fbl.tau_u * dt).exp();
            self.u_est = applied.u_des + (self.u_est - applied.u_des) * decay;
        }
        if saturated {
            log.saturated_steps += 1;
        }
        if cfg.compensation == Compensation::Adaptive {
            let u = 0.5 * (u_before + self.thrust_estimate());
            self.adaptive = adaptive_update(&self.adaptive, &self.x, u, dt);
        }
        // The controller sees the reference held at the outer tick; metrics
        // compare against the reference at the record's own time.
        let truth = cfg.trajectory.sample(t);
        log.records.push(Record {
            t,
            p: self.x.p,
            v: self.x.v,
            yaw: self.x.yaw(),
            omega: self.x.omega,
            u: self.x.u,
            p_des: truth.p,
            v_des: truth.v,
            yaw_des: truth.yaw,
            u_cmd: applied.u_des,
            alpha: applied.alpha,
            fe_true: eval_wind(&cfg.wind, &self.x.p, &self.x.v, self.x.yaw()),
            fe_pred: d.fe,
            d_hat: self.adaptive.d_hat,
            saturated,
        });
        self.x = step(&self.x, &applied, &cfg.plant, &cfg.wind, dt)?;
        Ok(())
    }
}
