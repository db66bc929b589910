//! Reference generators producing the flat output (position, yaw) together
//! with its derivative chain up to snap.

use crate::geometry::{wrap_angle, Vec3};
use std::f64::consts::{FRAC_PI_2, TAU};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlatReference {
    pub p: Vec3,
    pub v: Vec3,
    pub a: Vec3,
    pub j: Vec3,
    pub s: Vec3,
    pub yaw: f64,
    pub yaw_rate: f64,
    pub yaw_accel: f64,
}

impl FlatReference {
    /// Stationary setpoint.
    pub fn hold(p: Vec3, yaw: f64) -> Self {
        Self {
            p,
            yaw,
            ..Self::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.p, self.v, self.a, self.j, self.s]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
            && self.yaw.is_finite()
            && self.yaw_rate.is_finite()
            && self.yaw_accel.is_finite()
    }
}

/// A pose: position (m) and yaw (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub p: Vec3,
    pub yaw: f64,
}

impl Pose {
    pub fn new(p: Vec3, yaw: f64) -> Self {
        Self { p, yaw }
    }
}

/// Instantaneous setpoint change at `t = 0`; all desired derivatives are zero.
pub fn step_reference(t: f64, from: Pose, to: Pose) -> FlatReference {
    let target = if t < 0.0 { from } else { to };
    FlatReference::hold(target.p, target.yaw)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeaveParams {
    pub center: Vec3,
    pub amplitude: Vec3,
    /// Angular frequency per axis (rad/s).
    pub frequency: Vec3,
    pub phase: Vec3,
    pub yaw: f64,
}

/// Amplitude ratios, frequency multiples and phases of the default weave.
/// x runs at the base frequency, y and z at twice it, z a quarter turn ahead,
/// which traces a figure eight with a vertical bob.
const WEAVE_SHAPE: ([f64; 3], [f64; 3], [f64; 3]) =
    ([1.0, 0.5, 0.25], [1.0, 2.0, 2.0], [0.0, 0.0, FRAC_PI_2]);

impl WeaveParams {
    /// Default weave scaled so that `max |v| = vmax` and `max |a| = amax`.
    ///
    /// For a fixed shape, peak speed scales as `A w` and peak acceleration as
    /// `A w^2`, so both constraints are met by solving for the scale `A` and
    /// base frequency `w` from the unit-shape peaks.
    pub fn with_envelope(center: Vec3, vmax: f64, amax: f64) -> Self {
        let (ratio, mult, phase) = WEAVE_SHAPE;
        let unit = WeaveParams {
            center: Vec3::zeros(),
            amplitude: Vec3::from(ratio),
            frequency: Vec3::from(mult),
            phase: Vec3::from(phase),
            yaw: 0.0,
        };
        let cv = unit.peak(|r| r.v.norm());
        let ca = unit.peak(|r| r.a.norm());
        let w = (amax / vmax) * (cv / ca);
        let scale = vmax / (cv * w);
        WeaveParams {
            center,
            amplitude: Vec3::from(ratio) * scale,
            frequency: Vec3::from(mult) * w,
            phase: Vec3::from(phase),
            yaw: 0.0,
        }
    }

    /// Composite period; assumes frequencies are integer multiples of the x one.
    pub fn period(&self) -> f64 {
        let base = self
            .frequency
            .iter()
            .copied()
            .filter(|w| *w > 0.0)
            .fold(f64::INFINITY, f64::min);
        if base.is_finite() {
            TAU / base
        } else {
            f64::INFINITY
        }
    }

    /// Maximum of `f` over one period, by dense sampling then golden-section
    /// refinement around the best sample.
    pub fn peak(&self, f: impl Fn(&FlatReference) -> f64) -> f64 {
        let period = self.period();
        if !period.is_finite() {
            return f(&weave_reference(0.0, self));
        }
        let n = 4096;
        let h = period / n as f64;
        let g = |t: f64| f(&weave_reference(t, self));
        let (best_i, _) = (0..n)
            .map(|i| (i, g(i as f64 * h)))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let (mut lo, mut hi) = ((best_i as f64 - 1.0) * h, (best_i as f64 + 1.0) * h);
        let ratio = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let a = hi - ratio * (hi - lo);
            let b = lo + ratio * (hi - lo);
            if g(a) > g(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        g(0.5 * (lo + hi)).max(g(best_i as f64 * h))
    }
}

/// Per-axis sinusoids with exact derivatives through snap; yaw is constant.
pub fn weave_reference(t: f64, params: &WeaveParams) -> FlatReference {
    let mut r = FlatReference::hold(params.center, params.yaw);
    for i in 0..3 {
        let (a, w) = (params.amplitude[i], params.frequency[i]);
        let (s, c) = (w * t + params.phase[i]).sin_cos();
        r.p[i] += a * s;
        r.v[i] = a * w * c;
        r.a[i] = -a * w * w * s;
        r.j[i] = -a * w * w * w * c;
        r.s[i] = a * w * w * w * w * s;
    }
    r
}

/// 120 deg/s in rad/s.
pub const DEFAULT_YAW_RATE: f64 = TAU / 3.0;

/// Constant-rate yaw about a fixed position for `revolutions` turns, then hold.
pub fn yaw_in_place_reference(t: f64, p: Vec3, rate: f64, revolutions: f64) -> FlatReference {
    let end = revolutions * TAU / rate.abs();
    let mut r = FlatReference::hold(p, 0.0);
    if t < end {
        r.yaw = wrap_angle(rate * t);
        r.yaw_rate = rate;
    } else {
        r.yaw = wrap_angle(rate * end);
    }
    r
}

/// Reference selection used by scenarios.
#[derive(Debug, Clone, PartialEq)]
pub enum Trajectory {
    Hover(Pose),
    /// Alternates between `from` and `to` every `hold` seconds, `count`
    /// setpoint changes in total (the first at `t = 0`).
    Steps {
        from: Pose,
        to: Pose,
        hold: f64,
        count: usize,
    },
    /// `circuits_per_trial` periods form one trial.
    Weave {
        params: WeaveParams,
        circuits_per_trial: usize,
    },
    YawInPlace {
        p: Vec3,
        rate: f64,
        revolutions_per_trial: f64,
        trials: usize,
    },
}

impl Trajectory {
    pub fn sample(&self, t: f64) -> FlatReference {
        match self {
            Trajectory::Hover(pose) => FlatReference::hold(pose.p, pose.yaw),
            Trajectory::Steps {
                from,
                to,
                hold,
                count,
            } => {
                let k = ((t / hold).floor().max(0.0) as usize).min(count.saturating_sub(1));
                let local = t - k as f64 * hold;
                if k % 2 == 0 {
                    step_reference(local, *from, *to)
                } else {
                    step_reference(local, *to, *from)
                }
            }
            Trajectory::Weave { params, .. } => weave_reference(t, params),
            Trajectory::YawInPlace {
                p,
                rate,
                revolutions_per_trial,
                trials,
            } => yaw_in_place_reference(t, *p, *rate, revolutions_per_trial * *trials as f64),
        }
    }

    /// Length of one metric segment (weave circuit, yaw revolution, step hold).
    pub fn segment_length(&self) -> Option<f64> {
        match self {
            Trajectory::Hover(_) => None,
            Trajectory::Steps { hold, .. } => Some(*hold),
            Trajectory::Weave { params, .. } => Some(params.period()),
            Trajectory::YawInPlace { rate, .. } => Some(TAU / rate.abs()),
        }
    }

    /// Segments per trial.
    pub fn segments_per_trial(&self) -> Option<usize> {
        match self {
            Trajectory::Hover(_) => None,
            Trajectory::Steps { count, .. } => Some(*count),
            Trajectory::Weave {
                circuits_per_trial, ..
            } => Some(*circuits_per_trial),
            Trajectory::YawInPlace {
                revolutions_per_trial,
                ..
            } => Some(revolutions_per_trial.round().max(1.0) as usize),
        }
    }

    pub fn initial_pose(&self) -> Pose {
        match self {
            Trajectory::Hover(pose) => *pose,
            Trajectory::Steps { from, .. } => *from,
            Trajectory::Weave { params, .. } => Pose::new(weave_reference(0.0, params).p, params.yaw),
            Trajectory::YawInPlace { p, .. } => Pose::new(*p, 0.0),
        }
    }
}
