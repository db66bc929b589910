//! Scenario configuration.
//!
//! Files are flat `key = value` lines with dotted section keys; `#` starts a
//! comment. Vectors are comma separated. Every key has a default, so a file
//! only lists what differs. Unknown keys are rejected.
//!
//! | key | meaning |
//! |-----|---------|
//! | `name` | label written to summaries |
//! | `sim.dt_inner`, `sim.dt_outer` | loop periods (s); outer must be a multiple of inner |
//! | `sim.duration` | seconds, or `auto` for trials x segments of the trajectory (the default; 10 s for unsegmented trajectories) |
//! | `sim.seed` | seeds the learner features unless `learner.seed` is set |
//! | `plant.tau_u` | true thrust-lag rate (1/s) |
//! | `plant.thrust_to_weight` | thrust limit as a multiple of gravity |
//! | `controller.kind` | `fbl`, `fbl-no-delay-comp`, `cascaded`, `reduced-attitude` |
//! | `controller.tau_u` | thrust-lag rate assumed by `fbl`, and by the baselines' thrust estimate (1/s) |
//! | `controller.k1` .. `controller.k4`, `controller.k_yaw`, `controller.k_yaw_rate`, `controller.u_min` | feedback-linearizing gains |
//! | `cascaded.k_p`, `cascaded.k_v`, `cascaded.k_theta`, `cascaded.k_omega` | cascaded gains |
//! | `compensation.kind` | `none`, `adaptive`, `learned`, `learned-no-dynamics` |
//! | `adaptive.gain`, `adaptive.bandwidth`, `adaptive.bound` | estimator settings |
//! | `learner.n_freq`, `learner.length_scale`, `learner.yaw_length_scale`, `learner.yaw_features`, `learner.lambda`, `learner.seed`, `learner.outlier_threshold` | disturbance model |
//! | `wind.kind` | `none`, `gust`, `jet`, `yaw-plate` |
//! | `wind.accel`, `wind.center`, `wind.width`, `wind.peak`, `wind.drag`, `wind.yaw0`, `wind.max_norm` | wind parameters |
//! | `trajectory.kind` | `hover`, `steps`, `weave`, `yaw-in-place` |
//! | `trajectory.from`, `trajectory.to` | `x,y,z,yaw` poses for `hover` (`from`) and `steps` |
//! | `trajectory.hold`, `trajectory.count` | step dwell (s) and number of steps |
//! | `trajectory.center`, `trajectory.max_speed`, `trajectory.max_accel`, `trajectory.circuits_per_trial` | weave |
//! | `trajectory.position`, `trajectory.rate_deg`, `trajectory.revolutions_per_trial` | yaw in place |
//! | `trajectory.trials` | trials for `auto` duration and metric grouping |
//! | `metrics.smoothing_window` | centered moving-average width (s) |
//! | `metrics.discard_trials` | leading trials left out of aggregates |
//! | `sweep.param`, `sweep.values` | optional parameter sweep run by `run` |
//! | `sweep.baseline` | extra `key=value` run added to the sweep, e.g. `controller.kind=fbl-no-delay-comp` |

use crate::baselines::{AdaptiveParams, CascadedGains};
use crate::dynamics::{JetParams, PlantParams, WindField, WindShape};
use crate::error::{Error, Result};
use crate::fbl::FblGains;
use crate::geometry::Vec3;
use crate::learner::{FeatureConfig, FeatureSelection};
use crate::trajectories::{Pose, Trajectory, WeaveParams, DEFAULT_YAW_RATE};
use std::collections::BTreeMap;
use std::path::Path;

const FIG2_STEP: &str = include_str!("../../scenarios/fig2-step.cfg");
const FIG3_DELAY_SWEEP: &str = include_str!("../../scenarios/fig3-delay-sweep.cfg");
const WEAVE_R3: &str = include_str!("../../scenarios/weave-r3.cfg");
const YAW_R3: &str = include_str!("../../scenarios/yaw-r3.cfg");

/// Names accepted wherever a config file path is expected.
pub const BUILTIN_SCENARIOS: [&str; 4] = ["fig2-step", "fig3-delay-sweep", "weave-r3", "yaw-r3"];

pub fn builtin_text(name: &str) -> Option<&'static str> {
    match name {
        "fig2-step" => Some(FIG2_STEP),
        "fig3-delay-sweep" => Some(FIG3_DELAY_SWEEP),
        "weave-r3" => Some(WEAVE_R3),
        "yaw-r3" => Some(YAW_R3),
        _ => None,
    }
}

const KNOWN_KEYS: &[&str] = &[
    "name",
    "sim.dt_inner",
    "sim.dt_outer",
    "sim.duration",
    "sim.seed",
    "plant.tau_u",
    "plant.thrust_to_weight",
    "controller.kind",
    "controller.tau_u",
    "controller.k1",
    "controller.k2",
    "controller.k3",
    "controller.k4",
    "controller.k_yaw",
    "controller.k_yaw_rate",
    "controller.u_min",
    "cascaded.k_p",
    "cascaded.k_v",
    "cascaded.k_theta",
    "cascaded.k_omega",
    "compensation.kind",
    "adaptive.gain",
    "adaptive.bandwidth",
    "adaptive.bound",
    "learner.n_freq",
    "learner.length_scale",
    "learner.yaw_length_scale",
    "learner.yaw_features",
    "learner.lambda",
    "learner.seed",
    "learner.outlier_threshold",
    "wind.kind",
    "wind.accel",
    "wind.center",
    "wind.width",
    "wind.peak",
    "wind.drag",
    "wind.yaw0",
    "wind.max_norm",
    "trajectory.kind",
    "trajectory.from",
    "trajectory.to",
    "trajectory.hold",
    "trajectory.count",
    "trajectory.center",
    "trajectory.max_speed",
    "trajectory.max_accel",
    "trajectory.circuits_per_trial",
    "trajectory.position",
    "trajectory.rate_deg",
    "trajectory.revolutions_per_trial",
    "trajectory.trials",
    "metrics.smoothing_window",
    "metrics.discard_trials",
    "sweep.param",
    "sweep.values",
    "sweep.baseline",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Fbl,
    FblNoDelayComp,
    Cascaded,
    ReducedAttitude,
}

impl ControllerKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "fbl" => Self::Fbl,
            "fbl-no-delay-comp" => Self::FblNoDelayComp,
            "cascaded" => Self::Cascaded,
            "reduced-attitude" => Self::ReducedAttitude,
            other => return Err(Error::Config(format!("unknown controller '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Fbl => "fbl",
            Self::FblNoDelayComp => "fbl-no-delay-comp",
            Self::Cascaded => "cascaded",
            Self::ReducedAttitude => "reduced-attitude",
        }
    }

    pub fn is_fbl(&self) -> bool {
        matches!(self, Self::Fbl | Self::FblNoDelayComp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compensation {
    None,
    Adaptive,
    Learned,
    /// Learned `f_e` with its time derivatives forced to zero.
    LearnedNoDynamics,
}

impl Compensation {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Self::None,
            "adaptive" => Self::Adaptive,
            "learned" => Self::Learned,
            "learned-no-dynamics" => Self::LearnedNoDynamics,
            other => return Err(Error::Config(format!("unknown compensation '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Adaptive => "adaptive",
            Self::Learned => "learned",
            Self::LearnedNoDynamics => "learned-no-dynamics",
        }
    }

    pub fn is_learned(&self) -> bool {
        matches!(self, Self::Learned | Self::LearnedNoDynamics)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerSettings {
    pub features: FeatureConfig,
    pub selection: FeatureSelection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<String>,
    /// Extra `(key, value)` run prepended to the sweep.
    pub baseline: Option<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub plant: PlantParams,
    pub controller: ControllerKind,
    pub fbl: FblGains,
    pub cascaded: CascadedGains,
    pub compensation: Compensation,
    pub adaptive: AdaptiveParams,
    pub learner: LearnerSettings,
    pub wind: WindField,
    pub trajectory: Trajectory,
    pub trials: usize,
    pub dt_inner: f64,
    pub dt_outer: f64,
    pub duration: f64,
    pub seed: u64,
    pub smoothing_window: f64,
    pub discard_trials: usize,
    pub sweep: Option<SweepSpec>,
    /// Resolved key-value pairs the config was built from.
    pub entries: BTreeMap<String, String>,
}

impl ScenarioConfig {
    /// Loads a built-in scenario by name, or a file by path.
    pub fn load(name_or_path: &str) -> Result<Self> {
        Self::from_entries(load_entries(name_or_path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_entries(parse_entries(text)?)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let text =
            builtin_text(name).ok_or_else(|| Error::Config(format!("no built-in scenario '{name}'")))?;
        Self::parse(text)
    }

    /// Copy with `key = value` applied on top of the current entries.
    pub fn with(&self, key: &str, value: &str) -> Result<Self> {
        let mut entries = self.entries.clone();
        entries.insert(key.to_string(), value.to_string());
        Self::from_entries(entries)
    }

    pub fn with_all(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut entries = self.entries.clone();
        for (k, v) in overrides {
            entries.insert(k.clone(), v.clone());
        }
        Self::from_entries(entries)
    }

    /// The resolved configuration in file syntax.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn inner_steps_per_outer(&self) -> usize {
        (self.dt_outer / self.dt_inner).round() as usize
    }

    pub fn outer_steps(&self) -> usize {
        (self.duration / self.dt_outer).round() as usize
    }

    pub fn from_entries(entries: BTreeMap<String, String>) -> Result<Self> {
        for k in entries.keys() {
            if !KNOWN_KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key '{k}'")));
            }
        }
        let e = Entries(&entries);

        let fbl_default = FblGains::default();
        let controller = ControllerKind::parse(&e.str("controller.kind", "fbl"))?;
        let fbl = FblGains {
            k1: e.vec3("controller.k1", fbl_default.k1)?,
            k2: e.vec3("controller.k2", fbl_default.k2)?,
            k3: e.f64("controller.k3", fbl_default.k3)?,
            k4: e.f64("controller.k4", fbl_default.k4)?,
            tau_u: e.f64("controller.tau_u", fbl_default.tau_u)?,
            k_yaw: e.f64("controller.k_yaw", fbl_default.k_yaw)?,
            k_yaw_rate: e.f64("controller.k_yaw_rate", fbl_default.k_yaw_rate)?,
            u_min: e.f64("controller.u_min", fbl_default.u_min)?,
            delay_compensation: controller != ControllerKind::FblNoDelayComp,
        };
        fbl.validate()?;

        let cd = CascadedGains::default();
        let cascaded = CascadedGains {
            k_p: e.vec3("cascaded.k_p", cd.k_p)?,
            k_v: e.vec3("cascaded.k_v", cd.k_v)?,
            k_theta: e.vec3("cascaded.k_theta", cd.k_theta)?,
            k_omega: e.vec3("cascaded.k_omega", cd.k_omega)?,
            u_min: e.f64("controller.u_min", cd.u_min)?,
        };
        cascaded.validate()?;

        let plant = PlantParams::new(e.f64("plant.tau_u", 10.0)?, e.f64("plant.thrust_to_weight", 5.0)?)?;

        let ad = AdaptiveParams::default();
        let adaptive = AdaptiveParams {
            gain: e.f64("adaptive.gain", ad.gain)?,
            bandwidth: e.f64("adaptive.bandwidth", ad.bandwidth)?,
            bound: e.f64("adaptive.bound", ad.bound)?,
        };
        if !(adaptive.gain > 0.0 && adaptive.bandwidth > 0.0 && adaptive.bound > 0.0) {
            return Err(Error::Config("adaptive parameters must be positive".into()));
        }

        let seed = e.u64("sim.seed", 1)?;
        let yaw_features = e.bool("learner.yaw_features", false)?;
        let selection = if yaw_features {
            FeatureSelection::PositionVelocityYaw
        } else {
            FeatureSelection::PositionVelocity
        };
        let mut length_scales = vec![e.f64("learner.length_scale", 1.0)?; 6];
        if yaw_features {
            let yl = e.f64("learner.yaw_length_scale", 0.5)?;
            length_scales.extend([yl, yl]);
        }
        let features = FeatureConfig {
            n_freq: e.u64("learner.n_freq", 50)? as usize,
            length_scales,
            lambda: e.f64("learner.lambda", 1e-3)?,
            seed: e.u64("learner.seed", seed)?,
            outlier_threshold: e.f64("learner.outlier_threshold", 30.0)?,
        };
        features.validate()?;

        let wind = parse_wind(&e)?;
        let (trajectory, trials) = parse_trajectory(&e)?;

        let dt_inner = e.f64("sim.dt_inner", 0.002)?;
        let dt_outer = e.f64("sim.dt_outer", 0.01)?;
        if !(dt_inner > 0.0 && dt_outer > 0.0) {
            return Err(Error::Config("time steps must be positive".into()));
        }
        let ratio = dt_outer / dt_inner;
        if ratio < 0.999 || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "sim.dt_outer ({dt_outer}) must be an integer multiple of sim.dt_inner ({dt_inner})"
            )));
        }
        let duration = match e.get("sim.duration") {
            None if trajectory.segment_length().is_none() => DEFAULT_DURATION,
            None | Some("auto") => auto_duration(&trajectory, trials)?,
            Some(_) => e.f64("sim.duration", 0.0)?,
        };
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::Config(format!(
                "duration must be positive, got {duration}"
            )));
        }

        let sweep = match e.get("sweep.param") {
            None => None,
            Some(param) => {
                let values: Vec<String> = e
                    .str("sweep.values", "")
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                let baseline = match e.get("sweep.baseline") {
                    None => None,
                    Some(s) => Some(parse_assignment(s)?),
                };
                Some(SweepSpec {
                    param: param.to_string(),
                    values,
                    baseline,
                })
            }
        };

        Ok(Self {
            name: e.str("name", "scenario"),
            plant,
            controller,
            fbl,
            cascaded,
            compensation: Compensation::parse(&e.str("compensation.kind", "none"))?,
            adaptive,
            learner: LearnerSettings { features, selection },
            wind,
            trajectory,
            trials,
            dt_inner,
            dt_outer,
            duration,
            seed,
            smoothing_window: e.f64("metrics.smoothing_window", 0.5)?,
            discard_trials: e.u64("metrics.discard_trials", 0)? as usize,
            sweep,
            entries,
        })
    }
}

/// Duration used when none is given and the trajectory has no segments (s).
const DEFAULT_DURATION: f64 = 10.0;

fn auto_duration(trajectory: &Trajectory, trials: usize) -> Result<f64> {
    match (trajectory.segment_length(), trajectory.segments_per_trial()) {
        (Some(len), Some(n)) => Ok(len * n as f64 * trials as f64),
        _ => Err(Error::Config(
            "sim.duration = auto needs a segmented trajectory".into(),
        )),
    }
}

fn parse_wind(e: &Entries) -> Result<WindField> {
    let jet = || -> Result<JetParams> {
        Ok(JetParams {
            center: e.vec3("wind.center", Vec3::zeros())?,
            width: e.vec3("wind.width", Vec3::repeat(1.0))?,
            peak: e.vec3("wind.peak", Vec3::zeros())?,
            drag: e.f64("wind.drag", 0.0)?,
        })
    };
    let shape = match e.str("wind.kind", "none").as_str() {
        "none" => WindShape::None,
        "gust" => WindShape::UniformGust {
            accel: e.vec3("wind.accel", Vec3::zeros())?,
            drag: e.f64("wind.drag", 0.0)?,
        },
        "jet" => WindShape::Jet(jet()?),
        "yaw-plate" => WindShape::YawPlate {
            jet: jet()?,
            yaw0: e.f64("wind.yaw0", 0.0)?,
        },
        other => return Err(Error::Config(format!("unknown wind kind '{other}'"))),
    };
    let mut field = WindField::new(shape);
    field.max_norm = e.f64("wind.max_norm", WindField::DEFAULT_MAX_NORM)?;
    Ok(field)
}

fn parse_pose(e: &Entries, key: &str) -> Result<Pose> {
    let v = e.floats(key, &[0.0, 0.0, 0.0, 0.0])?;
    if v.len() != 4 {
        return Err(Error::Config(format!("'{key}' needs x,y,z,yaw")));
    }
    Ok(Pose::new(Vec3::new(v[0], v[1], v[2]), v[3]))
}

fn parse_trajectory(e: &Entries) -> Result<(Trajectory, usize)> {
    let trials = e.u64("trajectory.trials", 1)? as usize;
    if trials == 0 {
        return Err(Error::Config("trajectory.trials must be at least 1".into()));
    }
    let t = match e.str("trajectory.kind", "hover").as_str() {
        "hover" => Trajectory::Hover(parse_pose(e, "trajectory.from")?),
        "steps" => Trajectory::Steps {
            from: parse_pose(e, "trajectory.from")?,
            to: parse_pose(e, "trajectory.to")?,
            hold: e.f64("trajectory.hold", 5.0)?,
            count: e.u64("trajectory.count", 1)? as usize,
        },
        "weave" => Trajectory::Weave {
            params: WeaveParams::with_envelope(
                e.vec3("trajectory.center", Vec3::new(0.0, 0.0, 1.5))?,
                e.f64("trajectory.max_speed", 2.7)?,
                e.f64("trajectory.max_accel", 5.5)?,
            ),
            circuits_per_trial: e.u64("trajectory.circuits_per_trial", 3)? as usize,
        },
        "yaw-in-place" => Trajectory::YawInPlace {
            p: e.vec3("trajectory.position", Vec3::new(0.0, 0.0, 1.5))?,
            rate: e
                .f64("trajectory.rate_deg", DEFAULT_YAW_RATE.to_degrees())?
                .to_radians(),
            revolutions_per_trial: e.f64("trajectory.revolutions_per_trial", 4.0)?,
            trials,
        },
        other => return Err(Error::Config(format!("unknown trajectory kind '{other}'"))),
    };
    Ok((t, trials))
}

/// Splits `key=value`.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got '{s}'")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

pub fn parse_entries(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = parse_assignment(line)
            .map_err(|_| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
        if out.insert(k.clone(), v).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key '{k}'", n + 1)));
        }
    }
    Ok(out)
}

pub fn load_entries(name_or_path: &str) -> Result<BTreeMap<String, String>> {
    if let Some(text) = builtin_text(name_or_path) {
        return parse_entries(text);
    }
    let path = Path::new(name_or_path);
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_entries(&text)
}

struct Entries<'a>(&'a BTreeMap<String, String>);

impl Entries<'_> {
    fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn str(&self, key: &str, default: &str) -> String {
        self.get(key).unwrap_or(default).to_string()
    }

    fn f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("'{key}': expected a number, got '{s}'"))),
        }
    }

    fn u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("'{key}': expected an integer, got '{s}'"))),
        }
    }

    fn bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(s) => Err(Error::Config(format!("'{key}': expected true/false, got '{s}'"))),
        }
    }

    fn floats(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(s) => s
                .split(',')
                .map(|x| {
                    let x = x.trim();
                    match x {
                        "inf" => Ok(f64::INFINITY),
                        _ => x.parse::<f64>(),
                    }
                })
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("'{key}': expected numbers, got '{s}'"))),
        }
    }

    fn vec3(&self, key: &str, default: Vec3) -> Result<Vec3> {
        let v = self.floats(key, default.as_slice())?;
        match v.len() {
            1 => Ok(Vec3::repeat(v[0])),
            3 => Ok(Vec3::new(v[0], v[1], v[2])),
            n => Err(Error::Config(format!("'{key}': expected 1 or 3 values, got {n}"))),
        }
    }
}
