//! Tracking metrics computed from a run log.

use super::config::ScenarioConfig;
use super::run::Record;
use crate::geometry::Vec3;

/// Deadband for counting altitude-error sign changes (m).
pub const ZERO_CROSSING_DEADBAND: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsSpec {
    /// Width of the centered moving average (s).
    pub smoothing_window: f64,
    /// Length of one segment (circuit, revolution or step dwell) in seconds.
    pub segment_length: Option<f64>,
    pub segments_per_trial: Option<usize>,
    /// Leading trials left out of the aggregate error and speed.
    pub discard_trials: usize,
}

impl MetricsSpec {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            smoothing_window: cfg.smoothing_window,
            segment_length: cfg.trajectory.segment_length(),
            segments_per_trial: cfg.trajectory.segments_per_trial(),
            discard_trials: cfg.discard_trials,
        }
    }

    /// Start of the aggregation window (s).
    pub fn aggregate_start(&self) -> f64 {
        match (self.segment_length, self.segments_per_trial) {
            (Some(len), Some(n)) => len * (n * self.discard_trials) as f64,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AltitudeStats {
    pub max_abs: f64,
    pub mean_abs: f64,
    pub rms: f64,
    /// Sign changes of the altitude error outside the deadband.
    pub zero_crossings: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsSummary {
    pub samples: usize,
    /// Mean position error over the aggregation window (m).
    pub mean_error: f64,
    pub max_error: f64,
    pub smoothed_error: Vec<f64>,
    /// Mean position error per complete segment (m).
    pub segment_errors: Vec<f64>,
    /// Mean speed over the aggregation window (m/s).
    pub mean_speed: f64,
    /// Largest per-axis deviation from the reference (m).
    pub max_excursion: Vec3,
    pub altitude: AltitudeStats,
}

/// Centered moving average with the window shrunk at the ends.
pub fn moving_average(values: &[f64], half_width: usize) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(values.len() + 1);
    prefix.push(0.0);
    for v in values {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half_width);
            let hi = (i + half_width + 1).min(values.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Sign changes of `values`, ignoring samples within `deadband` of zero.
pub fn zero_crossings(values: &[f64], deadband: f64) -> usize {
    let mut last = 0.0f64;
    let mut count = 0;
    for v in values.iter().filter(|v| v.abs() > deadband) {
        if last != 0.0 && v.signum() != last {
            count += 1;
        }
        last = v.signum();
    }
    count
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn compute_metrics(records: &[Record], spec: &MetricsSpec) -> MetricsSummary {
    if records.is_empty() {
        return MetricsSummary::default();
    }
    let dt = if records.len() > 1 {
        records[1].t - records[0].t
    } else {
        1.0
    };
    let errors: Vec<f64> = records.iter().map(Record::position_error).collect();
    let half = (0.5 * spec.smoothing_window / dt).round().max(0.0) as usize;
    let smoothed_error = moving_average(&errors, half);

    let start = spec.aggregate_start() - 0.5 * dt;
    let kept = || records.iter().zip(&errors).filter(move |(r, _)| r.t >= start);
    let mean_error = mean(kept().map(|(_, e)| *e));
    let mean_speed = mean(kept().map(|(r, _)| r.v.norm()));

    let segment_errors = match spec.segment_length {
        Some(len) => {
            let t_end = records.last().unwrap().t + dt;
            let complete = ((t_end + 0.5 * dt) / len).floor() as usize;
            let mut sums = vec![(0.0, 0usize); complete];
            for (r, e) in records.iter().zip(&errors) {
                let k = ((r.t + 0.5 * dt) / len).floor() as usize;
                if k < complete {
                    sums[k].0 += e;
                    sums[k].1 += 1;
                }
            }
            sums.into_iter()
                .map(|(s, n)| if n == 0 { 0.0 } else { s / n as f64 })
                .collect()
        }
        None => Vec::new(),
    };

    let mut max_excursion = Vec3::zeros();
    for r in records {
        max_excursion = max_excursion.sup(&(r.p - r.p_des).abs());
    }
    let alt: Vec<f64> = records.iter().map(|r| r.p.z - r.p_des.z).collect();
    let altitude = AltitudeStats {
        max_abs: alt.iter().fold(0.0, |m, v| m.max(v.abs())),
        mean_abs: mean(alt.iter().map(|v| v.abs())),
        rms: mean(alt.iter().map(|v| v * v)).sqrt(),
        zero_crossings: zero_crossings(&alt, ZERO_CROSSING_DEADBAND),
    };

    MetricsSummary {
        samples: records.len(),
        mean_error,
        max_error: errors.iter().fold(0.0, |m, e| m.max(*e)),
        smoothed_error,
        segment_errors,
        mean_speed,
        max_excursion,
        altitude,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_with(errors: impl Fn(f64) -> Vec3, n: usize, dt: f64) -> Vec<Record> {
        (0..n)
            .map(|i| {
                let t = i as f64 * dt;
                Record {
                    t,
                    p: errors(t),
                    v: Vec3::zeros(),
                    yaw: 0.0,
                    omega: Vec3::zeros(),
                    u: 9.81,
                    p_des: Vec3::zeros(),
                    v_des: Vec3::zeros(),
                    yaw_des: 0.0,
                    u_cmd: 9.81,
                    alpha: Vec3::zeros(),
                    fe_true: Vec3::zeros(),
                    fe_pred: Vec3::zeros(),
                    d_hat: Vec3::zeros(),
                    saturated: false,
                }
            })
            .collect()
    }

    fn spec(segment: Option<f64>) -> MetricsSpec {
        MetricsSpec {
            smoothing_window: 0.5,
            segment_length: segment,
            segments_per_trial: segment.map(|_| 1),
            discard_trials: 0,
        }
    }

    #[test]
    fn zero_error_log() {
        let m = compute_metrics(&log_with(|_| Vec3::zeros(), 500, 0.002), &spec(Some(0.5)));
        assert_eq!(m.mean_error, 0.0);
        assert_eq!(m.max_error, 0.0);
        assert!(m.smoothed_error.iter().all(|e| *e == 0.0));
        assert_eq!(m.segment_errors, vec![0.0, 0.0]);
        assert_eq!(m.altitude, AltitudeStats::default());
    }

    #[test]
    fn constant_offset() {
        let m = compute_metrics(&log_with(|_| Vec3::new(0.1, 0.0, 0.0), 1000, 0.002), &spec(None));
        assert!((m.mean_error - 0.1).abs() < 1e-12);
        assert!(m.smoothed_error.iter().all(|e| (e - 0.1).abs() < 1e-12));
        assert_eq!(m.max_excursion, Vec3::new(0.1, 0.0, 0.0));
    }

    #[test]
    fn per_segment_errors() {
        let level = |t: f64| {
            let e = if t < 1.0 { 0.2 } else { 0.1 };
            Vec3::new(0.0, e, 0.0)
        };
        let m = compute_metrics(&log_with(level, 1500, 0.002), &spec(Some(1.0)));
        assert_eq!(m.segment_errors.len(), 3);
        for (got, want) in m.segment_errors.iter().zip([0.2, 0.1, 0.1]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn discards_leading_trials() {
        let level = |t: f64| Vec3::new(if t < 1.0 { 1.0 } else { 0.5 }, 0.0, 0.0);
        let mut s = spec(Some(1.0));
        s.discard_trials = 1;
        let m = compute_metrics(&log_with(level, 1500, 0.002), &s);
        assert!((m.mean_error - 0.5).abs() < 1e-12);
    }

    #[test]
    fn altitude_crossings() {
        assert_eq!(zero_crossings(&[0.01, -0.01, 0.0005, 0.02, -0.03], 1e-3), 3);
        assert_eq!(zero_crossings(&[0.0005, -0.0005], 1e-3), 0);
        let osc = |t: f64| Vec3::new(0.0, 0.0, 0.05 * (std::f64::consts::TAU * t).sin());
        let m = compute_metrics(&log_with(osc, 2250, 0.002), &spec(None));
        assert_eq!(m.altitude.zero_crossings, 8);
        assert!((m.altitude.max_abs - 0.05).abs() < 1e-6);
    }

    #[test]
    fn moving_average_edges() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 1), vec![1.5, 2.0, 3.0, 3.5]);
        assert_eq!(moving_average(&[1.0, 2.0], 0), vec![1.0, 2.0]);
    }
}
