//! CSV export and import of run logs and summaries.
//!
//! Logs have one row per inner step. Column names carry their unit as a
//! suffix (`_m`, `_mps`, `_rad`, ...); floats are written with nine
//! significant digits.

use super::metrics::MetricsSummary;
use super::run::Record;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use std::path::Path;

pub const LOG_COLUMNS: [&str; 38] = [
    "t_s",
    "p_x_m",
    "p_y_m",
    "p_z_m",
    "v_x_mps",
    "v_y_mps",
    "v_z_mps",
    "yaw_rad",
    "omega_x_radps",
    "omega_y_radps",
    "omega_z_radps",
    "u_mps2",
    "p_des_x_m",
    "p_des_y_m",
    "p_des_z_m",
    "v_des_x_mps",
    "v_des_y_mps",
    "v_des_z_mps",
    "yaw_des_rad",
    "u_cmd_mps2",
    "alpha_x_radps2",
    "alpha_y_radps2",
    "alpha_z_radps2",
    "fe_true_x_mps2",
    "fe_true_y_mps2",
    "fe_true_z_mps2",
    "fe_pred_x_mps2",
    "fe_pred_y_mps2",
    "fe_pred_z_mps2",
    "d_hat_x_mps2",
    "d_hat_y_mps2",
    "d_hat_z_mps2",
    "saturated_flag",
    // Reserved for per-record status text; empty unless the run aborted on
    // this record.
    "status",
    "step_index",
    "u_err_mps2",
    "pos_err_m",
    "speed_mps",
];

fn fmt(x: f64) -> String {
    format!("{x:.8e}")
}

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn record_row(i: usize, r: &Record, status: &str) -> Vec<String> {
    let mut row = vec![fmt(r.t)];
    for v in [r.p, r.v] {
        row.extend(v.iter().map(|x| fmt(*x)));
    }
    row.push(fmt(r.yaw));
    row.extend(r.omega.iter().map(|x| fmt(*x)));
    row.push(fmt(r.u));
    for v in [r.p_des, r.v_des] {
        row.extend(v.iter().map(|x| fmt(*x)));
    }
    row.push(fmt(r.yaw_des));
    row.push(fmt(r.u_cmd));
    for v in [r.alpha, r.fe_true, r.fe_pred, r.d_hat] {
        row.extend(v.iter().map(|x| fmt(*x)));
    }
    row.push(u8::from(r.saturated).to_string());
    row.push(status.to_string());
    row.push(i.to_string());
    row.push(fmt(r.u_cmd - r.u));
    row.push(fmt(r.position_error()));
    row.push(fmt(r.v.norm()));
    row
}

/// Writes the log; an abort reason, if any, goes in the `status` column of
/// the last row.
pub fn write_log(path: &Path, records: &[Record], aborted: Option<&str>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(LOG_COLUMNS).map_err(|e| csv_err(path, e))?;
    for (i, r) in records.iter().enumerate() {
        let status = if i + 1 == records.len() {
            aborted.unwrap_or("")
        } else {
            ""
        };
        w.write_record(record_row(i, r, status))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a log written by [`write_log`], returning the records and abort
/// reason.
pub fn read_log(path: &Path) -> Result<(Vec<Record>, Option<String>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().ne(LOG_COLUMNS.iter().copied()) {
        return Err(Error::Config(format!(
            "{}: unexpected log header",
            path.display()
        )));
    }
    let mut out = Vec::new();
    let mut aborted = None;
    for row in r.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let f = |i: usize| -> Result<f64> {
            row[i]
                .parse()
                .map_err(|_| Error::Config(format!("{}: bad number '{}'", path.display(), &row[i])))
        };
        let v = |i: usize| -> Result<Vec3> { Ok(Vec3::new(f(i)?, f(i + 1)?, f(i + 2)?)) };
        out.push(Record {
            t: f(0)?,
            p: v(1)?,
            v: v(4)?,
            yaw: f(7)?,
            omega: v(8)?,
            u: f(11)?,
            p_des: v(12)?,
            v_des: v(15)?,
            yaw_des: f(18)?,
            u_cmd: f(19)?,
            alpha: v(20)?,
            fe_true: v(23)?,
            fe_pred: v(26)?,
            d_hat: v(29)?,
            saturated: &row[32] == "1",
        });
        if !row[33].is_empty() {
            aborted = Some(row[33].to_string());
        }
    }
    Ok((out, aborted))
}

/// Scalar metrics as `(metric, value)` rows followed by per-segment errors.
pub fn summary_rows(name: &str, m: &MetricsSummary, aborted: Option<&str>) -> Vec<(String, String)> {
    let mut rows: Vec<(String, String)> = vec![
        ("scenario".into(), name.into()),
        (
            "status".into(),
            aborted.map_or("complete".into(), |a| format!("aborted: {a}")),
        ),
        ("samples".into(), m.samples.to_string()),
        ("mean_error_m".into(), fmt(m.mean_error)),
        ("max_error_m".into(), fmt(m.max_error)),
        ("mean_speed_mps".into(), fmt(m.mean_speed)),
        ("max_excursion_x_m".into(), fmt(m.max_excursion.x)),
        ("max_excursion_y_m".into(), fmt(m.max_excursion.y)),
        ("max_excursion_z_m".into(), fmt(m.max_excursion.z)),
        ("altitude_max_abs_m".into(), fmt(m.altitude.max_abs)),
        ("altitude_mean_abs_m".into(), fmt(m.altitude.mean_abs)),
        ("altitude_rms_m".into(), fmt(m.altitude.rms)),
        (
            "altitude_zero_crossings".into(),
            m.altitude.zero_crossings.to_string(),
        ),
    ];
    for (i, e) in m.segment_errors.iter().enumerate() {
        rows.push((format!("segment_{}_mean_error_m", i + 1), fmt(*e)));
    }
    rows
}

/// Writes [`summary_rows`] under a `metric,value` header.
pub fn write_summary_to<W: std::io::Write>(
    w: W,
    name: &str,
    m: &MetricsSummary,
    aborted: Option<&str>,
) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["metric", "value"])?;
    for (k, v) in summary_rows(name, m, aborted) {
        w.write_record([k, v])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, name: &str, m: &MetricsSummary, aborted: Option<&str>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_summary_to(std::io::BufWriter::new(file), name, m, aborted).map_err(|e| csv_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::{compute_metrics, MetricsSpec};

    fn sample(i: usize) -> Record {
        let t = i as f64 * 0.002;
        Record {
            t,
            p: Vec3::new(t.sin(), 1.0 / 3.0, -t),
            v: Vec3::new(t.cos(), 0.0, -1.0),
            yaw: 0.1 * t,
            omega: Vec3::new(1e-9, 2.0, 3.0),
            u: 9.81,
            p_des: Vec3::zeros(),
            v_des: Vec3::new(0.5, 0.0, 0.0),
            yaw_des: 0.0,
            u_cmd: 9.8,
            alpha: Vec3::zeros(),
            fe_true: Vec3::new(0.1, 0.2, 0.3),
            fe_pred: Vec3::zeros(),
            d_hat: Vec3::zeros(),
            saturated: i.is_multiple_of(7),
        }
    }

    #[test]
    fn empty_log_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_log(&path, &[], None).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(read_log(&path).unwrap().0.len(), 0);
    }

    #[test]
    fn round_trip_preserves_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let records: Vec<Record> = (0..1200).map(sample).collect();
        write_log(&path, &records, Some("stopped, \"quoted\"")).unwrap();
        let (back, aborted) = read_log(&path).unwrap();
        assert_eq!(aborted.as_deref(), Some("stopped, \"quoted\""));
        assert_eq!(back.len(), records.len());
        let spec = MetricsSpec {
            smoothing_window: 0.5,
            segment_length: Some(0.5),
            segments_per_trial: Some(1),
            discard_trials: 1,
        };
        let a = compute_metrics(&records, &spec);
        let b = compute_metrics(&back, &spec);
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-8 * (1.0 + x.abs());
        assert!(close(a.mean_error, b.mean_error));
        assert!(close(a.mean_speed, b.mean_speed));
        assert_eq!(a.segment_errors.len(), b.segment_errors.len());
        for (x, y) in a.segment_errors.iter().zip(&b.segment_errors) {
            assert!(close(*x, *y));
        }
        assert!(back[7].saturated);
    }

    #[test]
    fn column_count_is_constant() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let records: Vec<Record> = (0..50).map(sample).collect();
        write_log(&path, &records, Some("x")).unwrap();
        let mut r = csv::Reader::from_path(&path).unwrap();
        assert_eq!(r.headers().unwrap().len(), LOG_COLUMNS.len());
        for row in r.records() {
            assert_eq!(row.unwrap().len(), LOG_COLUMNS.len());
        }
    }

    #[test]
    fn unwritable_path_reports_it() {
        let err = write_log(Path::new("/nonexistent/dir/log.csv"), &[], None).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/log.csv"), "{err}");
    }
}
