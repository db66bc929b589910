//! Scenario plumbing: configuration, the two-rate simulation loop, metrics,
//! CSV output and parameter sweeps.
//!
//! A run directory holds `config.txt` (the resolved configuration),
//! `log.csv`, `summary.csv` and, for learned compensation, `model.csv` with
//! the final disturbance model.

pub mod config;
pub mod io;
pub mod metrics;
pub mod run;

pub use config::{Compensation, ControllerKind, ScenarioConfig};
pub use metrics::{compute_metrics, MetricsSpec, MetricsSummary};
pub use run::{run_scenario, run_with_model, Record, RunLog};

use crate::error::{Error, Result};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct RunOutcome {
    pub label: String,
    pub config: ScenarioConfig,
    pub log: RunLog,
    pub metrics: MetricsSummary,
    pub dir: Option<PathBuf>,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Runs one scenario and, when `out` is given, writes its run directory.
pub fn run_and_write(label: &str, cfg: &ScenarioConfig, out: Option<&Path>) -> Result<RunOutcome> {
    let (log, model) = run_with_model(cfg, None)?;
    let metrics = compute_metrics(&log.records, &MetricsSpec::from_config(cfg));
    if let Some(dir) = out {
        create_dir(dir)?;
        let cfg_path = dir.join("config.txt");
        std::fs::write(&cfg_path, cfg.to_text()).map_err(|source| Error::Io {
            path: cfg_path,
            source,
        })?;
        io::write_log(&dir.join("log.csv"), &log.records, log.aborted.as_deref())?;
        io::write_summary(&dir.join("summary.csv"), label, &metrics, log.aborted.as_deref())?;
        if let Some(m) = &model {
            m.save(&dir.join("model.csv"))?;
        }
    }
    Ok(RunOutcome {
        label: label.to_string(),
        config: cfg.clone(),
        log,
        metrics,
        dir: out.map(Path::to_path_buf),
    })
}

/// Expands a sweep into labelled configurations: the optional baseline
/// first, then one per value.
pub fn sweep_configs(
    cfg: &ScenarioConfig,
    param: &str,
    values: &[String],
    baseline: Option<&(String, String)>,
) -> Result<Vec<(String, ScenarioConfig)>> {
    let mut out = Vec::new();
    if let Some((k, v)) = baseline {
        out.push((format!("{k}={v}"), cfg.with(k, v)?));
    }
    for v in values {
        out.push((format!("{param}={v}"), cfg.with(param, v)?));
    }
    Ok(out)
}

/// Runs configurations in parallel, each into its own subdirectory of `out`.
pub fn run_many(configs: &[(String, ScenarioConfig)], out: Option<&Path>) -> Result<Vec<RunOutcome>> {
    configs
        .par_iter()
        .map(|(label, cfg)| {
            let dir = out.map(|o| o.join(sanitize(label)));
            run_and_write(label, cfg, dir.as_deref())
        })
        .collect()
}

/// Runs the scenario's own sweep if it declares one, otherwise the single
/// scenario.
pub fn run_configured(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<Vec<RunOutcome>> {
    match &cfg.sweep {
        Some(s) => run_many(
            &sweep_configs(cfg, &s.param, &s.values, s.baseline.as_ref())?,
            out,
        ),
        None => Ok(vec![run_and_write(&cfg.name, cfg, out)?]),
    }
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' || c == '=' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
