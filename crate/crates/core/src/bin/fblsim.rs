use clap::{Parser, Subcommand};
use fblsim::harness::config::parse_assignment;
use fblsim::harness::{
    compute_metrics, io, run_configured, run_many, sweep_configs, MetricsSpec, RunOutcome, ScenarioConfig,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Quadrotor tracking simulator: feedback linearization, cascaded baselines
/// and online disturbance learning.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario, or the sweep it declares.
    Run {
        /// Config file path or built-in name (fig2-step, fig3-delay-sweep,
        /// weave-r3, yaw-r3).
        #[arg(long)]
        config: String,
        /// Override a config value, e.g. `--set controller.kind=cascaded`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one scenario per value of a parameter.
    Sweep {
        #[arg(long)]
        config: String,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute the summary of a written log. Segmentation comes from the
    /// `config.txt` next to the log when present.
    Metrics {
        #[arg(long)]
        log: PathBuf,
    },
}

fn load(config: &str, set: &[String]) -> fblsim::Result<ScenarioConfig> {
    let overrides = set
        .iter()
        .map(|s| parse_assignment(s))
        .collect::<fblsim::Result<Vec<_>>>()?;
    ScenarioConfig::load(config)?.with_all(&overrides)
}

fn report(outcomes: &[RunOutcome]) -> ExitCode {
    let mut failed = false;
    for o in outcomes {
        let status = match &o.log.aborted {
            Some(reason) => {
                failed = true;
                format!("aborted ({reason})")
            }
            None => "complete".to_string(),
        };
        let dir = o.dir.as_deref().map(Path::display);
        println!(
            "{}: {status}, mean error {:.4} m, mean speed {:.4} m/s{}",
            o.label,
            o.metrics.mean_error,
            o.metrics.mean_speed,
            dir.map(|d| format!(", written to {d}")).unwrap_or_default()
        );
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn metrics(log: &Path) -> fblsim::Result<ExitCode> {
    let (records, aborted) = io::read_log(log)?;
    let sibling = log.with_file_name("config.txt");
    let (name, spec) = if sibling.exists() {
        let cfg = ScenarioConfig::load(&sibling.to_string_lossy())?;
        (cfg.name.clone(), MetricsSpec::from_config(&cfg))
    } else {
        log::warn!(
            "no config.txt beside {}; metrics are not segmented",
            log.display()
        );
        let spec = MetricsSpec {
            smoothing_window: 0.5,
            segment_length: None,
            segments_per_trial: None,
            discard_trials: 0,
        };
        (log.display().to_string(), spec)
    };
    let m = compute_metrics(&records, &spec);
    io::write_summary_to(std::io::stdout().lock(), &name, &m, aborted.as_deref()).map_err(|source| {
        fblsim::Error::Csv {
            path: PathBuf::from("<stdout>"),
            source,
        }
    })?;
    Ok(if aborted.is_some() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, set, out } => load(&config, &set)
            .and_then(|cfg| run_configured(&cfg, Some(&out)))
            .map(|o| report(&o)),
        Command::Sweep {
            config,
            set,
            param,
            values,
            out,
        } => load(&config, &set)
            .and_then(|cfg| sweep_configs(&cfg, &param, &values, None))
            .and_then(|configs| run_many(&configs, Some(&out)))
            .map(|o| report(&o)),
        Command::Metrics { log } => metrics(&log),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
