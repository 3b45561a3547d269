use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use currents::harness::{self, ExperimentConfig, ExperimentKind, RunReport};
use currents::{Error, Result};

/// Chaos expansions and regularity of Brownian and fractional stochastic currents.
#[derive(Parser)]
#[command(name = "currents", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment's checks and write report.json plus CSV tables.
    Verify {
        experiment: String,
        #[command(flatten)]
        opts: Opts,
    },
    /// Locate an experiment's critical exponent by grid scan and bisection.
    Scan {
        experiment: String,
        #[command(flatten)]
        opts: Opts,
    },
    /// Sample driver paths and write a CSV ensemble with JSON sidecar.
    Paths {
        #[command(flatten)]
        opts: Opts,
    },
    /// Print the summary of an existing report.json.
    Report {
        /// Directory holding report.json.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Opts {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Chaos truncation order.
    #[arg(long)]
    n_max: Option<usize>,
    /// Number of ε-ladder levels.
    #[arg(long)]
    refine_levels: Option<usize>,
}

impl Opts {
    fn config(&self, experiment: ExperimentKind) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let cfg = ExperimentConfig::load(path)?;
                if cfg.experiment != experiment {
                    return Err(Error::Config {
                        path: format!("{}: experiment", path.display()),
                        message: format!("file configures {}, command asked for {experiment}", cfg.experiment),
                    });
                }
                cfg
            }
            None => ExperimentConfig::new(experiment),
        };
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if let Some(out) = &self.out {
            cfg.output_path = Some(out.display().to_string());
        }
        if self.n_max.is_some() {
            cfg.params.n_max = self.n_max;
        }
        if self.refine_levels.is_some() {
            cfg.params.ladder_levels = self.refine_levels;
        }
        Ok(cfg)
    }

    fn paths_config(&self) -> Result<ExperimentConfig> {
        // the experiment field only matters for verify and scan
        let kind = match &self.config {
            Some(path) => ExperimentConfig::load(path)?.experiment,
            None => ExperimentKind::Prop1Series,
        };
        self.config(kind)
    }
}

fn configure_workers() -> Result<()> {
    let Ok(raw) = std::env::var("CURRENTS_WORKERS") else {
        return Ok(());
    };
    let workers: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| Error::Config {
        path: "CURRENTS_WORKERS".into(),
        message: format!("expected a positive integer, got `{raw}`"),
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| Error::Config { path: "CURRENTS_WORKERS".into(), message: e.to_string() })
}

fn print_report(report: &RunReport, dir: &Path) -> ExitCode {
    print!("{}", report.summary());
    println!("  report: {}", dir.join(harness::REPORT_FILE).display());
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn execute(cli: Cli) -> Result<ExitCode> {
    configure_workers()?;
    match cli.command {
        Command::Verify { experiment, opts } => {
            let report = harness::run(opts.config(experiment.parse()?)?)?;
            Ok(print_report(&report, &report.config.out_dir()))
        }
        Command::Scan { experiment, opts } => {
            let report = harness::run_scan(opts.config(experiment.parse()?)?)?;
            Ok(print_report(&report, &report.config.out_dir()))
        }
        Command::Paths { opts } => {
            let cfg = opts.paths_config()?;
            let dir = cfg.out_dir();
            let ensemble = harness::run_paths(cfg)?;
            println!(
                "sampled {} paths on {} grid points into {}",
                ensemble.n_paths,
                ensemble.grid.len(),
                dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { out } => {
            let report = RunReport::load(&out)?;
            Ok(print_report(&report, &out))
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
