use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use splitting_filter::config::{ExperimentConfig, PRESETS};
use splitting_filter::experiment::{self, Criteria, OracleKind};

mod plots;

#[derive(Parser)]
#[command(name = "splitfilter", version, about = "Splitting-up filter with neural-network prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the neural filter and write a run directory.
    Run {
        #[command(flatten)]
        source: Source,
        /// Also run an oracle on the same observations.
        #[arg(long, value_enum)]
        oracle: Option<OracleArg>,
        /// Write SVG plots into <out>/plots.
        #[arg(long)]
        plots: bool,
    },
    /// Run only an oracle filter.
    Oracle {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum)]
        oracle: OracleArg,
    },
    /// Compare the posterior snapshots of two run or oracle directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// TOML thresholds: max_l2, max_abs_mean_diff, max_abs_std_diff.
        #[arg(long)]
        criteria: Option<PathBuf>,
    },
    /// Print the complete config of a preset.
    ShowConfig { preset: String },
}

#[derive(Args)]
struct Source {
    /// Built-in experiment: linear-case1, linear-case2 or benes.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Experiment config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to runs/<name>-seed<seed>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Truncate the run to this many observation steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Training epochs per step; the learning-rate cutoffs scale with it.
    #[arg(long)]
    epochs: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Kalman,
    Grid,
    Fk,
}

impl From<OracleArg> for OracleKind {
    fn from(o: OracleArg) -> Self {
        match o {
            OracleArg::Kalman => OracleKind::Kalman,
            OracleArg::Grid => OracleKind::Grid,
            OracleArg::Fk => OracleKind::Fk,
        }
    }
}

impl Source {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = match (&self.preset, &self.config) {
            (Some(p), None) => ExperimentConfig::preset(p)?,
            (None, Some(path)) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_toml_str(&text)
                    .with_context(|| format!("in {}", path.display()))?
            }
            _ => bail!("give exactly one of --preset ({}) or --config", PRESETS.join(", ")),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(steps) = self.steps {
            cfg = cfg.with_steps(steps)?;
        }
        if let Some(epochs) = self.epochs {
            cfg = cfg.with_epochs(epochs)?;
        }
        if let Some(workers) = self.workers {
            cfg.workers = workers;
        }
        let out = self
            .out
            .clone()
            .unwrap_or_else(|| Path::new("runs").join(format!("{}-seed{}", cfg.name, cfg.seed)));
        Ok((cfg, out))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            source,
            oracle,
            plots,
        } => {
            let (cfg, out) = source.resolve()?;
            let oracle = oracle.map(OracleKind::from);
            let outcome = experiment::run(&cfg, &out, oracle)?;
            if plots {
                plots::write_all(&out, oracle).context("writing plots")?;
            }
            println!("{}", out.display());
            match outcome.error {
                Some(e) => {
                    eprintln!("run aborted: {e}");
                    Ok(ExitCode::from(1))
                }
                None => Ok(ExitCode::SUCCESS),
            }
        }
        Command::Oracle { source, oracle } => {
            let (cfg, out) = source.resolve()?;
            let out = if source.out.is_some() {
                out
            } else {
                out.join(OracleKind::from(oracle).dir_name())
            };
            experiment::run_oracle_to_dir(&cfg, &out, oracle.into())?;
            println!("{}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { a, b, criteria } => {
            let rows = experiment::compare(&a, &b)?;
            experiment::write_comparison_csv(&rows, std::io::stdout().lock())?;
            if let Some(path) = criteria {
                let text = fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let violations = Criteria::from_toml_str(&text)?.violations(&rows);
                if !violations.is_empty() {
                    for v in &violations {
                        eprintln!("{v}");
                    }
                    return Ok(ExitCode::from(1));
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ShowConfig { preset } => {
            print!("{}", ExperimentConfig::preset(&preset)?.to_toml_string());
            Ok(ExitCode::SUCCESS)
        }
    }
}
