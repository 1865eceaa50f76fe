//! Run orchestration and the on-disk layout of a run directory.
//!
//! ```text
//! <out>/
//!   config.toml            complete config snapshot
//!   meta.toml              seed, sample counts, schema versions
//!   observations.csv       step,time,signal,observation,increment
//!   diagnostics.csv        one row per step, see diagnostics::DIAGNOSTICS_COLUMNS
//!   posterior/step_NNN.csv x,density on the diagnostics grid
//!   prior/step_NNN.csv     x,density of the trained network
//!   training/step_NNN.csv  epoch,loss,lr,l2_ref
//!   checkpoints/step_NNN.nn
//!   oracle_<kind>/posterior/step_NNN.csv, oracle_<kind>/diagnostics.csv
//!   ERROR                  present only when the run aborted
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ModelKind};
use crate::density::GaussianDensity;
use crate::diagnostics::{
    density_moments, l2_grid_error, write_diagnostics_csv, StepDiagnostics,
    DIAGNOSTICS_SCHEMA_VERSION,
};
use crate::error::{Error, Result};
use crate::filter::{density_on_grid, SplittingFilter};
use crate::reference::{
    fk_pointwise_reference, fk_splitting_filter, grid_splitting_filter, kalman_bucy_filter,
    reference_points, GridFilterConfig, GridFilterRun, KalmanState, PointLayout,
};
use crate::rng::{Purpose, Streams};
use crate::sde::{simulate_signal_observation, ObservationPath, SignalPath};
use crate::training::TrainingReference;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Kalman,
    Grid,
    Fk,
}

impl OracleKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            OracleKind::Kalman => "oracle_kalman",
            OracleKind::Grid => "oracle_grid",
            OracleKind::Fk => "oracle_fk",
        }
    }
}

/// Per-step moments of an oracle posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleStep {
    pub step: usize,
    pub time: f64,
    pub mean: f64,
    pub std: f64,
    /// Values on the diagnostics grid.
    pub values: Vec<f64>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Set when the filter aborted; artifacts of completed steps are kept.
    pub error: Option<Error>,
}

/// The simulated signal and observation path of a config.
pub fn simulate(cfg: &ExperimentConfig) -> Result<(SignalPath, ObservationPath)> {
    simulate_signal_observation(
        &cfg.model()?,
        &cfg.time_grid(),
        &[cfg.x0],
        &[cfg.y0],
        &Streams::new(cfg.seed),
    )
}

/// Posterior mean and std of the exact or designated ground-truth filter:
/// Kalman-Bucy for linear models, the grid oracle otherwise.
pub fn ground_truth(cfg: &ExperimentConfig, obs: &ObservationPath) -> Result<Vec<OracleStep>> {
    match cfg.model {
        ModelKind::Linear => run_oracle(cfg, obs, OracleKind::Kalman),
        ModelKind::Benes => run_oracle(cfg, obs, OracleKind::Grid),
    }
}

/// Runs one oracle on the observation path of `cfg`.
pub fn run_oracle(
    cfg: &ExperimentConfig,
    obs: &ObservationPath,
    kind: OracleKind,
) -> Result<Vec<OracleStep>> {
    let domain = cfg.domain();
    let nodes = domain.grid_1d(cfg.grid_points)?;
    let times = &obs.times;
    let from_grid = |run: GridFilterRun| -> Result<Vec<OracleStep>> {
        run.posteriors
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let values = density_on_grid(g, &nodes);
                let (_, mean, std) = density_moments(&g.nodes(), g.values())?;
                Ok(OracleStep {
                    step: i + 1,
                    time: times[i + 1],
                    mean,
                    std,
                    values,
                })
            })
            .collect()
    };
    match kind {
        OracleKind::Kalman => {
            let params = cfg.linear_params().ok_or_else(|| {
                Error::Config("the Kalman-Bucy oracle needs a linear model".into())
            })?;
            let initial = KalmanState::scalar(cfg.initial_mean, cfg.initial_std.powi(2));
            let states = kalman_bucy_filter(&params, initial, obs, cfg.obs_substeps)?;
            Ok(states
                .iter()
                .enumerate()
                .skip(1)
                .map(|(n, s)| {
                    let mean = s.mean[0];
                    let std = s.covariance[[0, 0]].sqrt();
                    let values = density_on_grid(&GaussianDensity::new(vec![mean], std), &nodes);
                    OracleStep {
                        step: n,
                        time: times[n],
                        mean,
                        std,
                        values,
                    }
                })
                .collect())
        }
        OracleKind::Grid => {
            let run = grid_splitting_filter(
                &cfg.model()?,
                &domain,
                &cfg.time_grid(),
                &cfg.initial_density(),
                obs,
                &GridFilterConfig {
                    points: cfg.oracle_grid_points,
                    substeps: (cfg.oracle_substeps > 0).then_some(cfg.oracle_substeps),
                },
            )?;
            from_grid(run)
        }
        OracleKind::Fk => {
            let streams = Streams::new(cfg.seed);
            let points = if cfg.reference_points >= 2 { cfg.reference_points } else { 201 };
            let run = fk_splitting_filter(
                &cfg.model()?,
                &domain,
                &cfg.time_grid(),
                &cfg.initial_density(),
                obs,
                points,
                cfg.reference_paths.max(100),
                cfg.substeps,
                |n| streams.key(Purpose::Reference, n as u64, 1),
            )?;
            from_grid(run)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn step_file(dir: &Path, sub: &str, step: usize, ext: &str) -> PathBuf {
    dir.join(sub).join(format!("step_{step:03}.{ext}"))
}

/// Writes an `x,density` snapshot.
pub fn write_grid_csv(path: &Path, nodes: &[f64], values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["x", "density"])?;
    for (x, v) in nodes.iter().zip(values) {
        w.write_record([format!("{x:e}"), format!("{v:e}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an `x,density` snapshot.
pub fn read_grid_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut nodes = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|_| {
                Error::InvalidInput(format!("bad number `{s}` in {}", path.display()))
            })
        };
        nodes.push(parse(&rec[0])?);
        values.push(parse(&rec[1])?);
    }
    Ok((nodes, values))
}

fn write_oracle_dir(dir: &Path, nodes: &[f64], steps: &[OracleStep]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(&dir.join("diagnostics.csv"))?);
    w.write_record(["step", "time", "posterior_mean", "posterior_std"])?;
    for s in steps {
        write_grid_csv(&step_file(dir, "posterior", s.step, "csv"), nodes, &s.values)?;
        w.write_record([
            s.step.to_string(),
            format!("{:e}", s.time),
            format!("{:e}", s.mean),
            format!("{:e}", s.std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_observations(path: &Path, signal: &SignalPath, obs: &ObservationPath) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["step", "time", "signal", "observation", "increment"])?;
    for n in 0..obs.times.len() {
        let z = if n == 0 {
            String::new()
        } else {
            format!("{:e}", obs.scaled_increment(n)[0])
        };
        w.write_record([
            n.to_string(),
            format!("{:e}", obs.times[n]),
            format!("{:e}", signal.values[[n, 0]]),
            format!("{:e}", obs.values[[n, 0]]),
            z,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Meta<'a> {
    name: &'a str,
    seed: u64,
    crate_version: &'a str,
    diagnostics_schema: u32,
    normalizer_samples: usize,
    grid_points: usize,
    reference_points: usize,
    reference_paths: usize,
    oracle: Option<OracleKind>,
}

/// Runs the neural filter of `cfg` into `out`, plus `oracle` when given.
///
/// Aborts of the filter are reported in [`RunOutcome::error`] and an `ERROR`
/// file; all other failures are returned as errors.
pub fn run(cfg: &ExperimentConfig, out: &Path, oracle: Option<OracleKind>) -> Result<RunOutcome> {
    with_workers(cfg.workers, || run_inner(cfg, out, oracle))
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if workers == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(f)
}

fn run_inner(cfg: &ExperimentConfig, out: &Path, oracle: Option<OracleKind>) -> Result<RunOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let _ = fs::remove_file(out.join("ERROR"));
    fs::write(out.join("config.toml"), cfg.to_toml_string())?;
    let meta = Meta {
        name: &cfg.name,
        seed: cfg.seed,
        crate_version: env!("CARGO_PKG_VERSION"),
        diagnostics_schema: DIAGNOSTICS_SCHEMA_VERSION,
        normalizer_samples: cfg.normalizer_samples,
        grid_points: cfg.grid_points,
        reference_points: cfg.reference_points,
        reference_paths: cfg.reference_paths,
        oracle,
    };
    fs::write(out.join("meta.toml"), toml::to_string(&meta).expect("meta serializes"))?;

    let (signal, obs) = simulate(cfg)?;
    write_observations(&out.join("observations.csv"), &signal, &obs)?;
    let domain = cfg.domain();
    let nodes = domain.grid_1d(cfg.grid_points)?;

    let truth = ground_truth(cfg, &obs)?;
    if let Some(kind) = oracle {
        let steps = match (kind, cfg.model) {
            (OracleKind::Kalman, ModelKind::Linear) | (OracleKind::Grid, ModelKind::Benes) => {
                truth.clone()
            }
            _ => run_oracle(cfg, &obs, kind)?,
        };
        write_oracle_dir(&out.join(kind.dir_name()), &nodes, &steps)?;
    }

    let filter_cfg = cfg.filter_config()?;
    let model = cfg.model()?;
    let streams = Streams::new(cfg.seed);
    let ref_points = if cfg.reference_points > 0 {
        Some(reference_points(&domain, cfg.reference_points, PointLayout::Uniform)?)
    } else {
        None
    };
    let mut filter = SplittingFilter::new(&filter_cfg, &obs)?;
    let mut rows = Vec::with_capacity(cfg.steps);
    let mut error = None;
    while !filter.is_finished() {
        let n = filter.next_step();
        let reference = match &ref_points {
            Some(points) => {
                let est = fk_pointwise_reference(
                    &model,
                    filter.current_density(),
                    points.view(),
                    cfg.dt,
                    cfg.substeps,
                    cfg.reference_paths,
                    streams.key(Purpose::Reference, n as u64, 0),
                )?;
                Some(TrainingReference {
                    points: points.clone(),
                    values: est.values,
                    cell_volume: domain.volume() / (cfg.reference_points - 1) as f64,
                })
            }
            None => None,
        };
        let step = match filter.step(reference.as_ref()) {
            Ok(step) => step,
            Err(e) => {
                fs::write(out.join("ERROR"), format!("{e}\n"))?;
                error = Some(e);
                break;
            }
        };
        let exact = truth.get(n - 1).map(|t| t.mean);
        let diag = StepDiagnostics::from_step(&step, &nodes, exact)?;
        write_grid_csv(
            &step_file(out, "posterior", n, "csv"),
            &nodes,
            &density_on_grid(&step.posterior, &nodes),
        )?;
        write_grid_csv(
            &step_file(out, "prior", n, "csv"),
            &nodes,
            &density_on_grid(&step.posterior.prior, &nodes),
        )?;
        step.training
            .write_csv(create(&step_file(out, "training", n, "csv"))?)?;
        step.posterior
            .prior
            .net
            .write_checkpoint(create(&step_file(out, "checkpoints", n, "nn"))?)?;
        log::info!(
            "step {n}/{}: mean {:.4}, acceptance {:.4}, prior mass {:.4}",
            cfg.steps,
            diag.posterior_mean,
            diag.acceptance_rate,
            diag.prior_mass
        );
        rows.push(diag);
        write_diagnostics_csv(&rows, create(&out.join("diagnostics.csv"))?)?;
    }
    if rows.is_empty() {
        write_diagnostics_csv(&rows, create(&out.join("diagnostics.csv"))?)?;
    }
    Ok(RunOutcome {
        dir: out.to_path_buf(),
        diagnostics: rows,
        error,
    })
}

/// Runs only `kind` and writes it in the run-directory posterior format.
pub fn run_oracle_to_dir(cfg: &ExperimentConfig, out: &Path, kind: OracleKind) -> Result<Vec<OracleStep>> {
    with_workers(cfg.workers, || {
        cfg.validate()?;
        fs::create_dir_all(out)?;
        fs::write(out.join("config.toml"), cfg.to_toml_string())?;
        let (signal, obs) = simulate(cfg)?;
        write_observations(&out.join("observations.csv"), &signal, &obs)?;
        let steps = run_oracle(cfg, &obs, kind)?;
        write_oracle_dir(out, &cfg.domain().grid_1d(cfg.grid_points)?, &steps)?;
        Ok(steps)
    })
}

/// Per-step differences between two run directories.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub step: usize,
    pub l2: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub abs_mean_diff: f64,
    pub abs_std_diff: f64,
}

/// Upper bounds checked by [`compare`]; absent bounds are not checked.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Criteria {
    pub max_l2: Option<f64>,
    pub max_abs_mean_diff: Option<f64>,
    pub max_abs_std_diff: Option<f64>,
}

impl Criteria {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Human-readable violations of `rows`.
    pub fn violations(&self, rows: &[ComparisonRow]) -> Vec<String> {
        let mut out = Vec::new();
        for r in rows {
            let checks = [
                ("l2", r.l2, self.max_l2),
                ("abs_mean_diff", r.abs_mean_diff, self.max_abs_mean_diff),
                ("abs_std_diff", r.abs_std_diff, self.max_abs_std_diff),
            ];
            for (name, value, bound) in checks {
                if let Some(b) = bound {
                    if !(value <= b) {
                        out.push(format!("step {}: {name} = {value:e} exceeds {b:e}", r.step));
                    }
                }
            }
        }
        out
    }
}

fn posterior_steps(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let sub = dir.join("posterior");
    let mut steps = Vec::new();
    for entry in fs::read_dir(&sub)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("");
        if let Some(n) = name
            .strip_prefix("step_")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            steps.push((n, path));
        }
    }
    steps.sort();
    Ok(steps)
}

/// Compares the posterior snapshots of two run (or oracle) directories.
pub fn compare(dir_a: &Path, dir_b: &Path) -> Result<Vec<ComparisonRow>> {
    let a = posterior_steps(dir_a)?;
    let b = posterior_steps(dir_b)?;
    if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.0 != y.0) {
        return Err(Error::InvalidInput(format!(
            "{} and {} hold different steps ({} vs {})",
            dir_a.display(),
            dir_b.display(),
            a.len(),
            b.len()
        )));
    }
    let mut rows = Vec::with_capacity(a.len());
    for ((n, pa), (_, pb)) in a.iter().zip(&b) {
        let (xa, va) = read_grid_csv(pa)?;
        let (xb, vb) = read_grid_csv(pb)?;
        if xa.len() != xb.len() || xa.iter().zip(&xb).any(|(p, q)| (p - q).abs() > 1e-9) {
            return Err(Error::InvalidInput(format!("step {n}: incompatible grids")));
        }
        let spacing = (xa[xa.len() - 1] - xa[0]) / (xa.len() - 1) as f64;
        let (_, ma, sa) = density_moments(&xa, &va)?;
        let (_, mb, sb) = density_moments(&xb, &vb)?;
        rows.push(ComparisonRow {
            step: *n,
            l2: l2_grid_error(&va, &vb, spacing)?,
            mean_a: ma,
            mean_b: mb,
            abs_mean_diff: (ma - mb).abs(),
            abs_std_diff: (sa - sb).abs(),
        });
    }
    Ok(rows)
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "l2", "mean_a", "mean_b", "abs_mean_diff", "abs_std_diff"])?;
    for r in rows {
        out.write_record([
            r.step.to_string(),
            format!("{:e}", r.l2),
            format!("{:e}", r.mean_a),
            format!("{:e}", r.mean_b),
            format!("{:e}", r.abs_mean_diff),
            format!("{:e}", r.abs_std_diff),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `(step, nodes, values)` of one snapshot file.
pub type Snapshot = (usize, Vec<f64>, Vec<f64>);

/// Every snapshot under `dir/sub`.
pub fn read_snapshots(dir: &Path, sub: &str) -> Result<Vec<Snapshot>> {
    let root = dir.join(sub);
    let mut out = Vec::new();
    for (n, path) in posterior_steps(dir)? {
        let path = if sub == "posterior" {
            path
        } else {
            root.join(path.file_name().expect("file name"))
        };
        if path.exists() {
            let (x, v) = read_grid_csv(&path)?;
            out.push((n, x, v));
        }
    }
    Ok(out)
}
