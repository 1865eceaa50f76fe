//! Per-step accuracy diagnostics on a uniform grid.

use std::io::Write;

use crate::error::{Error, Result};
use crate::filter::{density_on_grid, trapezoid, FilterStep};

/// Column layout of `diagnostics.csv`.
pub const DIAGNOSTICS_SCHEMA_VERSION: u32 = 1;

pub const DIAGNOSTICS_COLUMNS: [&str; 13] = [
    "step",
    "time",
    "posterior_mean",
    "posterior_std",
    "posterior_mass",
    "exact_mean",
    "abs_mean_error",
    "prior_mass",
    "acceptance_rate",
    "normalizer",
    "l2_vs_reference",
    "observation_increment",
    "low_acceptance",
];

/// Steps whose acceptance rate is below this are flagged.
pub const LOW_ACCEPTANCE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub posterior_mean: f64,
    pub posterior_std: f64,
    pub posterior_mass: f64,
    pub exact_mean: Option<f64>,
    pub abs_mean_error: Option<f64>,
    /// Trapezoid mass of the prior network on the domain.
    pub prior_mass: f64,
    pub acceptance_rate: f64,
    pub normalizer: f64,
    /// Final training L2 error against the pointwise reference.
    pub l2_vs_reference: Option<f64>,
    pub observation_increment: f64,
    pub low_acceptance: bool,
}

impl StepDiagnostics {
    /// Evaluates `step` on the uniform `nodes` of its one-dimensional domain.
    pub fn from_step(step: &FilterStep, nodes: &[f64], exact_mean: Option<f64>) -> Result<Self> {
        let spacing = uniform_spacing(nodes)?;
        let posterior = density_on_grid(&step.posterior, nodes);
        let prior = density_on_grid(&step.posterior.prior, nodes);
        let (mass, mean, std) = density_moments(nodes, &posterior)?;
        Ok(Self {
            step: step.step,
            time: step.time,
            posterior_mean: mean,
            posterior_std: std,
            posterior_mass: mass,
            exact_mean,
            abs_mean_error: exact_mean.map(|m| (mean - m).abs()),
            prior_mass: trapezoid(&prior, spacing),
            acceptance_rate: step.normalizer.acceptance_rate,
            normalizer: step.normalizer.constant,
            l2_vs_reference: step.training.final_l2(),
            observation_increment: step.posterior.likelihood.z()[0],
            low_acceptance: step.normalizer.acceptance_rate < LOW_ACCEPTANCE,
        })
    }
}

fn uniform_spacing(nodes: &[f64]) -> Result<f64> {
    if nodes.len() < 2 {
        return Err(Error::InvalidInput("need at least two grid points".into()));
    }
    Ok((nodes[nodes.len() - 1] - nodes[0]) / (nodes.len() - 1) as f64)
}

/// Moments of grid values with the first node at the origin.
fn moments_from_origin(values: &[f64], spacing: f64) -> Result<(f64, f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InvalidInput("need at least two grid points".into()));
    }
    let mass = trapezoid(values, spacing);
    if !(mass > 0.0) {
        return Err(Error::DegeneratePosterior(format!("density mass {mass} is not positive")));
    }
    let first: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(i, v)| i as f64 * spacing * v)
        .collect();
    let mean = trapezoid(&first, spacing) / mass;
    let second: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let c = i as f64 * spacing - mean;
            c * c * v
        })
        .collect();
    let var = trapezoid(&second, spacing) / mass;
    Ok((mass, mean, var.max(0.0).sqrt()))
}

/// Trapezoid mass, mean and standard deviation of density values on
/// uniform `nodes`.
pub fn density_moments(nodes: &[f64], values: &[f64]) -> Result<(f64, f64, f64)> {
    if nodes.len() != values.len() {
        return Err(Error::InvalidInput(format!(
            "{} nodes but {} values",
            nodes.len(),
            values.len()
        )));
    }
    let spacing = uniform_spacing(nodes)?;
    let (mass, mean, std) = moments_from_origin(values, spacing)?;
    Ok((mass, mean + nodes[0], std))
}

/// `sqrt(sum (u_i - v_i)^2 * spacing)`.
pub fn l2_grid_error(u: &[f64], v: &[f64], spacing: f64) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "L2 error of grids with {} and {} points",
            u.len(),
            v.len()
        )));
    }
    let sq: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq * spacing).sqrt())
}

/// Convolution with a Gaussian kernel of standard deviation `bandwidth`,
/// truncated at four bandwidths and renormalized near the edges.
pub fn gaussian_smooth(values: &[f64], spacing: f64, bandwidth: f64) -> Vec<f64> {
    if bandwidth <= 0.0 {
        return values.to_vec();
    }
    let radius = (4.0 * bandwidth / spacing).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| {
            let u = k as f64 * spacing / bandwidth;
            (-0.5 * u * u).exp()
        })
        .collect();
    let n = values.len() as isize;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            let mut weight = 0.0;
            for (k, w) in (-radius..=radius).zip(&kernel) {
                let j = i + k;
                if (0..n).contains(&j) {
                    acc += w * values[j as usize];
                    weight += w;
                }
            }
            acc / weight
        })
        .collect()
}

/// Indices of strict interior local maxima whose value exceeds
/// `rel_floor * max(values)`. Plateaus count once, at their first index.
pub fn local_maxima(values: &[f64], rel_floor: f64) -> Vec<usize> {
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = rel_floor * top;
    let mut out = Vec::new();
    let n = values.len();
    let mut i = 1;
    while i + 1 < n {
        if values[i] > values[i - 1] {
            let mut j = i;
            while j + 1 < n && values[j + 1] == values[i] {
                j += 1;
            }
            if j + 1 < n && values[j + 1] < values[i] && values[i] > floor {
                out.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// Writes `diagnostics.csv` rows with the [`DIAGNOSTICS_COLUMNS`] header.
pub fn write_diagnostics_csv<W: Write>(rows: &[StepDiagnostics], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(DIAGNOSTICS_COLUMNS)?;
    for r in rows {
        out.write_record([
            r.step.to_string(),
            format!("{:e}", r.time),
            format!("{:e}", r.posterior_mean),
            format!("{:e}", r.posterior_std),
            format!("{:e}", r.posterior_mass),
            opt(r.exact_mean),
            opt(r.abs_mean_error),
            format!("{:e}", r.prior_mass),
            format!("{:e}", r.acceptance_rate),
            format!("{:e}", r.normalizer),
            opt(r.l2_vs_reference),
            format!("{:e}", r.observation_increment),
            (r.low_acceptance as u8).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a file written by [`write_diagnostics_csv`].
pub fn read_diagnostics_csv<R: std::io::Read>(r: R) -> Result<Vec<StepDiagnostics>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(DIAGNOSTICS_COLUMNS.iter().copied()) {
        return Err(Error::InvalidInput("unexpected diagnostics.csv header".into()));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::InvalidInput(format!("bad number `{s}` in diagnostics.csv")))
    };
    let opt_num = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s).map(Some)
        }
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(StepDiagnostics {
            step: num(&rec[0])? as usize,
            time: num(&rec[1])?,
            posterior_mean: num(&rec[2])?,
            posterior_std: num(&rec[3])?,
            posterior_mass: num(&rec[4])?,
            exact_mean: opt_num(&rec[5])?,
            abs_mean_error: opt_num(&rec[6])?,
            prior_mass: num(&rec[7])?,
            acceptance_rate: num(&rec[8])?,
            normalizer: num(&rec[9])?,
            l2_vs_reference: opt_num(&rec[10])?,
            observation_increment: num(&rec[11])?,
            low_acceptance: &rec[12] == "1",
        });
    }
    Ok(rows)
}
