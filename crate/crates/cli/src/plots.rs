//! SVG figures of a run directory: the posterior evolution strip, one
//! snapshot per step and the four-panel diagnostics.

use std::fs::{self, File};
use std::path::Path;

use anyhow::{Context, Result};
use plotters::prelude::*;

use splitting_filter::diagnostics::{read_diagnostics_csv, StepDiagnostics};
use splitting_filter::experiment::{read_snapshots, OracleKind};

type Snapshots = Vec<(usize, Vec<f64>, Vec<f64>)>;

pub fn write_all(run: &Path, oracle: Option<OracleKind>) -> Result<()> {
    let dir = run.join("plots");
    fs::create_dir_all(&dir)?;
    let posterior = read_snapshots(run, "posterior")?;
    let prior = read_snapshots(run, "prior")?;
    let oracle_snaps = match oracle {
        Some(kind) => read_snapshots(&run.join(kind.dir_name()), "posterior")?,
        None => Vec::new(),
    };
    let diagnostics = read_diagnostics_csv(
        File::open(run.join("diagnostics.csv")).context("opening diagnostics.csv")?,
    )?;
    if posterior.is_empty() {
        return Ok(());
    }
    evolution(&dir.join("evolution.svg"), &posterior, &diagnostics)?;
    for (i, (step, x, v)) in posterior.iter().enumerate() {
        let prior_v = prior.iter().find(|p| p.0 == *step).map(|p| &p.2);
        let oracle_v = oracle_snaps.iter().find(|p| p.0 == *step).map(|p| &p.2);
        snapshot(
            &dir.join(format!("step_{step:03}.svg")),
            *step,
            x,
            v,
            prior_v,
            oracle_v,
            diagnostics.get(i),
        )?;
    }
    panels(&dir.join("diagnostics.svg"), &diagnostics)?;
    Ok(())
}

fn heat(v: f64) -> HSLColor {
    HSLColor(0.66 - 0.5 * v.clamp(0.0, 1.0), 0.85, 0.15 + 0.45 * v.clamp(0.0, 1.0))
}

/// Time on the horizontal axis, space on the vertical, colour by density.
fn evolution(path: &Path, snaps: &Snapshots, diag: &[StepDiagnostics]) -> Result<()> {
    let root = SVGBackend::new(path, (900, 480)).into_drawing_area();
    root.fill(&WHITE)?;
    let x = &snaps[0].1;
    let (lo, hi) = (x[0], x[x.len() - 1]);
    let t_end = diag.last().map(|d| d.time).unwrap_or(snaps.len() as f64);
    let dt = t_end / snaps.len() as f64;
    let top = snaps
        .iter()
        .flat_map(|s| s.2.iter().copied())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut chart = ChartBuilder::on(&root)
        .caption("posterior density", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..t_end, lo..hi)?;
    chart.configure_mesh().x_desc("t").y_desc("x").draw()?;
    let stride = (x.len() / 200).max(1);
    for (k, (_, nodes, values)) in snaps.iter().enumerate() {
        let t0 = k as f64 * dt;
        chart.draw_series((0..nodes.len().saturating_sub(stride)).step_by(stride).map(|i| {
            let c = heat(values[i] / top);
            Rectangle::new([(t0, nodes[i]), (t0 + dt, nodes[i + stride])], c.filled())
        }))?;
    }
    chart.draw_series(LineSeries::new(
        diag.iter().map(|d| (d.time - 0.5 * dt, d.posterior_mean)),
        WHITE.stroke_width(2),
    ))?;
    root.present()?;
    Ok(())
}

fn snapshot(
    path: &Path,
    step: usize,
    x: &[f64],
    posterior: &[f64],
    prior: Option<&Vec<f64>>,
    oracle: Option<&Vec<f64>>,
    diag: Option<&StepDiagnostics>,
) -> Result<()> {
    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE)?;
    let all = [Some(posterior), prior.map(|v| v.as_slice()), oracle.map(|v| v.as_slice())];
    let (mut ymin, mut ymax) = (0.0f64, 0.0f64);
    for v in all.iter().flatten() {
        for y in v.iter() {
            ymin = ymin.min(*y);
            ymax = ymax.max(*y);
        }
    }
    let ymax = if ymax > ymin { ymax * 1.05 } else { 1.0 };
    let title = match diag {
        Some(d) => format!("step {step}, t = {:.3}", d.time),
        None => format!("step {step}"),
    };
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(x[0]..x[x.len() - 1], ymin..ymax)?;
    chart.configure_mesh().x_desc("x").y_desc("density").draw()?;
    let line = |v: &[f64]| x.iter().copied().zip(v.iter().copied()).collect::<Vec<_>>();
    chart
        .draw_series(LineSeries::new(line(posterior), BLUE.stroke_width(2)))?
        .label("posterior")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLUE));
    if let Some(p) = prior {
        chart
            .draw_series(LineSeries::new(line(p), RGBColor(120, 120, 120)))?
            .label("prior network")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], RGBColor(120, 120, 120)));
    }
    if let Some(o) = oracle {
        chart
            .draw_series(LineSeries::new(line(o), RED.stroke_width(2)))?
            .label("oracle")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], RED));
    }
    if let Some(m) = diag.and_then(|d| d.exact_mean) {
        chart.draw_series(LineSeries::new(vec![(m, ymin), (m, ymax)], BLACK.mix(0.6)))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}

/// Absolute mean error, training L2, prior mass and acceptance rate over time.
fn panels(path: &Path, diag: &[StepDiagnostics]) -> Result<()> {
    let root = SVGBackend::new(path, (1000, 700)).into_drawing_area();
    root.fill(&WHITE)?;
    let areas = root.split_evenly((2, 2));
    let series: [(&str, Vec<(f64, f64)>); 4] = [
        (
            "(a) absolute error in means",
            diag.iter().filter_map(|d| d.abs_mean_error.map(|e| (d.time, e))).collect(),
        ),
        (
            "(b) training L2 error vs reference",
            diag.iter().filter_map(|d| d.l2_vs_reference.map(|e| (d.time, e))).collect(),
        ),
        ("(c) prior mass", diag.iter().map(|d| (d.time, d.prior_mass)).collect()),
        (
            "(d) acceptance rate",
            diag.iter().map(|d| (d.time, d.acceptance_rate)).collect(),
        ),
    ];
    let t_end = diag.last().map(|d| d.time).unwrap_or(1.0);
    for (area, (title, points)) in areas.iter().zip(series) {
        let (lo, hi) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
        let (lo, hi) = if lo.is_finite() && hi > lo {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        } else if lo.is_finite() {
            (lo - 0.5, lo + 0.5)
        } else {
            (0.0, 1.0)
        };
        let mut chart = ChartBuilder::on(area)
            .caption(title, ("sans-serif", 16))
            .margin(8)
            .x_label_area_size(30)
            .y_label_area_size(55)
            .build_cartesian_2d(0.0..t_end, lo..hi)?;
        chart.configure_mesh().x_desc("t").draw()?;
        chart.draw_series(LineSeries::new(points.iter().copied(), BLUE.stroke_width(2)))?;
        chart.draw_series(points.iter().map(|p| Circle::new(*p, 2, BLUE.filled())))?;
    }
    root.present()?;
    Ok(())
}
