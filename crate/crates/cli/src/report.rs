//! `report`: collects run records under a directory, prints the mean(std)
//! table and draws loss curves, disentanglement trends and missing-ratio
//! sweeps as SVG files.

use std::fs;
use std::path::{Path, PathBuf};

use adrl::harness::{load_run, RunRecord, SUMMARY_FILE};
use adrl::metrics::{format_table, MetricsSummary};
use plotters::coord::Shift;
use plotters::prelude::*;

use crate::Failure;

pub const TABLE_FILE: &str = "table.txt";
pub const LOSS_PLOT: &str = "loss_curves.svg";
pub const MI_PLOT: &str = "mi_trends.svg";
pub const SWEEP_PLOT: &str = "sweep.svg";

type Series = (String, Vec<(f64, f64)>);

fn plot_err(e: impl std::fmt::Display) -> Failure {
    Failure::Invalid(format!("plotting failed: {e}"))
}

/// Directories below `root` (inclusive) holding a run summary, sorted.
fn find_runs(root: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join(SUMMARY_FILE).is_file() {
            found.push(dir.clone());
        }
        let entries = fs::read_dir(&dir).map_err(|e| Failure::Invalid(format!("{}: {e}", dir.display())))?;
        for entry in entries.flatten() {
            if entry.file_type().map(|t| t.is_dir()).unwrap_or(false) {
                stack.push(entry.path());
            }
        }
    }
    found.sort();
    Ok(found)
}

fn variant_name(r: &RunRecord) -> &'static str {
    r.config.variant().map(|v| v.name()).unwrap_or("custom")
}

/// Runs sharing a variant and missing ratios.
struct Group {
    variant: &'static str,
    fmr: f64,
    lmr: f64,
    runs: Vec<usize>,
}

impl Group {
    fn label(&self) -> String {
        format!("{} fmr={} lmr={}", self.variant, self.fmr, self.lmr)
    }
}

fn group_runs(records: &[RunRecord]) -> Vec<Group> {
    let mut groups: Vec<Group> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let (variant, fmr, lmr) = (variant_name(r), r.config.fmr, r.config.lmr);
        match groups.iter_mut().find(|g| g.variant == variant && g.fmr == fmr && g.lmr == lmr) {
            Some(g) => g.runs.push(i),
            None => groups.push(Group { variant, fmr, lmr, runs: vec![i] }),
        }
    }
    let order = |name: &str| ["full", "no_S1", "no_S2", "no_S3"].iter().position(|n| *n == name).unwrap_or(4);
    groups.sort_by(|a, b| {
        (a.fmr, a.lmr, order(a.variant))
            .partial_cmp(&(b.fmr, b.lmr, order(b.variant)))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    groups
}

pub fn run(runs: &Path, out: &Path) -> Result<(), Failure> {
    if !runs.is_dir() {
        return Err(Failure::Invalid(format!("{} is not a directory", runs.display())));
    }
    let dirs = find_runs(runs)?;
    if dirs.is_empty() {
        return Err(Failure::Invalid(format!("no run records under {}", runs.display())));
    }
    let records = dirs.iter().map(|d| load_run(d)).collect::<adrl::Result<Vec<_>>>()?;
    let names: Vec<String> = dirs
        .iter()
        .map(|d| match d.strip_prefix(runs) {
            Ok(rel) if !rel.as_os_str().is_empty() => rel.display().to_string(),
            _ => d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| ".".into()),
        })
        .collect();

    let groups = group_runs(&records);
    let mut rows = Vec::with_capacity(groups.len());
    for g in &groups {
        let tests: Vec<_> = g.runs.iter().map(|&i| records[i].test).collect();
        rows.push((g.label(), MetricsSummary::from_reports(&tests)?));
    }
    let table = format_table(&rows);
    fs::create_dir_all(out).map_err(|e| Failure::Invalid(format!("{}: {e}", out.display())))?;
    let path = out.join(TABLE_FILE);
    fs::write(&path, &table).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    print!("{table}");

    let per_epoch = |f: &dyn Fn(&adrl::harness::EpochRecord) -> f64| -> Vec<Series> {
        records
            .iter()
            .zip(&names)
            .map(|(r, name)| (name.clone(), r.epochs.iter().map(|e| (e.epoch as f64, f(e))).collect()))
            .collect()
    };

    let loss_path = out.join(LOSS_PLOT);
    let root = SVGBackend::new(&loss_path, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    line_chart(&root, "training loss", "epoch", "total loss", &per_epoch(&|e| e.losses.total))?;
    root.present().map_err(plot_err)?;

    let mi_path = out.join(MI_PLOT);
    let root = SVGBackend::new(&mi_path, (1400, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, 2));
    line_chart(&panels[0], "shared-pair JSD estimate", "epoch", "estimate", &per_epoch(&|e| e.losses.jsd))?;
    line_chart(&panels[1], "private overlap bound", "epoch", "bound", &per_epoch(&|e| e.losses.overlap))?;
    root.present().map_err(plot_err)?;

    let sweep_path = out.join(SWEEP_PLOT);
    let root = SVGBackend::new(&sweep_path, (1400, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, 2));
    let by_fmr = sweep(&groups, &records, |g| (format!("{} lmr={}", g.variant, g.lmr), g.fmr));
    let by_lmr = sweep(&groups, &records, |g| (format!("{} fmr={}", g.variant, g.fmr), g.lmr));
    line_chart(&panels[0], "test AP against FMR", "FMR", "mean test AP", &by_fmr)?;
    line_chart(&panels[1], "test AP against LMR", "LMR", "mean test AP", &by_lmr)?;
    root.present().map_err(plot_err)?;

    println!("{} runs; plots in {}", records.len(), out.display());
    Ok(())
}

/// Mean test AP per group, gathered into curves by `key`, which gives the
/// curve name and the x position of a group.
fn sweep(groups: &[Group], records: &[RunRecord], key: impl Fn(&Group) -> (String, f64)) -> Vec<Series> {
    let mut curves: Vec<Series> = Vec::new();
    for g in groups {
        let (name, x) = key(g);
        let ap = g.runs.iter().map(|&i| records[i].test.ap).sum::<f64>() / g.runs.len() as f64;
        match curves.iter_mut().find(|(n, _)| *n == name) {
            Some((_, pts)) => pts.push((x, ap)),
            None => curves.push((name, vec![(x, ap)])),
        }
    }
    for (_, pts) in &mut curves {
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    }
    curves
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1e-3) };
    (lo - pad, hi + pad)
}

fn line_chart(
    area: &DrawingArea<SVGBackend, Shift>,
    title: &str,
    x_desc: &str,
    y_desc: &str,
    series: &[Series],
) -> Result<(), Failure> {
    let (x0, x1) = padded_range(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let (y0, y1) = padded_range(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc(y_desc)
        .draw()
        .map_err(plot_err)?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let finite: Vec<(f64, f64)> = pts.iter().copied().filter(|p| p.1.is_finite()).collect();
        chart
            .draw_series(LineSeries::new(finite.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        if finite.len() < 12 {
            chart
                .draw_series(finite.iter().map(|&p| Circle::new(p, 3, color.filled())))
                .map_err(plot_err)?;
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    Ok(())
}
