//! SVG figures from a summary CSV: delay against the aggregate request rate.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use plotters::coord::Shift;
use plotters::prelude::*;

use smq_core::report::read_summary;
use smq_core::{RowClass, Source, SummaryRow};

use crate::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    DelayVsLambda,
    TheoryVsSim,
    GoodVsBad,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [PlotKind::DelayVsLambda, PlotKind::TheoryVsSim, PlotKind::GoodVsBad];

    pub fn as_str(self) -> &'static str {
        match self {
            PlotKind::DelayVsLambda => "delay_vs_lambda",
            PlotKind::TheoryVsSim => "theory_vs_sim",
            PlotKind::GoodVsBad => "good_vs_bad",
        }
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlotKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CliError::Invalid(format!("unknown plot kind `{s}`")))
    }
}

const SIZE: (u32, u32) = (800, 560);

/// Series label: scheme, discipline, streams and cycle.
fn series_key(r: &SummaryRow) -> String {
    format!("{} {} S={} C={}", r.scheme, r.queue_kind, r.streams, r.cycle)
}

type Series = BTreeMap<String, Vec<(f64, f64)>>;

fn collect(rows: &[SummaryRow], source: Source, class: RowClass) -> Series {
    let mut out: Series = BTreeMap::new();
    for r in rows.iter().filter(|r| r.source == source && r.class == class && !r.is_failed()) {
        if let Some(d) = r.mean_sojourn_s.filter(|d| d.is_finite()) {
            out.entry(series_key(r)).or_default().push((r.lambda, d));
        }
    }
    for points in out.values_mut() {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

/// Simulation rows when there are any, otherwise analysis rows.
fn preferred(rows: &[SummaryRow], class: RowClass) -> Series {
    let sim = collect(rows, Source::Sim, class);
    if sim.is_empty() {
        collect(rows, Source::Theory, class)
    } else {
        sim
    }
}

fn bounds<'a>(series: impl Iterator<Item = &'a Vec<(f64, f64)>>) -> Option<((f64, f64), (f64, f64))> {
    let mut x = (f64::INFINITY, f64::NEG_INFINITY);
    let mut y = (0.0, f64::NEG_INFINITY);
    for &(a, b) in series.flatten() {
        x = (x.0.min(a), x.1.max(a));
        y.1 = f64::max(y.1, b);
    }
    if !x.0.is_finite() {
        return None;
    }
    if x.1 - x.0 < 1e-9 {
        x = (x.0 - 1.0, x.1 + 1.0);
    }
    Some((x, (y.0, y.1 * 1.1)))
}

fn plot_err(e: impl fmt::Display) -> CliError {
    CliError::Plot(e.to_string())
}

/// One panel; `analysis` curves are drawn with triangle markers.
fn panel(area: &DrawingArea<SVGBackend<'_>, Shift>, title: &str, measured: &Series, analysis: &Series) -> Result<()> {
    let ((x0, x1), (y0, y1)) =
        bounds(measured.values().chain(analysis.values())).ok_or_else(|| CliError::Plot(format!("{title}: no data")))?;
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("lambda (requests/s)")
        .y_desc("mean sojourn time (s)")
        .draw()
        .map_err(plot_err)?;

    let keys: Vec<&String> = {
        let mut k: Vec<&String> = measured.keys().chain(analysis.keys()).collect();
        k.sort();
        k.dedup();
        k
    };
    for (i, key) in keys.into_iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        if let Some(points) = measured.get(key) {
            let label = if analysis.is_empty() { key.clone() } else { format!("{key} sim") };
            chart
                .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(label)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
            chart.draw_series(points.iter().map(|&p| Circle::new(p, 4, color.filled()))).map_err(plot_err)?;
        }
        if let Some(points) = analysis.get(key) {
            chart
                .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(1)))
                .map_err(plot_err)?
                .label(format!("{key} theory"))
                .legend(move |(x, y)| TriangleMarker::new((x + 10, y), 5, color.filled()));
            chart.draw_series(points.iter().map(|&p| TriangleMarker::new(p, 5, color.filled()))).map_err(plot_err)?;
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::UpperLeft)
        .draw()
        .map_err(plot_err)?;
    Ok(())
}

/// Renders `rows` as an SVG document.
pub fn render(rows: &[SummaryRow], kind: PlotKind) -> Result<String> {
    if rows.is_empty() {
        return Err(CliError::Plot("summary has no rows".into()));
    }
    let empty = Series::new();
    let mut svg = String::new();
    {
        let size = if kind == PlotKind::GoodVsBad { (SIZE.0 * 2, SIZE.1) } else { SIZE };
        let root = SVGBackend::with_string(&mut svg, size).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        match kind {
            PlotKind::DelayVsLambda => panel(&root, "Mean sojourn time", &preferred(rows, RowClass::All), &empty)?,
            PlotKind::TheoryVsSim => {
                let sim = collect(rows, Source::Sim, RowClass::All);
                let theory = collect(rows, Source::Theory, RowClass::All);
                if sim.is_empty() || theory.is_empty() {
                    return Err(CliError::Plot("theory_vs_sim needs both sim and theory rows".into()));
                }
                panel(&root, "Analysis against simulation", &sim, &theory)?
            }
            PlotKind::GoodVsBad => {
                let (left, right) = root.split_horizontally(SIZE.0);
                panel(&left, "Good users", &preferred(rows, RowClass::Good), &empty)?;
                panel(&right, "Bad users", &preferred(rows, RowClass::Bad), &empty)?;
            }
        }
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

/// Reads a summary CSV and writes `<kind>.svg` into `out_dir`.
pub fn emit_plots(summary: &Path, kind: PlotKind, out_dir: &Path) -> Result<PathBuf> {
    let file = fs::File::open(summary).map_err(CliError::io(summary))?;
    let rows = read_summary(file)?;
    let svg = render(&rows, kind)?;
    fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    let path = out_dir.join(format!("{kind}.svg"));
    fs::write(&path, svg).map_err(CliError::io(&path))?;
    Ok(path)
}
