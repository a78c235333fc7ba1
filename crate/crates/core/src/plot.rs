//! Two-panel SVG chart of convergence traces: relative error against epoch
//! and against matvec units, both on a log-scaled error axis.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::solvers::{ConvergenceTrace, SolverKind, TraceSample};

const PANEL_W: f64 = 460.0;
const PANEL_H: f64 = 340.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 48.0;

fn color(kind: SolverKind) -> &'static str {
    match kind {
        SolverKind::Bsgd => "#d62728",
        SolverKind::Ista => "#1f77b4",
        SolverKind::Gd => "#2ca02c",
        SolverKind::Admm => "#9467bd",
    }
}

fn label(kind: SolverKind) -> &'static str {
    match kind {
        SolverKind::Bsgd => "BSGD-TV",
        SolverKind::Ista => "ISTA",
        SolverKind::Gd => "GD",
        SolverKind::Admm => "ADMM-TV",
    }
}

struct Axes {
    x0: f64,
    x_min: f64,
    x_max: f64,
    log_min: f64,
    log_max: f64,
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(f64::MIN_POSITIVE);
        self.x0 + MARGIN_L + (x - self.x_min) / span * (PANEL_W - MARGIN_L - MARGIN_R)
    }

    fn py(&self, err: f64) -> f64 {
        let l = err.max(10f64.powf(self.log_min)).log10();
        let span = self.log_max - self.log_min;
        MARGIN_T + (self.log_max - l) / span * (PANEL_H - MARGIN_T - MARGIN_B)
    }
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let frac = raw / mag;
    let nice = if frac <= 1.0 {
        1.0
    } else if frac <= 2.0 {
        2.0
    } else if frac <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn panel(
    svg: &mut String,
    x0: f64,
    title: &str,
    x_label: &str,
    traces: &[ConvergenceTrace],
    x_of: fn(&TraceSample) -> f64,
    (log_min, log_max): (f64, f64),
) {
    let x_max = traces
        .iter()
        .flat_map(|t| t.samples.iter().map(x_of))
        .fold(0.0, f64::max)
        .max(1.0);
    let ax = Axes {
        x0,
        x_min: 0.0,
        x_max,
        log_min,
        log_max,
    };
    let (left, right) = (x0 + MARGIN_L, x0 + PANEL_W - MARGIN_R);
    let (top, bottom) = (MARGIN_T, PANEL_H - MARGIN_B);
    let _ = writeln!(
        svg,
        r##"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        right - left,
        bottom - top
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#,
        (left + right) / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{x_label}</text>"#,
        (left + right) / 2.0,
        PANEL_H - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 {} {})">relative error</text>"#,
        x0 + 16.0,
        (top + bottom) / 2.0,
        x0 + 16.0,
        (top + bottom) / 2.0
    );

    let step = nice_step(x_max);
    let mut tick = 0.0;
    while tick <= x_max * (1.0 + 1e-9) {
        let x = ax.px(tick);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{bottom}" x2="{x:.2}" y2="{}" stroke="#444"/><text x="{x:.2}" y="{}" text-anchor="middle" font-size="10">{}</text>"##,
            bottom + 4.0,
            bottom + 16.0,
            tick
        );
        tick += step;
    }
    let mut decade = log_min.ceil();
    while decade <= log_max {
        let value = 10f64.powf(decade);
        let y = ax.py(value);
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" y1="{y:.2}" x2="{right}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end" font-size="10">{value}</text>"##,
            left - 4.0,
            y + 3.0
        );
        decade += 1.0;
    }

    for trace in traces {
        let points: Vec<String> = trace
            .samples
            .iter()
            .filter(|s| s.relative_error.is_finite())
            .map(|s| format!("{:.2},{:.2}", ax.px(x_of(s)), ax.py(s.relative_error)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            color(trace.solver),
            points.join(" ")
        );
    }
    for (k, trace) in traces.iter().enumerate() {
        let y = top + 14.0 + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"/><text x="{}" y="{}" font-size="11">{}</text>"#,
            right - 90.0,
            right - 70.0,
            color(trace.solver),
            right - 64.0,
            y + 4.0,
            label(trace.solver)
        );
    }
}

fn error_range(traces: &[ConvergenceTrace]) -> (f64, f64) {
    let (lo, hi) = traces
        .iter()
        .flat_map(|t| t.samples.iter())
        .map(|s| s.relative_error)
        .filter(|e| e.is_finite() && *e > 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e), hi.max(e)));
    if !lo.is_finite() {
        return (-1.0, 0.0);
    }
    let (mut a, mut b) = (lo.log10().floor(), hi.log10().ceil());
    if a == b {
        a -= 1.0;
        b += 1.0;
    }
    (a, b)
}

/// SVG document with the epoch panel on the left and the matvec panel on the
/// right.
pub fn render_svg(traces: &[ConvergenceTrace]) -> String {
    let range = error_range(traces);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{PANEL_H}" viewBox="0 0 {} {PANEL_H}" font-family="sans-serif">"#,
        2.0 * PANEL_W,
        2.0 * PANEL_W
    );
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    panel(&mut svg, 0.0, "Relative error vs. epoch", "epoch", traces, |s| s.epoch, range);
    panel(
        &mut svg,
        PANEL_W,
        "Relative error vs. matrix-vector products",
        "matvec units",
        traces,
        |s| s.matvec_units,
        range,
    );
    svg.push_str("</svg>\n");
    svg
}

pub fn save_svg(traces: &[ConvergenceTrace], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_svg(traces))?;
    Ok(())
}
