//! Self-contained SVG charts: funnel heatmap, δ-τ scatter against the
//! oracle line, and sweep line charts.

use std::fmt::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use talon_core::metrics::{CurveRow, FunnelRow, CURVE_HEADER, FUNNEL_HEADER};

use crate::error::{CliError, Result};
use crate::run::{SweepRow, SWEEP_HEADER};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open(w: f64, h: f64, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
        w / 2.0,
        escape(title)
    )
}

fn text(svg: &mut String, x: f64, y: f64, anchor: &str, size: u32, body: &str) {
    let _ = writeln!(
        svg,
        "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"{size}\">{}</text>",
        escape(body)
    );
}

pub fn placeholder(title: &str) -> String {
    let mut svg = open(WIDTH, HEIGHT, title);
    text(&mut svg, WIDTH / 2.0, HEIGHT / 2.0, "middle", 14, "no data");
    svg.push_str("</svg>\n");
    svg
}

/// Linear map from data to pixels on one axis.
#[derive(Clone, Copy)]
struct Scale {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, from: f64, to: f64) -> Self {
        let hi = if hi > lo { hi } else { lo + 1.0 };
        Self { lo, hi, from, to }
    }

    fn at(&self, v: f64) -> f64 {
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }
}

fn axes(svg: &mut String, x: Scale, y: Scale, xlabel: &str, ylabel: &str) {
    let (x0, x1, y0, y1) = (x.from, x.to, y.from, y.to);
    let _ = writeln!(
        svg,
        "<path d=\"M{x0:.1},{y1:.1} L{x0:.1},{y0:.1} L{x1:.1},{y0:.1}\" fill=\"none\" stroke=\"black\"/>"
    );
    for i in 0..=4 {
        let fx = x.lo + (x.hi - x.lo) * f64::from(i) / 4.0;
        let fy = y.lo + (y.hi - y.lo) * f64::from(i) / 4.0;
        text(svg, x.at(fx), y0 + 18.0, "middle", 11, &format!("{fx:.2}"));
        text(
            svg,
            x0 - 6.0,
            y.at(fy) + 4.0,
            "end",
            11,
            &format!("{fy:.2}"),
        );
    }
    text(svg, (x0 + x1) / 2.0, y0 + 40.0, "middle", 13, xlabel);
    let _ = writeln!(
        svg,
        "<text transform=\"translate(16,{:.1}) rotate(-90)\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>",
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

/// Acceptance frequency per (depth, rank) cell; darker is higher.
pub fn funnel_heatmap(rows: &[FunnelRow]) -> String {
    let title = "Acceptance funnel";
    if rows.is_empty() {
        return placeholder(title);
    }
    let depths = rows.iter().map(|r| r.depth).max().unwrap_or(1);
    let ranks = rows.iter().map(|r| r.rank).max().unwrap_or(1);
    let cell = (560.0 / ranks as f64)
        .min(400.0 / depths as f64)
        .clamp(8.0, 48.0);
    let (w, h) = (
        MARGIN * 2.0 + cell * ranks as f64,
        MARGIN * 2.0 + cell * depths as f64,
    );
    let mut svg = open(w, h, title);
    for r in rows {
        let (x, y) = (
            MARGIN + r.rank.saturating_sub(1) as f64 * cell,
            MARGIN + r.depth.saturating_sub(1) as f64 * cell,
        );
        let shade = (255.0 * (1.0 - r.freq.clamp(0.0, 1.0))).round() as u8;
        let _ = writeln!(
            svg,
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" fill=\"rgb({shade},{shade},255)\" stroke=\"#999\"><title>depth {} rank {}: {}/{}</title></rect>",
            r.depth, r.rank, r.accepted, r.offered
        );
        if cell >= 28.0 {
            let color = if r.freq > 0.5 { "white" } else { "black" };
            let _ = writeln!(
                svg,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\" fill=\"{color}\">{:.2}</text>",
                x + cell / 2.0,
                y + cell / 2.0 + 3.0,
                r.freq
            );
        }
    }
    for d in 1..=depths {
        text(
            &mut svg,
            MARGIN - 6.0,
            MARGIN + (d as f64 - 0.5) * cell + 4.0,
            "end",
            11,
            &d.to_string(),
        );
    }
    for k in 1..=ranks {
        text(
            &mut svg,
            MARGIN + (k as f64 - 0.5) * cell,
            MARGIN - 6.0,
            "middle",
            11,
            &k.to_string(),
        );
    }
    text(
        &mut svg,
        w / 2.0,
        h - 20.0,
        "middle",
        13,
        "rank among siblings",
    );
    let _ = writeln!(
        svg,
        "<text transform=\"translate(16,{:.1}) rotate(-90)\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">depth</text>",
        h / 2.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// Per-bucket (τ, δ) points with the δ = τ oracle line dashed.
pub fn delta_tau_scatter(rows: &[CurveRow]) -> String {
    let title = "Draft cost against accepted length";
    if rows.is_empty() {
        return placeholder(title);
    }
    let top = rows
        .iter()
        .flat_map(|r| [r.tau_mean, r.delta_mean])
        .fold(1.0, f64::max)
        * 1.1;
    let x = Scale::new(0.0, top, MARGIN, WIDTH - MARGIN);
    let y = Scale::new(0.0, top, HEIGHT - MARGIN, MARGIN);
    let mut svg = open(WIDTH, HEIGHT, title);
    axes(
        &mut svg,
        x,
        y,
        "tau (mean accepted length)",
        "delta (draft forwards per step)",
    );
    let _ = writeln!(
        svg,
        "<line class=\"oracle\" x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"gray\" stroke-dasharray=\"6 4\"/>",
        x.at(0.0),
        y.at(0.0),
        x.at(top),
        y.at(top)
    );
    for (i, r) in rows.iter().enumerate() {
        let (px, py) = (x.at(r.tau_mean), y.at(r.delta_mean));
        let _ = writeln!(
            svg,
            "<circle cx=\"{px:.1}\" cy=\"{py:.1}\" r=\"5\" fill=\"{}\"/>",
            PALETTE[i % PALETTE.len()]
        );
        text(&mut svg, px + 8.0, py - 6.0, "start", 11, &r.bucket);
    }
    text(
        &mut svg,
        WIDTH - MARGIN,
        MARGIN + 10.0,
        "end",
        11,
        "dashed: oracle delta = tau",
    );
    svg.push_str("</svg>\n");
    svg
}

/// τ and δ against the swept value, one pair of lines per policy.
pub fn sweep_lines(rows: &[SweepRow]) -> String {
    let title = "Sweep";
    if rows.is_empty() {
        return placeholder(title);
    }
    let axis = &rows[0].axis;
    let (vlo, vhi) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.value), hi.max(r.value))
        });
    let top = rows
        .iter()
        .flat_map(|r| [r.tau, r.delta])
        .fold(1.0, f64::max)
        * 1.1;
    let x = Scale::new(vlo, vhi, MARGIN, WIDTH - MARGIN);
    let y = Scale::new(0.0, top, HEIGHT - MARGIN, MARGIN);
    let mut svg = open(WIDTH, HEIGHT, &format!("{title} over {axis}"));
    axes(&mut svg, x, y, axis, "tau / delta");
    let mut policies: Vec<&str> = rows.iter().map(|r| r.policy.as_str()).collect();
    policies.dedup();
    let mut series = 0;
    for policy in policies {
        let mut points: Vec<&SweepRow> = rows.iter().filter(|r| r.policy == policy).collect();
        points.sort_by(|a, b| a.value.total_cmp(&b.value));
        for (metric, dash, get) in [
            ("tau", "", (|r: &SweepRow| r.tau) as fn(&SweepRow) -> f64),
            ("delta", " stroke-dasharray=\"4 3\"", |r: &SweepRow| r.delta),
        ] {
            let color = PALETTE[series % PALETTE.len()];
            let d: Vec<String> = points
                .iter()
                .map(|r| format!("{:.1},{:.1}", x.at(r.value), y.at(get(r))))
                .collect();
            let _ = writeln!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>",
                d.join(" ")
            );
            for r in &points {
                let _ = writeln!(
                    svg,
                    "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>",
                    x.at(r.value),
                    y.at(get(r))
                );
            }
            text(
                &mut svg,
                WIDTH - MARGIN,
                MARGIN + 14.0 * (series as f64 + 1.0),
                "end",
                11,
                &format!("{policy} {metric}"),
            );
            series += 1;
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Reads a CSV, insisting on `required` columns. `None` means the file has
/// no data rows.
pub fn read_rows<T: DeserializeOwned>(path: &Path, required: &[&str]) -> Result<Option<Vec<T>>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path.display(), e))?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(None);
    }
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let headers = reader
        .headers()
        .map_err(|e| CliError::io(path.display(), e))?
        .clone();
    if let Some(missing) = required.iter().find(|c| !headers.iter().any(|h| h == **c)) {
        return Err(CliError::Validation(format!(
            "{}: missing column `{missing}`",
            path.display()
        )));
    }
    let rows = reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok((!rows.is_empty()).then_some(rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Funnel,
    Curve,
    Sweep,
}

impl PlotKind {
    pub fn file_name(self) -> &'static str {
        match self {
            PlotKind::Funnel => "funnel_heatmap.svg",
            PlotKind::Curve => "delta_tau.svg",
            PlotKind::Sweep => "sweep.svg",
        }
    }
}

/// Renders one CSV. Returns the SVG and whether the input was empty.
pub fn render(kind: PlotKind, path: &Path) -> Result<(String, bool)> {
    Ok(match kind {
        PlotKind::Funnel => match read_rows::<FunnelRow>(path, FUNNEL_HEADER)? {
            Some(rows) => (funnel_heatmap(&rows), false),
            None => (funnel_heatmap(&[]), true),
        },
        PlotKind::Curve => match read_rows::<CurveRow>(path, CURVE_HEADER)? {
            Some(rows) => (delta_tau_scatter(&rows), false),
            None => (delta_tau_scatter(&[]), true),
        },
        PlotKind::Sweep => match read_rows::<SweepRow>(path, SWEEP_HEADER)? {
            Some(rows) => (sweep_lines(&rows), false),
            None => (sweep_lines(&[]), true),
        },
    })
}
