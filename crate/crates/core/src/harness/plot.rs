//! Static SVG output. Every drawn element carries a `class` so tests can
//! count experts, policies and grid lines.

use std::fmt::Write as _;

use super::{EvalEnv, HarnessError, MetricsReport, SweepReport};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 40.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn polyline(&self, out: &mut String, class: &str, color: &str, pts: &[(f64, f64)]) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="{class}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn xy(states: &[Vec<f64>]) -> Vec<(f64, f64)> {
    states
        .iter()
        .filter(|s| s.len() >= 2)
        .map(|s| (s[0], s[1]))
        .collect()
}

/// Dataset expert paths in black, the baseline policy in blue and the PPL
/// policy in red over the toy geometry, with a vertical grid line at every
/// grid column. Uses the first successful seed with a policy trajectory.
pub fn render_trajectories(report: &MetricsReport) -> Result<String, HarnessError> {
    let Some(EvalEnv::Toy(env)) = &report.env else {
        return Err(HarnessError::MissingTrajectories("not a toy report".into()));
    };
    let seed = report
        .seeds
        .iter()
        .find(|s| s.is_ok() && s.trajectory("policy").is_some())
        .ok_or_else(|| {
            HarnessError::MissingTrajectories("no seed has a policy trajectory".into())
        })?;
    let (x0, x1) = (env.grid[0], *env.grid.last().expect("grid is nonempty"));
    let mut ymax: f64 = 1.0;
    let paths = report
        .dataset_paths
        .iter()
        .chain(seed.trajectories.iter().map(|t| &t.states));
    for p in paths {
        for s in p {
            if s.len() >= 2 {
                ymax = ymax.max(s[1].abs() * 1.05);
            }
        }
    }
    let frame = Frame {
        x0,
        x1,
        y0: -ymax,
        y1: ymax,
    };
    let mut out = String::new();
    header(&mut out, &format!("{} (seed {})", report.name, seed.seed));
    for &gx in &env.grid {
        let x = frame.px(gx);
        let _ = writeln!(
            out,
            r##"<line class="grid" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#dddddd" stroke-width="0.5"/>"##,
            frame.py(frame.y1),
            frame.py(frame.y0)
        );
    }
    let _ = writeln!(
        out,
        r##"<line class="axis" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888888"/>"##,
        frame.px(x0),
        frame.py(0.0),
        frame.px(x1),
        frame.py(0.0)
    );
    for (i, label) in [(x0, format!("{x0}")), (x1, format!("{x1}"))] {
        let _ = writeln!(
            out,
            r#"<text class="tick" x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="10">{label}</text>"#,
            frame.px(i),
            HEIGHT - MARGIN + 14.0
        );
    }
    for p in &report.dataset_paths {
        frame.polyline(&mut out, "expert", "black", &xy(p));
    }
    if let Some(t) = seed.trajectory("baseline") {
        frame.polyline(&mut out, "baseline", "#1f77b4", &xy(&t.states));
    }
    if let Some(t) = seed.trajectory("policy") {
        frame.polyline(&mut out, "ppl", "#d62728", &xy(&t.states));
    }
    out.push_str("</svg>\n");
    Ok(out)
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

/// Smoothed score curves, one per `w`.
pub fn render_sweep_curves(sweep: &SweepReport) -> String {
    let pts: Vec<Vec<(f64, f64)>> = sweep
        .rows
        .iter()
        .map(|r| {
            r.curve
                .iter()
                .zip(&r.curve_ema)
                .map(|(c, &e)| (c.0 as f64, e))
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut x1, mut y0, mut y1) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !y0.is_finite() || y1 - y0 < 1e-9 {
        y0 = if y0.is_finite() { y0 - 0.5 } else { 0.0 };
        y1 = y0 + 1.0;
    }
    let frame = Frame {
        x0: 0.0,
        x1,
        y0,
        y1,
    };
    let mut out = String::new();
    header(&mut out, &format!("{}: return vs step", sweep.name));
    for (i, (row, p)) in sweep.rows.iter().zip(&pts).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        frame.polyline(&mut out, "curve", color, p);
        let _ = writeln!(
            out,
            r#"<text class="legend" x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" fill="{color}">w = {}</text>"#,
            WIDTH - MARGIN - 60.0,
            MARGIN + 14.0 * i as f64,
            row.w
        );
    }
    out.push_str("</svg>\n");
    out
}
