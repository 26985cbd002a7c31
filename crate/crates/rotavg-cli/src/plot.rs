//! Static SVG rendering of solver convergence traces.
//!
//! The input is the trace CSV written by `solve --trace`; the output is a
//! log-scale plot of min |lambda_i| per iteration. Values at or below the
//! floor of 1e-18 (including exact zeros) are clamped onto the bottom edge.

use anyhow::{bail, Context, Result};
use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 44.0;
const MARGIN_BOTTOM: f64 = 56.0;
const LOG_FLOOR: f64 = 1e-18;

fn parse_trace(text: &str) -> Result<Vec<(usize, f64)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("iteration,min_abs_lambda,cost,wall_ms") => {}
        Some(other) => bail!("unexpected trace header `{other}`"),
        None => bail!("trace file is empty"),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut field = |what: &str| -> Result<&str> {
            fields
                .next()
                .with_context(|| format!("trace line {}: missing {what}", idx + 2))
        };
        let iteration: usize = field("iteration")?
            .trim()
            .parse()
            .with_context(|| format!("trace line {}: bad iteration", idx + 2))?;
        let min_abs: f64 = field("min_abs_lambda")?
            .trim()
            .parse()
            .with_context(|| format!("trace line {}: bad min_abs_lambda", idx + 2))?;
        rows.push((iteration, min_abs));
    }
    if rows.is_empty() {
        bail!("trace has a header but no rows");
    }
    Ok(rows)
}

/// Renders `trace` (a solve trace CSV) into a standalone SVG at `out`.
pub fn render(trace: &Path, out: &Path) -> Result<ExitCode> {
    let text = std::fs::read_to_string(trace)
        .with_context(|| format!("reading {}", trace.display()))?;
    let rows = parse_trace(&text)?;
    let svg = render_svg(&rows);
    std::fs::write(out, svg).with_context(|| format!("writing {}", out.display()))?;
    Ok(ExitCode::SUCCESS)
}

fn render_svg(rows: &[(usize, f64)]) -> String {
    let x_max = rows.iter().map(|r| r.0).max().expect("rows is non-empty").max(1);
    let logs: Vec<f64> = rows
        .iter()
        .map(|r| r.1.max(LOG_FLOOR).log10())
        .collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min).floor();
    let mut hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil();
    if hi <= lo {
        hi = lo + 1.0;
    }
    // Cap the number of decade gridlines, widening the step as needed.
    let decades = (hi - lo) as usize;
    let decade_step = decades.div_ceil(12).max(1);
    if decades % decade_step != 0 {
        hi = lo + (decades.div_ceil(decade_step) * decade_step) as f64;
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_of = |iter: usize| MARGIN_LEFT + plot_w * iter as f64 / x_max as f64;
    let y_of = |log: f64| MARGIN_TOP + plot_h * (hi - log) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">smallest |&#955;| of &#923; &#8722; M per iteration</text>",
        MARGIN_LEFT + plot_w / 2.0
    );

    // Decade gridlines and labels.
    let mut d = lo as i64;
    while d as f64 <= hi {
        let y = y_of(d as f64);
        let _ = writeln!(
            s,
            "<line x1=\"{MARGIN_LEFT:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\" stroke-width=\"1\"/>",
            MARGIN_LEFT + plot_w
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">1e{d}</text>",
            MARGIN_LEFT - 8.0,
            y + 4.0
        );
        d += decade_step as i64;
    }

    // Horizontal axis ticks at round iteration counts.
    let x_step = (x_max / 10).max(1);
    let mut it = 0usize;
    while it <= x_max {
        let x = x_of(it);
        let base = MARGIN_TOP + plot_h;
        let _ = writeln!(
            s,
            "<line x1=\"{x:.1}\" y1=\"{base:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#888888\" stroke-width=\"1\"/>",
            base + 5.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{it}</text>",
            base + 20.0
        );
        it += x_step;
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">iteration</text>",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );

    // Axes.
    let _ = writeln!(
        s,
        "<line x1=\"{MARGIN_LEFT:.1}\" y1=\"{MARGIN_TOP:.1}\" x2=\"{MARGIN_LEFT:.1}\" y2=\"{:.1}\" stroke=\"black\" stroke-width=\"1.5\"/>",
        MARGIN_TOP + plot_h
    );
    let _ = writeln!(
        s,
        "<line x1=\"{MARGIN_LEFT:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\" stroke-width=\"1.5\"/>",
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w,
        MARGIN_TOP + plot_h
    );

    // The series itself; a lone iterate still gets a visible marker.
    let points: Vec<String> = rows
        .iter()
        .zip(&logs)
        .map(|(&(iter, _), &log)| format!("{:.2},{:.2}", x_of(iter), y_of(log)))
        .collect();
    if points.len() == 1 {
        let (x, y) = points[0].split_once(',').expect("formatted above");
        let _ = writeln!(s, "<circle cx=\"{x}\" cy=\"{y}\" r=\"4\" fill=\"#3465a4\"/>");
    } else {
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#3465a4\" stroke-width=\"2\"/>",
            points.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}
