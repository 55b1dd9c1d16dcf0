//! Static SVG rendering. Output depends only on the input rows, with every
//! coordinate printed at fixed precision, so identical data gives identical
//! bytes.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use super::reports::{ALLOCATIONS, EVAL_BOUNDS};
use super::{BoundRow, HarnessError, MetricRow};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;

const METRICS_HEADER: [&str; 5] = ["seed", "t", "metric", "min_visits", "delta_min_est"];
const BOUNDS_HEADER: [&str; 4] = ["size", "alloc", "eval_bound", "value"];

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x_hi - self.x_lo).max(f64::MIN_POSITIVE);
        MARGIN + (v - self.x_lo) / span * (WIDTH - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y_hi - self.y_lo).max(f64::MIN_POSITIVE);
        HEIGHT - MARGIN - (v - self.y_lo) / span * (HEIGHT - 2.0 * MARGIN)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{title}</text>"#,
        WIDTH / 2.0
    );
}

fn axes(
    out: &mut String,
    frame: &Frame,
    x_label: &str,
    y_label: &str,
    x_ticks: &[(f64, String)],
    y_ticks: &[(f64, String)],
) {
    let (x0, x1) = (MARGIN, WIDTH - MARGIN);
    let (y0, y1) = (HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        out,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}" stroke="black"/>"#
    );
    for (v, label) in x_ticks {
        let x = frame.x(*v);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
            y0 + 4.0,
            y0 + 18.0
        );
    }
    for (v, label) in y_ticks {
        let y = frame.y(*v);
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
            x0 - 4.0,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x_label}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{y_label}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
}

/// Median metric across seeds against `t`, with the 25-75% band.
pub fn render_curves(rows: &[MetricRow]) -> Result<String, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::EmptyInput("no metric rows".into()));
    }
    let mut by_t: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by_t.entry(r.t).or_default().push(r.metric);
    }
    let stats: Vec<(f64, f64, f64, f64)> = by_t
        .into_iter()
        .map(|(t, mut v)| {
            v.sort_by(f64::total_cmp);
            (
                t as f64,
                quantile(&v, 0.25),
                quantile(&v, 0.5),
                quantile(&v, 0.75),
            )
        })
        .collect();
    let t_max = stats.last().map_or(1.0, |s| s.0).max(1.0);
    let lowest = stats.iter().map(|s| s.1).fold(0.0, f64::min);
    let frame = Frame {
        x_lo: 0.0,
        x_hi: t_max,
        y_lo: (lowest * 10.0).floor() / 10.0,
        y_hi: 1.0,
    };
    let n_seeds = rows
        .iter()
        .map(|r| r.seed)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    let mut out = String::new();
    header(
        &mut out,
        &format!("policy quality, median and 25-75% band over {n_seeds} seeds"),
    );
    let x_ticks: Vec<(f64, String)> = [0.0, 0.5, 1.0]
        .iter()
        .map(|f| (f * t_max, format!("{:.0}", f * t_max)))
        .collect();
    let y_ticks: Vec<(f64, String)> = [0.0, 0.5, 1.0]
        .iter()
        .map(|f| {
            let v = frame.y_lo + f * (frame.y_hi - frame.y_lo);
            (v, format!("{v:.2}"))
        })
        .collect();
    axes(
        &mut out,
        &frame,
        "t",
        "1 - |V* - V^pi| / |V*|",
        &x_ticks,
        &y_ticks,
    );

    let mut band = String::new();
    for s in &stats {
        let _ = write!(band, "{:.2},{:.2} ", frame.x(s.0), frame.y(s.3));
    }
    for s in stats.iter().rev() {
        let _ = write!(band, "{:.2},{:.2} ", frame.x(s.0), frame.y(s.1));
    }
    let _ = writeln!(
        out,
        r##"<polygon points="{}" fill="#1f77b4" fill-opacity="0.25" stroke="none"/>"##,
        band.trim_end()
    );
    let median: Vec<String> = stats
        .iter()
        .map(|s| format!("{:.2},{:.2}", frame.x(s.0), frame.y(s.2)))
        .collect();
    let _ = writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        median.join(" ")
    );
    out.push_str("</svg>\n");
    Ok(out)
}

const COLORS: [&str; 3] = ["#d62728", "#1f77b4", "#2ca02c"];

/// Scatter of `log10` bound values: one column per allocation, one colour per
/// evaluating bound. Expects the rows of a single size.
pub fn render_bounds(rows: &[BoundRow]) -> Result<String, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::EmptyInput("no bound rows".into()));
    }
    let logs: Vec<f64> = rows
        .iter()
        .map(|r| r.value.log10())
        .filter(|v| v.is_finite())
        .collect();
    if logs.is_empty() {
        return Err(HarnessError::EmptyInput("no finite bound values".into()));
    }
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min).floor();
    let hi = logs
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .ceil()
        .max(lo + 1.0);
    let frame = Frame {
        x_lo: -0.5,
        x_hi: ALLOCATIONS.len() as f64 - 0.5,
        y_lo: lo,
        y_hi: hi,
    };
    let mut out = String::new();
    header(
        &mut out,
        &format!("bound values at each minimizer, |S| = {}", rows[0].size),
    );
    let x_ticks: Vec<(f64, String)> = ALLOCATIONS
        .iter()
        .enumerate()
        .map(|(i, a)| (i as f64, a.to_string()))
        .collect();
    let y_ticks: Vec<(f64, String)> = (lo as i64..=hi as i64)
        .map(|e| (e as f64, format!("1e{e}")))
        .collect();
    axes(
        &mut out,
        &frame,
        "allocation",
        "bound value",
        &x_ticks,
        &y_ticks,
    );
    for (j, bound) in EVAL_BOUNDS.iter().enumerate() {
        let dx = (j as f64 - 1.0) * 0.12;
        for r in rows.iter().filter(|r| r.eval_bound == *bound) {
            let Some(i) = ALLOCATIONS.iter().position(|a| *a == r.alloc) else {
                continue;
            };
            let v = r.value.log10();
            if !v.is_finite() {
                continue;
            }
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="5" fill="{}"/>"#,
                frame.x(i as f64 + dx),
                frame.y(v),
                COLORS[j]
            );
        }
        let ly = MARGIN + 16.0 * j as f64;
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="5" fill="{}"/><text x="{:.2}" y="{:.2}">{bound}</text>"#,
            WIDTH - MARGIN - 40.0,
            ly,
            COLORS[j],
            WIDTH - MARGIN - 30.0,
            ly + 4.0
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Renders a metrics CSV to `curves.svg`, or a bounds CSV to one
/// `bounds-<size>.svg` per size. Returns the written paths.
pub fn render_plots(input: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut reader = csv::Reader::from_path(input)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    std::fs::create_dir_all(out_dir)?;
    if headers == METRICS_HEADER {
        let rows = reader
            .deserialize()
            .collect::<Result<Vec<MetricRow>, _>>()?;
        let path = out_dir.join("curves.svg");
        std::fs::write(&path, render_curves(&rows)?)?;
        Ok(vec![path])
    } else if headers == BOUNDS_HEADER {
        let rows = reader.deserialize().collect::<Result<Vec<BoundRow>, _>>()?;
        if rows.is_empty() {
            return Err(HarnessError::EmptyInput(format!(
                "{} has no rows",
                input.display()
            )));
        }
        let mut by_size: BTreeMap<usize, Vec<BoundRow>> = BTreeMap::new();
        for r in rows {
            by_size.entry(r.size).or_default().push(r);
        }
        let mut paths = Vec::new();
        for (size, rows) in by_size {
            let path = out_dir.join(format!("bounds-{size}.svg"));
            std::fs::write(&path, render_bounds(&rows)?)?;
            paths.push(path);
        }
        Ok(paths)
    } else {
        Err(HarnessError::EmptyInput(format!(
            "{} is neither a metrics nor a bounds table (header {:?})",
            input.display(),
            headers
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<MetricRow> {
        (0..3)
            .flat_map(|seed| {
                (0..4).map(move |i| MetricRow {
                    seed,
                    t: i * 100,
                    metric: 0.2 * i as f64 + 0.05 * seed as f64,
                    min_visits: i,
                    delta_min_est: f64::NAN,
                })
            })
            .collect()
    }

    #[test]
    fn curves_are_deterministic() {
        let a = render_curves(&rows()).unwrap();
        assert_eq!(a, render_curves(&rows()).unwrap());
        assert!(a.contains("<polyline"));
        assert!(a.contains("<polygon"));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            render_curves(&[]),
            Err(HarnessError::EmptyInput(_))
        ));
        assert!(matches!(
            render_bounds(&[]),
            Err(HarnessError::EmptyInput(_))
        ));
    }
}
