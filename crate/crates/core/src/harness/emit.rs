use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::evaluate::{EpisodeSummary, EvaluationReport};
use crate::error::{Error, Result};
use crate::record::{ActionSource, EpisodeRecord};
use crate::world::{generate_course, Outcome};

/// Row labels of the results table.
pub const TABLE_ROWS: [&str; 6] = [
    "Collision Rate",
    "Contingency Policy Collision Rate",
    "Out-of-Bounds Rate",
    "Timeout Rate",
    "Completion Rate",
    "Episode Length*",
];

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

/// Rows are metrics, columns are controllers. The contingency row uses the
/// per-engagement convention.
pub fn results_table_csv(reports: &[EvaluationReport]) -> String {
    let mut out = String::from("metric");
    for r in reports {
        out.push(',');
        out.push_str(r.controller.title());
    }
    out.push('\n');
    for row in TABLE_ROWS {
        out.push_str(row);
        for r in reports {
            let cell = match row {
                "Collision Rate" => pct(r.collision_rate),
                "Contingency Policy Collision Rate" => r.contingency_collision_rate_per_engagement.map_or("--".into(), pct),
                "Out-of-Bounds Rate" => pct(r.out_of_bounds_rate),
                "Timeout Rate" => pct(r.timeout_rate),
                "Completion Rate" => pct(r.completion_rate),
                _ => match (r.mean_completed_length, r.completed_length_standard_error) {
                    (Some(m), Some(se)) => format!("{m:.1} ± {se:.1}"),
                    (Some(m), None) => format!("{m:.1}"),
                    _ => "--".into(),
                },
            };
            out.push(',');
            out.push_str(&cell);
        }
        out.push('\n');
    }
    out
}

pub fn episodes_csv(episodes: &[EpisodeSummary]) -> String {
    let mut out = String::from("controller,seed,outcome,steps,engagements,collision_source,final_x,final_y,record_hash\n");
    for e in episodes {
        let src = e.collision_source.map_or("", |s| s.label());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{:.6},{}",
            e.controller,
            e.seed,
            e.outcome.label(),
            e.steps,
            e.engagements,
            src,
            e.final_x,
            e.final_y,
            e.record_hash
        );
    }
    out
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::write(dir.join(name), text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.join(name).display()))))
}

/// Writes the results table, per-controller JSON reports and per-episode
/// CSVs, plus trace and metric plots.
pub fn aggregate_and_emit(
    dir: &Path,
    reports: &[EvaluationReport],
    episodes: &[Vec<EpisodeSummary>],
    records: &[Vec<EpisodeRecord>],
) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::data("nothing to emit"));
    }
    fs::create_dir_all(dir)?;
    write(dir, "results.csv", &results_table_csv(reports))?;
    write(dir, "report.json", &serde_json::to_string_pretty(reports)?)?;
    for (r, eps) in reports.iter().zip(episodes) {
        write(dir, &format!("episodes-{}.csv", r.controller.label()), &episodes_csv(eps))?;
    }
    for (r, recs) in reports.iter().zip(records) {
        if !recs.is_empty() {
            write(dir, &format!("traces-{}.svg", r.controller.label()), &trace_svg(recs)?)?;
        }
    }
    write(dir, "outcomes.svg", &outcome_bars_svg(reports))?;
    for rec in records.iter().flatten() {
        fs::create_dir_all(dir.join("records"))?;
        write(&dir.join("records"), &format!("{}-{}.json", rec.controller, rec.seed), &rec.to_json()?)?;
    }
    Ok(())
}

const SOURCE_COLORS: [(ActionSource, &str); 4] = [
    (ActionSource::Rl, "#1f77b4"),
    (ActionSource::StraightLine, "#7f7f7f"),
    (ActionSource::Expert, "#ff7f0e"),
    (ActionSource::Astar, "#2ca02c"),
];

fn color(s: ActionSource) -> &'static str {
    SOURCE_COLORS.iter().find(|(k, _)| *k == s).map_or("#000", |(_, c)| c)
}

/// Top-down course views, one lane per record, with the flown path colored
/// by action source and engagement points marked.
pub fn trace_svg(records: &[EpisodeRecord]) -> Result<String> {
    let scale = 8.0;
    let margin = 20.0;
    let first = &records[0].course;
    let lane_h = 2.0 * first.half_width * scale + 30.0;
    let width = first.length * scale + 2.0 * margin;
    let height = lane_h * records.len() as f64 + margin;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, rec) in records.iter().enumerate() {
        let c = &rec.course;
        let top = margin + k as f64 * lane_h;
        let px = |x: f64| margin + x * scale;
        let py = |y: f64| top + (c.half_width - y) * scale;
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#f4f4f4" stroke="#999"/>"##,
            px(0.0),
            py(c.half_width),
            c.length * scale,
            2.0 * c.half_width * scale
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{} seed {} {} ({} steps)</text>"#,
            px(0.0),
            top - 4.0,
            rec.controller,
            rec.seed,
            rec.outcome.label(),
            rec.step_count
        );
        for o in generate_course(c)? {
            let pts: Vec<String> = o.corners().iter().map(|p| format!("{:.1},{:.1}", px(p.x), py(p.y))).collect();
            let _ = writeln!(s, r##"<polygon points="{}" fill="#555"/>"##, pts.join(" "));
        }
        let mut prev = rec.initial.position;
        for st in &rec.steps {
            let p = st.state.position;
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}" stroke-width="1.5"/>"#,
                px(prev.x),
                py(prev.y),
                px(p.x),
                py(p.y),
                color(st.source)
            );
            prev = p;
        }
        for e in &rec.engagements {
            let at = if e.step == 0 {
                rec.initial.position
            } else {
                rec.steps.iter().find(|st| st.step == e.step).map_or(rec.initial.position, |st| st.state.position)
            };
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="red"/>"#, px(at.x), py(at.y));
        }
        if rec.outcome == Outcome::Collision {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" fill="red">x</text>"#, px(prev.x) - 3.0, py(prev.y) + 4.0);
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Stacked outcome shares per controller.
pub fn outcome_bars_svg(reports: &[EvaluationReport]) -> String {
    let (bar_w, gap, h, margin) = (80.0, 40.0, 300.0, 40.0);
    let width = margin * 2.0 + reports.len() as f64 * (bar_w + gap) + 140.0;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{:.0}" font-family="sans-serif" font-size="11">"#, h + 2.0 * margin + 20.0);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let parts = [("completion", "#2ca02c"), ("collision", "#d62728"), ("out-of-bounds", "#9467bd"), ("timeout", "#7f7f7f")];
    for (i, r) in reports.iter().enumerate() {
        let x = margin + i as f64 * (bar_w + gap);
        let mut y = margin + h;
        for ((_, col), v) in parts.iter().zip([r.completion_rate, r.collision_rate, r.out_of_bounds_rate, r.timeout_rate]) {
            let bh = v * h;
            y -= bh;
            let _ = writeln!(s, r#"<rect x="{x:.1}" y="{y:.1}" width="{bar_w}" height="{bh:.1}" fill="{col}"/>"#);
        }
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}">{}</text>"#, margin + h + 15.0, r.controller.title());
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}">{}</text>"#, margin - 6.0, pct(r.completion_rate));
    }
    let lx = margin + reports.len() as f64 * (bar_w + gap);
    for (k, (name, col)) in parts.iter().enumerate() {
        let y = margin + 16.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{lx:.1}" y="{y:.1}" width="10" height="10" fill="{col}"/><text x="{:.1}" y="{:.1}">{name}</text>"#, lx + 14.0, y + 9.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Simple multi-series line chart.
pub fn line_plot_svg(title: &str, x_label: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let (w, h, m) = (640.0, 360.0, 50.0);
    let pts = series.iter().flat_map(|(_, v)| v.iter().copied());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{m}" y="20" font-size="13">{title}</text>"#);
    let _ = writeln!(s, r##"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="#999"/>"##, w - 2.0 * m, h - 2.0 * m);
    let _ = writeln!(s, r#"<text x="{}" y="{}">{x_label}</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(s, r#"<text x="4" y="{:.1}">{y1:.4}</text><text x="4" y="{:.1}">{y0:.4}</text>"#, m + 4.0, h - m);
    for (k, (name, v)) in series.iter().enumerate() {
        let col = palette[k % palette.len()];
        let path: Vec<String> = v.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{col}" stroke-width="1.5"/>"#, path.join(" "));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" fill="{col}">{name}</text>"#, w - m - 120.0, m + 14.0 * (k + 1) as f64);
    }
    s.push_str("</svg>\n");
    s
}
