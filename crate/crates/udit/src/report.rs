//! Grouped bar charts (SVG) of the bias measures plus a diversity table.
//!
//! One chart per measure; each translation direction is a group with one bar
//! per method. Output is a pure function of the reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use udit_core::metrics::BiasReport;

use crate::error::{Error, Result};

pub const METRICS: [(&str, &str); 3] = [
    ("misclassification_rate", "Misclassification rate"),
    ("drop_in_confidence", "Drop in confidence"),
    ("feature_distance", "Feature distance"),
];

pub const DIVERSITY_TABLE: &str = "diversity_table.md";

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];

fn metric_value(r: &BiasReport, key: &str) -> f64 {
    match key {
        "misclassification_rate" => r.misclassification_rate,
        "drop_in_confidence" => r.mean_drop_in_confidence,
        _ => r.mean_feature_distance,
    }
}

fn method_name(r: &BiasReport) -> &str {
    if r.method.is_empty() {
        "model"
    } else {
        &r.method
    }
}

fn group_name(r: &BiasReport) -> String {
    match &r.filter {
        Some(f) => format!("{} ({}={})", r.direction.label(), f.attribute, f.value),
        None => r.direction.label().to_string(),
    }
}

fn distinct<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for it in items {
        if !out.contains(&it) {
            out.push(it);
        }
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Render one grouped bar chart.
pub fn bar_chart_svg(reports: &[BiasReport], key: &str, title: &str) -> String {
    let groups = distinct(reports.iter().map(group_name));
    let methods = distinct(reports.iter().map(|r| method_name(r).to_string()));
    let values: Vec<f64> = reports.iter().map(|r| metric_value(r, key)).collect();
    let hi = values.iter().copied().fold(0.0f64, f64::max);
    let lo = values.iter().copied().fold(0.0f64, f64::min);
    let span = if hi - lo > 0.0 { hi - lo } else { 1.0 };
    let (w, h) = (120.0 + 160.0 * groups.len() as f64, 320.0);
    let (left, top, bottom) = (60.0, 40.0, 260.0);
    let plot_h = bottom - top;
    let y_of = |v: f64| bottom - (v - lo) / span * plot_h;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let zero = y_of(0.0);
    let _ = writeln!(s, r#"<line x1="{left:.1}" y1="{zero:.1}" x2="{:.1}" y2="{zero:.1}" stroke="black"/>"#, w - 20.0);
    let _ = writeln!(s, r#"<line x1="{left:.1}" y1="{top:.1}" x2="{left:.1}" y2="{bottom:.1}" stroke="black"/>"#);
    for (label, v) in [(hi, hi), (lo, lo)] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{label:.3}</text>"#,
            left - 4.0,
            y_of(v) + 3.0
        );
    }
    let bar_w = 120.0 / methods.len().max(1) as f64;
    for (gi, g) in groups.iter().enumerate() {
        let gx = left + 20.0 + 160.0 * gi as f64;
        for (mi, m) in methods.iter().enumerate() {
            let Some(r) = reports.iter().find(|r| &group_name(r) == g && method_name(r) == m) else { continue };
            let v = metric_value(r, key);
            let (y0, y1) = (y_of(v.max(0.0)), y_of(v.min(0.0)));
            let x = gx + bar_w * mi as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
                bar_w - 4.0,
                (y1 - y0).max(0.5),
                PALETTE[mi % PALETTE.len()]
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="9" text-anchor="middle">{v:.3}</text>"#,
                x + (bar_w - 4.0) / 2.0,
                y0 - 3.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            gx + 60.0,
            bottom + 18.0,
            escape(g)
        );
    }
    for (mi, m) in methods.iter().enumerate() {
        let y = bottom + 40.0;
        let x = left + 110.0 * mi as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{}"/>"#,
            y - 9.0,
            PALETTE[mi % PALETTE.len()]
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{y:.1}" font-family="sans-serif" font-size="11">{}</text>"#,
            x + 14.0,
            escape(m)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn diversity_table(reports: &[BiasReport]) -> String {
    let mut s = String::from("| method | direction | diversity | pairs | inputs |\n|---|---|---|---|---|\n");
    for r in reports {
        let _ = writeln!(
            s,
            "| {} | {} | {:.4} | {} | {} |",
            method_name(r),
            group_name(r),
            r.diversity,
            r.diversity_pairs,
            r.n_inputs
        );
    }
    s
}

/// Write one SVG per measure and the diversity table into `out`.
/// Returns the chart paths.
pub fn render_report(reports: &[BiasReport], out: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::Core(udit_core::Error::Argument("no reports to render".into())));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut paths = Vec::new();
    for (key, title) in METRICS {
        let path = out.join(format!("{key}.svg"));
        fs::write(&path, bar_chart_svg(reports, key, title)).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    let table = out.join(DIVERSITY_TABLE);
    fs::write(&table, diversity_table(reports)).map_err(|e| Error::io(&table, e))?;
    Ok(paths)
}
