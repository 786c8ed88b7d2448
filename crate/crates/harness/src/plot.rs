//! Minimal SVG charts.

use std::fmt::Write as _;

use crate::grid::Table;
use crate::report::ReportRow;

const W: f64 = 480.0;
const H: f64 = 360.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 72.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn px(v: f64) -> f64 {
    LEFT + v * (W - LEFT - RIGHT)
}

fn py(v: f64) -> f64 {
    H - BOTTOM - v * (H - TOP - BOTTOM)
}

/// Unit square axes with ticks every 0.2.
fn axes(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<path d="M{:.1},{:.1} V{:.1} H{:.1}" stroke="black" fill="none"/>"#,
        px(0.0),
        py(1.0),
        py(0.0),
        px(1.0)
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
            px(0.0),
            py(v),
            px(1.0),
            py(v),
            px(0.0) - 4.0,
            py(v) + 4.0
        );
    }
    if !x_label.is_empty() {
        for i in 0..=5 {
            let v = i as f64 / 5.0;
            let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.1}</text>"#, px(v), py(0.0) + 14.0);
        }
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, px(0.5), py(0.0) + 30.0, escape(x_label));
    }
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        py(0.5),
        py(0.5),
        escape(y_label)
    );
}

/// Precision against recall for every seed of a row.
pub fn pr_curves(row: &ReportRow) -> String {
    let mut out = String::new();
    axes(&mut out, &format!("{}: {} -> {}", row.id, row.train_set, row.test_set), "recall", "precision");
    for (k, s) in row.per_seed.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut d = String::new();
        for (i, &(r, p)) in s.pr_curve.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, px(r), py(p));
        }
        if !d.is_empty() {
            let _ = writeln!(out, r#"<path d="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#, d.trim_end());
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">seed {} (AP {:.3})</text>"#,
            px(0.34 * (k % 3) as f64),
            py(0.0) + 48.0 + 14.0 * (k / 3) as f64,
            s.seed,
            s.final_map
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Desk-scale final mAP (mean over seeds) beside the published value for
/// every row of a table.
pub fn bar_chart(table: Table, rows: &[&ReportRow]) -> String {
    let mut out = String::new();
    axes(&mut out, &format!("Table {}: {}", table.number(), table.title()), "", "mAP");
    let n = rows.len().max(1) as f64;
    let slot = (W - LEFT - RIGHT) / n;
    let bar = slot * 0.35;
    for (i, r) in rows.iter().enumerate() {
        let x0 = LEFT + slot * i as f64 + slot * 0.12;
        if let Some(m) = r.final_map.mean {
            let _ = writeln!(
                out,
                r##"<rect x="{x0:.1}" y="{:.1}" width="{bar:.1}" height="{:.1}" fill="#1f77b4"/>"##,
                py(m),
                py(0.0) - py(m)
            );
        }
        if let Some(p) = r.paper_reference_map {
            let _ = writeln!(
                out,
                r##"<rect x="{:.1}" y="{:.1}" width="{bar:.1}" height="{:.1}" fill="#bbbbbb"/>"##,
                x0 + bar,
                py(p),
                py(0.0) - py(p)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="9">row {}</text>"#,
            x0 + bar,
            py(0.0) + 14.0,
            r.row
        );
    }
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT}" y="{:.1}" width="10" height="10" fill="#1f77b4"/><text x="{:.1}" y="{:.1}">desk scale (mean over seeds)</text>"##,
        H - 36.0,
        LEFT + 14.0,
        H - 27.0
    );
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT}" y="{:.1}" width="10" height="10" fill="#bbbbbb"/><text x="{:.1}" y="{:.1}">published (not comparable)</text>"##,
        H - 20.0,
        LEFT + 14.0,
        H - 11.0
    );
    out.push_str("</svg>\n");
    out
}
