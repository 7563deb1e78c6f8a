//! Minimal hand-written SVG charts.

use std::fmt::Write;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Maps `[0, 1]` onto a light-to-dark blue ramp.
fn color(v: f64) -> String {
    let t = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0))
}

/// AUC heatmap with one row per training source and one column per test
/// source.
pub fn heatmap_svg(rows: &[String], cols: &[String], values: &[Vec<f64>], title: &str) -> String {
    let cell = 72.0;
    let left = 24.0 + 8.0 * rows.iter().map(|r| r.len()).max().unwrap_or(4) as f64;
    let top = 64.0;
    let width = left + cell * cols.len() as f64 + 24.0;
    let height = top + cell * rows.len() as f64 + 40.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, width / 2.0, escape(title));
    for (j, c) in cols.iter().enumerate() {
        let x = left + cell * (j as f64 + 0.5);
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, top - 8.0, escape(c));
    }
    let _ = writeln!(s, r##"<text x="{}" y="40" text-anchor="middle" fill="#555">test</text>"##, left + cell * cols.len() as f64 / 2.0);
    for (i, r) in rows.iter().enumerate() {
        let y = top + cell * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 8.0, y + cell / 2.0 + 4.0, escape(r));
        for (j, &v) in values.get(i).map(Vec::as_slice).unwrap_or(&[]).iter().enumerate() {
            let x = left + cell * j as f64;
            let ink = if v > 0.6 { "#fff" } else { "#000" };
            let _ = writeln!(s, r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{}" stroke="#fff"/>"##, color(v));
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{v:.3}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Vertical bar chart of AUC values on a fixed `[0, 1]` axis.
pub fn condition_bars_svg(labels: &[String], values: &[f64], title: &str) -> String {
    let bar = 56.0;
    let gap = 24.0;
    let left = 48.0;
    let plot_h = 220.0;
    let top = 40.0;
    let width = left + (bar + gap) * labels.len() as f64 + gap;
    let height = top + plot_h + 48.0;
    let base = top + plot_h;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, width / 2.0, escape(title));
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let y = base - plot_h * v;
        let _ = writeln!(s, r##"<line x1="{left}" x2="{}" y1="{y}" y2="{y}" stroke="#ddd"/>"##, width - gap / 2.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.2}</text>"#, left - 6.0, y + 4.0);
    }
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let x = left + gap + (bar + gap) * i as f64;
        let h = plot_h * if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        let _ = writeln!(s, r##"<rect x="{x}" y="{}" width="{bar}" height="{h}" fill="#3a6ea5"/>"##, base - h);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{v:.3}</text>"#, x + bar / 2.0, base - h - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, x + bar / 2.0, base + 16.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}
