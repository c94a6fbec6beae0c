//! Minimal static SVG charts.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 360.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, n) in names.iter().enumerate() {
        let y = TOP + 8.0 + 16.0 * i as f64;
        let x = W - RIGHT - 110.0;
        let c = PALETTE[i % PALETTE.len()];
        let _ = write!(out, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{c}"/>"#, y - 9.0);
        let _ = write!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 14.0, esc(n));
    }
}

/// Axes spanning `[0, y_max]` vertically, with ticks at quarters.
fn axes(out: &mut String, x_label: &str, y_label: &str, y_max: f64) {
    let (x0, y0, x1, y1) = (LEFT, H - BOTTOM, W - RIGHT, TOP);
    let _ = write!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = write!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let y = y0 - (y0 - y1) * i as f64 / 4.0;
        let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="end">{v:.2}</text>"#, x0 - 4.0, y + 4.0);
    }
    let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, esc(x_label));
    let _ = write!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(y_label)
    );
}

/// Polylines over the unit square, e.g. ROC curves.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, x_label, y_label, 1.0);
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    for i in 0..=4 {
        let x = LEFT + pw * i as f64 / 4.0;
        let _ = write!(out, r#"<text x="{x}" y="{}" text-anchor="middle">{:.2}</text>"#, H - BOTTOM + 16.0, i as f64 / 4.0);
    }
    let _ = write!(
        out,
        r##"<line x1="{LEFT}" y1="{}" x2="{}" y2="{TOP}" stroke="#bbbbbb" stroke-dasharray="4 4"/>"##,
        H - BOTTOM,
        W - RIGHT
    );
    for (i, (_, pts)) in series.iter().enumerate() {
        let coords: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", LEFT + pw * x, H - BOTTOM - ph * y))
            .collect();
        let _ = write!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            coords.join(" "),
            PALETTE[i % PALETTE.len()]
        );
    }
    legend(&mut out, &series.iter().map(|(n, _)| *n).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: one group per category, one bar per series.
pub fn bar_chart(title: &str, y_label: &str, categories: &[&str], series: &[(&str, Vec<f64>)]) -> String {
    let mut out = String::new();
    open(&mut out, title);
    let y_max = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(0.0_f64, f64::max)
        .max(1e-12);
    axes(&mut out, "", y_label, y_max);
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let group = pw / categories.len().max(1) as f64;
    let bar = group * 0.8 / series.len().max(1) as f64;
    for (c, name) in categories.iter().enumerate() {
        let gx = LEFT + group * c as f64 + group * 0.1;
        for (s, (_, values)) in series.iter().enumerate() {
            let v = values.get(c).copied().unwrap_or(0.0);
            let h = ph * v / y_max;
            let _ = write!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                gx + bar * s as f64,
                H - BOTTOM - h,
                bar,
                h,
                PALETTE[s % PALETTE.len()]
            );
        }
        let _ = write!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            gx + group * 0.4,
            H - BOTTOM + 16.0,
            esc(name)
        );
    }
    legend(&mut out, &series.iter().map(|(n, _)| *n).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Square heatmap with the count printed in each cell.
pub fn heatmap(title: &str, rows: &[&str], cols: &[&str], values: &[Vec<f64>]) -> String {
    let mut out = String::new();
    open(&mut out, title);
    let max = values.iter().flatten().copied().fold(0.0_f64, f64::max).max(1e-12);
    let side = ((W - LEFT - RIGHT - 60.0) / cols.len() as f64).min((H - TOP - BOTTOM) / rows.len() as f64);
    let x0 = LEFT + 60.0;
    for (r, rname) in rows.iter().enumerate() {
        let y = TOP + side * r as f64;
        let _ = write!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 6.0, y + side / 2.0, esc(rname));
        for (c, v) in values[r].iter().enumerate() {
            let x = x0 + side * c as f64;
            let shade = (255.0 * (1.0 - v / max)).round() as u8;
            let text = if v / max > 0.5 { "white" } else { "black" };
            let _ = write!(
                out,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{side:.2}" height="{side:.2}" fill="rgb({shade},{shade},255)" stroke="black"/>"#
            );
            let _ = write!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" fill="{text}">{v}</text>"#,
                x + side / 2.0,
                y + side / 2.0 + 4.0
            );
        }
    }
    for (c, cname) in cols.iter().enumerate() {
        let _ = write!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x0 + side * (c as f64 + 0.5),
            TOP + side * rows.len() as f64 + 16.0,
            esc(cname)
        );
    }
    out.push_str("</svg>\n");
    out
}
