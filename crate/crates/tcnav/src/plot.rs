//! Static SVG plots: trajectory overlay, error time series, and the
//! cumulative error distribution. Output is plain polyline SVG, small
//! enough to hand-write and valid XML by construction.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 520.0;
const MARGIN: f64 = 60.0;

/// One labelled line of a plot.
pub struct Series<'a> {
    pub label: &'a str,
    pub points: &'a [(f64, f64)],
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render labelled polylines with simple axes into an SVG string.
pub fn render_lines(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for (x, y) in s.points {
            x_min = x_min.min(*x);
            x_max = x_max.max(*x);
            y_min = y_min.min(*y);
            y_max = y_max.max(*y);
        }
    }
    if !x_min.is_finite() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    if (x_max - x_min).abs() < 1e-12 {
        x_max = x_min + 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let px = |x: f64| MARGIN + (x - x_min) / (x_max - x_min) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y_min) / (y_max - y_min) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16" font-family="sans-serif">{}</text>"#,
        WIDTH / 2.0,
        xml_escape(title)
    );
    // Axes.
    let _ = writeln!(
        svg,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12" font-family="sans-serif">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        xml_escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" font-size="12" font-family="sans-serif" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        xml_escape(y_label)
    );
    // Extremal tick labels.
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="10" font-family="sans-serif">{:.3}</text>"#,
        MARGIN,
        HEIGHT - MARGIN + 14.0,
        x_min
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end" font-size="10" font-family="sans-serif">{:.3}</text>"#,
        WIDTH - MARGIN,
        HEIGHT - MARGIN + 14.0,
        x_max
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end" font-size="10" font-family="sans-serif">{:.3}</text>"#,
        MARGIN - 4.0,
        HEIGHT - MARGIN,
        y_min
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end" font-size="10" font-family="sans-serif">{:.3}</text>"#,
        MARGIN - 4.0,
        MARGIN + 4.0,
        y_max
    );
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut path = String::new();
        for (x, y) in s.points {
            let _ = write!(path, "{:.2},{:.2} ", px(*x), py(*y));
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#,
            path.trim_end()
        );
        let ly = MARGIN + 16.0 * k as f64 + 8.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{x0}" y1="{ly}" x2="{x1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{xt}" y="{yt}" font-size="11" font-family="sans-serif">{label}</text>"#,
            x0 = WIDTH - MARGIN - 130.0,
            x1 = WIDTH - MARGIN - 110.0,
            xt = WIDTH - MARGIN - 104.0,
            yt = ly + 4.0,
            label = xml_escape(s.label)
        );
    }
    let _ = writeln!(svg, "</svg>");
    svg
}

/// Write an SVG file.
pub fn write_svg(path: &Path, content: &str) -> std::io::Result<()> {
    fs::write(path, content)
}

/// Minimal XML well-formedness check (tag balance, quoting); used by the
/// tests and cheap enough to run on every emitted file.
pub fn xml_well_formed(text: &str) -> bool {
    let mut stack: Vec<String> = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'<' {
            i += 1;
            continue;
        }
        let Some(end_rel) = text[i..].find('>') else {
            return false;
        };
        let tag = &text[i + 1..i + end_rel];
        i += end_rel + 1;
        if tag.starts_with('?') || tag.starts_with('!') {
            continue;
        }
        if let Some(name) = tag.strip_prefix('/') {
            match stack.pop() {
                Some(open) if open == name.trim() => {}
                _ => return false,
            }
        } else if tag.ends_with('/') {
            // self-closing
        } else {
            let name = tag.split_whitespace().next().unwrap_or("");
            if name.is_empty() {
                return false;
            }
            stack.push(name.to_string());
        }
    }
    stack.is_empty()
}
