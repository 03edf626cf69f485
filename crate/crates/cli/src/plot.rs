//! Minimal standalone SVG line plots.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn bounds(points: &[(f64, f64)]) -> Option<[f64; 4]> {
    let finite: Vec<_> = points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    if finite.is_empty() {
        return None;
    }
    let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for &&(x, y) in &finite {
        b = [b[0].min(x), b[1].max(x), b[2].min(y), b[3].max(y)];
    }
    if b[1] == b[0] {
        b[1] = b[0] + 1.0;
    }
    if b[3] == b[2] {
        b[3] = b[2] + 1.0;
    }
    Some(b)
}

/// Renders one series as a polyline with labeled axis extremes. Non-finite
/// points are dropped.
pub fn line_plot(title: &str, x_label: &str, points: &[(f64, f64)]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN / 2.0, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        s,
        r#"<polyline points="{x0},{y1} {x0},{y0} {x1},{y0}" fill="none" stroke="black"/>"#
    );
    if let Some([xmin, xmax, ymin, ymax]) = bounds(points) {
        let px = |x: f64| x0 + (x - xmin) / (xmax - xmin) * (x1 - x0);
        let py = |y: f64| y0 - (y - ymin) / (ymax - ymin) * (y0 - y1);
        let coords: Vec<String> = points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
        let label = |s: &mut String, x: f64, y: f64, anchor: &str, v: f64| {
            let _ = writeln!(
                s,
                r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" font-family="sans-serif" font-size="11">{v:.4}</text>"#
            );
        };
        label(&mut s, x0 - 4.0, y0, "end", ymin);
        label(&mut s, x0 - 4.0, y1 + 4.0, "end", ymax);
        label(&mut s, x0, y0 + 16.0, "middle", xmin);
        label(&mut s, x1, y0 + 16.0, "middle", xmax);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 8.0,
        escape(x_label)
    );
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
