//! Minimal SVG line plot for density curves.

use std::fmt::Write;

use pose_cvae::eval::DensityCurve;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 40.0;

/// Density curve as a polyline, with an optional vertical marker at the
/// ground-truth coordinate.
pub fn density_svg(curve: &DensityCurve, truth: Option<f64>, label: &str) -> String {
    let (x0, x1) = (curve.grid[0], curve.grid[curve.grid.len() - 1]);
    let y1 = curve.density.iter().copied().fold(0.0, f64::max).max(1e-12);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - y / y1 * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    let points: Vec<String> = curve
        .grid
        .iter()
        .zip(&curve.density)
        .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
        .collect();
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        points.join(" ")
    );
    if let Some(t) = truth.filter(|t| (x0..=x1).contains(t)) {
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{MARGIN}" x2="{x:.2}" y2="{b}" stroke="crimson" stroke-dasharray="4 3"/>"#,
            x = sx(t),
            b = HEIGHT - MARGIN
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="{y}" font-family="sans-serif" font-size="12">{label} [{x0:.3}, {x1:.3}], bandwidth {h:.4}</text>"#,
        y = HEIGHT - 12.0,
        h = curve.bandwidth
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use pose_cvae::eval::{kde, uniform_grid};

    #[test]
    fn renders_curve_and_marker() {
        let curve = kde(&[0.0, 1.0, 1.2], &uniform_grid(-1.0, 2.0, 50), Some(0.2)).unwrap();
        let svg = density_svg(&curve, Some(0.5), "x");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("crimson"));
        assert!(!density_svg(&curve, Some(9.0), "x").contains("crimson"));
    }
}
