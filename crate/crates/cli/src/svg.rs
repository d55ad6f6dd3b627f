//! Minimal SVG rendering for grids and curves. Presentation only; the CSV
//! files carry the numbers.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Viridis-like ramp on `t ∈ [0, 1]`.
fn color(t: f64) -> String {
    const STOPS: [(f64, f64, f64); 5] =
        [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let s = t * (STOPS.len() - 1) as f64;
    let i = (s.floor() as usize).min(STOPS.len() - 2);
    let f = s - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let mix = |u: f64, v: f64| (u + f * (v - u)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo <= 0.0 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Heatmap of `values[i * ny + j]` at `(x[i], y[j])` with a colour bar and
/// an optional marked cell.
pub fn heatmap(title: &str, x: &[f64], y: &[f64], values: &[f64], mark: Option<(usize, usize)>) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let (lo, hi) = finite_range(values.iter().copied());
    let plot = HEIGHT - 2.0 * MARGIN;
    let (cw, ch) = (plot / x.len() as f64, plot / y.len() as f64);
    for i in 0..x.len() {
        for j in 0..y.len() {
            let v = values[i * y.len() + j];
            let px = MARGIN + i as f64 * cw;
            let py = MARGIN + plot - (j + 1) as f64 * ch;
            let _ = writeln!(
                out,
                r#"<rect x="{px:.2}" y="{py:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>({:.4}, {:.4}): {v:.6e}</title></rect>"#,
                cw + 0.3,
                ch + 0.3,
                color((v - lo) / (hi - lo)),
                x[i],
                y[j]
            );
        }
    }
    if let Some((i, j)) = mark {
        let cx = MARGIN + (i as f64 + 0.5) * cw;
        let cy = MARGIN + plot - (j as f64 + 0.5) * ch;
        let _ = writeln!(out, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="none" stroke="red" stroke-width="2"/>"#, 0.35 * cw.min(ch));
    }
    let _ = writeln!(out, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot}" height="{plot}" fill="none" stroke="black"/>"#);
    axis_labels(&mut out, x, y, plot);
    // Colour bar.
    let bx = MARGIN + plot + 30.0;
    for k in 0..50 {
        let t = k as f64 / 49.0;
        let by = MARGIN + plot * (1.0 - t) - plot / 50.0;
        let _ = writeln!(out, r#"<rect x="{bx}" y="{by:.2}" width="18" height="{:.2}" fill="{}"/>"#, plot / 50.0 + 0.5, color(t));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}">{hi:.4e}</text>"#, bx + 24.0, MARGIN + 10.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}">{lo:.4e}</text>"#, bx + 24.0, MARGIN + plot);
    out.push_str("</svg>\n");
    out
}

fn axis_labels(out: &mut String, x: &[f64], y: &[f64], plot: f64) {
    let (x0, x1) = (x[0], x[x.len() - 1]);
    let (y0, y1) = (y[0], y[y.len() - 1]);
    let base = MARGIN + plot + 18.0;
    let _ = writeln!(out, r#"<text x="{MARGIN}" y="{base}">{x0}</text>"#);
    let _ = writeln!(out, r#"<text x="{}" y="{base}" text-anchor="end">{x1}</text>"#, MARGIN + plot);
    let _ = writeln!(out, r#"<text x="{}" y="{base}" text-anchor="middle">θ₁</text>"#, MARGIN + plot / 2.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{y0}</text>"#, MARGIN - 6.0, MARGIN + plot);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{y1}</text>"#, MARGIN - 6.0, MARGIN + 10.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">θ₂</text>"#, MARGIN - 30.0, MARGIN + plot / 2.0);
}

/// One named series of `(x, y)` points.
pub struct Series<'a> {
    pub label: String,
    pub points: &'a [(f64, f64)],
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Line chart; both axes logarithmic when `log` is set. Non-positive or
/// non-finite points are skipped on log axes.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log: bool) -> String {
    let tf = |v: f64| if log { v.log10() } else { v };
    let usable = |&(a, b): &(f64, f64)| a.is_finite() && b.is_finite() && (!log || (a > 0.0 && b > 0.0));
    let pts = || series.iter().flat_map(|s| s.points.iter().copied().filter(usable));
    let (x0, x1) = finite_range(pts().map(|p| tf(p.0)));
    let (y0, y1) = finite_range(pts().map(|p| tf(p.1)));
    let (pw, ph) = (WIDTH - 2.0 * MARGIN - 120.0, HEIGHT - 2.0 * MARGIN);
    let sx = |v: f64| MARGIN + (tf(v) - x0) / (x1 - x0) * pw;
    let sy = |v: f64| MARGIN + ph - (tf(v) - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(out, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for (k, s) in series.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = s.points.iter().filter(|p| usable(p)).map(|&(a, b)| format!("{:.2},{:.2}", sx(a), sy(b))).collect();
        if !path.is_empty() {
            let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, path.join(" "));
            for p in &path {
                let (px, py) = p.split_once(',').unwrap();
                let _ = writeln!(out, r#"<circle cx="{px}" cy="{py}" r="2.5" fill="{c}"/>"#);
            }
        }
        let ly = MARGIN + 16.0 * k as f64 + 10.0;
        let lx = MARGIN + pw + 12.0;
        let _ = writeln!(out, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="2"/>"#, lx + 16.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, lx + 20.0, ly + 4.0, escape(&s.label));
    }
    let fmt = |v: f64| if log { format!("1e{v:.1}") } else { format!("{v:.3}") };
    let base = MARGIN + ph + 18.0;
    let _ = writeln!(out, r#"<text x="{MARGIN}" y="{base}">{}</text>"#, fmt(x0));
    let _ = writeln!(out, r#"<text x="{}" y="{base}" text-anchor="end">{}</text>"#, MARGIN + pw, fmt(x1));
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, MARGIN + pw / 2.0, base + 16.0, escape(x_label));
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, MARGIN - 4.0, MARGIN + ph, fmt(y0));
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, MARGIN - 4.0, MARGIN + 10.0, fmt(y1));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        MARGIN + ph / 2.0,
        MARGIN + ph / 2.0,
        escape(y_label)
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_has_one_cell_per_value() {
        let s = heatmap("t", &[0.0, 1.0], &[0.0, 0.5, 1.0], &[1.0, 2.0, 3.0, 4.0, f64::NEG_INFINITY, 6.0], Some((1, 2)));
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<title>").count(), 6);
        assert_eq!(s.matches("<circle").count(), 1);
    }

    #[test]
    fn log_chart_skips_nonpositive_points() {
        let pts = [(10.0, 1.0), (100.0, 0.3), (1000.0, 0.0)];
        let s = line_chart("c", "M", "err", &[Series { label: "a<b".into(), points: &pts }], true);
        assert_eq!(s.matches("<circle").count(), 2);
        assert!(s.contains("a&lt;b"));
    }

    #[test]
    fn colour_ramp_is_clamped() {
        assert_eq!(color(-1.0), color(0.0));
        assert_eq!(color(2.0), color(1.0));
        assert_eq!(color(f64::NAN), color(0.0));
    }
}
