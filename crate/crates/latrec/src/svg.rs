//! Minimal static SVG charts: box plots of run metrics and line plots of series.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        Self { lo: lo - pad, hi: hi + pad }
    }

    /// Vertical pixel coordinate.
    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.lo) / (self.hi - self.lo) * (HEIGHT - 2.0 * MARGIN)
    }

    fn x(&self, v: f64) -> f64 {
        MARGIN + (v - self.lo) / (self.hi - self.lo) * (WIDTH - 2.0 * MARGIN)
    }
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    s
}

fn y_ticks(s: &mut String, axis: &Axis, label: &str) {
    for i in 0..=4 {
        let v = axis.lo + (axis.hi - axis.lo) * i as f64 / 4.0;
        let y = axis.y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"##,
            WIDTH - MARGIN,
            MARGIN - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(label)
    );
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// One box (quartiles, whiskers at min/max) plus the raw points per group.
pub fn box_plot(title: &str, y_label: &str, groups: &[(String, Vec<f64>)]) -> String {
    let axis = Axis::new(groups.iter().flat_map(|(_, v)| v.iter().copied()));
    let mut s = header(title);
    y_ticks(&mut s, &axis, y_label);
    let slot = (WIDTH - 2.0 * MARGIN) / groups.len().max(1) as f64;
    for (g, (name, values)) in groups.iter().enumerate() {
        let cx = MARGIN + slot * (g as f64 + 0.5);
        let mut v: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        if !v.is_empty() {
            let color = PALETTE[g % PALETTE.len()];
            let (q1, med, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
            let half = (slot * 0.25).min(40.0);
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="{color}"/>"#,
                axis.y(v[0]),
                axis.y(v[v.len() - 1])
            );
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}" fill-opacity="0.25" stroke="{color}"/>"#,
                cx - half,
                axis.y(q3),
                2.0 * half,
                (axis.y(q1) - axis.y(q3)).max(0.5)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/>"#,
                cx - half,
                axis.y(med),
                cx + half,
                axis.y(med)
            );
            for (i, &p) in v.iter().enumerate() {
                let jitter = (i as f64 / v.len().max(2) as f64 - 0.5) * half;
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#,
                    cx + jitter,
                    axis.y(p)
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            HEIGHT - MARGIN + 18.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Polylines over a shared x axis.
pub fn line_plot(title: &str, x_label: &str, x: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let xa = Axis::new(x.iter().copied());
    let ya = Axis::new(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let mut s = header(title);
    y_ticks(&mut s, &ya, "");
    for (k, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = x
            .iter()
            .zip(values)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(&a, &b)| format!("{:.1},{:.1}", xa.x(a), ya.y(b)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            WIDTH - MARGIN - 120.0,
            WIDTH - MARGIN - 100.0,
            WIDTH - MARGIN - 94.0,
            ly + 4.0,
            escape(name)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_plot_is_well_formed() {
        let svg = box_plot("MCC <n>", "mcc", &[("n=2".into(), vec![0.9, 0.95, 0.97]), ("n=3".into(), vec![])]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("MCC &lt;n&gt;"));
        assert_eq!(svg.matches("<circle").count(), 3);
    }

    #[test]
    fn line_plot_skips_non_finite_points() {
        let svg = line_plot("t", "period", &[1.0, 2.0, 3.0], &[("a".into(), vec![1.0, f64::NAN, 2.0])]);
        assert_eq!(svg.matches("<polyline").count(), 1);
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(pts.split(' ').count(), 2);
    }
}
