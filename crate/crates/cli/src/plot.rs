//! Hand-rolled SVG figures: correlation heat maps, estimated-curve panels,
//! and metric boxplots.

use mixselect::method::ExposureCurve;
use mixselect::metrics::MetricsRow;
use ndarray::Array2;
use std::fmt::Write;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Blue-white-red diverging colour for a correlation in [-1, 1].
fn corr_color(r: f64) -> String {
    let r = r.clamp(-1.0, 1.0);
    let (red, green, blue) = if r >= 0.0 {
        let t = r;
        (255.0, 255.0 * (1.0 - t * 0.75), 255.0 * (1.0 - t))
    } else {
        let t = -r;
        (255.0 * (1.0 - t), 255.0 * (1.0 - t * 0.75), 255.0)
    };
    format!("rgb({},{},{})", red as u8, green as u8, blue as u8)
}

pub fn heatmap_svg(title: &str, names: &[String], matrix: &Array2<f64>) -> String {
    let j = names.len();
    let cell = 28.0;
    let margin = 70.0;
    let size = margin + j as f64 * cell + 20.0;
    let mut svg = String::new();
    write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{0}" height="{1}" viewBox="0 0 {0} {1}">"#,
        size,
        size + 20.0
    )
    .unwrap();
    write!(
        svg,
        r#"<text x="{}" y="18" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        size / 2.0,
        esc(title)
    )
    .unwrap();
    for a in 0..j {
        for b in 0..j {
            let x = margin + b as f64 * cell;
            let y = margin + a as f64 * cell;
            let v = matrix[[a, b]];
            write!(
                svg,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="{}" stroke="white" stroke-width="0.5"><title>{}-{}: {v:.2}</title></rect>"#,
                corr_color(v),
                esc(&names[a]),
                esc(&names[b])
            )
            .unwrap();
        }
    }
    for (a, name) in names.iter().enumerate() {
        let y = margin + a as f64 * cell + cell * 0.65;
        write!(
            svg,
            r#"<text x="{}" y="{y:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"#,
            margin - 6.0,
            esc(name)
        )
        .unwrap();
        let x = margin + a as f64 * cell + cell * 0.5;
        write!(
            svg,
            r#"<text x="{x:.1}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#,
            margin + j as f64 * cell + 14.0,
            esc(name)
        )
        .unwrap();
    }
    svg.push_str("</svg>");
    svg
}

const METHOD_COLORS: [(&str, &str); 5] = [
    ("lasso", "#777777"),
    ("bkmr", "#d62728"),
    ("bart", "#2ca02c"),
    ("ssgam", "#1f77b4"),
    ("oracle", "#9467bd"),
];

fn method_color(method: &str) -> &'static str {
    METHOD_COLORS
        .iter()
        .find(|(m, _)| *m == method)
        .map(|(_, c)| *c)
        .unwrap_or("#000000")
}

/// Estimated posterior-mean curves with 90% bands against the true curve
/// for one exposure, one panel per method.
pub fn curves_svg(title: &str, per_method: &[(String, ExposureCurve)]) -> String {
    let w = 260.0;
    let h = 220.0;
    let cols = per_method.len().max(1);
    let total_w = w * cols as f64;
    let mut svg = String::new();
    write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{}" viewBox="0 0 {total_w} {}">"#,
        h + 40.0,
        h + 40.0
    )
    .unwrap();
    write!(
        svg,
        r#"<text x="{}" y="16" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        total_w / 2.0,
        esc(title)
    )
    .unwrap();
    // shared axes across panels for visual comparability
    let mut lo_y = f64::INFINITY;
    let mut hi_y = f64::NEG_INFINITY;
    let mut lo_x = f64::INFINITY;
    let mut hi_x = f64::NEG_INFINITY;
    for (_, curve) in per_method {
        for p in &curve.points {
            lo_y = lo_y.min(p.lo.min(p.truth));
            hi_y = hi_y.max(p.hi.max(p.truth));
            lo_x = lo_x.min(p.x);
            hi_x = hi_x.max(p.x);
        }
    }
    if !lo_y.is_finite() || !(hi_y > lo_y) {
        lo_y = -1.0;
        hi_y = 1.0;
    }
    let pad = 0.08 * (hi_y - lo_y);
    lo_y -= pad;
    hi_y += pad;

    for (panel, (method, curve)) in per_method.iter().enumerate() {
        let x0 = panel as f64 * w + 35.0;
        let plot_w = w - 50.0;
        let plot_h = h - 50.0;
        let y0 = 30.0;
        let sx = |x: f64| x0 + (x - lo_x) / (hi_x - lo_x) * plot_w;
        let sy = |y: f64| y0 + (hi_y - y) / (hi_y - lo_y) * plot_h;
        write!(
            svg,
            r##"<rect x="{x0}" y="{y0}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#999"/>"##
        )
        .unwrap();
        // 90% band
        let mut band = String::new();
        for p in &curve.points {
            write!(band, "{:.1},{:.1} ", sx(p.x), sy(p.hi)).unwrap();
        }
        for p in curve.points.iter().rev() {
            write!(band, "{:.1},{:.1} ", sx(p.x), sy(p.lo)).unwrap();
        }
        write!(
            svg,
            r#"<polygon points="{}" fill="{}" opacity="0.18"/>"#,
            band.trim(),
            method_color(method)
        )
        .unwrap();
        let polyline = |vals: Vec<(f64, f64)>, color: &str, dash: &str| {
            let pts: Vec<String> = vals
                .iter()
                .map(|(x, y)| format!("{:.1},{:.1}", sx(*x), sy(*y)))
                .collect();
            format!(
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.6"{dash}/>"#,
                pts.join(" ")
            )
        };
        svg.push_str(&polyline(
            curve.points.iter().map(|p| (p.x, p.truth)).collect(),
            "#222222",
            r#" stroke-dasharray="4,3""#,
        ));
        svg.push_str(&polyline(
            curve.points.iter().map(|p| (p.x, p.mean)).collect(),
            method_color(method),
            "",
        ));
        write!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            x0 + plot_w / 2.0,
            y0 + plot_h + 16.0,
            esc(method)
        )
        .unwrap();
    }
    svg.push_str("</svg>");
    svg
}

/// Boxplots (median, IQR, 1.5 IQR whiskers, mean diamond) of one metric
/// across scenarios and methods.
pub fn boxplot_svg(title: &str, rows: &[MetricsRow]) -> String {
    let scenarios: Vec<String> = {
        let mut seen = Vec::new();
        for r in rows {
            if !seen.contains(&r.scenario) {
                seen.push(r.scenario.clone());
            }
        }
        seen
    };
    let methods: Vec<String> = {
        let mut seen = Vec::new();
        for r in rows {
            if !seen.contains(&r.method) {
                seen.push(r.method.clone());
            }
        }
        seen
    };
    let group_w = 18.0 * methods.len() as f64 + 24.0;
    let plot_w = group_w * scenarios.len() as f64;
    let plot_h = 220.0;
    let x_base = 50.0;
    let y_base = 30.0;
    let total_w = x_base + plot_w + 20.0;
    let total_h = y_base + plot_h + 110.0;
    let mut svg = String::new();
    write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w:.0}" height="{total_h:.0}" viewBox="0 0 {total_w:.0} {total_h:.0}">"#
    )
    .unwrap();
    write!(
        svg,
        r#"<text x="{}" y="16" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        total_w / 2.0,
        esc(title)
    )
    .unwrap();
    let sy = |v: f64| y_base + (1.0 - v.clamp(0.0, 1.05) / 1.05) * plot_h;
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        write!(
            svg,
            r##"<line x1="{x_base}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#ddd"/><text x="{2}" y="{3:.1}" font-family="sans-serif" font-size="9" text-anchor="end">{tick}</text>"##,
            sy(tick),
            x_base + plot_w,
            x_base - 5.0,
            sy(tick) + 3.0
        )
        .unwrap();
    }
    for (si, scenario) in scenarios.iter().enumerate() {
        for (mi, method) in methods.iter().enumerate() {
            let Some(row) = rows
                .iter()
                .find(|r| &r.scenario == scenario && &r.method == method)
            else {
                continue;
            };
            let (Some(q1), Some(q3), Some(med), Some(mean)) = (row.q1, row.q3, row.median, row.mean)
            else {
                continue;
            };
            let x = x_base + si as f64 * group_w + 12.0 + mi as f64 * 18.0;
            let color = method_color(method);
            let (w_lo, w_hi) = row.whiskers().unwrap();
            write!(
                svg,
                r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="{color}"/>"#,
                x + 6.0,
                sy(w_lo.max(0.0)),
                sy(w_hi.min(1.0))
            )
            .unwrap();
            write!(
                svg,
                r#"<rect x="{x:.1}" y="{0:.1}" width="12" height="{1:.1}" fill="{color}" opacity="0.35" stroke="{color}"/>"#,
                sy(q3),
                (sy(q1) - sy(q3)).max(0.5)
            )
            .unwrap();
            write!(
                svg,
                r#"<line x1="{x:.1}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="{color}" stroke-width="2"/>"#,
                sy(med),
                x + 12.0
            )
            .unwrap();
            write!(
                svg,
                r#"<path d="M {0:.1} {1:.1} l 3.5 3.5 l -3.5 3.5 l -3.5 -3.5 Z" fill="{color}"/>"#,
                x + 6.0,
                sy(mean) - 3.5
            )
            .unwrap();
        }
        write!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="9" text-anchor="end" transform="rotate(-45 {0:.1} {1:.1})">{}</text>"#,
            x_base + si as f64 * group_w + group_w / 2.0,
            y_base + plot_h + 14.0,
            esc(scenario)
        )
        .unwrap();
    }
    // legend
    for (mi, method) in methods.iter().enumerate() {
        let x = x_base + mi as f64 * 80.0;
        let y = total_h - 12.0;
        write!(
            svg,
            r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{y:.1}" font-family="sans-serif" font-size="10">{}</text>"#,
            y - 9.0,
            method_color(method),
            x + 14.0,
            esc(method)
        )
        .unwrap();
    }
    svg.push_str("</svg>");
    svg
}
