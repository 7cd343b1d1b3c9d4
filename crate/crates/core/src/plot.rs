//! Self-contained SVG charts: tradeoff curves and region snapshots.

use std::fmt::Write as _;

use crate::evaluate::TradeoffRow;
use crate::events::Event;
use crate::geometry::{Rect, RegionUnion};

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Which metric a tradeoff chart shows on the y axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Edd,
    Jaccard,
}

impl Metric {
    fn label(self) -> &'static str {
        match self {
            Metric::Edd => "EDD",
            Metric::Jaccard => "Jaccard",
        }
    }

    fn value(self, r: &TradeoffRow) -> Option<f64> {
        match self {
            Metric::Edd => r.edd,
            Metric::Jaccard => r.jaccard,
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = write!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(out, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
}

/// Metric against empirical ARL (log x axis), one polyline per row group.
pub fn tradeoff_svg(rows: &[TradeoffRow], metric: Metric, title: &str) -> String {
    let mut groups: Vec<(&str, Vec<(f64, f64)>)> = Vec::new();
    for r in rows {
        let Some(y) = metric.value(r) else { continue };
        if !(r.arl > 0.0) {
            continue;
        }
        match groups.iter_mut().find(|g| g.0 == r.detector) {
            Some(g) => g.1.push((r.arl.log10(), y)),
            None => groups.push((&r.detector, vec![(r.arl.log10(), y)])),
        }
    }
    let pts = groups.iter().flat_map(|g| g.1.iter());
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    x0 = x0.floor();
    x1 = x1.ceil().max(x0 + 1.0);
    if metric == Metric::Jaccard || y1 == 0.0 {
        y1 = y1.max(1.0);
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - y / y1 * (H - 2.0 * PAD);

    let mut out = String::new();
    header(&mut out, title);
    let _ = write!(out, r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#, W - 2.0 * PAD, H - 2.0 * PAD);
    let mut d = x0;
    while d <= x1 + 1e-9 {
        let x = sx(d);
        let _ = write!(out, r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#, H - PAD, H - PAD + 4.0);
        let _ = write!(out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">1e{}</text>"#, H - PAD + 16.0, d as i64);
        d += 1.0;
    }
    for i in 0..=4 {
        let v = y1 * i as f64 / 4.0;
        let y = sy(v);
        let _ = write!(out, r#"<line x1="{}" y1="{y:.2}" x2="{PAD}" y2="{y:.2}" stroke="black"/>"#, PAD - 4.0);
        let _ = write!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#, PAD - 6.0, y + 4.0);
    }
    let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="middle">ARL</text>"#, W / 2.0, H - 12.0);
    let _ = write!(out, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#, H / 2.0, H / 2.0, metric.label());
    for (i, (name, mut p)) in groups.into_iter().enumerate() {
        p.sort_by(|a, b| a.0.total_cmp(&b.0));
        let c = COLORS[i % COLORS.len()];
        let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = write!(out, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, path.join(" "));
        for &(x, y) in &p {
            let _ = write!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{c}"/>"#, sx(x), sy(y));
        }
        let ly = PAD + 14.0 + 14.0 * i as f64;
        let _ = write!(out, r#"<text x="{}" y="{ly}" fill="{c}">{}</text>"#, PAD + 8.0, escape(name));
    }
    out.push_str("</svg>\n");
    out
}

/// True region, estimated region and events on the spatial domain.
pub fn region_svg(bounds: &Rect, truth: &RegionUnion, estimate: &RegionUnion, events: &[Event], title: &str) -> String {
    let side = H - 2.0 * PAD;
    let sx = |x: f64| PAD + (x - bounds.x0) / bounds.width() * side;
    let sy = |y: f64| H - PAD - (y - bounds.y0) / bounds.height() * side;
    let mut out = String::new();
    header(&mut out, title);
    let _ = write!(out, r#"<rect x="{PAD}" y="{PAD}" width="{side}" height="{side}" fill="none" stroke="black"/>"#);
    let mut boxes = |r: &RegionUnion, style: &str| {
        for b in &r.boxes {
            let _ = write!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" {style}/>"#,
                sx(b.x0),
                sy(b.y1),
                sx(b.x1) - sx(b.x0),
                sy(b.y0) - sy(b.y1)
            );
        }
    };
    boxes(estimate, r##"fill="#d62728" fill-opacity="0.25" stroke="none""##);
    boxes(truth, r##"fill="none" stroke="#1f77b4" stroke-width="2""##);
    for e in events {
        let _ = write!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="1" fill="black"/>"#, sx(e.s[0]), sy(e.s[1]));
    }
    let lx = PAD + side + 10.0;
    let _ = write!(out, r##"<text x="{lx}" y="{}" fill="#1f77b4">true</text>"##, PAD + 12.0);
    let _ = write!(out, r##"<text x="{lx}" y="{}" fill="#d62728">estimate</text>"##, PAD + 26.0);
    out.push_str("</svg>\n");
    out
}
