//! Minimal static SVG line plots; no plotting dependency needed for a few
//! polylines with axes.

use std::fmt::Write as _;
use std::path::Path;

const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
    /// Index into the palette; dashed reference lines usually share a color.
    pub color: usize,
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

const W: f64 = 760.0;
const H: f64 = 480.0;
const ML: f64 = 70.0;
const MR: f64 = 180.0;
const MT: f64 = 40.0;
const MB: f64 = 55.0;

impl Plot {
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for s in &self.series {
            for &(x, y) in &s.points {
                if x.is_finite() && y.is_finite() {
                    pts.push((self.map_x_raw(x), y));
                }
            }
        }
        if pts.is_empty() {
            return std::fs::write(path, "<svg xmlns='http://www.w3.org/2000/svg'/>");
        }
        let (mut x0, mut x1) = min_max(pts.iter().map(|p| p.0));
        let (mut y0, mut y1) = min_max(pts.iter().map(|p| p.1));
        if (x1 - x0).abs() < 1e-12 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if (y1 - y0).abs() < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = (y1 - y0) * 0.05;
        y0 -= pad;
        y1 += pad;

        let sx = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
        let sy = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

        let mut out = String::new();
        let _ = writeln!(
            out,
            "<svg xmlns='http://www.w3.org/2000/svg' width='{W}' height='{H}' viewBox='0 0 {W} {H}' font-family='sans-serif'>"
        );
        let _ = writeln!(out, "<rect width='{W}' height='{H}' fill='white'/>");
        let _ = writeln!(
            out,
            "<text x='{}' y='24' text-anchor='middle' font-size='16'>{}</text>",
            (W - MR + ML) / 2.0,
            xml(&self.title)
        );

        // axes
        let _ = writeln!(
            out,
            "<line x1='{ML}' y1='{MT}' x2='{ML}' y2='{}' stroke='black'/>",
            H - MB
        );
        let _ = writeln!(
            out,
            "<line x1='{ML}' y1='{}' x2='{}' y2='{}' stroke='black'/>",
            H - MB,
            W - MR,
            H - MB
        );

        // ticks
        for i in 0..=5 {
            let fy = y0 + (y1 - y0) * i as f64 / 5.0;
            let py = sy(fy);
            let _ = writeln!(
                out,
                "<line x1='{}' y1='{py}' x2='{ML}' y2='{py}' stroke='black'/>",
                ML - 5.0
            );
            let _ = writeln!(
                out,
                "<text x='{}' y='{}' text-anchor='end' font-size='11'>{}</text>",
                ML - 8.0,
                py + 4.0,
                fmt_tick(fy)
            );
            let _ = writeln!(
                out,
                "<line x1='{ML}' y1='{py}' x2='{}' y2='{py}' stroke='#dddddd'/>",
                W - MR
            );
        }
        for i in 0..=5 {
            let fx = x0 + (x1 - x0) * i as f64 / 5.0;
            let px = sx(fx);
            let shown = if self.log_x { 10f64.powf(fx) } else { fx };
            let _ = writeln!(
                out,
                "<line x1='{px}' y1='{}' x2='{px}' y2='{}' stroke='black'/>",
                H - MB,
                H - MB + 5.0
            );
            let _ = writeln!(
                out,
                "<text x='{px}' y='{}' text-anchor='middle' font-size='11'>{}</text>",
                H - MB + 18.0,
                fmt_tick(shown)
            );
        }
        let _ = writeln!(
            out,
            "<text x='{}' y='{}' text-anchor='middle' font-size='13'>{}</text>",
            (W - MR + ML) / 2.0,
            H - 14.0,
            xml(&self.x_label)
        );
        let _ = writeln!(
            out,
            "<text x='18' y='{}' text-anchor='middle' font-size='13' transform='rotate(-90 18 {})'>{}</text>",
            (H - MB + MT) / 2.0,
            (H - MB + MT) / 2.0,
            xml(&self.y_label)
        );

        // series
        for (si, s) in self.series.iter().enumerate() {
            let color = PALETTE[s.color % PALETTE.len()];
            let dash = if s.dashed { " stroke-dasharray='7,5'" } else { "" };
            let mut d = String::new();
            for &(x, y) in &s.points {
                let px = sx(self.map_x_raw(x));
                let py = sy(y.clamp(y0, y1));
                let _ = write!(d, "{px:.2},{py:.2} ");
            }
            let _ = writeln!(
                out,
                "<polyline points='{d}' fill='none' stroke='{color}' stroke-width='1.8'{dash}/>"
            );
            let ly = MT + 18.0 * si as f64 + 10.0;
            let _ = writeln!(
                out,
                "<line x1='{}' y1='{ly}' x2='{}' y2='{ly}' stroke='{color}' stroke-width='2'{dash}/>",
                W - MR + 10.0,
                W - MR + 40.0
            );
            let _ = writeln!(
                out,
                "<text x='{}' y='{}' font-size='11'>{}</text>",
                W - MR + 46.0,
                ly + 4.0,
                xml(&s.label)
            );
        }
        let _ = writeln!(out, "</svg>");
        std::fs::write(path, out)
    }

    fn map_x_raw(&self, x: f64) -> f64 {
        if self.log_x {
            x.max(1.0).log10()
        } else {
            x
        }
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 10_000.0 || v.abs() < 0.01 {
        format!("{v:.1e}")
    } else if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.3}")
    }
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
