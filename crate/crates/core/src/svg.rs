//! Minimal static SVG plots: a scatter for projections and line overlays for
//! curves.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 48.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = (f64, f64)> + Clone) -> Self {
        let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| {
            xs.clone().map(|p| pick(&p)).fold(init, f)
        };
        let mut fr = Frame {
            x0: fold(f64::min, f64::INFINITY, |p| p.0),
            x1: fold(f64::max, f64::NEG_INFINITY, |p| p.0),
            y0: fold(f64::min, f64::INFINITY, |p| p.1),
            y1: fold(f64::max, f64::NEG_INFINITY, |p| p.1),
        };
        if !fr.x0.is_finite() {
            fr = Frame { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };
        }
        if fr.x1 - fr.x0 < 1e-12 {
            fr.x1 = fr.x0 + 1.0;
        }
        if fr.y1 - fr.y0 < 1e-12 {
            fr.y1 = fr.y0 + 1.0;
        }
        fr
    }

    fn unit() -> Self {
        Frame { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 }
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        (
            PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD),
            H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD),
        )
    }
}

fn open(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn save(path: &Path, mut body: String) -> Result<()> {
    body.push_str("</svg>\n");
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// One named group of points drawn with a shared colour.
pub struct Series<'a> {
    pub name: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

pub fn scatter(path: &Path, title: &str, series: &[Series<'_>]) -> Result<()> {
    let frame = Frame::fit(series.iter().flat_map(|s| s.points.iter().copied()));
    let mut s = open(title, "x", "y");
    for (k, ser) in series.iter().enumerate() {
        for &(x, y) in &ser.points {
            let (a, b) = frame.px(x, y);
            let _ = writeln!(s, r#"<circle cx="{a:.2}" cy="{b:.2}" r="2" fill="{}" fill-opacity="0.6"/>"#, ser.color);
        }
        legend(&mut s, k, ser);
    }
    save(path, s)
}

fn legend(s: &mut String, k: usize, ser: &Series<'_>) {
    let y = PAD + 16.0 + 16.0 * k as f64;
    let _ = writeln!(
        s,
        r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
        W - PAD - 120.0,
        y - 9.0,
        ser.color,
        W - PAD - 104.0,
        y,
        escape(ser.name)
    );
}

/// Line plot on the unit square, for ROC and PR curves.
pub fn curves(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> Result<()> {
    let frame = Frame::unit();
    let mut s = open(title, x_label, y_label);
    for (k, ser) in series.iter().enumerate() {
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| {
                let (a, b) = frame.px(x, y);
                format!("{a:.2},{b:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            pts.join(" "),
            ser.color
        );
        legend(&mut s, k, ser);
    }
    save(path, s)
}
