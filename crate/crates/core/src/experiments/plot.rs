//! Minimal static SVG 1.1 plots.
//!
//! Time is encoded by a two-color gradient from purple `#440154` (start) to
//! yellow `#fde725` (end), interpolated linearly in RGB. Every file notes
//! this in a header comment.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;

pub const START_COLOR: Rgb = Rgb(0x44, 0x01, 0x54);
pub const END_COLOR: Rgb = Rgb(0xfd, 0xe7, 0x25);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    fn hex(self) -> String {
        format!("#{:02x}{:02x}{:02x}", self.0, self.1, self.2)
    }
}

/// Color for item `i` of `n` along the purple to yellow gradient.
pub fn gradient(i: usize, n: usize) -> Rgb {
    let s = if n <= 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
    let mix = |a: u8, b: u8| (a as f64 + s * (b as f64 - a as f64)).round() as u8;
    Rgb(
        mix(START_COLOR.0, END_COLOR.0),
        mix(START_COLOR.1, END_COLOR.1),
        mix(START_COLOR.2, END_COLOR.2),
    )
}

pub struct Series {
    pub label: String,
    pub points: Vec<[f64; 2]>,
    pub color: Rgb,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a [f64; 2]>) -> Frame {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in points.filter(|p| p[0].is_finite() && p[1].is_finite()) {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
            y1 = y1.max(p[1]);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        let pad = |lo: f64, hi: f64| {
            let span = if hi > lo { hi - lo } else { lo.abs().max(1.0) };
            (lo - 0.03 * span, hi + 0.03 * span)
        };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Frame { x0, x1, y0, y1 }
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(title: &str, note: &str) -> String {
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"no\"?>\n");
    s.push_str("<!DOCTYPE svg PUBLIC \"-//W3C//DTD SVG 1.1//EN\" \"http://www.w3.org/Graphics/SVG/1.1/DTD/svg11.dtd\">\n");
    let _ = writeln!(s, "<!-- {} -->", escape(note).replace("--", "- -"));
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(s, "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
    s
}

fn axes(s: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        "<rect x=\"{l}\" y=\"{t}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>",
        r - l,
        b - t
    );
    let font = "font-family=\"sans-serif\" font-size=\"11\"";
    for (x, v) in [(l, f.x0), (r, f.x1)] {
        let _ = writeln!(s, "<text x=\"{x}\" y=\"{}\" {font} text-anchor=\"middle\">{v:.3}</text>", b + 16.0);
    }
    for (y, v) in [(b, f.y0), (t, f.y1)] {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" {font} text-anchor=\"end\">{v:.3}</text>", l - 4.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" {font} text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        b + 34.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{}\" {font} text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel)
    );
}

/// Scatter plot with per-point colors.
pub fn scatter(points: &[[f64; 2]], colors: &[Rgb], title: &str, xlabel: &str, ylabel: &str) -> String {
    let f = Frame::fit(points.iter());
    let mut s = open(
        title,
        "color encodes time: purple #440154 at the start, yellow #fde725 at the end, linear RGB interpolation",
    );
    axes(&mut s, &f, xlabel, ylabel);
    s.push_str("<g stroke=\"none\">\n");
    for (p, c) in points.iter().zip(colors) {
        if !(p[0].is_finite() && p[1].is_finite()) {
            continue;
        }
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.2\" fill=\"{}\"/>",
            f.sx(p[0]),
            f.sy(p[1]),
            c.hex()
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

/// Time-colored scatter of 3-D points under a fixed orthographic view
/// (azimuth -60°, elevation 25°).
pub fn scatter_3d(points: &[[f64; 3]], title: &str, labels: [&str; 3]) -> String {
    let (az, el) = ((-60f64).to_radians(), 25f64.to_radians());
    let projected: Vec<[f64; 2]> = points
        .iter()
        .map(|p| {
            let x = p[0] * az.cos() - p[1] * az.sin();
            let y = p[0] * az.sin() + p[1] * az.cos();
            [x, p[2] * el.cos() - y * el.sin()]
        })
        .collect();
    let colors: Vec<Rgb> = (0..points.len()).map(|i| gradient(i, points.len())).collect();
    let xlabel = format!("view of ({}, {}, {})", labels[0], labels[1], labels[2]);
    scatter(&projected, &colors, title, &xlabel, "")
}

/// Time-colored 2-D scatter.
pub fn scatter_2d(points: &[[f64; 2]], title: &str, xlabel: &str, ylabel: &str) -> String {
    let colors: Vec<Rgb> = (0..points.len()).map(|i| gradient(i, points.len())).collect();
    scatter(points, &colors, title, xlabel, ylabel)
}

/// Overlaid polylines with a legend.
pub fn lines(series: &[Series], title: &str, xlabel: &str, ylabel: &str) -> String {
    let f = Frame::fit(series.iter().flat_map(|s| s.points.iter()));
    let mut s = open(title, "one polyline per series; legend at top right");
    axes(&mut s, &f, xlabel, ylabel);
    for (k, ser) in series.iter().enumerate() {
        let mut d = String::new();
        for p in ser.points.iter().filter(|p| p[0].is_finite() && p[1].is_finite()) {
            let _ = write!(d, "{:.2},{:.2} ", f.sx(p[0]), f.sy(p[1]));
        }
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\"/>",
            d.trim_end(),
            ser.color.hex()
        );
        let y = MARGIN + 14.0 + 14.0 * k as f64;
        let x = WIDTH - MARGIN - 120.0;
        let _ = writeln!(
            s,
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"2\"/>",
            y - 4.0,
            x + 16.0,
            y - 4.0,
            ser.color.hex()
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            x + 20.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}
