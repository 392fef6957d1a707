//! Static SVG plots: a rainbow fan of observed curves and a one-step band.

use std::fmt::Write as _;

use dxband::evaluation::SampleBand;
use dxband::{AgeGrid, LifeTableSeries};

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 44.0;

struct Frame {
    n: usize,
    y_max: f64,
}

impl Frame {
    fn new(n: usize, y_max: f64) -> Self {
        Self {
            n,
            y_max: if y_max > 0.0 { y_max * 1.05 } else { 1.0 },
        }
    }

    fn x(&self, i: usize) -> f64 {
        LEFT + (W - LEFT - RIGHT) * i as f64 / (self.n.max(2) - 1) as f64
    }

    fn y(&self, v: f64) -> f64 {
        H - BOTTOM - (H - TOP - BOTTOM) * v / self.y_max
    }

    fn points(&self, vals: &[f64]) -> String {
        let mut s = String::new();
        for (i, &v) in vals.iter().enumerate() {
            let _ = write!(s, "{:.1},{:.1} ", self.x(i), self.y(v));
        }
        s.trim_end().to_string()
    }
}

fn open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{LEFT}\" y=\"20\" font-size=\"13\">{}</text>\n",
        escape(title)
    )
}

fn axes(s: &mut String, f: &Frame, grid: &AgeGrid) {
    let (x0, x1, y0) = (LEFT, W - RIGHT, H - BOTTOM);
    let _ = writeln!(
        s,
        "<path d=\"M{x0},{TOP} V{y0} H{x1}\" fill=\"none\" stroke=\"black\"/>"
    );
    let step = (grid.len() / 10).max(1);
    for i in (0..grid.len()).step_by(step) {
        let x = f.x(i);
        let _ = writeln!(
            s,
            "<line x1=\"{x:.1}\" y1=\"{y0}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\
             <text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            y0 + 4.0,
            y0 + 16.0,
            escape(&grid.label(i))
        );
    }
    for k in 0..=4 {
        let v = f.y_max * k as f64 / 4.0;
        let y = f.y(v);
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{x0}\" y2=\"{y:.1}\" stroke=\"black\"/>\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.0}</text>",
            x0 - 4.0,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">age</text>",
        (x0 + x1) / 2.0,
        H - 8.0
    );
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Every year's curve, coloured from red (first year) to violet (last).
pub fn curve_fan(d: &LifeTableSeries) -> String {
    let years = d.years();
    let y_max = d.values().iter().copied().fold(0.0, f64::max);
    let f = Frame::new(d.n_ages(), y_max);
    let mut s = open(&format!(
        "Life-table deaths, sex {}, {}-{}",
        d.sex().code(),
        years[0],
        years[years.len() - 1]
    ));
    axes(&mut s, &f, d.grid());
    let n = years.len().max(2) - 1;
    for t in 0..years.len() {
        let hue = 270.0 * t as f64 / n as f64;
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"hsl({hue:.0},80%,45%)\" stroke-width=\"1\"/>",
            f.points(&d.curve(t))
        );
    }
    s.push_str("</svg>\n");
    s
}

/// The band as a shaded area, the point forecast as a line and the
/// realised curve as dots.
pub fn band(sample: &SampleBand, grid: &AgeGrid) -> String {
    let b = &sample.band;
    let y_max = b
        .upper
        .iter()
        .chain(&sample.actual)
        .chain(&sample.point)
        .copied()
        .fold(0.0, f64::max);
    let f = Frame::new(b.len(), y_max);
    let mut s = open(&format!(
        "{} sex {}, {} band at {:.0}%, h = {}, year {}",
        sample.cell.label(),
        sample.sex,
        b.method.name(),
        100.0 * (1.0 - b.alpha),
        b.horizon,
        sample.year
    ));
    axes(&mut s, &f, grid);
    let mut poly = f.points(&b.upper);
    for (i, &v) in b.lower.iter().enumerate().rev() {
        let _ = write!(poly, " {:.1},{:.1}", f.x(i), f.y(v));
    }
    let _ = writeln!(
        s,
        "<polygon points=\"{poly}\" fill=\"#9ecae1\" fill-opacity=\"0.6\" stroke=\"none\"/>"
    );
    let _ = writeln!(
        s,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#08519c\" stroke-width=\"1.5\"/>",
        f.points(&sample.point)
    );
    for (i, &v) in sample.actual.iter().enumerate() {
        let colour = if b.contains(i, v) { "black" } else { "#d62728" };
        let _ = writeln!(
            s,
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"1.8\" fill=\"{colour}\"/>",
            f.x(i),
            f.y(v)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use dxband::data::{synth_lifetable, SynthSpec};

    #[test]
    fn fan_has_one_line_per_year() {
        let d = synth_lifetable(&SynthSpec::new(7, 20, 2, 0.01, 3)).unwrap();
        let svg = curve_fan(&d);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 7);
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(escape("a<b & c>"), "a&lt;b &amp; c&gt;");
    }
}
