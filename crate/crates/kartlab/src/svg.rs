//! Minimal hand-rolled SVG line plots for the experiment reports. Output
//! is deterministic: fixed float formatting, fixed element order.

use std::fmt::Write as _;

pub const COLOR_FIXED: &str = "#d62728";
pub const COLOR_GD: &str = "#1f77b4";
pub const COLOR_CMAML: &str = "#2ca02c";

pub fn mode_color(mode: &str) -> &'static str {
    match mode {
        "fixed" => COLOR_FIXED,
        "gd" => COLOR_GD,
        "cmaml" => COLOR_CMAML,
        _ => "#7f7f7f",
    }
}

struct Series {
    points: Vec<(f64, f64)>,
    color: String,
    label: String,
}

/// A single-axes line plot.
pub struct Plot {
    title: String,
    x_label: String,
    y_label: String,
    series: Vec<Series>,
    /// Extra raw-SVG elements drawn under the data (already in data
    /// coordinates mapped by the caller via `map_x`/`map_y` at build time
    /// is impossible, so these are closures applied at render).
    underlays: Vec<Vec<(f64, f64)>>,
    equal_aspect: bool,
}

const W: f64 = 760.0;
const H: f64 = 480.0;
const ML: f64 = 64.0; // left margin
const MR: f64 = 16.0;
const MT: f64 = 36.0;
const MB: f64 = 48.0;

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Plot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            underlays: Vec::new(),
            equal_aspect: false,
        }
    }

    pub fn equal_aspect(mut self) -> Self {
        self.equal_aspect = true;
        self
    }

    pub fn line(&mut self, points: &[(f64, f64)], color: &str, label: &str) {
        self.series.push(Series {
            points: points.to_vec(),
            color: color.into(),
            label: label.into(),
        });
    }

    /// A gray background polyline (e.g. track edges), drawn first.
    pub fn underlay(&mut self, points: &[(f64, f64)]) {
        self.underlays.push(points.to_vec());
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut xmin = f64::INFINITY;
        let mut xmax = f64::NEG_INFINITY;
        let mut ymin = f64::INFINITY;
        let mut ymax = f64::NEG_INFINITY;
        for pts in self
            .series
            .iter()
            .map(|s| &s.points)
            .chain(self.underlays.iter())
        {
            for &(x, y) in pts {
                if x.is_finite() && y.is_finite() {
                    xmin = xmin.min(x);
                    xmax = xmax.max(x);
                    ymin = ymin.min(y);
                    ymax = ymax.max(y);
                }
            }
        }
        if !xmin.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        let pad = |lo: f64, hi: f64| {
            let span = (hi - lo).max(1e-9);
            (lo - 0.04 * span, hi + 0.04 * span)
        };
        let (xmin, xmax) = pad(xmin, xmax);
        let (ymin, ymax) = pad(ymin, ymax);
        if self.equal_aspect {
            let plot_w = W - ML - MR;
            let plot_h = H - MT - MB;
            let sx = (xmax - xmin) / plot_w;
            let sy = (ymax - ymin) / plot_h;
            let s = sx.max(sy);
            let cx = (xmin + xmax) / 2.0;
            let cy = (ymin + ymax) / 2.0;
            return (
                cx - s * plot_w / 2.0,
                cx + s * plot_w / 2.0,
                cy - s * plot_h / 2.0,
                cy + s * plot_h / 2.0,
            );
        }
        (xmin, xmax, ymin, ymax)
    }

    pub fn render(&self) -> String {
        let (xmin, xmax, ymin, ymax) = self.bounds();
        let map_x = |x: f64| ML + (x - xmin) / (xmax - xmin) * (W - ML - MR);
        let map_y = |y: f64| H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB);

        let mut s = String::new();
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
        );
        let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"22\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>",
            W / 2.0,
            xml_escape(&self.title)
        );

        // Axes and ticks.
        let _ = writeln!(
            s,
            "<rect x=\"{ML}\" y=\"{MT}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#333\"/>",
            W - ML - MR,
            H - MT - MB
        );
        for k in 0..=5 {
            let fx = xmin + (xmax - xmin) * k as f64 / 5.0;
            let px = map_x(fx);
            let _ = writeln!(
                s,
                "<line x1=\"{px:.1}\" y1=\"{:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"#ccc\" stroke-width=\"0.5\"/>",
                MT,
                H - MB
            );
            let _ = writeln!(
                s,
                "<text x=\"{px:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
                H - MB + 16.0,
                tick_label(fx)
            );
            let fy = ymin + (ymax - ymin) * k as f64 / 5.0;
            let py = map_y(fy);
            let _ = writeln!(
                s,
                "<line x1=\"{ML}\" y1=\"{py:.1}\" x2=\"{:.1}\" y2=\"{py:.1}\" stroke=\"#ccc\" stroke-width=\"0.5\"/>",
                W - MR
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
                ML - 6.0,
                py + 4.0,
                tick_label(fy)
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
            (ML + W - MR) / 2.0,
            H - 12.0,
            xml_escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
            (MT + H - MB) / 2.0,
            (MT + H - MB) / 2.0,
            xml_escape(&self.y_label)
        );

        for pts in &self.underlays {
            let _ = writeln!(
                s,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"#aaa\" stroke-width=\"1.5\"/>",
                polyline(pts, map_x, map_y)
            );
        }
        for series in &self.series {
            let _ = writeln!(
                s,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>",
                polyline(&series.points, map_x, map_y),
                series.color
            );
        }

        // Legend, top-right inside the axes.
        let mut ly = MT + 16.0;
        for series in &self.series {
            if series.label.is_empty() {
                continue;
            }
            let _ = writeln!(
                s,
                "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{}\" stroke-width=\"2\"/>",
                W - MR - 130.0,
                W - MR - 104.0,
                series.color
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
                W - MR - 98.0,
                ly + 4.0,
                xml_escape(&series.label)
            );
            ly += 16.0;
        }
        s.push_str("</svg>\n");
        s
    }
}

fn polyline(pts: &[(f64, f64)], map_x: impl Fn(f64) -> f64, map_y: impl Fn(f64) -> f64) -> String {
    let mut out = String::with_capacity(pts.len() * 12);
    for &(x, y) in pts {
        if !(x.is_finite() && y.is_finite()) {
            continue;
        }
        let _ = write!(out, "{:.2},{:.2} ", map_x(x), map_y(y));
    }
    out.trim_end().to_string()
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && (a < 1e-2 || a >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_deterministic_svg() {
        let mut p = Plot::new("demo", "t (s)", "loss");
        p.line(&[(0.0, 1.0), (1.0, 0.5), (2.0, 0.25)], COLOR_FIXED, "fixed");
        p.line(&[(0.0, 0.8), (1.0, 0.4)], COLOR_CMAML, "cmaml");
        let a = p.render();
        let b = p.render();
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.contains("polyline"));
        assert!(a.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn handles_empty_and_nonfinite_gracefully() {
        let mut p = Plot::new("empty", "x", "y");
        p.line(&[(f64::NAN, 1.0)], "#000", "");
        let svg = p.render();
        assert!(svg.contains("</svg>"));
    }
}
