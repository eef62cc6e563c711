//! Minimal deterministic SVG line charts. Output is plain text with fixed
//! formatting so identical inputs always produce byte-identical files.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlotError {
    #[error("series '{0}' is empty")]
    EmptySeries(String),
    #[error("series '{label}' has {x} x values but {y} y values")]
    LengthMismatch { label: String, x: usize, y: usize },
    #[error("no series to plot")]
    NoSeries,
    #[error("non-finite value in series '{0}'")]
    NonFinite(String),
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f",
];

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1000.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.4}")
    }
}

/// Renders one chart with shared axes. Coordinates are emitted with fixed
/// two-decimal precision.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
) -> Result<String, PlotError> {
    if series.is_empty() {
        return Err(PlotError::NoSeries);
    }
    for s in series {
        if s.x.is_empty() {
            return Err(PlotError::EmptySeries(s.label.clone()));
        }
        if s.x.len() != s.y.len() {
            return Err(PlotError::LengthMismatch {
                label: s.label.clone(),
                x: s.x.len(),
                y: s.y.len(),
            });
        }
        if s.x.iter().chain(&s.y).any(|v| !v.is_finite()) {
            return Err(PlotError::NonFinite(s.label.clone()));
        }
    }

    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &v in &s.x {
            x_min = x_min.min(v);
            x_max = x_max.max(v);
        }
        for &v in &s.y {
            y_min = y_min.min(v);
            y_max = y_max.max(v);
        }
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }
    // 5% headroom on the y axis
    let pad = 0.05 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |v: f64| MARGIN_L + (v - x_min) / (x_max - x_min) * plot_w;
    let sy = |v: f64| MARGIN_T + (y_max - v) / (y_max - y_min) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(
        out,
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );

    // axes frame
    let _ = writeln!(
        out,
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>"
    );

    // 5 ticks per axis
    const N_TICKS: usize = 5;
    for i in 0..N_TICKS {
        let f = i as f64 / (N_TICKS - 1) as f64;
        let xv = x_min + f * (x_max - x_min);
        let yv = y_min + f * (y_max - y_min);
        let px = sx(xv);
        let py = sy(yv);
        let _ = writeln!(
            out,
            "<line x1=\"{px:.2}\" y1=\"{:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"#333333\" stroke-width=\"1\"/>",
            MARGIN_T + plot_h,
            MARGIN_T + plot_h + 5.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{px:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            MARGIN_T + plot_h + 18.0,
            fmt_tick(xv)
        );
        let _ = writeln!(
            out,
            "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{MARGIN_L}\" y2=\"{py:.2}\" stroke=\"#333333\" stroke-width=\"1\"/>",
            MARGIN_L - 5.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            MARGIN_L - 8.0,
            py + 4.0,
            fmt_tick(yv)
        );
    }

    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        escape(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut points = String::new();
        for (x, y) in s.x.iter().zip(&s.y) {
            let _ = write!(points, "{:.2},{:.2} ", sx(*x), sy(*y));
        }
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.trim_end()
        );
        // legend entry
        let ly = MARGIN_T + 16.0 + 18.0 * i as f64;
        let _ = writeln!(
            out,
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            MARGIN_L + plot_w - 150.0,
            MARGIN_L + plot_w - 120.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            MARGIN_L + plot_w - 112.0,
            ly + 4.0,
            escape(&s.label)
        );
    }

    out.push_str("</svg>\n");
    Ok(out)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Series {
        Series {
            label: "ramp".into(),
            x: (0..n).map(|i| i as f64).collect(),
            y: (0..n).map(|i| (i as f64 * 0.3).sin()).collect(),
        }
    }

    #[test]
    fn polyline_point_count_matches_samples() {
        let svg = line_chart("t", "x", "y", &[ramp(37)]).unwrap();
        let points = svg
            .lines()
            .find(|l| l.starts_with("<polyline"))
            .unwrap()
            .split("points=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap();
        assert_eq!(points.split_whitespace().count(), 37);
    }

    #[test]
    fn output_is_deterministic() {
        let s = [ramp(100)];
        let a = line_chart("flow", "time (s)", "mL/min", &s).unwrap();
        let b = line_chart("flow", "time (s)", "mL/min", &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn output_is_wellformed_svg() {
        let svg = line_chart("a & b", "x<1>", "y", &[ramp(5)]).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &amp; b"));
        assert!(svg.contains("x&lt;1&gt;"));
        // no unescaped raw title/label remnants
        assert!(!svg.contains("x<1>"));
    }

    #[test]
    fn coordinates_map_linearly() {
        // two points: min and max must land on the plot edges
        let s = Series {
            label: "line".into(),
            x: vec![0.0, 10.0],
            y: vec![0.0, 1.0],
        };
        let svg = line_chart("t", "x", "y", &[s]).unwrap();
        let points_line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let coords: Vec<&str> = points_line
            .split("points=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap()
            .split_whitespace()
            .collect();
        let first_x: f64 = coords[0].split(',').next().unwrap().parse().unwrap();
        let last_x: f64 = coords[1].split(',').next().unwrap().parse().unwrap();
        assert_eq!(first_x, 70.0); // left margin
        assert_eq!(last_x, 780.0); // width - right margin
    }

    #[test]
    fn errors_on_bad_input() {
        assert_eq!(line_chart("t", "x", "y", &[]), Err(PlotError::NoSeries));
        let empty = Series { label: "e".into(), x: vec![], y: vec![] };
        assert!(matches!(
            line_chart("t", "x", "y", &[empty]),
            Err(PlotError::EmptySeries(_))
        ));
        let bad = Series { label: "b".into(), x: vec![0.0, 1.0], y: vec![0.0] };
        assert!(matches!(
            line_chart("t", "x", "y", &[bad]),
            Err(PlotError::LengthMismatch { .. })
        ));
        let nan = Series { label: "n".into(), x: vec![0.0, 1.0], y: vec![0.0, f64::NAN] };
        assert!(matches!(
            line_chart("t", "x", "y", &[nan]),
            Err(PlotError::NonFinite(_))
        ));
    }
}
