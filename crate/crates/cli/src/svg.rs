//! Minimal native SVG: line plots and filled contour grids.

use std::fmt::Write;

use dsgd_tails::theory::ContourGrid;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

pub struct Series {
    pub name: String,
    pub color: &'static str,
    pub dashed: bool,
    pub points: Vec<(f64, f64)>,
}

/// Affine map from data space to the plot area (optionally log in x).
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    log_x: bool,
}

impl Frame {
    fn tx(&self, v: f64) -> f64 {
        let (a, b, v) = if self.log_x {
            (self.x.0.ln(), self.x.1.ln(), v.ln())
        } else {
            (self.x.0, self.x.1, v)
        };
        LEFT + (v - a) / (b - a) * (WIDTH - LEFT - RIGHT)
    }

    fn ty(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(hi > lo) {
        let c = if lo.is_finite() { lo } else { 0.0 };
        return (c - 0.5, c + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
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
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    s
}

fn axes(s: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        s,
        r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = if f.log_x {
            (f.x.0.ln() + t * (f.x.1.ln() - f.x.0.ln())).exp()
        } else {
            f.x.0 + t * (f.x.1 - f.x.0)
        };
        let px = f.tx(xv);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{}" stroke="black"/>"#,
            y0 + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
            y0 + 18.0,
            tick(xv)
        );
        let yv = f.y.0 + t * (f.y.1 - f.y.0);
        let py = f.ty(yv);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/>"#,
            x0 - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 8.0,
            py + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 15.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn polyline(s: &mut String, f: &Frame, pts: &[(f64, f64)], color: &str, dashed: bool, width: f64) {
    if pts.is_empty() {
        return;
    }
    let coords: Vec<String> = pts
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", f.tx(x), f.ty(y)))
        .collect();
    let dash = if dashed {
        r#" stroke-dasharray="6 4""#
    } else {
        ""
    };
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"{dash}/>"#,
        coords.join(" ")
    );
    for &(x, y) in pts {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
            f.tx(x),
            f.ty(y)
        );
    }
}

fn legend(s: &mut String, entries: &[(&str, &str, bool)]) {
    let x = WIDTH - RIGHT + 15.0;
    for (k, (name, color, dashed)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * k as f64;
        let dash = if *dashed {
            r#" stroke-dasharray="6 4""#
        } else {
            ""
        };
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/>"#,
            x + 24.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            x + 30.0,
            y + 4.0,
            escape(name)
        );
    }
}

/// Line plot of several series sharing both axes.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let all: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|p| p.0.is_finite() && p.1.is_finite())
        .collect();
    let bounds = |sel: fn(&(f64, f64)) -> f64| {
        let lo = all.iter().map(sel).fold(f64::INFINITY, f64::min);
        let hi = all.iter().map(sel).fold(f64::NEG_INFINITY, f64::max);
        padded(lo, hi)
    };
    let frame = Frame {
        x: bounds(|p| p.0),
        y: bounds(|p| p.1),
        log_x: false,
    };
    let mut s = header(title);
    axes(&mut s, &frame, xlabel, ylabel);
    for ser in series {
        polyline(&mut s, &frame, &ser.points, ser.color, ser.dashed, 2.0);
    }
    let entries: Vec<(&str, &str, bool)> = series
        .iter()
        .map(|x| (x.name.as_str(), x.color, x.dashed))
        .collect();
    legend(&mut s, &entries);
    s.push_str("</svg>\n");
    s
}

/// Purple for negative values, white at zero, green for positive values.
fn diverging(v: f64, scale: f64) -> String {
    let t = if scale > 0.0 {
        (v / scale).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let (end, w) = if t < 0.0 {
        ((94.0, 60.0, 153.0), -t)
    } else {
        ((27.0, 120.0, 55.0), t)
    };
    let mix = |a: f64| (247.0 + (a - 247.0) * w).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(end.0), mix(end.1), mix(end.2))
}

/// Cell edges at midpoints between grid values (geometric midpoints in log space).
fn edges(v: &[f64], log: bool) -> Vec<f64> {
    let fwd = |x: f64| if log { x.ln() } else { x };
    let back = |x: f64| if log { x.exp() } else { x };
    let t: Vec<f64> = v.iter().map(|&x| fwd(x)).collect();
    if t.len() == 1 {
        return vec![back(t[0] - 0.5), back(t[0] + 0.5)];
    }
    let mut e = vec![t[0] - 0.5 * (t[1] - t[0])];
    e.extend(t.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    let n = t.len();
    e.push(t[n - 1] + 0.5 * (t[n - 1] - t[n - 2]));
    e.into_iter().map(back).collect()
}

/// Filled grid of `values`, the zero curve in red and, when present, the
/// instability curve in orange.
pub fn contour_plot(title: &str, grid: &ContourGrid, log_x: bool) -> String {
    let ns: Vec<f64> = grid.ns.iter().map(|&n| n as f64).collect();
    let xe = edges(&grid.etas, log_x);
    let ye = edges(&ns, false);
    let frame = Frame {
        x: (xe[0], xe[xe.len() - 1]),
        y: (ye[0], ye[ye.len() - 1]),
        log_x,
    };
    let scale = grid
        .values
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut s = header(title);
    for (r, row) in grid.values.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let (x0, x1) = (frame.tx(xe[c]), frame.tx(xe[c + 1]));
            let (y0, y1) = (frame.ty(ye[r + 1]), frame.ty(ye[r]));
            let _ = writeln!(
                s,
                r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{}" stroke="none"/>"#,
                x1 - x0,
                y1 - y0,
                diverging(v, scale)
            );
        }
    }
    axes(&mut s, &frame, "step size", "nodes N");
    let mut entries = vec![
        ("value < 0", "#5e3c99", false),
        ("value > 0", "#1b7837", false),
    ];
    if grid.zero_curve.len() > 1 {
        polyline(&mut s, &frame, &grid.zero_curve, "#e41a1c", false, 2.5);
        entries.push(("sign term = 0", "#e41a1c", false));
    }
    if grid.instability_curve.len() > 1 {
        polyline(
            &mut s,
            &frame,
            &grid.instability_curve,
            "#ff7f00",
            false,
            2.5,
        );
        entries.push(("rho_dis = 0", "#ff7f00", false));
    }
    legend(&mut s, &entries);
    s.push_str("</svg>\n");
    s
}
