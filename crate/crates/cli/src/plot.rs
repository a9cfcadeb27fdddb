//! Static SVG figures: a class-colored scatter with a linear separator, and
//! fairness/variance curves from a sweep.

use std::collections::BTreeMap;
use std::fmt::Write;

use nalgebra::DMatrix;

use crate::commands::SweepRow;
use crate::error::{CliError, CliResult};

const SIZE: f64 = 600.0;
const PAD: f64 = 50.0;

/// Affine map from a data box onto the drawing area, y pointing up.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn around(xs: &[f64], ys: &[f64]) -> Self {
        let span = |v: &[f64]| {
            let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            let m = ((hi - lo) * 0.05).max(1e-9);
            (lo - m, hi + m)
        };
        let (x0, x1) = span(xs);
        let (y0, y1) = span(ys);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (SIZE - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        SIZE - PAD - (y - self.y0) / (self.y1 - self.y0) * (SIZE - 2.0 * PAD)
    }

    /// Segment of `w0 x + w1 y + b = 0` inside the box, if any.
    fn clip_line(&self, w: &[f64], b: f64) -> Option<((f64, f64), (f64, f64))> {
        let mut pts: Vec<(f64, f64)> = Vec::new();
        if w[1].abs() > 1e-12 {
            for x in [self.x0, self.x1] {
                let y = -(w[0] * x + b) / w[1];
                if y >= self.y0 && y <= self.y1 {
                    pts.push((x, y));
                }
            }
        }
        if w[0].abs() > 1e-12 {
            for y in [self.y0, self.y1] {
                let x = -(w[1] * y + b) / w[0];
                if x >= self.x0 && x <= self.x1 {
                    pts.push((x, y));
                }
            }
        }
        pts.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
        (pts.len() >= 2).then(|| (pts[0], pts[1]))
    }

    fn axes(&self, s: &mut String, xlabel: &str, ylabel: &str) {
        let (l, r, t, b) = (PAD, SIZE - PAD, PAD, SIZE - PAD);
        let _ = writeln!(
            s,
            r##"<rect class="frame" x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            r - l,
            b - t
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, SIZE / 2.0, SIZE - 12.0);
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{ylabel}</text>"#,
            SIZE / 2.0,
            SIZE / 2.0
        );
        for (v, x) in [(self.x0, l), (self.x1, r)] {
            let _ =
                writeln!(s, r#"<text class="tick" x="{x:.1}" y="{:.1}" text-anchor="middle">{v:.3}</text>"#, b + 16.0);
        }
        for (v, y) in [(self.y0, b), (self.y1, t)] {
            let _ = writeln!(s, r#"<text class="tick" x="{:.1}" y="{y:.1}" text-anchor="end">{v:.3}</text>"#, l - 4.0);
        }
    }
}

fn open_svg() -> String {
    format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
    ) + "\n"
}

/// Scatter of 2-D points colored by `z`, with the line `w.x + b = 0`.
pub fn scatter_svg(u: &DMatrix<f64>, z: &[i8], separator: Option<(&[f64], f64)>) -> String {
    let xs: Vec<f64> = u.column(0).iter().copied().collect();
    let ys: Vec<f64> = u.column(1).iter().copied().collect();
    let frame = Frame::around(&xs, &ys);
    let mut s = open_svg();
    frame.axes(&mut s, "component 1", "component 2");
    for (i, &label) in z.iter().enumerate() {
        let (class, color) = if label == 1 { ("pos", "#d62728") } else { ("neg", "#1f77b4") };
        let _ = writeln!(
            s,
            r#"<circle class="{class}" cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}" fill-opacity="0.6"/>"#,
            frame.px(u[(i, 0)]),
            frame.py(u[(i, 1)])
        );
    }
    if let Some((w, b)) = separator {
        if let Some(((xa, ya), (xb, yb))) = frame.clip_line(w, b) {
            let _ = writeln!(
                s,
                r##"<line class="separator" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#000" stroke-width="2"/>"##,
                frame.px(xa),
                frame.py(ya),
                frame.px(xb),
                frame.py(yb)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// One curve per variant and mu: points ordered by delta, x = variance
/// explained, y = linear-SVM fairness estimate.
pub fn sweep_svg(rows: &[SweepRow]) -> CliResult<String> {
    if rows.is_empty() {
        return Err(CliError::Data("nothing to plot".into()));
    }
    let mut curves: BTreeMap<(String, String), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        let mu = r.mu.map(|m| format!("{m}")).unwrap_or_default();
        curves.entry((r.variant.clone(), mu)).or_default().push(r);
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.var_explained).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.delta_lin).collect();
    let frame = Frame::around(&xs, &ys);
    let mut s = open_svg();
    frame.axes(&mut s, "variance explained", "linear-SVM fairness estimate");
    for (k, ((variant, mu), pts)) in curves.iter_mut().enumerate() {
        pts.sort_by(|a, b| a.delta.unwrap_or(f64::INFINITY).total_cmp(&b.delta.unwrap_or(f64::INFINITY)));
        let (color, dash) = if variant == "mean" { ("#d62728", "") } else { ("#1f77b4", r#" stroke-dasharray="4 3""#) };
        let path: Vec<String> =
            pts.iter().map(|r| format!("{:.2},{:.2}", frame.px(r.var_explained), frame.py(r.delta_lin))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="curve" data-variant="{variant}" data-mu="{mu}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            path.join(" ")
        );
        for r in pts.iter() {
            let _ = writeln!(
                s,
                r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                frame.px(r.var_explained),
                frame.py(r.delta_lin)
            );
        }
        let label = if mu.is_empty() { variant.clone() } else { format!("{variant}, mu={mu}") };
        let _ = writeln!(
            s,
            r#"<text class="legend" x="{}" y="{}" fill="{color}">{label}</text>"#,
            PAD + 8.0,
            PAD + 16.0 * (k as f64 + 1.0)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separator_is_clipped_to_the_box() {
        let f = Frame { x0: -1.0, x1: 1.0, y0: -1.0, y1: 1.0 };
        let ((xa, ya), (xb, yb)) = f.clip_line(&[1.0, -1.0], 0.0).unwrap();
        assert!((xa - ya).abs() < 1e-12 && (xb - yb).abs() < 1e-12 && (xa - xb).abs() > 1.0);
        assert!(f.clip_line(&[1.0, 0.0], -5.0).is_none());
    }

    #[test]
    fn scatter_has_both_classes_and_one_line() {
        let u = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let svg = scatter_svg(&u, &[1, 1, -1, -1], Some((&[0.0, 1.0], -0.5)));
        assert_eq!(svg.matches(r#"class="pos""#).count(), 2);
        assert_eq!(svg.matches(r#"class="neg""#).count(), 2);
        assert_eq!(svg.matches(r#"class="separator""#).count(), 1);
    }
}
