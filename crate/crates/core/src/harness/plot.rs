//! Minimal deterministic SVG emitters. Plots are conveniences; the CSVs
//! next to them are the artifact of record.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n",
        W / 2.0
    );
    s
}

fn axes(s: &mut String, x_label: &str, y_label: &str) {
    let x0 = MARGIN;
    let y0 = H - MARGIN;
    let x1 = W - MARGIN / 2.0;
    let y1 = MARGIN / 1.5;
    let _ = write!(
        s,
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x1:.1}\" y2=\"{y0:.1}\" stroke=\"black\"/>\n\
         <line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x0:.1}\" y2=\"{y1:.1}\" stroke=\"black\"/>\n\
         <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{x_label}</text>\n\
         <text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{y_label}</text>\n",
        (x0 + x1) / 2.0,
        H - 14.0,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
}

/// Data x in [lo, hi] to plot coordinates.
fn scale(v: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    if hi > lo {
        out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)
    } else {
        (out_lo + out_hi) / 2.0
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn tick_labels(s: &mut String, lo: f64, hi: f64, horizontal: bool) {
    let y0 = H - MARGIN;
    for i in 0..=4 {
        let frac = f64::from(i) / 4.0;
        let v = lo + frac * (hi - lo);
        if horizontal {
            let x = scale(v, lo, hi, MARGIN, W - MARGIN / 2.0);
            let _ = write!(
                s,
                "<line x1=\"{x:.1}\" y1=\"{y0:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
                 <text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.2}</text>\n",
                y0 + 5.0,
                y0 + 18.0
            );
        } else {
            let y = scale(v, lo, hi, y0, MARGIN / 1.5);
            let _ = write!(
                s,
                "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{MARGIN:.1}\" y2=\"{y:.1}\" stroke=\"black\"/>\n\
                 <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.2}</text>\n",
                MARGIN - 5.0,
                MARGIN - 8.0,
                y + 4.0
            );
        }
    }
}

/// Equal-width histogram over the value range.
pub fn histogram_svg(values: &[f64], bins: usize, title: &str, x_label: &str) -> String {
    let bins = bins.max(1);
    let (lo, hi) = bounds(values.iter().copied());
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = (scale(v, lo, hi, 0.0, bins as f64) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let peak = counts.iter().copied().max().unwrap_or(1).max(1) as f64;

    let mut s = header(title);
    axes(&mut s, x_label, "count");
    tick_labels(&mut s, lo, hi, true);
    tick_labels(&mut s, 0.0, peak, false);
    let y0 = H - MARGIN;
    let span = W - MARGIN - MARGIN / 2.0;
    let bw = span / bins as f64;
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let x = MARGIN + i as f64 * bw;
        let h = (c as f64 / peak) * (y0 - MARGIN / 1.5);
        let _ = write!(
            s,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{h:.1}\" \
             fill=\"steelblue\" stroke=\"black\"/>\n",
            x + 1.0,
            y0 - h,
            bw - 2.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Scatter plot with an optional binned-mean overlay polyline.
pub fn scatter_svg(
    points: &[(f64, f64)],
    overlay: &[(f64, f64)],
    title: &str,
    x_label: &str,
    y_label: &str,
) -> String {
    let (xlo, xhi) = bounds(points.iter().chain(overlay).map(|p| p.0));
    let (ylo, yhi) = bounds(points.iter().chain(overlay).map(|p| p.1));
    let mut s = header(title);
    axes(&mut s, x_label, y_label);
    tick_labels(&mut s, xlo, xhi, true);
    tick_labels(&mut s, ylo, yhi, false);
    let px = |v| scale(v, xlo, xhi, MARGIN, W - MARGIN / 2.0);
    let py = |v| scale(v, ylo, yhi, H - MARGIN, MARGIN / 1.5);
    for &(x, y) in points {
        let _ = write!(
            s,
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"steelblue\" fill-opacity=\"0.6\"/>\n",
            px(x),
            py(y)
        );
    }
    if overlay.len() > 1 {
        let path: Vec<String> =
            overlay.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = write!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"firebrick\" stroke-width=\"2\"/>\n",
            path.join(" ")
        );
    }
    for &(x, y) in overlay {
        let _ = write!(
            s,
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"firebrick\"/>\n",
            px(x),
            py(y)
        );
    }
    s.push_str("</svg>\n");
    s
}
