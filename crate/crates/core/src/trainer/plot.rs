//! Post-hoc curves from a metrics file: moving medians as CSV and a small
//! SVG line chart.

use std::fmt::Write as _;

use super::metrics::{moving_median, EpisodeMetrics};

pub const WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    pub episode: Vec<u64>,
    pub median_return: Vec<f64>,
    pub f_off: Vec<f64>,
    pub beta: Vec<f64>,
}

pub fn curves(ms: &[EpisodeMetrics], window: usize) -> Curves {
    let returns: Vec<f64> = ms.iter().map(|m| m.mean_return).collect();
    Curves {
        episode: ms.iter().map(|m| m.episode).collect(),
        median_return: moving_median(&returns, window),
        f_off: ms.iter().map(|m| m.f_off).collect(),
        beta: ms.iter().map(|m| m.beta).collect(),
    }
}

pub fn to_csv(c: &Curves) -> String {
    let mut s = String::from("episode,median_return,f_off,beta\n");
    for k in 0..c.episode.len() {
        let _ = writeln!(s, "{},{},{},{}", c.episode[k], c.median_return[k], c.f_off[k], c.beta[k]);
    }
    s
}

fn polyline(xs: &[u64], ys: &[f64], x0: f64, y0: f64, w: f64, h: f64, color: &str) -> String {
    let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let xmax = xs.last().copied().unwrap_or(1).max(1) as f64;
    let pts: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| format!("{:.1},{:.1}", x0 + w * x as f64 / xmax, y0 + h - h * (y - lo) / span))
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n\
         <text x=\"{x0}\" y=\"{:.1}\" font-size=\"11\">{:.3}</text>\n\
         <text x=\"{x0}\" y=\"{:.1}\" font-size=\"11\">{:.3}</text>\n",
        pts.join(" "),
        y0 + 10.0,
        hi,
        y0 + h,
        lo
    )
}

/// Three stacked panels: moving-median return, f_off and beta.
pub fn to_svg(c: &Curves) -> String {
    let (w, h, pad) = (640.0, 160.0, 30.0);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\">\n",
        w + 2.0 * pad,
        3.0 * (h + pad) + pad
    );
    let panels = [("median return", &c.median_return, "#1f77b4"), ("f_off", &c.f_off, "#d62728"), ("beta", &c.beta, "#2ca02c")];
    for (k, (title, ys, color)) in panels.into_iter().enumerate() {
        let y0 = pad + k as f64 * (h + pad);
        let _ = writeln!(s, "<text x=\"{pad}\" y=\"{:.1}\" font-size=\"13\">{title}</text>", y0 - 6.0);
        let _ = writeln!(s, "<rect x=\"{pad}\" y=\"{y0}\" width=\"{w}\" height=\"{h}\" fill=\"none\" stroke=\"#999\"/>");
        if !ys.is_empty() {
            s.push_str(&polyline(&c.episode, ys, pad, y0, w, h, color));
        }
    }
    s.push_str("</svg>\n");
    s
}
