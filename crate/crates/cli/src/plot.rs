//! Bare-bones SVG line charts for eyeballing runs.

use std::fs;
use std::path::Path;

use lstd_core::evaluation::InterventionWindow;
use lstd_core::{LstdError, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 40.0;

pub fn write_series(path: &Path, title: &str, ys: &[f64]) -> Result<()> {
    let finite: Vec<f64> = ys.iter().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = ys.len().max(2) - 1;
    let points: Vec<String> = ys
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .map(|(i, v)| {
            let x = MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / n as f64;
            let y = HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / span;
            format!("{x:.1},{y:.1}")
        })
        .collect();
    let svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{MARGIN}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n\
         <text x=\"4\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\">{lo:.3e}</text>\n\
         <text x=\"4\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\">{hi:.3e}</text>\n\
         <polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1\" points=\"{}\"/>\n</svg>\n",
        HEIGHT - MARGIN,
        MARGIN,
        points.join(" ")
    );
    fs::write(path, svg).map_err(|e| LstdError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Mean trace by offset from the intervention step, over all windows.
pub fn aligned_mean(windows: &[InterventionWindow]) -> Vec<f64> {
    let Some(len) = windows.iter().map(|w| w.trace.len()).max() else {
        return Vec::new();
    };
    // Offsets run from -(len - 1) to len - 1.
    let mut sum = vec![0.0; 2 * len - 1];
    let mut count = vec![0usize; 2 * len - 1];
    for w in windows {
        for (t, v) in w.trace.iter().enumerate() {
            let slot = t + len - 1 - w.step;
            sum[slot] += v;
            count[slot] += 1;
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect()
}
