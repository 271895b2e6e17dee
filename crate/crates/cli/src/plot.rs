//! Static PNG plots of exit traces.

use exitrack_core::ood::OodTrace;
use image::{Rgb, RgbImage};

const PX_PER_FRAME: u32 = 4;
const PLOT_H: u32 = 100;
const BAR_H: u32 = 8;

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const EXIT_GT: Rgb<u8> = Rgb([225, 225, 225]);
const SCORE: Rgb<u8> = Rgb([30, 70, 200]);
const THRESHOLD: Rgb<u8> = Rgb([200, 40, 40]);
const FLAG: Rgb<u8> = Rgb([40, 160, 60]);

/// Smoothed score over frames with the threshold as a horizontal line.
/// Ground-truth exit frames are shaded; flagged frames are marked in a bar
/// under the plot.
pub fn plot_trace(trace: &OodTrace, gt_visible: &[bool], phi: f64) -> RgbImage {
    let n = trace.len().max(1) as u32;
    let w = n * PX_PER_FRAME;
    let h = PLOT_H + 2 + BAR_H;
    let mut img = RgbImage::from_pixel(w, h, BG);
    let finite = || {
        trace
            .smoothed
            .iter()
            .copied()
            .chain([phi])
            .filter(|v| v.is_finite())
    };
    let lo = finite().fold(f64::INFINITY, f64::min);
    let hi = finite().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo < hi {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    };
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let y_of = |v: f64| -> u32 {
        let f = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        ((1.0 - f) * (PLOT_H - 1) as f64).round() as u32
    };
    for (t, &vis) in gt_visible.iter().enumerate().take(n as usize) {
        if !vis {
            for x in t as u32 * PX_PER_FRAME..(t as u32 + 1) * PX_PER_FRAME {
                for y in 0..PLOT_H {
                    img.put_pixel(x, y, EXIT_GT);
                }
            }
        }
    }
    if phi.is_finite() {
        let y = y_of(phi);
        for x in 0..w {
            img.put_pixel(x, y, THRESHOLD);
        }
    }
    let mut prev: Option<u32> = None;
    for (t, &v) in trace.smoothed.iter().enumerate() {
        if !v.is_finite() {
            prev = None;
            continue;
        }
        let y = y_of(v);
        let x0 = t as u32 * PX_PER_FRAME;
        for x in x0..x0 + PX_PER_FRAME {
            img.put_pixel(x, y, SCORE);
        }
        if let Some(p) = prev {
            for yy in p.min(y)..=p.max(y) {
                img.put_pixel(x0, yy, SCORE);
            }
        }
        prev = Some(y);
    }
    for (t, &exit) in trace.decisions.iter().enumerate() {
        if exit {
            for x in t as u32 * PX_PER_FRAME..(t as u32 + 1) * PX_PER_FRAME {
                for y in PLOT_H + 2..h {
                    img.put_pixel(x, y, FLAG);
                }
            }
        }
    }
    img
}
