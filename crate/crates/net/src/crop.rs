//! Square crop windows and bilinear resampling into network inputs.

use exitrack_core::dataset::RgbFrame;
use exitrack_core::geometry::BBox;

use crate::graph::Tensor;

/// Search window side as a multiple of the box's larger side.
pub const SEARCH_FACTOR: f64 = 4.0;
/// Template window side as a multiple of the box's larger side.
pub const TEMPLATE_FACTOR: f64 = 2.0;
const MIN_SIDE: f64 = 8.0;

/// Square window in frame pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropWindow {
    pub x0: f64,
    pub y0: f64,
    pub side: f64,
}

impl CropWindow {
    /// Window of `side` centered at `(cx, cy)`, capped to the frame and
    /// shifted to lie inside it.
    pub fn centered(cx: f64, cy: f64, side: f64, frame_w: usize, frame_h: usize) -> Self {
        let cap = frame_w.min(frame_h) as f64;
        let side = side.max(MIN_SIDE.min(cap)).min(cap);
        let x0 = (cx - side / 2.0).clamp(0.0, frame_w as f64 - side);
        let y0 = (cy - side / 2.0).clamp(0.0, frame_h as f64 - side);
        CropWindow { x0, y0, side }
    }

    pub fn around(b: &BBox, factor: f64, frame_w: usize, frame_h: usize) -> Self {
        let (cx, cy) = b.center();
        Self::centered(cx, cy, factor * b.max_side(), frame_w, frame_h)
    }

    /// Frame box -> normalized `x1, y1, x2, y2` inside the window.
    pub fn to_local(&self, b: &BBox) -> [f64; 4] {
        [
            (b.x - self.x0) / self.side,
            (b.y - self.y0) / self.side,
            (b.x2() - self.x0) / self.side,
            (b.y2() - self.y0) / self.side,
        ]
    }

    /// Normalized corners -> frame box.
    pub fn to_frame(&self, c: [f64; 4]) -> BBox {
        BBox::from_corners(
            self.x0 + c[0] * self.side,
            self.y0 + c[1] * self.side,
            self.x0 + c[2] * self.side,
            self.y0 + c[3] * self.side,
        )
    }
}

/// Resamples `win` to an `out x out` image `[3, out, out]` with values in
/// `[0, 1]`. Samples outside the frame replicate the border.
pub fn crop(frame: &RgbFrame, win: &CropWindow, out: usize) -> Tensor {
    let (w, h) = (frame.width, frame.height);
    let scale = win.side / out as f64;
    let plane = out * out;
    let mut data = vec![0.0; 3 * plane];
    let taps = |p: f64, n: usize| -> (usize, usize, f64) {
        let p = p.clamp(0.0, (n - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, p - i0 as f64)
    };
    for v in 0..out {
        let sy = win.y0 + (v as f64 + 0.5) * scale - 0.5;
        let (y0, y1, fy) = taps(sy, h);
        for u in 0..out {
            let sx = win.x0 + (u as f64 + 0.5) * scale - 0.5;
            let (x0, x1, fx) = taps(sx, w);
            let p00 = frame.pixel(x0, y0);
            let p01 = frame.pixel(x1, y0);
            let p10 = frame.pixel(x0, y1);
            let p11 = frame.pixel(x1, y1);
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - fx) + p01[c] as f64 * fx;
                let bot = p10[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                data[c * plane + v * out + u] = (top * (1.0 - fy) + bot * fy) / 255.0;
            }
        }
    }
    Tensor::new(vec![3, out, out], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_capped_and_inside_frame() {
        let b = BBox::new(55.0, 2.0, 10.0, 6.0).unwrap();
        let w = CropWindow::around(&b, SEARCH_FACTOR, 64, 48);
        assert_eq!(w.side, 40.0);
        assert_eq!(w.x0, 24.0);
        assert_eq!(w.y0, 0.0);
        let big = CropWindow::around(&b, 10.0, 64, 48);
        assert_eq!(big.side, 48.0);
        let tiny = CropWindow::around(&BBox::new(5.0, 5.0, 1.0, 1.0).unwrap(), 2.0, 64, 64);
        assert_eq!(tiny.side, 8.0);
    }

    #[test]
    fn local_frame_round_trip() {
        let w = CropWindow {
            x0: 10.0,
            y0: 4.0,
            side: 20.0,
        };
        let b = BBox::new(15.0, 9.0, 4.0, 6.0).unwrap();
        let back = w.to_frame(w.to_local(&b));
        for (a, c) in [(back.x, b.x), (back.y, b.y), (back.w, b.w), (back.h, b.h)] {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_crop_reproduces_pixels() {
        let mut f = RgbFrame::filled(8, 8, [0, 0, 0]);
        f.put_pixel(3, 5, [255, 128, 0]);
        let t = crop(
            &f,
            &CropWindow {
                x0: 0.0,
                y0: 0.0,
                side: 8.0,
            },
            8,
        );
        assert_eq!(t.data[5 * 8 + 3], 1.0);
        assert!((t.data[64 + 5 * 8 + 3] - 128.0 / 255.0).abs() < 1e-12);
        assert_eq!(t.data[5 * 8 + 4], 0.0);
    }
}
