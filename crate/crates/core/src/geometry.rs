//! Axis-aligned box algebra in the `[x, y, w, h]` pixel convention.
//!
//! A box is either a proper box with positive extent or the exit sentinel
//! `[-1, -1, -1, -1]`, which marks frames where the target is not visible.
//! Coordinates are continuous (sub-pixel).

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("exit sentinel passed where a visible box is required")]
    SentinelArgument,
    #[error("invalid box [{x}, {y}, {w}, {h}]: width and height must be positive")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },
}

/// Smallest side a box built from corners may have.
pub const MIN_SIDE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// The exit sentinel: every field is -1.
    pub const EXIT: BBox = BBox {
        x: -1.0,
        y: -1.0,
        w: -1.0,
        h: -1.0,
    };

    /// Builds a visible box, rejecting non-positive or non-finite extents.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let finite = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite();
        if !finite || w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::InvalidBox { x, y, w, h });
        }
        Ok(BBox { x, y, w, h })
    }

    /// Accepts either the sentinel or a valid visible box.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if x == -1.0 && y == -1.0 && w == -1.0 && h == -1.0 {
            Ok(BBox::EXIT)
        } else {
            BBox::new(x, y, w, h)
        }
    }

    /// Box spanning two corners. Inverted or collapsed extents are widened
    /// to [`MIN_SIDE`] so the result is always a valid visible box.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox {
            x: x1,
            y: y1,
            w: (x2 - x1).max(MIN_SIDE),
            h: (y2 - y1).max(MIN_SIDE),
        }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn is_exit(&self) -> bool {
        *self == BBox::EXIT
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn max_side(&self) -> f64 {
        self.w.max(self.h)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BBox {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    /// Area shared with the rectangle `[0, width] x [0, height]`.
    pub fn visible_area(&self, width: f64, height: f64) -> f64 {
        let ix = (self.x2().min(width) - self.x.max(0.0)).max(0.0);
        let iy = (self.y2().min(height) - self.y.max(0.0)).max(0.0);
        ix * iy
    }

    fn visible(&self) -> Result<&Self, GeometryError> {
        if self.is_exit() {
            Err(GeometryError::SentinelArgument)
        } else {
            Ok(self)
        }
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

fn intersection(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2().min(b.x2()) - a.x.max(b.x)).max(0.0);
    let ih = (a.y2().min(b.y2()) - a.y.max(b.y)).max(0.0);
    iw * ih
}

fn hull_area(a: &BBox, b: &BBox) -> f64 {
    let hw = a.x2().max(b.x2()) - a.x.min(b.x);
    let hh = a.y2().max(b.y2()) - a.y.min(b.y);
    hw * hh
}

/// Intersection over union of two visible boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64, GeometryError> {
    let (a, b) = (a.visible()?, b.visible()?);
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Generalized IoU: `iou - (hull - union) / hull`, where `hull` is the
/// smallest axis-aligned box enclosing both inputs.
pub fn giou(a: &BBox, b: &BBox) -> Result<f64, GeometryError> {
    let (a, b) = (a.visible()?, b.visible()?);
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    let hull = hull_area(a, b);
    Ok(inter / union - (hull - union) / hull)
}

/// Norm applied to the size-normalized center offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CenterNorm {
    /// Euclidean norm (the usual normalized-precision definition).
    #[default]
    L2,
    /// Sum of absolute normalized offsets.
    L1,
}

impl CenterNorm {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "l2" | "L2" => Some(CenterNorm::L2),
            "l1" | "L1" => Some(CenterNorm::L1),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CenterNorm::L2 => "l2",
            CenterNorm::L1 => "l1",
        }
    }
}

/// Distance between box centers with the offset scaled by the ground-truth
/// width and height.
pub fn norm_center_distance(pred: &BBox, gt: &BBox) -> Result<f64, GeometryError> {
    norm_center_distance_with(pred, gt, CenterNorm::L2)
}

pub fn norm_center_distance_with(
    pred: &BBox,
    gt: &BBox,
    norm: CenterNorm,
) -> Result<f64, GeometryError> {
    let (pred, gt) = (pred.visible()?, gt.visible()?);
    let (px, py) = pred.center();
    let (gx, gy) = gt.center();
    let dx = (px - gx) / gt.w;
    let dy = (py - gy) / gt.h;
    Ok(match norm {
        CenterNorm::L2 => dx.hypot(dy),
        CenterNorm::L1 => dx.abs() + dy.abs(),
    })
}
