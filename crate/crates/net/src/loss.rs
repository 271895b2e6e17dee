//! Loss values with their analytic input gradients.

use crate::graph::{sigmoid, softmax_into};

/// Softmax cross-entropy; the gradient is `softmax(z) - onehot(class)`.
pub fn cross_entropy(logits: &[f64], class: usize) -> (f64, Vec<f64>) {
    assert!(
        class < logits.len(),
        "class {class} out of {} logits",
        logits.len()
    );
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    let mut grad = vec![0.0; logits.len()];
    softmax_into(logits, &mut grad);
    grad[class] -= 1.0;
    (lse - logits[class], grad)
}

/// Numerically stable BCE on a logit; the gradient is `sigmoid(z) - y`.
pub fn bce_with_logits(z: f64, y: f64) -> (f64, f64) {
    let value = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    (value, sigmoid(z) - y)
}

/// GIoU of two corner boxes. Degenerate predictions count as zero area.
pub fn giou_xyxy(p: [f64; 4], g: [f64; 4]) -> f64 {
    let parts = BoxParts::new(p, g);
    parts.i / parts.u - (parts.c - parts.u) / parts.c
}

struct BoxParts {
    wp: f64,
    hp: f64,
    iw: f64,
    ih: f64,
    cw: f64,
    ch: f64,
    i: f64,
    u: f64,
    c: f64,
}

impl BoxParts {
    fn new(p: [f64; 4], g: [f64; 4]) -> Self {
        let wp = (p[2] - p[0]).max(0.0);
        let hp = (p[3] - p[1]).max(0.0);
        let ag = (g[2] - g[0]) * (g[3] - g[1]);
        let iw = (p[2].min(g[2]) - p[0].max(g[0])).max(0.0);
        let ih = (p[3].min(g[3]) - p[1].max(g[1])).max(0.0);
        let cw = p[2].max(g[2]) - p[0].min(g[0]);
        let ch = p[3].max(g[3]) - p[1].min(g[1]);
        let i = iw * ih;
        let u = (wp * hp + ag - i).max(1e-12);
        let c = (cw * ch).max(1e-12);
        BoxParts {
            wp,
            hp,
            iw,
            ih,
            cw,
            ch,
            i,
            u,
            c,
        }
    }
}

/// `w_giou * (1 - GIoU) + w_l1 * mean|p - g|` and its gradient w.r.t. `p`.
pub fn box_loss(p: [f64; 4], g: [f64; 4], w_giou: f64, w_l1: f64) -> (f64, [f64; 4]) {
    let b = BoxParts::new(p, g);
    let giou = b.i / b.u - (b.c - b.u) / b.c;
    let l1 = p.iter().zip(&g).map(|(a, c)| (a - c).abs()).sum::<f64>() / 4.0;
    let value = w_giou * (1.0 - giou) + w_l1 * l1;

    let d_i = 1.0 / b.u + b.i / (b.u * b.u) - 1.0 / b.c;
    let d_ap = -b.i / (b.u * b.u) + 1.0 / b.c;
    let d_c = -b.u / (b.c * b.c);

    let mut dg = [0.0; 4];
    // Intersection
    if b.iw > 0.0 && b.ih > 0.0 {
        if p[0] > g[0] {
            dg[0] -= d_i * b.ih;
        }
        if p[2] < g[2] {
            dg[2] += d_i * b.ih;
        }
        if p[1] > g[1] {
            dg[1] -= d_i * b.iw;
        }
        if p[3] < g[3] {
            dg[3] += d_i * b.iw;
        }
    }
    // Predicted area
    if p[2] > p[0] {
        dg[0] -= d_ap * b.hp;
        dg[2] += d_ap * b.hp;
    }
    if p[3] > p[1] {
        dg[1] -= d_ap * b.wp;
        dg[3] += d_ap * b.wp;
    }
    // Enclosing box
    if p[0] < g[0] {
        dg[0] -= d_c * b.ch;
    }
    if p[2] > g[2] {
        dg[2] += d_c * b.ch;
    }
    if p[1] < g[1] {
        dg[1] -= d_c * b.cw;
    }
    if p[3] > g[3] {
        dg[3] += d_c * b.cw;
    }

    let mut grad = [0.0; 4];
    for k in 0..4 {
        let s = if p[k] > g[k] {
            1.0
        } else if p[k] < g[k] {
            -1.0
        } else {
            0.0
        };
        grad[k] = -w_giou * dg[k] + w_l1 * s / 4.0;
    }
    (value, grad)
}
