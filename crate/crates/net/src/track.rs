//! One-pass tracking with template updates and optional exit monitoring.

use exitrack_core::dataset::{RgbFrame, Sequence};
use exitrack_core::geometry::BBox;
use exitrack_core::ood::{smooth, OodTrace};

use crate::crop::{crop, CropWindow, SEARCH_FACTOR, TEMPLATE_FACTOR};
use crate::error::NetError;
use crate::graph::Tensor;
use crate::model::TrackerNet;
use crate::perturb::{perturbed_score, OodMonitor};

/// Update-score threshold for refreshing the dynamic template.
pub const UPDATE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct TrackerState {
    pub initial_template: Tensor,
    pub dynamic_template: Tensor,
    /// Cached backbone tokens of the two templates.
    z_tokens: [Tensor; 2],
    pub prev_box: BBox,
    pub step: usize,
}

impl TrackerState {
    pub fn init(net: &TrackerNet, frame: &RgbFrame, bbox: BBox) -> Result<Self, NetError> {
        if bbox.is_exit() {
            return Err(NetError::Uninitialized);
        }
        let win = CropWindow::around(&bbox, TEMPLATE_FACTOR, frame.width, frame.height);
        let z = crop(frame, &win, net.cfg.template_size);
        let tok = net.template_tokens(&z)?;
        Ok(TrackerState {
            initial_template: z.clone(),
            dynamic_template: z,
            z_tokens: [tok.clone(), tok],
            prev_box: bbox,
            step: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Predicted box in frame coordinates.
    pub bbox: BBox,
    /// Predicted corners in search-region units.
    pub bbox_search: [f64; 4],
    pub window: CropWindow,
    pub update_score: f64,
    pub ood_logits: Vec<f64>,
    pub ood_h: Vec<f64>,
    pub ood_g: f64,
    /// `S(x_hat)` when a monitor is attached.
    pub ood_score: Option<f64>,
    /// Moving average of `S(x_hat)` up to this frame.
    pub ood_smoothed: Option<f64>,
    pub exit: bool,
    pub template_refreshed: bool,
}

/// Whether the dynamic template is re-cropped at frame `t`.
pub fn should_refresh(t: usize, period: usize, update_score: f64) -> bool {
    t > 0 && period > 0 && t.is_multiple_of(period) && update_score > UPDATE_THRESHOLD
}

/// Online smoothing and thresholding of the perturbed scores.
#[derive(Debug, Clone)]
pub struct ExitGate<'a> {
    pub monitor: &'a OodMonitor,
    raw: Vec<f64>,
}

impl<'a> ExitGate<'a> {
    pub fn new(monitor: &'a OodMonitor) -> Self {
        ExitGate {
            monitor,
            raw: Vec::new(),
        }
    }

    /// Appends a raw score; returns the smoothed value and the exit flag.
    pub fn push(&mut self, raw: f64) -> (f64, bool) {
        self.raw.push(raw);
        let w = self.monitor.decider.window.max(1);
        let lo = self.raw.len().saturating_sub(w);
        let s = *smooth(&self.raw[lo..], w).last().expect("just pushed");
        (s, s < self.monitor.decider.phi)
    }
}

/// Runs the network on `frame` around the previous box and advances the
/// state. On a flagged exit the state keeps its last box and templates, so
/// the search region waits where the target was last seen.
pub fn step(
    net: &TrackerNet,
    state: &mut TrackerState,
    frame: &RgbFrame,
    gate: Option<&mut ExitGate>,
) -> Result<StepOutput, NetError> {
    let win = CropWindow::around(&state.prev_box, SEARCH_FACTOR, frame.width, frame.height);
    let x = crop(frame, &win, net.cfg.search_size);
    let z = [&state.z_tokens[0], &state.z_tokens[1]];
    let (heads, ood_score, ood_smoothed, exit) = match gate {
        Some(gate) => {
            let m = gate.monitor;
            let (h, s) = perturbed_score(net, z, &x, m.variant, m.epsilon)?;
            let (sm, exit) = gate.push(s);
            (h, Some(s), Some(sm), exit)
        }
        None => (net.infer(z, &x)?, None, None, false),
    };
    let bbox = win.to_frame(heads.corners);
    let t = state.step;
    let refresh = !exit && should_refresh(t, net.cfg.template_update_period, heads.update_score);
    if refresh {
        let zwin = CropWindow::around(&bbox, TEMPLATE_FACTOR, frame.width, frame.height);
        state.dynamic_template = crop(frame, &zwin, net.cfg.template_size);
        state.z_tokens[1] = net.template_tokens(&state.dynamic_template)?;
    }
    if !exit {
        state.prev_box = bbox;
    }
    state.step += 1;
    Ok(StepOutput {
        bbox,
        bbox_search: heads.corners,
        window: win,
        update_score: heads.update_score,
        ood_logits: heads.f,
        ood_h: heads.h,
        ood_g: heads.g,
        ood_score,
        ood_smoothed,
        exit,
        template_refreshed: refresh,
    })
}

#[derive(Debug, Clone)]
pub struct TrackResult {
    pub outputs: Vec<StepOutput>,
    /// Predicted box per frame before exit gating (frame 0 is the given box).
    pub raw_boxes: Vec<BBox>,
    /// Reported boxes: the exit sentinel wherever the monitor flagged exit.
    pub boxes: Vec<BBox>,
    pub update_scores: Vec<f64>,
    pub trace: Option<OodTrace>,
}

/// One pass over `seq`, initialized from its first ground-truth box. The
/// network also runs on frame 0 so every frame has scores.
pub fn track_sequence(
    net: &TrackerNet,
    seq: &Sequence,
    monitor: Option<&OodMonitor>,
) -> Result<TrackResult, NetError> {
    let first = seq.annotations.first().ok_or(NetError::Uninitialized)?;
    let mut state = TrackerState::init(net, &seq.frames[0], first.bbox)?;
    let mut gate = monitor.map(ExitGate::new);
    let mut outputs = Vec::with_capacity(seq.len());
    let mut raw_boxes = Vec::with_capacity(seq.len());
    for (t, frame) in seq.frames.iter().enumerate() {
        let mut out = step(net, &mut state, frame, gate.as_mut())?;
        if t == 0 {
            out.bbox = first.bbox;
            state.prev_box = first.bbox;
        }
        raw_boxes.push(out.bbox);
        outputs.push(out);
    }
    let update_scores = outputs.iter().map(|o| o.update_score).collect();
    let trace = monitor.map(|m| {
        let raw = outputs
            .iter()
            .map(|o| o.ood_score.unwrap_or(f64::NAN))
            .collect();
        m.decider.trace(raw)
    });
    let boxes = outputs
        .iter()
        .zip(&raw_boxes)
        .map(|(o, b)| if o.exit { BBox::EXIT } else { *b })
        .collect();
    Ok(TrackResult {
        outputs,
        raw_boxes,
        boxes,
        update_scores,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetConfig;
    use exitrack_core::ood::ExitDecider;
    use exitrack_core::synthetic::{generate, SceneSpec};

    #[test]
    fn refresh_rule() {
        assert!(should_refresh(10, 10, 0.7));
        assert!(!should_refresh(10, 10, 0.4));
        assert!(!should_refresh(10, 10, 0.5));
        assert!(!should_refresh(5, 10, 0.9));
        assert!(!should_refresh(0, 10, 0.9));
        let at: Vec<usize> = (0..35).filter(|&t| should_refresh(t, 10, 1.0)).collect();
        assert_eq!(at, vec![10, 20, 30]);
    }

    fn tiny() -> (TrackerNet, Sequence) {
        let net = TrackerNet::new(NetConfig {
            feature_dim: 8,
            box_hidden: 4,
            ..Default::default()
        })
        .unwrap();
        let spec = SceneSpec {
            n_frames: 24,
            exit_windows: vec![exitrack_core::synthetic::ExitWindow { start: 8, end: 14 }],
            ..Default::default()
        };
        (net, generate(&spec).unwrap())
    }

    #[test]
    fn flagged_frames_report_the_sentinel() {
        let (net, seq) = tiny();
        let plain = track_sequence(&net, &seq, None).unwrap();
        assert!(plain.trace.is_none());
        assert_eq!(plain.boxes, plain.raw_boxes);
        assert_eq!(plain.raw_boxes[0], seq.annotations[0].bbox);
        // phi = +inf flags every frame without touching the box path
        let m = OodMonitor {
            variant: Default::default(),
            epsilon: 0.01,
            decider: ExitDecider {
                phi: f64::INFINITY,
                ..Default::default()
            },
        };
        let r = track_sequence(&net, &seq, Some(&m)).unwrap();
        assert!(r.boxes.iter().all(BBox::is_exit));
        // every frame is searched around the initial box
        assert!(r.outputs.iter().all(|o| o.window == r.outputs[0].window));
        assert!(r.outputs.iter().all(|o| !o.template_refreshed));
        let tr = r.trace.unwrap();
        assert_eq!(tr.raw.len(), seq.len());
        assert!(tr.raw.iter().all(|v| v.is_finite()));
        let online: Vec<f64> = r.outputs.iter().map(|o| o.ood_smoothed.unwrap()).collect();
        assert_eq!(online, tr.smoothed);
        // phi = -inf never flags, so the box path matches the plain run
        let m = OodMonitor {
            decider: ExitDecider::default(),
            ..m
        };
        let r = track_sequence(&net, &seq, Some(&m)).unwrap();
        assert_eq!(r.raw_boxes, plain.raw_boxes);
        assert_eq!(r.boxes, plain.boxes);
    }

    #[test]
    fn tracking_is_deterministic() {
        let (net, seq) = tiny();
        let a = track_sequence(&net, &seq, None).unwrap();
        let b = track_sequence(&net, &seq, None).unwrap();
        assert_eq!(a.outputs, b.outputs);
    }
}
