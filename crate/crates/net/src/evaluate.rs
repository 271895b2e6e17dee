//! Per-sequence predictions for the two exit systems: the OOD monitor and
//! the template-update-score baseline.

use exitrack_core::dataset::Sequence;
use exitrack_core::metrics::{baseline_exit_from_template_score, SequencePrediction};
use exitrack_core::ood::OodTrace;

use crate::error::NetError;
use crate::model::TrackerNet;
use crate::perturb::OodMonitor;
use crate::track::track_sequence;

#[derive(Debug, Clone)]
pub struct SequenceEval {
    /// Monitored run: visibility score is the smoothed perturbed score.
    pub ood: SequencePrediction,
    /// Plain run: visibility score is the template-update score.
    pub template: SequencePrediction,
    pub trace: OodTrace,
}

pub fn evaluate_sequence(
    net: &TrackerNet,
    seq: &Sequence,
    monitor: &OodMonitor,
) -> Result<SequenceEval, NetError> {
    let gated = track_sequence(net, seq, Some(monitor))?;
    let trace = gated.trace.expect("monitor supplied");
    let plain = track_sequence(net, seq, None)?;
    let ood = SequencePrediction {
        boxes: gated.raw_boxes,
        pred_visible: trace.decisions.iter().map(|&exit| !exit).collect(),
        scores: trace.smoothed.clone(),
    };
    let template = SequencePrediction {
        pred_visible: baseline_exit_from_template_score(&plain.update_scores),
        boxes: plain.raw_boxes,
        scores: plain.update_scores,
    };
    Ok(SequenceEval {
        ood,
        template,
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
    fn rows_align_with_frames() {
        let net = TrackerNet::new(NetConfig {
            feature_dim: 8,
            box_hidden: 4,
            ..Default::default()
        })
        .unwrap();
        let seq = generate(&SceneSpec {
            n_frames: 12,
            ..Default::default()
        })
        .unwrap();
        let m = OodMonitor {
            variant: Default::default(),
            epsilon: 0.01,
            decider: ExitDecider::default(),
        };
        let e = evaluate_sequence(&net, &seq, &m).unwrap();
        for p in [&e.ood, &e.template] {
            assert_eq!(p.boxes.len(), seq.len());
            assert_eq!(p.scores.len(), seq.len());
            assert_eq!(p.pred_visible.len(), seq.len());
        }
        // phi = -inf never flags exit
        assert!(e.ood.pred_visible.iter().all(|&v| v));
        assert_eq!(e.ood.scores, e.trace.smoothed);
    }
}
