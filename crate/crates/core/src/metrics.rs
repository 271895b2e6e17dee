//! Box-quality and exit-quality metrics.
//!
//! Box metrics (success AUC, OP75, normalized precision) are computed over
//! frames where the target is visible and the tracker did not declare an
//! exit. Exit metrics treat visible frames as positives and exit frames as
//! negatives, so FPR is the fraction of exit frames reported as visible.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Sequence;
use crate::geometry::{iou, norm_center_distance_with, BBox, CenterNorm, GeometryError};
use crate::kv::KvMap;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("metric undefined: input contains a single class")]
    SingleClass,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// IoU thresholds 0.00, 0.05, ..., 1.00.
pub const SUCCESS_THRESHOLDS: usize = 21;
/// Normalized center-distance thresholds 0.00, 0.01, ..., 0.50.
pub const PRECISION_THRESHOLDS: usize = 51;

fn success_threshold(i: usize) -> f64 {
    i as f64 / 20.0
}

fn precision_threshold(i: usize) -> f64 {
    i as f64 / 100.0
}

/// Fraction of frames with IoU strictly above each threshold.
pub fn success_curve(ious: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if ious.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = ious.len() as f64;
    Ok((0..SUCCESS_THRESHOLDS)
        .map(|i| {
            let tau = success_threshold(i);
            ious.iter().filter(|&&v| v > tau).count() as f64 / n
        })
        .collect())
}

/// Mean of the success curve, in percent.
pub fn success_auc(ious: &[f64]) -> Result<f64, MetricsError> {
    let curve = success_curve(ious)?;
    Ok(100.0 * curve.iter().sum::<f64>() / curve.len() as f64)
}

/// Percentage of frames with IoU > 0.75.
pub fn op75(ious: &[f64]) -> Result<f64, MetricsError> {
    if ious.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(100.0 * ious.iter().filter(|&&v| v > 0.75).count() as f64 / ious.len() as f64)
}

/// Mean over thresholds of the fraction of frames with distance <= threshold, in percent.
pub fn p_norm(distances: &[f64]) -> Result<f64, MetricsError> {
    if distances.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = distances.len() as f64;
    let total: f64 = (0..PRECISION_THRESHOLDS)
        .map(|i| {
            let tau = precision_threshold(i);
            distances.iter().filter(|&&d| d <= tau).count() as f64 / n
        })
        .sum();
    Ok(100.0 * total / PRECISION_THRESHOLDS as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    /// `fp / (fp + tn)`, or `None` when there are no exit frames.
    pub fn fpr(&self) -> Option<f64> {
        let neg = self.fp + self.tn;
        (neg > 0).then(|| self.fp as f64 / neg as f64)
    }

    pub fn tnr(&self) -> Option<f64> {
        let neg = self.fp + self.tn;
        (neg > 0).then(|| self.tn as f64 / neg as f64)
    }

    pub fn n_exit(&self) -> usize {
        self.fp + self.tn
    }

    pub fn add(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

/// Confusion counts with visible = positive, exit = negative.
pub fn exit_confusion(
    pred_visible: &[bool],
    gt_visible: &[bool],
) -> Result<Confusion, MetricsError> {
    if pred_visible.len() != gt_visible.len() {
        return Err(MetricsError::LengthMismatch(
            pred_visible.len(),
            gt_visible.len(),
        ));
    }
    let mut c = Confusion::default();
    for (&p, &g) in pred_visible.iter().zip(gt_visible) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Probability that a random visible frame scores above a random exit frame,
/// ties counted one half (Mann-Whitney U / (n_pos * n_neg)).
///
/// Computed from average ranks in `O(n log n)`.
pub fn auroc(scores: &[f64], gt_visible: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != gt_visible.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), gt_visible.len()));
    }
    let n_pos = gt_visible.iter().filter(|&&v| v).count();
    let n_neg = gt_visible.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based average ranks of positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_tie = idx[i..=j].iter().filter(|&&k| gt_visible[k]).count();
        rank_sum += avg_rank * pos_in_tie as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * q))
}

/// Template-update-score baseline: visible iff score > 0.5.
pub fn baseline_exit_from_template_score(update_scores: &[f64]) -> Vec<bool> {
    update_scores.iter().map(|&s| s > 0.5).collect()
}

/// Per-sequence (or aggregated) evaluation result. `None` marks metrics that
/// are undefined on the evaluated frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub id: String,
    /// Percent.
    pub auc: Option<f64>,
    /// Percent.
    pub op75: Option<f64>,
    /// Percent.
    pub p_norm: Option<f64>,
    pub fpr: Option<f64>,
    pub auroc: Option<f64>,
    pub n_frames: usize,
    pub n_exit_frames: usize,
    pub n_box_frames: usize,
    pub confusion: Confusion,
}

/// Tracker outputs for one sequence, aligned with its frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePrediction {
    /// Raw predicted box for every frame (before exit gating).
    pub boxes: Vec<BBox>,
    /// Whether the system reported the target visible.
    pub pred_visible: Vec<bool>,
    /// Continuous visibility score, higher means more likely visible.
    pub scores: Vec<f64>,
}

impl SequencePrediction {
    fn check(&self, n: usize) -> Result<(), MetricsError> {
        for len in [self.boxes.len(), self.pred_visible.len(), self.scores.len()] {
            if len != n {
                return Err(MetricsError::LengthMismatch(len, n));
            }
        }
        Ok(())
    }
}

/// Per-frame IoUs and center distances over the frames used by box metrics.
pub fn box_frame_stats(
    pred: &SequencePrediction,
    seq: &Sequence,
    norm: CenterNorm,
) -> Result<(Vec<f64>, Vec<f64>), MetricsError> {
    pred.check(seq.len())?;
    let mut ious = Vec::new();
    let mut dists = Vec::new();
    for (t, ann) in seq.annotations.iter().enumerate() {
        if ann.is_visible() && pred.pred_visible[t] {
            ious.push(iou(&pred.boxes[t], &ann.bbox)?);
            dists.push(norm_center_distance_with(&pred.boxes[t], &ann.bbox, norm)?);
        }
    }
    Ok((ious, dists))
}

pub fn evaluate_sequence(
    pred: &SequencePrediction,
    seq: &Sequence,
    norm: CenterNorm,
) -> Result<MetricsReport, MetricsError> {
    let (ious, dists) = box_frame_stats(pred, seq, norm)?;
    let gt = seq.visibility();
    let confusion = exit_confusion(&pred.pred_visible, &gt)?;
    Ok(MetricsReport {
        id: seq.id.clone(),
        auc: success_auc(&ious).ok(),
        op75: op75(&ious).ok(),
        p_norm: p_norm(&dists).ok(),
        fpr: confusion.fpr(),
        auroc: auroc(&pred.scores, &gt).ok(),
        n_frames: seq.len(),
        n_exit_frames: confusion.n_exit(),
        n_box_frames: ious.len(),
        confusion,
    })
}

/// Frame-weighted aggregate over sequences: every frame of every sequence
/// counts once, as if the sequences were concatenated.
pub fn evaluate_dataset(
    id: &str,
    preds: &[SequencePrediction],
    seqs: &[Sequence],
    norm: CenterNorm,
) -> Result<MetricsReport, MetricsError> {
    if preds.len() != seqs.len() {
        return Err(MetricsError::LengthMismatch(preds.len(), seqs.len()));
    }
    if seqs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut ious = Vec::new();
    let mut dists = Vec::new();
    let mut scores = Vec::new();
    let mut gt = Vec::new();
    let mut confusion = Confusion::default();
    for (p, s) in preds.iter().zip(seqs) {
        let (i, d) = box_frame_stats(p, s, norm)?;
        ious.extend(i);
        dists.extend(d);
        let g = s.visibility();
        confusion.add(&exit_confusion(&p.pred_visible, &g)?);
        scores.extend_from_slice(&p.scores);
        gt.extend(g);
    }
    Ok(MetricsReport {
        id: id.to_string(),
        auc: success_auc(&ious).ok(),
        op75: op75(&ious).ok(),
        p_norm: p_norm(&dists).ok(),
        fpr: confusion.fpr(),
        auroc: auroc(&scores, &gt).ok(),
        n_frames: gt.len(),
        n_exit_frames: confusion.n_exit(),
        n_box_frames: ious.len(),
        confusion,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

impl MetricsReport {
    /// Flat key=value form; keys are prefixed with `prefix.` when non-empty.
    pub fn write_kv(&self, prefix: &str, m: &mut KvMap) {
        let k = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        m.set(k("auc"), opt(self.auc));
        m.set(k("op75"), opt(self.op75));
        m.set(k("p_norm"), opt(self.p_norm));
        m.set(k("fpr"), opt(self.fpr));
        m.set(k("auroc"), opt(self.auroc));
        m.set(k("n_frames"), self.n_frames);
        m.set(k("n_exit_frames"), self.n_exit_frames);
        m.set(k("n_box_frames"), self.n_box_frames);
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// Text table with one column per system and rows FPR, AUROC, AUC, OP75, P_norm.
pub fn summary_table(columns: &[(&str, &MetricsReport)]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<10}", "Metric");
    for (name, _) in columns {
        let _ = write!(out, " | {name:>12}");
    }
    out.push('\n');
    type Row = (&'static str, fn(&MetricsReport) -> Option<f64>, usize);
    let rows: [Row; 5] = [
        ("FPR", |r| r.fpr, 2),
        ("AUROC", |r| r.auroc, 2),
        ("AUC (%)", |r| r.auc, 2),
        ("OP75 (%)", |r| r.op75, 2),
        ("P_norm (%)", |r| r.p_norm, 2),
    ];
    for (label, get, digits) in rows {
        let _ = write!(out, "{label:<10}");
        for (_, r) in columns {
            let _ = write!(out, " | {:>12}", cell(get(r), digits));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn success_auc_values() {
        assert_eq!(success_auc(&[0.0, 0.0]).unwrap(), 0.0);
        assert!((success_auc(&[0.5]).unwrap() - 100.0 * 10.0 / 21.0).abs() < 1e-12);
        assert!((success_auc(&[1.0; 3]).unwrap() - 100.0 * 20.0 / 21.0).abs() < 1e-12);
        assert_eq!(success_auc(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn op75_values() {
        assert_eq!(op75(&[0.8, 0.9, 0.5, 0.76]).unwrap(), 75.0);
        assert_eq!(op75(&[0.1, 0.7]).unwrap(), 0.0);
        assert_eq!(op75(&[0.75, 0.75]).unwrap(), 0.0);
        assert_eq!(op75(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn p_norm_values() {
        assert_eq!(p_norm(&[0.0, 0.0]).unwrap(), 100.0);
        assert_eq!(p_norm(&[0.6, 0.51]).unwrap(), 0.0);
        assert!((p_norm(&[0.25]).unwrap() - 100.0 * 26.0 / 51.0).abs() < 1e-12);
    }

    #[test]
    fn confusion_values() {
        let gt = [false, false, false, false, true];
        let c = exit_confusion(&[true, false, false, false, true], &gt).unwrap();
        assert_eq!(c.fpr(), Some(0.25));
        assert_eq!(exit_confusion(&gt, &gt).unwrap().fpr(), Some(0.0));
        assert_eq!(exit_confusion(&[true; 5], &gt).unwrap().fpr(), Some(1.0));
        assert_eq!(exit_confusion(&[true; 2], &[true; 2]).unwrap().fpr(), None);
        assert_eq!(
            exit_confusion(&[true], &[true, false]),
            Err(MetricsError::LengthMismatch(1, 2))
        );
    }

    #[test]
    fn auroc_values() {
        let scores = [0.9, 0.4, 0.5, 0.1];
        let gt = [true, true, false, false];
        assert!((auroc(&scores, &gt).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(auroc(&[3.0, 4.0, 1.0], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.2; 4], &gt).unwrap(), 0.5);
        assert_eq!(auroc(&[0.2; 2], &[true; 2]), Err(MetricsError::SingleClass));
    }

    #[test]
    fn baseline_threshold() {
        assert_eq!(
            baseline_exit_from_template_score(&[0.5022, 0.4247, 0.5]),
            vec![true, false, false]
        );
    }
}
