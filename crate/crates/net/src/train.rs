//! Training: sample construction, the three loss terms, and the joint and
//! two-stage schedules.

use std::time::Instant;

use exitrack_core::dataset::Sequence;
use exitrack_core::geometry::BBox;
use exitrack_core::kv::KvMap;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::crop::{crop, CropWindow, SEARCH_FACTOR, TEMPLATE_FACTOR};
use crate::error::NetError;
use crate::graph::{Graph, Tensor, Var};
use crate::model::{LossWeights, Outputs, TemplateIn, TrackerNet, TrainMode, Trainable};
use crate::params::{Adam, AdamConfig, Block};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Epochs of the score-head stage in two-stage mode.
    pub stage2_epochs: usize,
    pub samples_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Fraction of samples whose search region comes from a sequence of a
    /// different class (update-score label 0).
    pub neg_fraction: f64,
    /// Largest frame distance between a template and the search frame.
    pub max_frame_gap: usize,
    /// Search-center jitter as a fraction of the box's larger side.
    pub center_jitter: f64,
    /// Log-uniform jitter of the search window side.
    pub scale_jitter: f64,
    /// Validation samples scored after every epoch.
    pub val_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            stage2_epochs: 20,
            samples_per_epoch: 400,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 0.0,
            seed: 0,
            neg_fraction: 0.25,
            max_frame_gap: 50,
            center_jitter: 0.5,
            scale_jitter: 0.15,
            val_samples: 32,
        }
    }
}

fn cfg_err(key: &'static str, msg: &str) -> NetError {
    NetError::Config {
        key,
        msg: msg.to_string(),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.batch_size == 0 {
            return Err(cfg_err("batch_size", "must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(cfg_err("lr", "must be finite and > 0"));
        }
        if !(0.0..=1.0).contains(&self.neg_fraction) {
            return Err(cfg_err("neg_fraction", "must lie in [0, 1]"));
        }
        for (key, v) in [
            ("weight_decay", self.weight_decay),
            ("center_jitter", self.center_jitter),
            ("scale_jitter", self.scale_jitter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(cfg_err(key, "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn write_kv(&self, m: &mut KvMap) {
        m.set("epochs", self.epochs);
        m.set("stage2_epochs", self.stage2_epochs);
        m.set("samples_per_epoch", self.samples_per_epoch);
        m.set("batch_size", self.batch_size);
        m.set("lr", self.lr);
        m.set("weight_decay", self.weight_decay);
        m.set("train_seed", self.seed);
        m.set("neg_fraction", self.neg_fraction);
        m.set("max_frame_gap", self.max_frame_gap);
        m.set("center_jitter", self.center_jitter);
        m.set("scale_jitter", self.scale_jitter);
        m.set("val_samples", self.val_samples);
    }

    pub fn from_kv(m: &KvMap) -> Result<Self, NetError> {
        let d = TrainConfig::default();
        let c = TrainConfig {
            epochs: m.parsed_or("epochs", d.epochs)?,
            stage2_epochs: m.parsed_or("stage2_epochs", d.stage2_epochs)?,
            samples_per_epoch: m.parsed_or("samples_per_epoch", d.samples_per_epoch)?,
            batch_size: m.parsed_or("batch_size", d.batch_size)?,
            lr: m.parsed_or("lr", d.lr)?,
            weight_decay: m.parsed_or("weight_decay", d.weight_decay)?,
            seed: m.parsed_or("train_seed", d.seed)?,
            neg_fraction: m.parsed_or("neg_fraction", d.neg_fraction)?,
            max_frame_gap: m.parsed_or("max_frame_gap", d.max_frame_gap)?,
            center_jitter: m.parsed_or("center_jitter", d.center_jitter)?,
            scale_jitter: m.parsed_or("scale_jitter", d.scale_jitter)?,
            val_samples: m.parsed_or("val_samples", d.val_samples)?,
        };
        c.validate()?;
        Ok(c)
    }
}

/// Supervision for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    /// Ground-truth corners in search-region units; `None` for the exit
    /// sentinel.
    pub gt: Option<[f64; 4]>,
    pub visible: bool,
    pub class: usize,
}

/// Which loss terms a stage optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Objective {
    pub bbox: bool,
    pub scores: bool,
}

impl Objective {
    pub const ALL: Objective = Objective {
        bbox: true,
        scores: true,
    };
    pub const BBOX: Objective = Objective {
        bbox: true,
        scores: false,
    };
    pub const SCORES: Objective = Objective {
        bbox: false,
        scores: true,
    };
}

#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub bbox: Option<Var>,
    pub bce: Option<Var>,
    pub ce: Option<Var>,
}

/// Box loss and OOD cross-entropy on visible samples only; update-score BCE
/// against the visibility label on every sample.
pub fn compute_losses(
    g: &mut Graph,
    out: &Outputs,
    target: &Target,
    w: &LossWeights,
    objective: Objective,
) -> Result<LossTerms, NetError> {
    if target.visible && target.gt.is_none() {
        return Err(NetError::InconsistentLabel);
    }
    let mut terms = Vec::new();
    let mut bbox = None;
    let mut bce = None;
    let mut ce = None;
    if let (true, true, Some(gt)) = (target.visible, objective.bbox, target.gt) {
        let l = g.box_loss(out.corners, gt, w.giou, w.l1);
        bbox = Some(l);
        terms.push(l);
    }
    if objective.scores {
        let label = if target.visible { 1.0 } else { 0.0 };
        let l = g.bce_with_logits(out.update_logit, label);
        bce = Some(l);
        terms.push(g.scale(l, w.bce));
        if target.visible {
            let l = g.cross_entropy(out.f, target.class);
            ce = Some(l);
            terms.push(g.scale(l, w.ce));
        }
    }
    let total = match terms.len() {
        0 => g.constant(Tensor::scalar(0.0)),
        1 => terms[0],
        _ => {
            let mut acc = terms[0];
            for &t in &terms[1..] {
                acc = g.add(acc, t);
            }
            acc
        }
    };
    Ok(LossTerms {
        total,
        bbox,
        bce,
        ce,
    })
}

/// One training example: two template crops, a search crop and its labels.
#[derive(Debug, Clone)]
pub struct Sample {
    pub templates: [Tensor; 2],
    pub search: Tensor,
    pub target: Target,
}

/// Class index lookup against the checkpoint's class list.
pub fn class_index(classes: &[String], label: &str) -> Result<usize, NetError> {
    classes
        .iter()
        .position(|c| c == label)
        .ok_or_else(|| NetError::UnknownClass(label.to_string()))
}

/// Sorted distinct class labels of a set of sequences.
pub fn class_list(seqs: &[Sequence]) -> Vec<String> {
    let mut v: Vec<String> = seqs.iter().map(|s| s.class_label.clone()).collect();
    v.sort();
    v.dedup();
    v
}

struct Sampler<'a> {
    seqs: &'a [Sequence],
    classes: Vec<usize>,
    visible: Vec<Vec<usize>>,
    net: &'a TrackerNet,
    cfg: &'a TrainConfig,
}

impl<'a> Sampler<'a> {
    fn new(
        net: &'a TrackerNet,
        class_names: &[String],
        seqs: &'a [Sequence],
        cfg: &'a TrainConfig,
    ) -> Result<Self, NetError> {
        let mut classes = Vec::with_capacity(seqs.len());
        let mut visible = Vec::with_capacity(seqs.len());
        for s in seqs {
            classes.push(class_index(class_names, &s.class_label)?);
            visible.push(
                s.annotations
                    .iter()
                    .filter(|a| a.is_visible())
                    .map(|a| a.frame_index)
                    .collect(),
            );
        }
        Ok(Sampler {
            seqs,
            classes,
            visible,
            net,
            cfg,
        })
    }

    fn search_window<R: Rng>(&self, rng: &mut R, b: &BBox, fw: usize, fh: usize) -> CropWindow {
        let m = b.max_side();
        let j = self.cfg.center_jitter;
        let (cx, cy) = b.center();
        let dx = if j > 0.0 {
            rng.random_range(-j..=j) * m
        } else {
            0.0
        };
        let dy = if j > 0.0 {
            rng.random_range(-j..=j) * m
        } else {
            0.0
        };
        let s = self.cfg.scale_jitter;
        let ls = if s > 0.0 {
            rng.random_range(-s..=s)
        } else {
            0.0
        };
        CropWindow::centered(cx + dx, cy + dy, SEARCH_FACTOR * m * ls.exp(), fw, fh)
    }

    fn draw<R: Rng>(&self, rng: &mut R, negative: bool) -> Sample {
        let nc = &self.net.cfg;
        let i = rng.random_range(0..self.seqs.len());
        let seq = &self.seqs[i];
        let t = *self.visible[i]
            .choose(rng)
            .expect("sequences start visible");
        let gap = self.cfg.max_frame_gap;
        let near: Vec<usize> = self.visible[i]
            .iter()
            .copied()
            .filter(|&u| u + gap >= t && u <= t + gap)
            .collect();
        let templates = [0, 1].map(|_| {
            let u = *near.choose(rng).expect("t itself is near");
            let f = &seq.frames[u];
            let b = seq.annotations[u].bbox;
            crop(
                f,
                &CropWindow::around(&b, TEMPLATE_FACTOR, f.width, f.height),
                nc.template_size,
            )
        });
        let negative_source = if negative {
            let others: Vec<usize> = (0..self.seqs.len())
                .filter(|&j| self.classes[j] != self.classes[i])
                .collect();
            others.choose(rng).copied()
        } else {
            None
        };
        match negative_source {
            Some(j) => {
                let u = *self.visible[j]
                    .choose(rng)
                    .expect("sequences start visible");
                let f = &self.seqs[j].frames[u];
                let b = self.seqs[j].annotations[u].bbox;
                let win = self.search_window(rng, &b, f.width, f.height);
                Sample {
                    templates,
                    search: crop(f, &win, nc.search_size),
                    target: Target {
                        gt: None,
                        visible: false,
                        class: self.classes[i],
                    },
                }
            }
            None => {
                let f = &seq.frames[t];
                let b = seq.annotations[t].bbox;
                let win = self.search_window(rng, &b, f.width, f.height);
                Sample {
                    templates,
                    search: crop(f, &win, nc.search_size),
                    target: Target {
                        gt: Some(win.to_local(&b)),
                        visible: true,
                        class: self.classes[i],
                    },
                }
            }
        }
    }
}

/// Loss values of one sample and, when requested, its parameter gradients.
pub struct SampleResult {
    pub total: f64,
    pub bbox: f64,
    pub bce: f64,
    pub ce: f64,
    pub grads: Vec<(usize, Vec<f64>)>,
}

pub fn run_sample(
    net: &TrackerNet,
    sample: &Sample,
    trainable: Trainable,
    objective: Objective,
    with_grad: bool,
) -> Result<SampleResult, NetError> {
    let mut g = Graph::new();
    let x = g.constant(sample.search.clone());
    let out = net.forward(
        &mut g,
        trainable,
        [
            TemplateIn::Image(&sample.templates[0]),
            TemplateIn::Image(&sample.templates[1]),
        ],
        x,
    )?;
    let terms = compute_losses(
        &mut g,
        &out,
        &sample.target,
        &net.cfg.loss_weights,
        objective,
    )?;
    let val = |v: Option<Var>| v.map_or(0.0, |v| g.data(v)[0]);
    let mut r = SampleResult {
        total: g.data(terms.total)[0],
        bbox: val(terms.bbox),
        bce: val(terms.bce),
        ce: val(terms.ce),
        grads: Vec::new(),
    };
    if with_grad {
        g.backward(terms.total);
        r.grads = g.param_grads().map(|(i, d)| (i, d.to_vec())).collect();
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRecord {
    pub stage: u8,
    pub epoch: usize,
    pub loss: f64,
    pub loss_bbox: f64,
    pub loss_bce: f64,
    pub loss_ce: f64,
    pub val_loss: Option<f64>,
    pub wall_s: f64,
}

impl TrainLogRecord {
    pub fn to_json_line(&self) -> String {
        json!({
            "stage": self.stage,
            "epoch": self.epoch,
            "loss": self.loss,
            "loss_bbox": self.loss_bbox,
            "loss_bce": self.loss_bce,
            "loss_ce": self.loss_ce,
            "val_loss": self.val_loss,
            "wall_s": self.wall_s,
        })
        .to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub records: Vec<TrainLogRecord>,
    /// Box-path block checksums before and after the score-head stage
    /// (two-stage mode only).
    pub frozen_checksums: Option<(Vec<u64>, Vec<u64>)>,
}

fn box_path_checksums(net: &TrackerNet) -> Vec<u64> {
    Block::ALL
        .iter()
        .filter(|b| b.is_box_path())
        .map(|&b| net.params.checksum(b))
        .collect()
}

/// Trains `net` in place according to its configured mode. `classes` is the
/// class list whose order defines the OOD head's outputs. `on_record` is
/// called once per finished epoch.
pub fn train(
    net: &mut TrackerNet,
    classes: &[String],
    train_seqs: &[Sequence],
    val_seqs: &[Sequence],
    cfg: &TrainConfig,
    on_record: &mut dyn FnMut(&TrainLogRecord),
) -> Result<TrainReport, NetError> {
    cfg.validate()?;
    if classes.len() != net.cfg.n_classes {
        return Err(NetError::Dimension {
            what: "class list",
            got: classes.len(),
            expected: net.cfg.n_classes,
        });
    }
    if train_seqs.is_empty() {
        return Err(NetError::NoData("empty training set".into()));
    }
    if let Some(s) = train_seqs.iter().find(|s| s.has_exit()) {
        return Err(NetError::NoData(format!(
            "training sequence `{}` contains exit frames",
            s.id
        )));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let val_set = match val_seqs.iter().filter(|s| !s.has_exit()).count() {
        0 => Vec::new(),
        _ => {
            let id: Vec<Sequence> = val_seqs.iter().filter(|s| !s.has_exit()).cloned().collect();
            let sampler = Sampler::new(net, classes, &id, cfg)?;
            let mut vr = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e_ed0f_7a11);
            (0..cfg.val_samples)
                .map(|_| sampler.draw(&mut vr, false))
                .collect()
        }
    };

    let mut records = Vec::new();
    let mut frozen_checksums = None;
    let stages: Vec<(u8, usize, Trainable, Objective)> = match net.cfg.train_mode {
        TrainMode::Joint => vec![(1, cfg.epochs, Trainable::ALL, Objective::ALL)],
        TrainMode::TwoStage => vec![
            (1, cfg.epochs, Trainable::ALL, Objective::BBOX),
            (
                2,
                cfg.stage2_epochs,
                Trainable::SCORE_HEADS,
                Objective::SCORES,
            ),
        ],
    };
    for (stage, epochs, trainable, objective) in stages {
        let before = (stage == 2).then(|| box_path_checksums(net));
        let mut opt = Adam::new(
            AdamConfig {
                lr: cfg.lr,
                weight_decay: cfg.weight_decay,
                ..Default::default()
            },
            &net.params,
        );
        // Negatives only supervise the update score.
        let neg_fraction = if objective.scores {
            cfg.neg_fraction
        } else {
            0.0
        };
        for epoch in 0..epochs {
            let sampler = Sampler::new(net, classes, train_seqs, cfg)?;
            let mut sums = [0.0; 4];
            let mut seen = 0usize;
            let n_batches = cfg.samples_per_epoch.div_ceil(cfg.batch_size);
            let mut batches = Vec::with_capacity(n_batches);
            for _ in 0..n_batches {
                let batch: Vec<Sample> = (0..cfg.batch_size)
                    .map(|_| {
                        let neg = rng.random::<f64>() < neg_fraction;
                        sampler.draw(&mut rng, neg)
                    })
                    .collect();
                batches.push(batch);
            }
            drop(sampler);
            for (step, batch) in batches.iter().enumerate() {
                let mut grads: Vec<Option<Vec<f64>>> = vec![None; net.params.len()];
                let inv = 1.0 / batch.len() as f64;
                for sample in batch {
                    let r = run_sample(net, sample, trainable, objective, true)?;
                    if !r.total.is_finite() {
                        return Err(NetError::Divergence {
                            stage,
                            epoch,
                            step,
                            loss: r.total,
                        });
                    }
                    sums[0] += r.total;
                    sums[1] += r.bbox;
                    sums[2] += r.bce;
                    sums[3] += r.ce;
                    seen += 1;
                    for (i, gr) in r.grads {
                        let slot = grads[i].get_or_insert_with(|| vec![0.0; gr.len()]);
                        for (a, b) in slot.iter_mut().zip(&gr) {
                            *a += b * inv;
                        }
                    }
                }
                if let Some(&v) = grads.iter().flatten().flatten().find(|v| !v.is_finite()) {
                    return Err(NetError::Divergence {
                        stage,
                        epoch,
                        step,
                        loss: v,
                    });
                }
                opt.step(&mut net.params, &grads);
            }
            let val_loss = if val_set.is_empty() {
                None
            } else {
                let mut s = 0.0;
                for sample in &val_set {
                    s += run_sample(net, sample, Trainable::NONE, objective, false)?.total;
                }
                Some(s / val_set.len() as f64)
            };
            let n = seen.max(1) as f64;
            let rec = TrainLogRecord {
                stage,
                epoch,
                loss: sums[0] / n,
                loss_bbox: sums[1] / n,
                loss_bce: sums[2] / n,
                loss_ce: sums[3] / n,
                val_loss,
                wall_s: started.elapsed().as_secs_f64(),
            };
            on_record(&rec);
            records.push(rec);
        }
        if let Some(b) = before {
            frozen_checksums = Some((b, box_path_checksums(net)));
        }
    }
    Ok(TrainReport {
        records,
        frozen_checksums,
    })
}
