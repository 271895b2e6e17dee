//! Test-time OOD scoring: the input gradient of the score, the perturbed
//! re-score, and the validation drivers that pick epsilon and phi.

use exitrack_core::dataset::Sequence;
use exitrack_core::ood::{
    pairwise_sum, perturb_with_gradient, select_epsilon_from_sums, ExitDecider, OodError,
    PerturbConfig, ScoreVariant,
};

use crate::crop::{crop, CropWindow, SEARCH_FACTOR, TEMPLATE_FACTOR};
use crate::error::NetError;
use crate::graph::{Graph, Tensor, Var};
use crate::model::{HeadValues, Outputs, TemplateIn, TrackerNet, Trainable};
use crate::track::track_sequence;

fn score_var(g: &mut Graph, o: &Outputs, variant: ScoreVariant) -> Var {
    match variant {
        ScoreVariant::MaxH => g.max_elem(o.h),
        ScoreVariant::G => o.g,
    }
}

/// Head values, `S(x)` and `dS/dx` for one search crop.
pub fn score_gradient(
    net: &TrackerNet,
    z_tokens: [&Tensor; 2],
    x: &Tensor,
    variant: ScoreVariant,
) -> Result<(HeadValues, f64, Vec<f64>), NetError> {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let o = net.forward(
        &mut g,
        Trainable::NONE,
        [
            TemplateIn::Tokens(z_tokens[0]),
            TemplateIn::Tokens(z_tokens[1]),
        ],
        xv,
    )?;
    let s = score_var(&mut g, &o, variant);
    let heads = HeadValues::read(&g, &o);
    let sv = g.data(s)[0];
    g.backward(s);
    let grad = g
        .grad(xv)
        .map_or_else(|| vec![0.0; x.len()], <[f64]>::to_vec);
    Ok((heads, sv, grad))
}

/// `S(x)` without gradients.
pub fn score_only(
    net: &TrackerNet,
    z_tokens: [&Tensor; 2],
    x: &Tensor,
    variant: ScoreVariant,
) -> Result<f64, NetError> {
    let h = net.infer(z_tokens, x)?;
    Ok(exitrack_core::ood::score(&h.h, h.g, variant)?)
}

/// Perturbed copy of `x` (pixel range `[0, 1]`).
pub fn perturb(x: &Tensor, grad: &[f64], epsilon: f64) -> Result<Tensor, NetError> {
    let d = perturb_with_gradient(&x.data, grad, epsilon, 0.0, 1.0)?;
    Ok(Tensor::new(x.shape.clone(), d))
}

/// Head values on `x` and the score of the perturbed input `S(x_hat)`.
pub fn perturbed_score(
    net: &TrackerNet,
    z_tokens: [&Tensor; 2],
    x: &Tensor,
    variant: ScoreVariant,
    epsilon: f64,
) -> Result<(HeadValues, f64), NetError> {
    if epsilon == 0.0 {
        let h = net.infer(z_tokens, x)?;
        let s = exitrack_core::ood::score(&h.h, h.g, variant)?;
        return Ok((h, s));
    }
    let (heads, _, grad) = score_gradient(net, z_tokens, x, variant)?;
    let xh = perturb(x, &grad, epsilon)?;
    Ok((heads, score_only(net, z_tokens, &xh, variant)?))
}

/// Search crops of in-distribution validation frames: every `stride`-th
/// visible frame, window centered on the ground truth, templates from the
/// first frame. At most `max_crops` are returned.
pub fn validation_crops(
    net: &TrackerNet,
    val_id: &[&Sequence],
    stride: usize,
    max_crops: usize,
) -> Result<Vec<([Tensor; 2], Tensor)>, NetError> {
    let mut out = Vec::new();
    let stride = stride.max(1);
    for seq in val_id {
        if out.len() >= max_crops {
            break;
        }
        let f0 = &seq.frames[0];
        let b0 = seq.annotations[0].bbox;
        let zwin = CropWindow::around(&b0, TEMPLATE_FACTOR, f0.width, f0.height);
        let z = net.template_tokens(&crop(f0, &zwin, net.cfg.template_size))?;
        for ann in seq.annotations.iter().step_by(stride) {
            if out.len() >= max_crops {
                break;
            }
            if !ann.is_visible() {
                continue;
            }
            let f = &seq.frames[ann.frame_index];
            let win = CropWindow::around(&ann.bbox, SEARCH_FACTOR, f.width, f.height);
            out.push(([z.clone(), z.clone()], crop(f, &win, net.cfg.search_size)));
        }
    }
    Ok(out)
}

/// Picks epsilon from the grid by the summed perturbed score over the given
/// crops. Returns the chosen value and the per-grid sums.
pub fn select_epsilon(
    net: &TrackerNet,
    crops: &[([Tensor; 2], Tensor)],
    cfg: &PerturbConfig,
) -> Result<(f64, Vec<f64>), NetError> {
    cfg.validate()?;
    if crops.is_empty() {
        return Err(OodError::EmptyValidation.into());
    }
    let mut per_eps = vec![Vec::with_capacity(crops.len()); cfg.epsilon_grid.len()];
    for (z, x) in crops {
        let (_, _, grad) = score_gradient(net, [&z[0], &z[1]], x, cfg.score_variant)?;
        for (k, &eps) in cfg.epsilon_grid.iter().enumerate() {
            let xh = perturb(x, &grad, eps)?;
            per_eps[k].push(score_only(net, [&z[0], &z[1]], &xh, cfg.score_variant)?);
        }
    }
    let sums: Vec<f64> = per_eps.iter().map(|v| pairwise_sum(v)).collect();
    let eps = select_epsilon_from_sums(&cfg.epsilon_grid, &sums)?;
    Ok((eps, sums))
}

/// Everything needed to turn network outputs into exit flags.
#[derive(Debug, Clone, PartialEq)]
pub struct OodMonitor {
    pub variant: ScoreVariant,
    pub epsilon: f64,
    pub decider: ExitDecider,
}

impl OodMonitor {
    pub fn from_config(p: &PerturbConfig, decider: ExitDecider) -> Result<Self, NetError> {
        let epsilon = p.epsilon_star.ok_or_else(|| NetError::Config {
            key: "epsilon_star",
            msg: "not calibrated".into(),
        })?;
        decider.validate()?;
        Ok(OodMonitor {
            variant: p.score_variant,
            epsilon,
            decider,
        })
    }
}

/// Tracks each in-distribution validation sequence with the perturbed score
/// and sets `decider.phi` to the configured quantile of the smoothed scores.
pub fn calibrate_phi(
    net: &TrackerNet,
    val_id: &[&Sequence],
    variant: ScoreVariant,
    epsilon: f64,
    decider: &mut ExitDecider,
) -> Result<f64, NetError> {
    if val_id.is_empty() {
        return Err(OodError::EmptyValidation.into());
    }
    let probe = OodMonitor {
        variant,
        epsilon,
        decider: ExitDecider {
            phi: f64::NEG_INFINITY,
            ..decider.clone()
        },
    };
    let mut series = Vec::with_capacity(val_id.len());
    for seq in val_id {
        let r = track_sequence(net, seq, Some(&probe))?;
        series.push(r.trace.expect("monitor supplied").raw);
    }
    Ok(decider.calibrate(&series)?)
}

/// Validation sampling for [`calibrate`].
pub const CALIBRATION_CROP_STRIDE: usize = 6;
pub const CALIBRATION_MAX_CROPS: usize = 200;

/// Picks epsilon on validation crops, then phi on full validation tracks.
/// Returns the monitor and the per-grid score sums.
pub fn calibrate(
    net: &TrackerNet,
    val_id: &[&Sequence],
    cfg: &PerturbConfig,
    decider: &ExitDecider,
) -> Result<(OodMonitor, Vec<f64>), NetError> {
    let crops = validation_crops(net, val_id, CALIBRATION_CROP_STRIDE, CALIBRATION_MAX_CROPS)?;
    let (epsilon, sums) = select_epsilon(net, &crops, cfg)?;
    let mut decider = decider.clone();
    calibrate_phi(net, val_id, cfg.score_variant, epsilon, &mut decider)?;
    Ok((
        OodMonitor {
            variant: cfg.score_variant,
            epsilon,
            decider,
        },
        sums,
    ))
}
