//! Central finite-difference checks of the analytic gradients.

use exitrack_core::ood::ScoreVariant;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::NetError;
use crate::graph::{Graph, Tensor};
use crate::model::{TemplateIn, TrackerNet, Trainable};
use crate::train::{compute_losses, Objective, Sample};

pub const STEP: f64 = 1e-5;
/// Gradients below this magnitude are compared absolutely.
pub const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Box,
    Bce,
    Ce,
    Total,
    Score(ScoreVariant),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub term: Term,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Largest analytic magnitude among the checked coordinates.
    pub max_abs_grad: f64,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Summed value of `term` over `samples` and, optionally, per-parameter
/// gradients.
fn evaluate(
    net: &TrackerNet,
    samples: &[Sample],
    term: Term,
    with_grad: bool,
) -> Result<(f64, Vec<Vec<f64>>), NetError> {
    let mut total = 0.0;
    let mut grads: Vec<Vec<f64>> = net
        .params
        .iter()
        .map(|p| vec![0.0; p.value.len()])
        .collect();
    for s in samples {
        let mut g = Graph::new();
        let x = g.constant(s.search.clone());
        let trainable = if with_grad {
            Trainable::ALL
        } else {
            Trainable::NONE
        };
        let o = net.forward(
            &mut g,
            trainable,
            [
                TemplateIn::Image(&s.templates[0]),
                TemplateIn::Image(&s.templates[1]),
            ],
            x,
        )?;
        let root = match term {
            Term::Score(ScoreVariant::MaxH) => Some(g.max_elem(o.h)),
            Term::Score(ScoreVariant::G) => Some(o.g),
            _ => {
                let l =
                    compute_losses(&mut g, &o, &s.target, &net.cfg.loss_weights, Objective::ALL)?;
                match term {
                    Term::Box => l.bbox,
                    Term::Bce => l.bce,
                    Term::Ce => l.ce,
                    _ => Some(l.total),
                }
            }
        };
        let Some(root) = root else { continue };
        total += g.data(root)[0];
        if with_grad {
            g.backward(root);
            for (i, gr) in g.param_grads() {
                grads[i].iter_mut().zip(gr).for_each(|(a, b)| *a += b);
            }
        }
    }
    Ok((total, grads))
}

/// Compares parameter gradients of `term` with central differences on up to
/// `per_param` random coordinates of every parameter tensor.
pub fn check_params(
    net: &TrackerNet,
    samples: &[Sample],
    term: Term,
    per_param: usize,
    seed: u64,
) -> Result<CheckResult, NetError> {
    let (_, analytic) = evaluate(net, samples, term, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = net.clone();
    let mut max_rel_err: f64 = 0.0;
    let mut max_abs_grad: f64 = 0.0;
    let mut checked = 0;
    for (i, grad) in analytic.iter().enumerate() {
        let n = grad.len();
        for j in sample(&mut rng, n, per_param.min(n)) {
            let v0 = net.params.get(i).value.data[j];
            probe.params.get_mut(i).value.data[j] = v0 + STEP;
            let (up, _) = evaluate(&probe, samples, term, false)?;
            probe.params.get_mut(i).value.data[j] = v0 - STEP;
            let (down, _) = evaluate(&probe, samples, term, false)?;
            probe.params.get_mut(i).value.data[j] = v0;
            let numeric = (up - down) / (2.0 * STEP);
            max_rel_err = max_rel_err.max(rel_err(grad[j], numeric));
            max_abs_grad = max_abs_grad.max(grad[j].abs());
            checked += 1;
        }
    }
    Ok(CheckResult {
        term,
        checked,
        max_rel_err,
        max_abs_grad,
    })
}

/// Compares `dS/dx` with central differences on `n_coords` random pixels.
pub fn check_score_input(
    net: &TrackerNet,
    z_tokens: [&Tensor; 2],
    x: &Tensor,
    variant: ScoreVariant,
    n_coords: usize,
    seed: u64,
) -> Result<CheckResult, NetError> {
    let (_, _, grad) = crate::perturb::score_gradient(net, z_tokens, x, variant)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xp = x.clone();
    let mut max_rel_err: f64 = 0.0;
    let mut max_abs_grad: f64 = 0.0;
    let idx = sample(&mut rng, x.len(), n_coords.min(x.len()));
    for j in idx.iter() {
        let v0 = x.data[j];
        xp.data[j] = v0 + STEP;
        let up = crate::perturb::score_only(net, z_tokens, &xp, variant)?;
        xp.data[j] = v0 - STEP;
        let down = crate::perturb::score_only(net, z_tokens, &xp, variant)?;
        xp.data[j] = v0;
        max_rel_err = max_rel_err.max(rel_err(grad[j], (up - down) / (2.0 * STEP)));
        max_abs_grad = max_abs_grad.max(grad[j].abs());
    }
    Ok(CheckResult {
        term: Term::Score(variant),
        checked: idx.len(),
        max_rel_err,
        max_abs_grad,
    })
}
