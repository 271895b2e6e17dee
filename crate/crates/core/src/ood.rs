//! Model-independent parts of exit detection: the OOD score function, the
//! sign-gradient input perturbation, epsilon selection, moving-average
//! smoothing, threshold calibration and the per-frame exit decision.
//!
//! The gradient itself comes from the network; see the `net` crate for the
//! drivers that run a model over validation sequences.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::kv::{format_list, parse_list, KvError, KvMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OodError {
    #[error("empty class-score vector")]
    EmptyScores,
    #[error("empty validation set")]
    EmptyValidation,
    #[error("non-finite gradient at element {index}: {value}")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("epsilon grid must be nonempty, positive and strictly ascending")]
    BadGrid,
    #[error("{0} sums for a grid of {1}")]
    SumsMismatch(usize, usize),
    #[error("invalid decider: {0}")]
    BadDecider(String),
    #[error("quantile {0} outside [0, 1]")]
    BadQuantile(f64),
    #[error("bad trace record at line {line}: {msg}")]
    TraceParse { line: usize, msg: String },
    #[error(transparent)]
    Kv(#[from] KvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreVariant {
    /// `max_i h_i(x)`.
    #[default]
    MaxH,
    /// The domain score `g(x)`.
    G,
}

impl fmt::Display for ScoreVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreVariant::MaxH => "max_h",
            ScoreVariant::G => "g",
        })
    }
}

impl FromStr for ScoreVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max_h" => Ok(ScoreVariant::MaxH),
            "g" => Ok(ScoreVariant::G),
            _ => Err(format!("unknown score variant `{s}` (max_h|g)")),
        }
    }
}

/// OOD score of one input from the head outputs.
pub fn score(h: &[f64], g: f64, variant: ScoreVariant) -> Result<f64, OodError> {
    if h.is_empty() {
        return Err(OodError::EmptyScores);
    }
    Ok(match variant {
        ScoreVariant::MaxH => h.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ScoreVariant::G => g,
    })
}

/// Index of the largest class score (first on ties).
pub fn argmax(h: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in h.iter().enumerate() {
        if best.is_none_or(|b| v > h[b]) {
            best = Some(i);
        }
    }
    best
}

pub const DEFAULT_EPSILON_GRID: [f64; 6] = [0.0025, 0.005, 0.01, 0.02, 0.04, 0.08];

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbConfig {
    /// Candidate magnitudes in normalized pixel units.
    pub epsilon_grid: Vec<f64>,
    pub score_variant: ScoreVariant,
    /// Set by calibration.
    pub epsilon_star: Option<f64>,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            epsilon_grid: DEFAULT_EPSILON_GRID.to_vec(),
            score_variant: ScoreVariant::MaxH,
            epsilon_star: None,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<(), OodError> {
        let g = &self.epsilon_grid;
        let ok = !g.is_empty()
            && g.iter().all(|&e| e.is_finite() && e > 0.0)
            && g.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(())
        } else {
            Err(OodError::BadGrid)
        }
    }

    pub fn write_kv(&self, m: &mut KvMap) {
        m.set("epsilon_grid", format_list(&self.epsilon_grid));
        m.set("score_variant", self.score_variant);
        if let Some(e) = self.epsilon_star {
            m.set("epsilon_star", e);
        }
    }

    pub fn from_kv(m: &KvMap) -> Result<Self, OodError> {
        let d = PerturbConfig::default();
        let epsilon_grid = match m.get("epsilon_grid") {
            Some(s) => parse_list("epsilon_grid", s)?,
            None => d.epsilon_grid,
        };
        let score_variant = match m.get("score_variant") {
            Some(s) => s.parse().map_err(|_| KvError::BadValue {
                key: "score_variant".into(),
                value: s.into(),
            })?,
            None => d.score_variant,
        };
        let cfg = PerturbConfig {
            epsilon_grid,
            score_variant,
            epsilon_star: m.parsed("epsilon_star")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `x_hat = x - eps * sign(-grad) = x + eps * sign(grad)`, clamped to
/// `[lo, hi]`. A zero gradient leaves the element unchanged.
pub fn perturb_with_gradient(
    x: &[f64],
    grad: &[f64],
    epsilon: f64,
    lo: f64,
    hi: f64,
) -> Result<Vec<f64>, OodError> {
    assert_eq!(x.len(), grad.len(), "input and gradient differ in length");
    if let Some((index, &value)) = grad.iter().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(OodError::NonFiniteGradient { index, value });
    }
    if epsilon == 0.0 {
        return Ok(x.to_vec());
    }
    Ok(x.iter()
        .zip(grad)
        .map(|(&xi, &gi)| (xi - epsilon * sign(-gi)).clamp(lo, hi))
        .collect())
}

/// Pairwise (cascade) summation; the result does not depend on how the
/// caller chunked the work, up to the usual rounding of pairwise sums.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// The grid value whose summed validation score is largest; ties go to the
/// smaller epsilon.
pub fn select_epsilon_from_sums(grid: &[f64], sums: &[f64]) -> Result<f64, OodError> {
    if grid.is_empty() {
        return Err(OodError::BadGrid);
    }
    if grid.len() != sums.len() {
        return Err(OodError::SumsMismatch(sums.len(), grid.len()));
    }
    let mut best = 0;
    for i in 1..grid.len() {
        if sums[i] > sums[best] {
            best = i;
        }
    }
    Ok(grid[best])
}

/// Trailing moving average over the `min(window, t + 1)` most recent values.
pub fn smooth(raw: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..raw.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(window);
            // Incremental mean: exact on constant runs.
            raw[lo..=t]
                .iter()
                .enumerate()
                .fold(0.0, |m, (k, &v)| m + (v - m) / (k + 1) as f64)
        })
        .collect()
}

/// Linear-interpolated quantile (the common "type 7" definition).
pub fn quantile(values: &[f64], q: f64) -> Result<f64, OodError> {
    if values.is_empty() {
        return Err(OodError::EmptyValidation);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(OodError::BadQuantile(q));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitDecider {
    /// Moving-average length in frames.
    pub window: usize,
    pub phi: f64,
    pub calibration_quantile: f64,
}

impl Default for ExitDecider {
    fn default() -> Self {
        ExitDecider {
            window: 5,
            phi: f64::NEG_INFINITY,
            calibration_quantile: 0.05,
        }
    }
}

impl ExitDecider {
    pub fn validate(&self) -> Result<(), OodError> {
        if self.window == 0 {
            return Err(OodError::BadDecider("window must be >= 1".into()));
        }
        if self.phi.is_nan() {
            return Err(OodError::BadDecider("phi is NaN".into()));
        }
        if !(0.0..=1.0).contains(&self.calibration_quantile) {
            return Err(OodError::BadQuantile(self.calibration_quantile));
        }
        Ok(())
    }

    /// Sets `phi` to the configured quantile of smoothed in-distribution
    /// scores, one series per validation sequence.
    pub fn calibrate(&mut self, id_raw_series: &[Vec<f64>]) -> Result<f64, OodError> {
        let smoothed: Vec<f64> = id_raw_series
            .iter()
            .flat_map(|s| smooth(s, self.window))
            .collect();
        self.phi = quantile(&smoothed, self.calibration_quantile)?;
        Ok(self.phi)
    }

    /// Exit flag per frame: `smoothed < phi`.
    pub fn decide(&self, smoothed: &[f64]) -> Vec<bool> {
        decide(smoothed, self.phi)
    }

    pub fn trace(&self, raw: Vec<f64>) -> OodTrace {
        let smoothed = smooth(&raw, self.window);
        let decisions = self.decide(&smoothed);
        OodTrace {
            raw,
            smoothed,
            decisions,
        }
    }

    pub fn write_kv(&self, m: &mut KvMap) {
        m.set("window", self.window);
        m.set("phi", self.phi);
        m.set("phi_quantile", self.calibration_quantile);
    }

    pub fn from_kv(m: &KvMap) -> Result<Self, OodError> {
        let d = ExitDecider::default();
        let dec = ExitDecider {
            window: m.parsed_or("window", d.window)?,
            phi: m.parsed_or("phi", d.phi)?,
            calibration_quantile: m.parsed_or("phi_quantile", d.calibration_quantile)?,
        };
        dec.validate()?;
        Ok(dec)
    }
}

/// Strict threshold comparison: a score equal to `phi` is not an exit.
pub fn decide(smoothed: &[f64], phi: f64) -> Vec<bool> {
    smoothed.iter().map(|&s| s < phi).collect()
}

/// Per-frame scores and decisions for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct OodTrace {
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub decisions: Vec<bool>,
}

pub const TRACE_HEADER: &str = "frame,raw,smoothed,exit";

impl OodTrace {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for t in 0..self.raw.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                t, self.raw[t], self.smoothed[t], self.decisions[t] as u8
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, OodError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == TRACE_HEADER => {}
            _ => {
                return Err(OodError::TraceParse {
                    line: 1,
                    msg: format!("expected header `{TRACE_HEADER}`"),
                })
            }
        }
        let mut trace = OodTrace {
            raw: Vec::new(),
            smoothed: Vec::new(),
            decisions: Vec::new(),
        };
        for (i, line) in lines {
            let line_no = i + 1;
            let err = |msg: &str| OodError::TraceParse {
                line: line_no,
                msg: msg.to_string(),
            };
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(err("expected 4 fields"));
            }
            let frame: usize = f[0].parse().map_err(|_| err("bad frame index"))?;
            if frame != trace.raw.len() {
                return Err(err("frame indices must be dense from 0"));
            }
            trace
                .raw
                .push(f[1].parse().map_err(|_| err("bad raw score"))?);
            trace
                .smoothed
                .push(f[2].parse().map_err(|_| err("bad smoothed score"))?);
            trace.decisions.push(match f[3] {
                "0" => false,
                "1" => true,
                _ => return Err(err("exit flag must be 0 or 1")),
            });
        }
        Ok(trace)
    }
}
