//! Deterministic conveyor-belt scenes: a colored target shape riding a belt
//! with distractor shapes, camera jitter, and windows during which the
//! target has been removed from the belt.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dataset::{RgbFrame, Sequence};
use crate::geometry::BBox;
use crate::kv::{KvError, KvMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Kv(#[from] KvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Diamond,
}

impl Shape {
    pub const ALL: [Shape; 4] = [
        Shape::Circle,
        Shape::Square,
        Shape::Triangle,
        Shape::Diamond,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Diamond => "diamond",
        }
    }

    /// Whether the point `(u, v)`, in box-relative units `[0,1]^2`, is inside.
    fn contains(&self, u: f64, v: f64) -> bool {
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
            return false;
        }
        let (du, dv) = (u - 0.5, v - 0.5);
        match self {
            Shape::Square => true,
            Shape::Circle => du * du + dv * dv <= 0.25,
            Shape::Diamond => du.abs() + dv.abs() <= 0.5,
            Shape::Triangle => du.abs() <= 0.5 * v,
        }
    }
}

/// Colors reserved for targets. Distractors never use these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TargetColor {
    Red,
    Green,
    Blue,
    Yellow,
}

impl TargetColor {
    pub const ALL: [TargetColor; 4] = [
        TargetColor::Red,
        TargetColor::Green,
        TargetColor::Blue,
        TargetColor::Yellow,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TargetColor::Red => "red",
            TargetColor::Green => "green",
            TargetColor::Blue => "blue",
            TargetColor::Yellow => "yellow",
        }
    }

    pub fn rgb(&self) -> [u8; 3] {
        match self {
            TargetColor::Red => [215, 40, 40],
            TargetColor::Green => [40, 185, 60],
            TargetColor::Blue => [45, 75, 215],
            TargetColor::Yellow => [230, 205, 35],
        }
    }
}

const DISTRACTOR_COLORS: [[u8; 3]; 4] = [
    [205, 205, 200],
    [140, 95, 55],
    [135, 60, 150],
    [55, 160, 165],
];
const BELT: [u8; 3] = [88, 88, 94];
const BELT_STRIPE: [u8; 3] = [70, 70, 76];
const TABLE: [u8; 3] = [52, 44, 36];

/// Object category of a target: a (shape, color) pair such as `red_circle`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TargetClass {
    pub shape: Shape,
    pub color: TargetColor,
}

impl TargetClass {
    /// Default class inventory: every target color on circles and squares.
    pub fn inventory() -> Vec<TargetClass> {
        let mut v = Vec::new();
        for color in TargetColor::ALL {
            for shape in [Shape::Circle, Shape::Square] {
                v.push(TargetClass { shape, color });
            }
        }
        v
    }
}

impl fmt::Display for TargetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.color.name(), self.shape.name())
    }
}

impl FromStr for TargetClass {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SceneError::Invalid(format!("unknown target class `{s}`"));
        let (c, sh) = s.split_once('_').ok_or_else(bad)?;
        let color = TargetColor::ALL
            .into_iter()
            .find(|x| x.name() == c)
            .ok_or_else(bad)?;
        let shape = Shape::ALL
            .into_iter()
            .find(|x| x.name() == sh)
            .ok_or_else(bad)?;
        Ok(TargetClass { shape, color })
    }
}

/// Half-open frame range `[start, end)` during which the target is absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExitWindow {
    pub start: usize,
    pub end: usize,
}

impl ExitWindow {
    pub fn contains(&self, t: usize) -> bool {
        (self.start..self.end).contains(&t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub frame_size: (usize, usize),
    pub n_frames: usize,
    /// Pixels per frame along +x.
    pub belt_speed: f64,
    pub n_distractors: usize,
    pub target: TargetClass,
    /// Side of the (square) target box in pixels.
    pub target_size: f64,
    /// Top-left of the target box at frame 0, before jitter.
    pub target_origin: (f64, f64),
    pub exit_windows: Vec<ExitWindow>,
    /// Standard deviation of the per-frame camera offset in pixels.
    pub camera_jitter: f64,
    /// Amplitude of uniform per-pixel noise.
    pub pixel_noise: u8,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            frame_size: (64, 64),
            n_frames: 90,
            belt_speed: 0.25,
            n_distractors: 3,
            target: TargetClass {
                shape: Shape::Circle,
                color: TargetColor::Red,
            },
            target_size: 11.0,
            target_origin: (8.0, 26.0),
            exit_windows: Vec::new(),
            camera_jitter: 0.5,
            pixel_noise: 6,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Invalid(m));
        let (w, h) = self.frame_size;
        if w < 8 || h < 8 {
            return bad(format!("frame size {w}x{h} too small"));
        }
        if self.n_frames == 0 {
            return bad("n_frames must be positive".into());
        }
        if !(self.belt_speed.is_finite() && self.belt_speed >= 0.0) {
            return bad(format!("belt_speed {} must be >= 0", self.belt_speed));
        }
        if !(self.target_size.is_finite() && self.target_size > 0.0) {
            return bad(format!("target_size {} must be > 0", self.target_size));
        }
        if !(self.camera_jitter.is_finite() && self.camera_jitter >= 0.0) {
            return bad(format!("camera_jitter {} must be >= 0", self.camera_jitter));
        }
        if !(self.target_origin.0.is_finite() && self.target_origin.1.is_finite()) {
            return bad("target_origin must be finite".into());
        }
        for win in &self.exit_windows {
            if win.start >= win.end || win.end > self.n_frames {
                return bad(format!(
                    "exit window {}-{} outside [0, {})",
                    win.start, win.end, self.n_frames
                ));
            }
            if win.contains(0) {
                return bad("frame 0 lies inside an exit window".into());
            }
        }
        // The first frame must show the target.
        let first = BBox::new(
            self.target_origin.0,
            self.target_origin.1,
            self.target_size,
            self.target_size,
        )
        .map_err(|e| SceneError::Invalid(e.to_string()))?;
        if first.visible_area(w as f64, h as f64) <= 0.0 {
            return bad("target starts outside the frame".into());
        }
        Ok(())
    }

    /// Target box at frame `t` before camera jitter.
    pub fn nominal_box(&self, t: usize) -> BBox {
        BBox {
            x: self.target_origin.0 + self.belt_speed * t as f64,
            y: self.target_origin.1,
            w: self.target_size,
            h: self.target_size,
        }
    }

    pub fn in_exit_window(&self, t: usize) -> bool {
        self.exit_windows.iter().any(|w| w.contains(t))
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("seed", self.seed);
        m.set("frame_width", self.frame_size.0);
        m.set("frame_height", self.frame_size.1);
        m.set("n_frames", self.n_frames);
        m.set("belt_speed", self.belt_speed);
        m.set("n_distractors", self.n_distractors);
        m.set("target_class", self.target);
        m.set("target_size", self.target_size);
        m.set("target_x0", self.target_origin.0);
        m.set("target_y0", self.target_origin.1);
        let wins: Vec<String> = self
            .exit_windows
            .iter()
            .map(|w| format!("{}-{}", w.start, w.end))
            .collect();
        m.set("exit_windows", wins.join(","));
        m.set("camera_jitter", self.camera_jitter);
        m.set("pixel_noise", self.pixel_noise);
        m
    }

    /// Reads a spec from key=value entries; absent keys keep their defaults.
    pub fn from_kv(m: &KvMap) -> Result<Self, SceneError> {
        let d = SceneSpec::default();
        let target = match m.get("target_class") {
            Some(s) => s.parse()?,
            None => d.target,
        };
        let exit_windows = match m.get("exit_windows") {
            Some(s) => parse_windows(s)?,
            None => d.exit_windows,
        };
        let spec = SceneSpec {
            seed: m.parsed_or("seed", d.seed)?,
            frame_size: (
                m.parsed_or("frame_width", d.frame_size.0)?,
                m.parsed_or("frame_height", d.frame_size.1)?,
            ),
            n_frames: m.parsed_or("n_frames", d.n_frames)?,
            belt_speed: m.parsed_or("belt_speed", d.belt_speed)?,
            n_distractors: m.parsed_or("n_distractors", d.n_distractors)?,
            target,
            target_size: m.parsed_or("target_size", d.target_size)?,
            target_origin: (
                m.parsed_or("target_x0", d.target_origin.0)?,
                m.parsed_or("target_y0", d.target_origin.1)?,
            ),
            exit_windows,
            camera_jitter: m.parsed_or("camera_jitter", d.camera_jitter)?,
            pixel_noise: m.parsed_or("pixel_noise", d.pixel_noise)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_windows(s: &str) -> Result<Vec<ExitWindow>, SceneError> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|part| {
            let bad = || SceneError::Invalid(format!("bad exit window `{part}`"));
            let (a, b) = part.trim().split_once('-').ok_or_else(bad)?;
            Ok(ExitWindow {
                start: a.trim().parse().map_err(|_| bad())?,
                end: b.trim().parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

struct Distractor {
    shape: Shape,
    color: [u8; 3],
    origin: (f64, f64),
    size: f64,
}

/// Renders the scene. Equal specs produce identical pixels and boxes.
pub fn generate(spec: &SceneSpec) -> Result<Sequence, SceneError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (fw, fh) = spec.frame_size;
    let (fwf, fhf) = (fw as f64, fh as f64);
    let belt_top = (fhf * 0.15).round();
    let belt_bottom = (fhf * 0.85).round();

    let target_box0 = spec.nominal_box(0);
    let distractors = place_distractors(spec, &mut rng, target_box0, belt_top, belt_bottom);
    let jitter = Normal::new(0.0, spec.camera_jitter.max(1e-12)).expect("finite std");
    // Distractors wrap around so the belt stays populated.
    let wrap = fwf + 24.0;

    let mut frames = Vec::with_capacity(spec.n_frames);
    let mut boxes = Vec::with_capacity(spec.n_frames);
    for t in 0..spec.n_frames {
        let (jx, jy) = if spec.camera_jitter > 0.0 {
            (jitter.sample(&mut rng), jitter.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        let shift = spec.belt_speed * t as f64;
        let mut frame = RgbFrame::filled(fw, fh, TABLE);
        for py in 0..fh {
            let yy = py as f64 + 0.5 - jy;
            if yy < belt_top || yy >= belt_bottom {
                continue;
            }
            for px in 0..fw {
                let xx = px as f64 + 0.5 - jx - shift;
                let stripe = xx.rem_euclid(8.0) < 1.5;
                frame.put_pixel(px, py, if stripe { BELT_STRIPE } else { BELT });
            }
        }
        for d in &distractors {
            let x = (d.origin.0 + shift + 12.0).rem_euclid(wrap) - 12.0 + jx;
            let bx = BBox {
                x,
                y: d.origin.1 + jy,
                w: d.size,
                h: d.size,
            };
            draw_shape(&mut frame, &bx, d.shape, d.color);
        }
        let tb = spec.nominal_box(t).translate(jx, jy);
        let present = !spec.in_exit_window(t) && tb.visible_area(fwf, fhf) > 0.0;
        if present {
            draw_shape(&mut frame, &tb, spec.target.shape, spec.target.color.rgb());
            boxes.push(tb);
        } else {
            boxes.push(BBox::EXIT);
        }
        if spec.pixel_noise > 0 {
            let amp = spec.pixel_noise as i16;
            for v in frame.data.iter_mut() {
                let n: i16 = rng.random_range(-amp..=amp);
                *v = (*v as i16 + n).clamp(0, 255) as u8;
            }
        }
        frames.push(frame);
    }
    let id = format!("scene_{}", spec.seed);
    Sequence::new(id, spec.target.to_string(), frames, boxes)
        .map_err(|e| SceneError::Invalid(e.to_string()))
}

fn place_distractors(
    spec: &SceneSpec,
    rng: &mut ChaCha8Rng,
    target: BBox,
    belt_top: f64,
    belt_bottom: f64,
) -> Vec<Distractor> {
    let (fw, _) = spec.frame_size;
    let mut out: Vec<Distractor> = Vec::new();
    let mut attempts = 0;
    while out.len() < spec.n_distractors && attempts < 200 {
        attempts += 1;
        let size = rng.random_range(7.0..12.0);
        let x = rng.random_range(-10.0..fw as f64);
        let y = rng.random_range(belt_top..(belt_bottom - size).max(belt_top + 1.0));
        let cand = BBox {
            x,
            y,
            w: size,
            h: size,
        };
        // Objects ride the belt together, so separation at frame 0 (with a
        // margin for jitter) holds for the whole sequence.
        let clear = |b: &BBox| {
            cand.x2() + 3.0 < b.x
                || b.x2() + 3.0 < cand.x
                || cand.y2() + 3.0 < b.y
                || b.y2() + 3.0 < cand.y
        };
        let target_lane = BBox {
            x: f64::MIN / 4.0,
            w: f64::MAX / 2.0,
            ..target
        };
        // Stay out of the target's lane entirely: the target moves relative
        // to nothing else, but wrapping distractors would otherwise cross it.
        if !clear(&target_lane)
            || !out.iter().all(|d| {
                clear(&BBox {
                    x: d.origin.0,
                    y: d.origin.1,
                    w: d.size,
                    h: d.size,
                })
            })
        {
            continue;
        }
        out.push(Distractor {
            shape: Shape::ALL[rng.random_range(0..Shape::ALL.len())],
            color: DISTRACTOR_COLORS[rng.random_range(0..DISTRACTOR_COLORS.len())],
            origin: (x, y),
            size,
        });
    }
    out
}

fn draw_shape(frame: &mut RgbFrame, b: &BBox, shape: Shape, color: [u8; 3]) {
    let x0 = b.x.floor().max(0.0) as isize;
    let y0 = b.y.floor().max(0.0) as isize;
    let x1 = (b.x2().ceil() as isize).min(frame.width as isize);
    let y1 = (b.y2().ceil() as isize).min(frame.height as isize);
    for py in y0..y1 {
        for px in x0..x1 {
            let u = (px as f64 + 0.5 - b.x) / b.w;
            let v = (py as f64 + 0.5 - b.y) / b.h;
            if shape.contains(u, v) {
                frame.put_pixel(px as usize, py as usize, color);
            }
        }
    }
}

/// Knobs for [`generate_split`].
#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub frame_size: (usize, usize),
    pub min_frames: usize,
    pub max_frames: usize,
    /// Fraction of validation and test sequences that contain exits.
    pub exit_ratio: f64,
    pub classes: Vec<TargetClass>,
    pub camera_jitter: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            frame_size: (64, 64),
            min_frames: 60,
            max_frames: 120,
            exit_ratio: 0.2,
            classes: TargetClass::inventory(),
            camera_jitter: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<Sequence>,
    pub val: Vec<Sequence>,
    pub test: Vec<Sequence>,
    pub train_specs: Vec<SceneSpec>,
    pub val_specs: Vec<SceneSpec>,
    pub test_specs: Vec<SceneSpec>,
}

impl Split {
    /// Validation sequences without any exit frame.
    pub fn val_id_only(&self) -> Vec<&Sequence> {
        self.val.iter().filter(|s| !s.has_exit()).collect()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Part {
    Train,
    Val,
    Test,
}

impl Part {
    fn name(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Val => "val",
            Part::Test => "test",
        }
    }
}

/// Number of sequences out of `n` that get exit windows.
pub fn exit_count(n: usize, ratio: f64) -> usize {
    ((n as f64 * ratio).round() as usize).min(n)
}

/// Random scene specs for one split part. Train scenes never contain
/// exits; the first `exit_count` val/test scenes do.
pub fn sample_specs(n: usize, part_seed: u64, exits: usize, cfg: &SplitConfig) -> Vec<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(part_seed);
    (0..n)
        .map(|i| sample_spec(&mut rng, i < exits, cfg))
        .collect()
}

fn sample_spec(rng: &mut ChaCha8Rng, with_exit: bool, cfg: &SplitConfig) -> SceneSpec {
    let (fw, fh) = cfg.frame_size;
    let n_frames = rng.random_range(cfg.min_frames..=cfg.max_frames.max(cfg.min_frames));
    let target_size = rng.random_range(9.0..13.0);
    let x0 = rng.random_range(2.0..(fw as f64 * 0.3));
    let y0 = rng.random_range((fh as f64 * 0.2)..(fh as f64 * 0.8 - target_size));
    // Keep the target on screen for the whole sequence.
    let room = (fw as f64 - 2.0 - target_size - x0).max(0.0);
    let max_speed = (room / n_frames as f64).min(0.5);
    let belt_speed = rng.random_range(0.0..=max_speed);
    let target = cfg.classes[rng.random_range(0..cfg.classes.len())];
    let mut exit_windows = Vec::new();
    if with_exit {
        let two = n_frames >= 100 && rng.random_bool(0.3);
        if two {
            let l1 = rng.random_range(8..=18);
            let s1 = rng.random_range(15..=30);
            let l2 = rng.random_range(8..=18);
            let s2 = rng.random_range(s1 + l1 + 10..=(n_frames - l2 - 12).max(s1 + l1 + 10));
            exit_windows.push(ExitWindow {
                start: s1,
                end: s1 + l1,
            });
            exit_windows.push(ExitWindow {
                start: s2,
                end: (s2 + l2).min(n_frames - 1),
            });
        } else {
            let len = rng.random_range(15..=30);
            let start = rng.random_range(15..=(n_frames - len - 15).max(15));
            exit_windows.push(ExitWindow {
                start,
                end: (start + len).min(n_frames - 1),
            });
        }
    }
    SceneSpec {
        seed: rng.random(),
        frame_size: cfg.frame_size,
        n_frames,
        belt_speed,
        n_distractors: rng.random_range(2..=4),
        target,
        target_size,
        target_origin: (x0, y0),
        exit_windows,
        camera_jitter: cfg.camera_jitter,
        pixel_noise: 6,
    }
}

fn generate_part(
    part: Part,
    n: usize,
    seed: u64,
    cfg: &SplitConfig,
) -> Result<(Vec<Sequence>, Vec<SceneSpec>), SceneError> {
    let part_seed = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(part as u64 + 1);
    let exits = if part == Part::Train {
        0
    } else {
        exit_count(n, cfg.exit_ratio)
    };
    let specs = sample_specs(n, part_seed, exits, cfg);
    let mut seqs = Vec::with_capacity(n);
    for (i, spec) in specs.iter().enumerate() {
        let mut seq = generate(spec)?;
        seq.id = format!("s{seed}_{}_{i:04}", part.name());
        seqs.push(seq);
    }
    Ok((seqs, specs))
}

/// Train / val / test sets. Train has no exits; `exit_ratio` of val and
/// test sequences (rounded) contain exit windows.
pub fn generate_split(
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
    cfg: &SplitConfig,
) -> Result<Split, SceneError> {
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(SceneError::Invalid("split counts must be positive".into()));
    }
    if cfg.classes.is_empty() {
        return Err(SceneError::Invalid("empty class inventory".into()));
    }
    if cfg.min_frames < 60 || cfg.max_frames < cfg.min_frames {
        return Err(SceneError::Invalid(format!(
            "frame range {}..{} invalid (minimum 60)",
            cfg.min_frames, cfg.max_frames
        )));
    }
    if !(0.0..=1.0).contains(&cfg.exit_ratio) {
        return Err(SceneError::Invalid(format!(
            "exit_ratio {} outside [0,1]",
            cfg.exit_ratio
        )));
    }
    let (train, train_specs) = generate_part(Part::Train, n_train, seed, cfg)?;
    let (val, val_specs) = generate_part(Part::Val, n_val, seed, cfg)?;
    let (test, test_specs) = generate_part(Part::Test, n_test, seed, cfg)?;
    Ok(Split {
        train,
        val,
        test,
        train_specs,
        val_specs,
        test_specs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinematics_without_jitter() {
        let spec = SceneSpec {
            camera_jitter: 0.0,
            ..SceneSpec::default()
        };
        let seq = generate(&spec).unwrap();
        for t in [0usize, 10, 50] {
            let b = seq.annotations[t].bbox;
            assert!((b.x - (spec.target_origin.0 + spec.belt_speed * t as f64)).abs() < 1e-12);
            assert_eq!(b.y, spec.target_origin.1);
        }
    }

    #[test]
    fn exit_window_frames_are_sentinel() {
        let spec = SceneSpec {
            exit_windows: vec![ExitWindow { start: 5, end: 9 }],
            ..SceneSpec::default()
        };
        let seq = generate(&spec).unwrap();
        for t in 0..spec.n_frames {
            assert_eq!(
                seq.annotations[t].bbox.is_exit(),
                (5..9).contains(&t),
                "frame {t}"
            );
        }
    }

    #[test]
    fn leaving_the_frame_is_exit() {
        let spec = SceneSpec {
            belt_speed: 2.0,
            camera_jitter: 0.0,
            ..SceneSpec::default()
        };
        let seq = generate(&spec).unwrap();
        let last = seq.annotations.last().unwrap().bbox;
        assert!(last.is_exit());
        for a in &seq.annotations {
            if a.is_visible() {
                assert!(a.bbox.visible_area(64.0, 64.0) > 0.0);
            }
        }
    }

    #[test]
    fn deterministic_pixels() {
        let spec = SceneSpec {
            seed: 42,
            ..SceneSpec::default()
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SceneSpec {
            seed: 43,
            ..SceneSpec::default()
        };
        assert_ne!(
            generate(&spec).unwrap().frames,
            generate(&other).unwrap().frames
        );
    }

    #[test]
    fn invalid_specs() {
        let bad = [
            SceneSpec {
                belt_speed: -1.0,
                ..SceneSpec::default()
            },
            SceneSpec {
                n_frames: 0,
                ..SceneSpec::default()
            },
            SceneSpec {
                exit_windows: vec![ExitWindow { start: 0, end: 3 }],
                ..SceneSpec::default()
            },
            SceneSpec {
                exit_windows: vec![ExitWindow { start: 80, end: 91 }],
                ..SceneSpec::default()
            },
            SceneSpec {
                target_origin: (200.0, 10.0),
                ..SceneSpec::default()
            },
        ];
        for s in bad {
            assert!(generate(&s).is_err(), "{s:?}");
        }
    }

    #[test]
    fn kv_round_trip() {
        let spec = SceneSpec {
            seed: 9,
            belt_speed: 0.1234567891234,
            exit_windows: vec![
                ExitWindow { start: 3, end: 7 },
                ExitWindow { start: 20, end: 30 },
            ],
            ..SceneSpec::default()
        };
        let text = spec.to_kv().to_text();
        let back = SceneSpec::from_kv(&KvMap::parse(&text).unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn class_names() {
        for c in TargetClass::inventory() {
            assert_eq!(c.to_string().parse::<TargetClass>().unwrap(), c);
        }
        assert!("purple_circle".parse::<TargetClass>().is_err());
    }
}
