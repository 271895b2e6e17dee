//! Conveyor pick-and-place gated by exit flags.
//!
//! The robot holds an item and tracks its target plate. It places once the
//! tracked box has dwelt in the place zone, and waits whenever the exit flag
//! says the plate is gone. Placing while the plate is actually absent drops
//! the item on the belt.

use std::fmt;

use thiserror::Error;

use crate::dataset::Sequence;
use crate::geometry::BBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("episode already finished in phase {0}")]
    Finished(Phase),
    #[error("misaligned inputs: {what} has {got} entries, expected {expected}")]
    Misaligned {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Tracking,
    Holding,
    Placing,
    Done,
    Failed,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Tracking => "TRACKING",
            Phase::Holding => "HOLDING",
            Phase::Placing => "PLACING",
            Phase::Done => "DONE",
            Phase::Failed => "FAILED",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskState {
    pub phase: Phase,
    pub held_item: bool,
    pub frames_in_hold: usize,
}

impl Default for TaskState {
    fn default() -> Self {
        TaskState {
            phase: Phase::Tracking,
            held_item: true,
            frames_in_hold: 0,
        }
    }
}

impl TaskState {
    pub fn is_terminal(&self) -> bool {
        matches!(self.phase, Phase::Done | Phase::Failed)
    }
}

/// One transition. `in_place_zone` is the already-debounced zone signal.
pub fn step(
    state: TaskState,
    frame_gt_visible: bool,
    exit_flag: bool,
    in_place_zone: bool,
) -> Result<TaskState, TaskError> {
    let mut next = state;
    match state.phase {
        Phase::Done | Phase::Failed => return Err(TaskError::Finished(state.phase)),
        Phase::Tracking => {
            if exit_flag {
                next.phase = Phase::Holding;
                next.frames_in_hold = 1;
            } else if in_place_zone {
                next.phase = Phase::Placing;
            }
        }
        Phase::Holding => {
            if exit_flag {
                next.frames_in_hold += 1;
            } else {
                next.phase = Phase::Tracking;
                next.frames_in_hold = 0;
            }
        }
        Phase::Placing => {
            next.held_item = false;
            next.phase = if frame_gt_visible {
                Phase::Done
            } else {
                Phase::Failed
            };
        }
    }
    Ok(next)
}

/// Where and when the robot may place.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaceZone {
    /// Frame-coordinate rectangle the tracked box center must be inside.
    pub rect: BBox,
    /// Consecutive in-zone, non-exit frames required before placing.
    pub dwell: usize,
    /// First frame at which the robot is ready to place.
    pub ready_frame: usize,
}

impl PlaceZone {
    pub fn contains(&self, b: &BBox) -> bool {
        if b.is_exit() {
            return false;
        }
        let (cx, cy) = b.center();
        cx >= self.rect.x && cx <= self.rect.x2() && cy >= self.rect.y && cy <= self.rect.y2()
    }

    /// Scenario used for conveyor episodes: the zone covers the whole view
    /// and the robot becomes ready `lead` frames into the first exit window
    /// (or a third of the way in when the sequence has no exit).
    pub fn conveyor(seq: &Sequence, frame_size: (usize, usize), dwell: usize, lead: usize) -> Self {
        let first_exit = seq.annotations.iter().position(|a| !a.is_visible());
        let ready_frame = match first_exit {
            Some(t) => t + lead,
            None => seq.len() / 3,
        };
        PlaceZone {
            rect: BBox {
                x: 0.0,
                y: 0.0,
                w: frame_size.0 as f64,
                h: frame_size.1 as f64,
            },
            dwell: dwell.max(1),
            ready_frame,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub success: bool,
    pub placed_on_target: bool,
    pub place_frame: Option<usize>,
    /// Number of times the robot entered HOLDING.
    pub holds: usize,
    pub final_phase: Phase,
    pub log: Vec<EpisodeLogEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeLogEntry {
    pub frame: usize,
    pub phase: Phase,
    pub exit_flag: bool,
    pub zone: bool,
}

impl EpisodeResult {
    pub fn log_text(&self) -> String {
        let mut out = String::from("frame,phase,exit_flag,zone\n");
        for e in &self.log {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.frame, e.phase, e.exit_flag as u8, e.zone as u8
            ));
        }
        out
    }
}

/// Rolls the state machine over a sequence. `predicted` holds the tracker's
/// box per frame; frames flagged as exit never count toward the dwell.
pub fn run_episode(
    seq: &Sequence,
    predicted: &[BBox],
    exit_flags: &[bool],
    zone: &PlaceZone,
) -> Result<EpisodeResult, TaskError> {
    let n = seq.len();
    for (what, got) in [
        ("predicted", predicted.len()),
        ("exit_flags", exit_flags.len()),
    ] {
        if got != n {
            return Err(TaskError::Misaligned {
                what,
                got,
                expected: n,
            });
        }
    }
    let mut state = TaskState::default();
    let mut dwell = 0usize;
    let mut holds = 0usize;
    let mut place_frame = None;
    let mut log = Vec::with_capacity(n);
    for t in 0..n {
        if state.is_terminal() {
            break;
        }
        let exit = exit_flags[t];
        if !exit && zone.contains(&predicted[t]) {
            dwell += 1;
        } else {
            dwell = 0;
        }
        let in_zone = t >= zone.ready_frame && dwell >= zone.dwell;
        let gt_visible = seq.annotations[t].is_visible();
        let next = step(state, gt_visible, exit, in_zone)?;
        if next.phase == Phase::Holding && state.phase != Phase::Holding {
            holds += 1;
        }
        if state.phase == Phase::Placing {
            place_frame = Some(t);
        }
        state = next;
        log.push(EpisodeLogEntry {
            frame: t,
            phase: state.phase,
            exit_flag: exit,
            zone: in_zone,
        });
    }
    let placed_on_target = state.phase == Phase::Done;
    Ok(EpisodeResult {
        success: placed_on_target,
        placed_on_target,
        place_frame,
        holds,
        final_phase: state.phase,
        log,
    })
}

/// Success rate in `[0, 1]`; 0 for an empty list.
pub fn success_rate(results: &[EpisodeResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().filter(|r| r.success).count() as f64 / results.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RgbFrame;

    fn tracking() -> TaskState {
        TaskState::default()
    }

    #[test]
    fn transitions() {
        let s = step(tracking(), true, true, false).unwrap();
        assert_eq!(s.phase, Phase::Holding);
        let s = step(s, false, false, false).unwrap();
        assert_eq!(s.phase, Phase::Tracking);
        let s = step(tracking(), true, false, true).unwrap();
        assert_eq!(s.phase, Phase::Placing);
        assert_eq!(step(s, true, false, true).unwrap().phase, Phase::Done);
        let failed = step(s, false, false, true).unwrap();
        assert_eq!(failed.phase, Phase::Failed);
        assert!(!failed.held_item);
        assert_eq!(
            step(failed, true, false, false),
            Err(TaskError::Finished(Phase::Failed))
        );
        // exit wins over an in-zone signal
        assert_eq!(
            step(tracking(), true, true, true).unwrap().phase,
            Phase::Holding
        );
    }

    fn seq(visible: &[bool]) -> (Sequence, Vec<BBox>) {
        let b = BBox::new(10.0, 10.0, 8.0, 8.0).unwrap();
        let boxes: Vec<BBox> = visible
            .iter()
            .map(|&v| if v { b } else { BBox::EXIT })
            .collect();
        let frames = vec![RgbFrame::filled(1, 1, [0; 3]); visible.len()];
        let s = Sequence::new("e", "c", frames, boxes).unwrap();
        (s, vec![b; visible.len()])
    }

    #[test]
    fn exit_at_ready_time_fails_without_flags() {
        let mut vis = vec![true; 30];
        for v in vis.iter_mut().take(18).skip(8) {
            *v = false;
        }
        let (s, pred) = seq(&vis);
        let zone = PlaceZone::conveyor(&s, (64, 64), 3, 2);
        assert_eq!(zone.ready_frame, 10);
        let none = run_episode(&s, &pred, &[false; 30], &zone).unwrap();
        assert_eq!(none.final_phase, Phase::Failed);
        assert!(!none.success);
        let oracle: Vec<bool> = vis.iter().map(|v| !v).collect();
        let r = run_episode(&s, &pred, &oracle, &zone).unwrap();
        assert!(r.success && r.placed_on_target);
        assert!(r.place_frame.unwrap() >= 18);
        assert_eq!(r.holds, 1);
        for e in &r.log {
            assert!(!(e.phase == Phase::Placing && e.exit_flag));
        }
    }

    #[test]
    fn no_exit_sequence_ignores_flag_source() {
        let (s, pred) = seq(&[true; 20]);
        let zone = PlaceZone::conveyor(&s, (64, 64), 3, 2);
        let a = run_episode(&s, &pred, &[false; 20], &zone).unwrap();
        let b = run_episode(
            &s,
            &pred,
            &s.visibility().iter().map(|v| !v).collect::<Vec<_>>(),
            &zone,
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(a.success);
    }

    #[test]
    fn misaligned() {
        let (s, pred) = seq(&[true; 5]);
        let zone = PlaceZone::conveyor(&s, (64, 64), 3, 2);
        assert!(run_episode(&s, &pred[..4], &[false; 5], &zone).is_err());
        assert!(run_episode(&s, &pred, &[false; 4], &zone).is_err());
    }
}
