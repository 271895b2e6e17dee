use std::fmt;
use std::str::FromStr;

use exitrack_core::dataset::Sequence;
use exitrack_core::geometry::BBox;
use exitrack_core::kv::{parse_list, KvMap};
use exitrack_core::tasksim::{run_episode, success_rate, EpisodeResult, PlaceZone};
use exitrack_net::evaluate::evaluate_sequence;

use super::{flag, load_checkpoint, load_monitor, load_split, write_text};
use crate::config::RunConfig;
use crate::CliError;

pub const KEYS: &[&str] = &[
    "checkpoint",
    "data",
    "out",
    "split",
    "flags",
    "dwell",
    "lead",
    "exit_only",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlagSource {
    /// Ground-truth visibility.
    Oracle,
    /// Calibrated OOD monitor.
    Ood,
    /// Never flags exit.
    None,
}

impl FromStr for FlagSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(FlagSource::Oracle),
            "ood" => Ok(FlagSource::Ood),
            "none" => Ok(FlagSource::None),
            _ => Err(format!("unknown flag source `{s}` (oracle|ood|none)")),
        }
    }
}

impl fmt::Display for FlagSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlagSource::Oracle => "oracle",
            FlagSource::Ood => "ood",
            FlagSource::None => "none",
        })
    }
}

/// Ground-truth boxes with the last visible box held through exits: a
/// tracker that never notices the target has gone.
pub fn held_gt_boxes(seq: &Sequence) -> Vec<BBox> {
    let mut last = seq.annotations[0].bbox;
    seq.annotations
        .iter()
        .map(|a| {
            if a.is_visible() {
                last = a.bbox;
            }
            last
        })
        .collect()
}

pub fn run(mut cfg: RunConfig) -> Result<String, CliError> {
    let data = cfg.path("data")?;
    let out = cfg.path("out")?;
    let split: String = cfg.get_or("split", "test".to_string())?;
    let flags_s: String = cfg.get_or("flags", "oracle,ood,none".to_string())?;
    let sources: Vec<FlagSource> =
        parse_list("flags", &flags_s).map_err(|e| CliError::Usage(e.to_string()))?;
    if sources.is_empty() {
        return Err(CliError::Usage("flags: no flag source given".into()));
    }
    let dwell = cfg.get_or("dwell", 3usize)?;
    let lead = cfg.get_or("lead", 5usize)?;
    let exit_only = flag(&mut cfg, "exit_only", true)?;
    let model = match cfg.given().get("checkpoint") {
        Some(_) => {
            let p = cfg.path("checkpoint")?;
            Some((load_checkpoint(&p)?, load_monitor(&p)?))
        }
        None if sources.contains(&FlagSource::Ood) => {
            return Err(CliError::Runtime(
                "--flags ood needs a calibrated --checkpoint".into(),
            ))
        }
        None => None,
    };

    let mut seqs = load_split(&data, &split)?;
    if exit_only {
        seqs.retain(|s| s.has_exit());
        if seqs.is_empty() {
            return Err(CliError::Runtime(format!(
                "no exit-containing sequences in {split}"
            )));
        }
    }
    cfg.write_sidecar(&out, "simulate")?;

    let mut results: Vec<Vec<EpisodeResult>> = vec![Vec::new(); sources.len()];
    let mut table = String::from("source,sequence,success,place_frame,holds,final_phase\n");
    for seq in &seqs {
        let frame = &seq.frames[0];
        let zone = PlaceZone::conveyor(seq, (frame.width, frame.height), dwell, lead);
        let tracked = match &model {
            Some((ck, monitor)) => Some(evaluate_sequence(&ck.net, seq, monitor)?),
            None => None,
        };
        for (k, &src) in sources.iter().enumerate() {
            let (boxes, exit): (Vec<BBox>, Vec<bool>) = match (&tracked, src) {
                (Some(e), FlagSource::Ood) => (
                    e.ood.boxes.clone(),
                    e.ood.pred_visible.iter().map(|v| !v).collect(),
                ),
                (Some(e), FlagSource::Oracle) => (
                    e.template.boxes.clone(),
                    seq.visibility().iter().map(|v| !v).collect(),
                ),
                (Some(e), FlagSource::None) => (e.template.boxes.clone(), vec![false; seq.len()]),
                (None, FlagSource::Oracle) => (
                    held_gt_boxes(seq),
                    seq.visibility().iter().map(|v| !v).collect(),
                ),
                (None, _) => (held_gt_boxes(seq), vec![false; seq.len()]),
            };
            let r = run_episode(seq, &boxes, &exit, &zone)?;
            write_text(
                &out.join("episodes")
                    .join(src.to_string())
                    .join(format!("{}.csv", seq.id)),
                &r.log_text(),
            )?;
            table.push_str(&format!(
                "{src},{},{},{},{},{}\n",
                seq.id,
                r.success as u8,
                r.place_frame
                    .map_or_else(|| "-".to_string(), |f| f.to_string()),
                r.holds,
                r.final_phase
            ));
            results[k].push(r);
        }
    }
    let mut summary = KvMap::new();
    summary.set("n_episodes", seqs.len());
    let mut text = String::new();
    for (src, rs) in sources.iter().zip(&results) {
        let rate = success_rate(rs);
        summary.set(format!("success.{src}"), rate);
        text.push_str(&format!(
            "{src}: {:.1}% success over {} episodes\n",
            100.0 * rate,
            rs.len()
        ));
    }
    write_text(&out.join("episodes.csv"), &table)?;
    write_text(&out.join("simulate.txt"), &summary.to_text())?;
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_sources_parse() {
        let v: Vec<FlagSource> = parse_list("flags", "oracle, ood,none").unwrap();
        assert_eq!(
            v,
            vec![FlagSource::Oracle, FlagSource::Ood, FlagSource::None]
        );
        assert!("always".parse::<FlagSource>().is_err());
    }
}
