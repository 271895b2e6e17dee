use exitrack_core::geometry::CenterNorm;
use exitrack_core::kv::KvMap;
use exitrack_core::metrics::{evaluate_dataset, summary_table};
use exitrack_net::evaluate::evaluate_sequence;

use super::{flag, load_checkpoint, load_monitor, load_split, write_text};
use crate::config::RunConfig;
use crate::plot::plot_trace;
use crate::CliError;

pub const KEYS: &[&str] = &[
    "checkpoint",
    "data",
    "out",
    "split",
    "exit_only",
    "center_norm",
    "plots",
];

pub const SYSTEMS: [&str; 2] = ["ood", "template"];

pub fn run(mut cfg: RunConfig) -> Result<String, CliError> {
    let ck_path = cfg.path("checkpoint")?;
    let data = cfg.path("data")?;
    let out = cfg.path("out")?;
    let split: String = cfg.get_or("split", "test".to_string())?;
    let exit_only = flag(&mut cfg, "exit_only", true)?;
    let plots = flag(&mut cfg, "plots", true)?;
    let norm_s: String = cfg.get_or("center_norm", CenterNorm::default().as_str().to_string())?;
    let norm = CenterNorm::parse(&norm_s)
        .ok_or_else(|| CliError::Usage(format!("center_norm `{norm_s}` (l2|l1)")))?;

    let ck = load_checkpoint(&ck_path)?;
    let monitor = load_monitor(&ck_path)?;
    let mut seqs = load_split(&data, &split)?;
    if exit_only {
        seqs.retain(|s| s.has_exit());
        if seqs.is_empty() {
            return Err(CliError::Runtime(format!(
                "no exit-containing sequences in {split}"
            )));
        }
    }
    cfg.write_sidecar(&out, "eval")?;
    let plot_dir = out.join("plots");
    if plots {
        std::fs::create_dir_all(&plot_dir).map_err(|e| CliError::io(&plot_dir, e))?;
    }

    let mut ood = Vec::with_capacity(seqs.len());
    let mut tmpl = Vec::with_capacity(seqs.len());
    let mut jsonl = String::new();
    for seq in &seqs {
        let e = evaluate_sequence(&ck.net, seq, &monitor)?;
        write_text(
            &out.join("traces").join(format!("{}.csv", seq.id)),
            &e.trace.to_text(),
        )?;
        if plots {
            plot_trace(&e.trace, &seq.visibility(), monitor.decider.phi)
                .save(plot_dir.join(format!("{}.png", seq.id)))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        for (system, pred) in SYSTEMS.iter().zip([&e.ood, &e.template]) {
            let mut r = exitrack_core::metrics::evaluate_sequence(pred, seq, norm)?;
            r.id = format!("{system}/{}", seq.id);
            jsonl.push_str(&r.to_json_line());
            jsonl.push('\n');
        }
        ood.push(e.ood);
        tmpl.push(e.template);
    }
    let ood_r = evaluate_dataset("ood", &ood, &seqs, norm)?;
    let tmpl_r = evaluate_dataset("template", &tmpl, &seqs, norm)?;
    let mut report = KvMap::new();
    ood_r.write_kv("ood", &mut report);
    tmpl_r.write_kv("template", &mut report);
    report.set("n_sequences", seqs.len());
    report.set("epsilon_star", monitor.epsilon);
    report.set("phi", monitor.decider.phi);
    for r in [&ood_r, &tmpl_r] {
        jsonl.push_str(&r.to_json_line());
        jsonl.push('\n');
    }
    let table = summary_table(&[("OOD", &ood_r), ("template", &tmpl_r)]);
    write_text(&out.join("report.txt"), &report.to_text())?;
    write_text(&out.join("report.jsonl"), &jsonl)?;
    write_text(&out.join("summary.txt"), &table)?;
    Ok(table)
}
