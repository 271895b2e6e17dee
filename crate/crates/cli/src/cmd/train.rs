use exitrack_core::kv::KvMap;
use exitrack_net::checkpoint::Checkpoint;
use exitrack_net::train::{class_list, train, TrainConfig};
use exitrack_net::{NetConfig, NetError, TrackerNet};

use super::{load_split, write_text};
use crate::config::RunConfig;
use crate::CliError;

pub const KEYS: &[&str] = &[
    "data",
    "out",
    // network
    "ood_input",
    "train_mode",
    "template_update_period",
    "feature_dim",
    "n_classes",
    "lambda_giou",
    "lambda_l1",
    "lambda_bce",
    "lambda_ce",
    "search_size",
    "template_size",
    "box_hidden",
    "init_seed",
    // optimization
    "epochs",
    "stage2_epochs",
    "samples_per_epoch",
    "batch_size",
    "lr",
    "weight_decay",
    "train_seed",
    "neg_fraction",
    "max_frame_gap",
    "center_jitter",
    "scale_jitter",
    "val_samples",
];

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train_log.jsonl";

fn usage(e: NetError) -> CliError {
    match e {
        NetError::Config { .. } | NetError::Kv(_) => CliError::Usage(e.to_string()),
        other => other.into(),
    }
}

pub fn run(mut cfg: RunConfig) -> Result<String, CliError> {
    let data = cfg.path("data")?;
    let out = cfg.path("out")?;
    let mut net_cfg = NetConfig::from_kv(cfg.given()).map_err(usage)?;
    let train_cfg = TrainConfig::from_kv(cfg.given()).map_err(usage)?;

    let train_seqs = load_split(&data, "train")?;
    let val_seqs = load_split(&data, "val")?;
    // validation may hold classes the training split lacks
    let all: Vec<_> = train_seqs.iter().chain(&val_seqs).cloned().collect();
    let classes = class_list(&all);
    drop(all);
    if let Some(n) = cfg.given().parsed::<usize>("n_classes")? {
        if n != classes.len() {
            return Err(CliError::Usage(format!(
                "n_classes={n} but the training data has {} classes",
                classes.len()
            )));
        }
    }
    net_cfg.n_classes = classes.len();
    let mut resolved = KvMap::new();
    net_cfg.write_kv(&mut resolved);
    train_cfg.write_kv(&mut resolved);
    cfg.record(&resolved);
    cfg.write_sidecar(&out, "train")?;

    let mut net = TrackerNet::new(net_cfg).map_err(usage)?;
    let mut log = String::new();
    let report = train(
        &mut net,
        &classes,
        &train_seqs,
        &val_seqs,
        &train_cfg,
        &mut |r| {
            let line = r.to_json_line();
            eprintln!("{line}");
            log.push_str(&line);
            log.push('\n');
        },
    )?;
    write_text(&out.join(LOG_FILE), &log)?;
    let ck = Checkpoint { net, classes };
    let path = out.join(CHECKPOINT_FILE);
    ck.save(&path)?;
    let mut summary = format!("checkpoint: {}\n", path.display());
    if let Some(last) = report.records.last() {
        summary.push_str(&format!("final loss: {:.4}\n", last.loss));
    }
    Ok(summary)
}
