use exitrack_core::kv::{format_list, KvMap};
use exitrack_core::ood::{ExitDecider, PerturbConfig};
use exitrack_net::perturb::calibrate;

use super::{calib_path, load_checkpoint, load_split, write_text};
use crate::config::RunConfig;
use crate::CliError;

pub const KEYS: &[&str] = &[
    "checkpoint",
    "data",
    "epsilon_grid",
    "score_variant",
    "window",
    "phi_quantile",
];

pub fn run(mut cfg: RunConfig) -> Result<String, CliError> {
    let ck_path = cfg.path("checkpoint")?;
    let data = cfg.path("data")?;
    let mut pc = PerturbConfig::from_kv(cfg.given()).map_err(|e| CliError::Usage(e.to_string()))?;
    pc.epsilon_star = None;
    let decider = ExitDecider::from_kv(cfg.given()).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut resolved = KvMap::new();
    pc.write_kv(&mut resolved);
    resolved.set("window", decider.window);
    resolved.set("phi_quantile", decider.calibration_quantile);
    cfg.record(&resolved);

    let ck = load_checkpoint(&ck_path)?;
    let val = load_split(&data, "val")?;
    let val_id: Vec<_> = val.iter().filter(|s| !s.has_exit()).collect();
    let (monitor, sums) = calibrate(&ck.net, &val_id, &pc, &decider)?;

    pc.epsilon_star = Some(monitor.epsilon);
    let mut calib = KvMap::new();
    pc.write_kv(&mut calib);
    monitor.decider.write_kv(&mut calib);
    calib.set("epsilon_sums", format_list(&sums));
    calib.set("n_val_sequences", val_id.len());
    let out = calib_path(&ck_path);
    write_text(&out, &calib.to_text())?;
    let dir = ck_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(std::path::Path::new("."));
    cfg.write_sidecar(dir, "calibrate")?;
    Ok(format!(
        "epsilon_star={}\nphi={}\ncalibration: {}\n",
        monitor.epsilon,
        monitor.decider.phi,
        out.display()
    ))
}
