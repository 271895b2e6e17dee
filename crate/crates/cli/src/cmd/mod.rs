pub mod calibrate;
pub mod eval;
pub mod gen;
pub mod simulate;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use exitrack_core::dataset::{load_dataset, Sequence};
use exitrack_core::kv::KvMap;
use exitrack_net::checkpoint::Checkpoint;

use crate::CliError;

/// Sequences under `<data>/<split>`; an empty split is an error.
pub(crate) fn load_split(data: &Path, split: &str) -> Result<Vec<Sequence>, CliError> {
    let dir = data.join(split);
    let seqs = load_dataset(&dir)?;
    if seqs.is_empty() {
        return Err(CliError::Runtime(format!(
            "{}: no sequences",
            dir.display()
        )));
    }
    Ok(seqs)
}

pub(crate) fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::Runtime(format!(
            "checkpoint {} not found; run `exitrack train` first",
            path.display()
        )));
    }
    Ok(Checkpoint::load(path)?)
}

/// Calibration sidecar of a checkpoint.
pub fn calib_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".calib");
    PathBuf::from(s)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub(crate) fn read_kv(path: &Path) -> Result<KvMap, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(KvMap::parse(&text)?)
}

/// Monitor from the checkpoint's calibration sidecar.
pub(crate) fn load_monitor(
    checkpoint: &Path,
) -> Result<exitrack_net::perturb::OodMonitor, CliError> {
    use exitrack_core::ood::{ExitDecider, PerturbConfig};
    let p = calib_path(checkpoint);
    if !p.is_file() {
        return Err(CliError::Runtime(format!(
            "{} not found; run `exitrack calibrate` first",
            p.display()
        )));
    }
    let m = read_kv(&p)?;
    let pc = PerturbConfig::from_kv(&m)?;
    let dec = ExitDecider::from_kv(&m)?;
    Ok(exitrack_net::perturb::OodMonitor::from_config(&pc, dec)?)
}

/// Parses a boolean setting written as true/false.
pub(crate) fn flag(
    cfg: &mut crate::config::RunConfig,
    key: &str,
    default: bool,
) -> Result<bool, CliError> {
    cfg.get_or(key, default)
}
