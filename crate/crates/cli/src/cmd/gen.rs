use exitrack_core::dataset::{compute_stats, write_dataset, Sequence};
use exitrack_core::kv::KvMap;
use exitrack_core::synthetic::{generate_split, SceneSpec, SplitConfig};

use super::write_text;
use crate::config::RunConfig;
use crate::CliError;

pub const KEYS: &[&str] = &[
    "out",
    "seed",
    "n_train",
    "n_val",
    "n_test",
    "frame_width",
    "frame_height",
    "min_frames",
    "max_frames",
    "exit_ratio",
    "camera_jitter",
];

/// Scene parameters stored next to each generated sequence.
pub const SCENE_FILE: &str = "scene.txt";

pub fn run(mut cfg: RunConfig) -> Result<String, CliError> {
    let out = cfg.path("out")?;
    let seed = cfg.get_or("seed", 7u64)?;
    let n_train = cfg.get_or("n_train", 200usize)?;
    let n_val = cfg.get_or("n_val", 30usize)?;
    let n_test = cfg.get_or("n_test", 60usize)?;
    let d = SplitConfig::default();
    let split_cfg = SplitConfig {
        frame_size: (
            cfg.get_or("frame_width", d.frame_size.0)?,
            cfg.get_or("frame_height", d.frame_size.1)?,
        ),
        min_frames: cfg.get_or("min_frames", d.min_frames)?,
        max_frames: cfg.get_or("max_frames", d.max_frames)?,
        exit_ratio: cfg.get_or("exit_ratio", d.exit_ratio)?,
        camera_jitter: cfg.get_or("camera_jitter", d.camera_jitter)?,
        ..d
    };
    let split = generate_split(n_train, n_val, n_test, seed, &split_cfg)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let mut stats = KvMap::new();
    let parts: [(&str, &[Sequence], &[SceneSpec]); 3] = [
        ("train", &split.train, &split.train_specs),
        ("val", &split.val, &split.val_specs),
        ("test", &split.test, &split.test_specs),
    ];
    let mut summary = String::new();
    for (name, seqs, specs) in parts {
        let root = out.join(name);
        write_dataset(&root, seqs)?;
        for (s, spec) in seqs.iter().zip(specs) {
            write_text(&root.join(&s.id).join(SCENE_FILE), &spec.to_kv().to_text())?;
        }
        let st = compute_stats(seqs)?;
        for (k, v) in st.to_kv().iter() {
            stats.set(format!("{name}.{k}"), v);
        }
        summary.push_str(&format!(
            "{name}: {} sequences, exit ratio {:.3}\n",
            seqs.len(),
            st.evr
        ));
    }
    write_text(&out.join("stats.txt"), &stats.to_text())?;
    cfg.write_sidecar(&out, "gen")?;
    Ok(summary)
}
