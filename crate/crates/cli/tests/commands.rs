use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use exitrack_core::kv::KvMap;

fn exitrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exitrack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = exitrack(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    exitrack(args).status.code().expect("exited")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn kv(p: &Path) -> KvMap {
    KvMap::parse(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Small dataset plus a briefly trained and calibrated checkpoint.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    fn ckpt(&self) -> PathBuf {
        self.root.join("run/checkpoint.bin")
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        ok(&[
            "gen",
            "--out",
            s(&data),
            "--n-train",
            "6",
            "--n-val",
            "4",
            "--n-test",
            "4",
            "--set",
            "exit_ratio=0.5",
        ]);
        let run = root.join("run");
        ok(&[
            "train",
            "--data",
            s(&data),
            "--out",
            s(&run),
            "--epochs",
            "1",
            "--samples-per-epoch",
            "16",
            "--set",
            "feature_dim=8",
            "--set",
            "box_hidden=4",
        ]);
        ok(&[
            "calibrate",
            "--checkpoint",
            s(&run.join("checkpoint.bin")),
            "--data",
            s(&data),
        ]);
        Fixture { _dir: dir, root }
    })
}

#[test]
fn gen_is_byte_reproducible_and_creates_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("nested/a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&[
            "gen",
            "--seed",
            "7",
            "--n-train",
            "2",
            "--n-val",
            "2",
            "--n-test",
            "3",
            "--out",
            s(out),
        ]);
    }
    let (ta, mut tb) = (tree(&a), tree(&b));
    // the sidecar records its own output path
    let side = PathBuf::from("gen.config.txt");
    assert_ne!(ta[&side], tb[&side]);
    tb.insert(side.clone(), ta[&side].clone());
    assert_eq!(ta, tb);
    assert!(ta.keys().any(|p| p.ends_with("groundtruth.txt")));
}

#[test]
fn gen_rejects_invalid_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = exitrack(&["gen", "--out", s(&out), "--set", "min_frames=10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    assert_eq!(code(&["gen", "--out", s(&out), "--n-test", "many"]), 2);
    assert_eq!(code(&["gen", "--out", s(&out), "--set", "colour=red"]), 2);
    assert_eq!(code(&["gen"]), 2);
}

#[test]
fn sidecar_replays_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    ok(&[
        "gen",
        "--out",
        s(&out),
        "--n-train",
        "1",
        "--n-val",
        "1",
        "--n-test",
        "1",
        "--seed",
        "3",
    ]);
    let first = tree(&out);
    fs::remove_dir_all(out.join("test")).unwrap();
    let side = dir.path().join("side.txt");
    fs::copy(out.join("gen.config.txt"), &side).unwrap();
    ok(&["gen", "--config", s(&side)]);
    assert_eq!(tree(&out), first);
}

#[test]
fn train_variants_and_stages() {
    let f = fixture();
    let log = fs::read_to_string(f.root.join("run/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);

    let two = f.root.join("two");
    ok(&[
        "train",
        "--data",
        s(&f.data()),
        "--out",
        s(&two),
        "--train-mode",
        "two-stage",
        "--ood-input",
        "similarity",
        "--epochs",
        "1",
        "--samples-per-epoch",
        "8",
        "--set",
        "stage2_epochs=1",
        "--set",
        "feature_dim=8",
        "--set",
        "box_hidden=4",
    ]);
    let log = fs::read_to_string(two.join("train_log.jsonl")).unwrap();
    assert!(log.contains("\"stage\":1") && log.contains("\"stage\":2"));
    let ck = exitrack_net::checkpoint::Checkpoint::load(&two.join("checkpoint.bin")).unwrap();
    assert_eq!(ck.net.cfg.ood_input, exitrack_net::OodInput::Similarity);
    assert_eq!(ck.net.cfg.train_mode, exitrack_net::TrainMode::TwoStage);
    let side = kv(&two.join("train.config.txt"));
    assert_eq!(side.get("ood_input"), Some("similarity"));
    assert_eq!(side.get("train_mode"), Some("two-stage"));

    let bad = f.root.join("bad");
    assert_eq!(
        code(&[
            "train",
            "--data",
            s(&f.data()),
            "--out",
            s(&bad),
            "--ood-input",
            "pixels"
        ]),
        2
    );
    assert_eq!(
        code(&[
            "train",
            "--data",
            s(&f.data()),
            "--out",
            s(&bad),
            "--set",
            "ood_input=pixels"
        ]),
        2
    );
}

#[test]
fn calibration_output() {
    let f = fixture();
    let c = kv(&exitrack_cli::cmd::calib_path(&f.ckpt()));
    let eps: f64 = c.parsed("epsilon_star").unwrap().unwrap();
    assert!([0.0025, 0.005, 0.01, 0.02, 0.04, 0.08].contains(&eps));
    assert_eq!(c.get("phi_quantile"), Some("0.05"));
    let phi: f64 = c.parsed("phi").unwrap().unwrap();
    assert!(phi.is_finite());

    // a higher quantile gives a threshold at least as high
    let copy = f.root.join("q/checkpoint.bin");
    fs::create_dir_all(copy.parent().unwrap()).unwrap();
    fs::copy(f.ckpt(), &copy).unwrap();
    ok(&[
        "calibrate",
        "--checkpoint",
        s(&copy),
        "--data",
        s(&f.data()),
        "--phi-quantile",
        "0.5",
    ]);
    let c2 = kv(&exitrack_cli::cmd::calib_path(&copy));
    assert_eq!(c2.get("phi_quantile"), Some("0.5"));
    assert!(c2.parsed::<f64>("phi").unwrap().unwrap() >= phi);
    assert_eq!(c2.get("epsilon_star"), c.get("epsilon_star"));

    let missing = f.root.join("none/checkpoint.bin");
    assert_eq!(
        code(&[
            "calibrate",
            "--checkpoint",
            s(&missing),
            "--data",
            s(&f.data())
        ]),
        3
    );
}

#[test]
fn eval_reports_both_systems_deterministically() {
    let f = fixture();
    let a = f.root.join("eval_a");
    let b = f.root.join("eval_b");
    for out in [&a, &b] {
        ok(&[
            "eval",
            "--checkpoint",
            s(&f.ckpt()),
            "--data",
            s(&f.data()),
            "--out",
            s(out),
        ]);
    }
    let (ta, mut tb) = (tree(&a), tree(&b));
    let side = PathBuf::from("eval.config.txt");
    tb.insert(side.clone(), ta[&side].clone());
    assert_eq!(ta, tb);
    let r = kv(&a.join("report.txt"));
    for k in [
        "ood.fpr",
        "ood.auroc",
        "template.fpr",
        "template.auroc",
        "ood.auc",
    ] {
        assert!(r.contains(k), "{k}");
    }
    let jsonl = fs::read_to_string(a.join("report.jsonl")).unwrap();
    assert!(jsonl.contains("\"id\":\"ood\"") && jsonl.contains("\"id\":\"template\""));
    assert!(ta
        .keys()
        .any(|p| p.starts_with("plots") && p.extension().is_some_and(|e| e == "png")));
    let summary = fs::read_to_string(a.join("summary.txt")).unwrap();
    assert!(summary.contains("AUROC"));

    let empty = f.root.join("empty");
    fs::create_dir_all(empty.join("test")).unwrap();
    let out = f.root.join("eval_empty");
    assert_eq!(
        code(&[
            "eval",
            "--checkpoint",
            s(&f.ckpt()),
            "--data",
            s(&empty),
            "--out",
            s(&out)
        ]),
        3
    );
}

#[test]
fn simulate_flag_sources() {
    let f = fixture();
    let out = f.root.join("sim");
    let text = ok(&[
        "simulate",
        "--checkpoint",
        s(&f.ckpt()),
        "--data",
        s(&f.data()),
        "--out",
        s(&out),
    ]);
    for src in ["oracle", "ood", "none"] {
        assert!(text.contains(&format!("{src}:")), "{text}");
    }
    let summary = kv(&out.join("simulate.txt"));
    assert_eq!(summary.get("success.oracle"), Some("1"));

    let blind = f.root.join("sim_blind");
    let text = ok(&[
        "simulate",
        "--data",
        s(&f.data()),
        "--out",
        s(&blind),
        "--flags",
        "oracle,none",
    ]);
    assert!(text.contains("oracle: 100.0%"));
    assert_eq!(
        code(&[
            "simulate",
            "--data",
            s(&f.data()),
            "--out",
            s(&blind),
            "--flags",
            "ood"
        ]),
        3
    );
    assert_eq!(
        code(&[
            "simulate",
            "--data",
            s(&f.data()),
            "--out",
            s(&blind),
            "--flags",
            "psychic"
        ]),
        2
    );
}
