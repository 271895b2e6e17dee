//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use exitrack_core::dataset::{compute_stats, Sequence};
use exitrack_core::geometry::{giou, iou, BBox, CenterNorm};
use exitrack_core::kv::KvMap;
use exitrack_core::metrics::{auroc, evaluate_dataset, MetricsReport};
use exitrack_core::ood::{ExitDecider, PerturbConfig, ScoreVariant};
use exitrack_core::synthetic::{generate_split, Split, SplitConfig};
use exitrack_core::tasksim::{run_episode, success_rate, PlaceZone};
use exitrack_net::checkpoint::Checkpoint;
use exitrack_net::evaluate::{evaluate_sequence, SequenceEval};
use exitrack_net::gradcheck::{check_params, check_score_input, Term};
use exitrack_net::graph::Tensor;
use exitrack_net::model::G_FLOOR;
use exitrack_net::perturb::{calibrate, perturb, score_gradient, select_epsilon, OodMonitor};
use exitrack_net::train::{class_list, train, Sample, Target, TrainConfig};
use exitrack_net::{NetConfig, TrackerNet, TrainMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn image(rng: &mut ChaCha8Rng, side: usize) -> Tensor {
    Tensor::new(
        vec![3, side, side],
        (0..3 * side * side).map(|_| rng.random()).collect(),
    )
}

fn small_net(seed: u64) -> TrackerNet {
    TrackerNet::new(NetConfig {
        feature_dim: 8,
        box_hidden: 4,
        n_classes: 3,
        search_size: 16,
        template_size: 8,
        init_seed: seed,
        ..Default::default()
    })
    .unwrap()
}

// ---------------------------------------------------------------------------
// oracles

fn auroc_by_pairs(scores: &[f64], visible: &[bool]) -> f64 {
    let pos: Vec<f64> = scores
        .iter()
        .zip(visible)
        .filter(|p| *p.1)
        .map(|p| *p.0)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(visible)
        .filter(|p| !*p.1)
        .map(|p| *p.0)
        .collect();
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// (evr, ael, avl, miel, mael, n_classes) by walking every frame.
fn recount(seqs: &[Sequence]) -> (f64, f64, f64, usize, usize, usize) {
    let mut with_exit = 0;
    let mut exit_frames = 0;
    let mut frames = 0;
    let mut runs = Vec::new();
    let mut classes: Vec<&str> = Vec::new();
    for s in seqs {
        frames += s.annotations.len();
        let mut n = 0;
        let mut run = 0;
        for a in &s.annotations {
            let exit = a.bbox == BBox::EXIT;
            if exit {
                n += 1;
                run += 1;
            } else if run > 0 {
                runs.push(run);
                run = 0;
            }
        }
        if run > 0 {
            runs.push(run);
        }
        if n > 0 {
            with_exit += 1;
            exit_frames += n;
        }
        if !classes.contains(&s.class_label.as_str()) {
            classes.push(&s.class_label);
        }
    }
    let ael = if with_exit > 0 {
        exit_frames as f64 / with_exit as f64
    } else {
        0.0
    };
    (
        with_exit as f64 / seqs.len() as f64,
        ael,
        frames as f64 / seqs.len() as f64,
        runs.iter().copied().min().unwrap_or(0),
        runs.iter().copied().max().unwrap_or(0),
        classes.len(),
    )
}

// ---------------------------------------------------------------------------
// criteria

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let n = rng.random_range(2..=10_000);
        // coarse grids force ties
        let levels = [4.0, 50.0, 1e6][k % 3];
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.random::<f64>() * levels).floor())
            .collect();
        let mut visible: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        visible[0] = true;
        visible[1] = false;
        worst = worst
            .max((auroc(&scores, &visible).unwrap() - auroc_by_pairs(&scores, &visible)).abs());
    }
    let mut mismatches = 0;
    for k in 0..100u64 {
        let cfg = SplitConfig {
            exit_ratio: [0.0, 0.3, 0.5, 1.0][k as usize % 4],
            ..Default::default()
        };
        let split = generate_split(1, 3, 5, 1000 + k, &cfg).unwrap();
        let seqs: Vec<Sequence> = split.val.into_iter().chain(split.test).collect();
        let st = compute_stats(&seqs).unwrap();
        let got = (st.evr, st.ael, st.avl, st.miel, st.mael, st.n_classes);
        if got != recount(&seqs) {
            mismatches += 1;
        }
    }
    outcome(
        worst <= 1e-9 && mismatches == 0,
        format!("auroc max |diff| {worst:.1e} over 100 sets; stats mismatches {mismatches}/100"),
    )
}

fn geometry_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut b = || {
        BBox::new(
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(0.01..15.0),
            rng.random_range(0.01..15.0),
        )
        .unwrap()
    };
    let mut violations = 0;
    for _ in 0..10_000 {
        let (p, q) = (b(), b());
        let (i, g) = (iou(&p, &q).unwrap(), giou(&p, &q).unwrap());
        let ok = (0.0..=1.0).contains(&i)
            && (-1.0..=1.0).contains(&g)
            && g <= i + 1e-12
            && i == iou(&q, &p).unwrap()
            && (g - giou(&q, &p).unwrap()).abs() <= 1e-12;
        violations += usize::from(!ok);
    }
    let a = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
    let c = BBox::new(1.0, 1.0, 2.0, 2.0).unwrap();
    let u = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
    let v = BBox::new(2.0, 2.0, 1.0, 1.0).unwrap();
    let hand = [
        (iou(&a, &c).unwrap(), 1.0 / 7.0),
        (giou(&a, &c).unwrap(), 1.0 / 7.0 - 2.0 / 9.0),
        (giou(&u, &v).unwrap(), -7.0 / 9.0),
    ];
    let hand_err = hand.iter().map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    outcome(
        violations == 0 && hand_err <= 1e-9,
        format!("{violations} violations in 10^4 pairs; hand oracles max err {hand_err:.1e}"),
    )
}

fn gradient_checks() -> Outcome {
    let net = small_net(11);
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut sample = |target| Sample {
        templates: [image(&mut rng, 8), image(&mut rng, 8)],
        search: image(&mut rng, 16),
        target,
    };
    let batch = vec![
        sample(Target {
            gt: Some([0.3, 0.35, 0.62, 0.7]),
            visible: true,
            class: 1,
        }),
        sample(Target {
            gt: Some([0.1, 0.5, 0.3, 0.9]),
            visible: true,
            class: 2,
        }),
        sample(Target {
            gt: None,
            visible: false,
            class: 0,
        }),
    ];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    let terms = [
        Term::Box,
        Term::Bce,
        Term::Ce,
        Term::Score(ScoreVariant::MaxH),
        Term::Score(ScoreVariant::G),
    ];
    for term in terms {
        let r = check_params(&net, &batch, term, 3, 7).unwrap();
        worst = worst.max(r.max_rel_err);
        parts.push(format!("{term:?} {:.1e}", r.max_rel_err));
    }
    let z = net.template_tokens(&batch[0].templates[0]).unwrap();
    for v in [ScoreVariant::MaxH, ScoreVariant::G] {
        let r = check_score_input(&net, [&z, &z], &batch[0].search, v, 64, 3).unwrap();
        worst = worst.max(r.max_rel_err);
        parts.push(format!("dS/dx[{v}] {:.1e}", r.max_rel_err));
    }
    outcome(
        worst < 1e-3,
        format!("max rel err {worst:.1e} ({})", parts.join(", ")),
    )
}

fn decomposition_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    let mut min_g = f64::INFINITY;
    for k in 0..1000u64 {
        // fresh weights every hundred passes
        let net = small_net(k / 100);
        let z = net.template_tokens(&image(&mut rng, 8)).unwrap();
        let x = image(&mut rng, 16);
        let hv = net.infer([&z, &z], &x).unwrap();
        min_g = min_g.min(hv.g);
        for (f, h) in hv.f.iter().zip(&hv.h) {
            worst = worst.max((f * hv.g - h).abs() / h.abs().max(1e-12));
        }
    }
    let net = small_net(0);
    let z = net.template_tokens(&image(&mut rng, 8)).unwrap();
    let x = image(&mut rng, 16);
    let (_, _, grad) = score_gradient(&net, [&z, &z], &x, ScoreVariant::MaxH).unwrap();
    let identity = perturb(&x, &grad, 0.0).unwrap() == x;
    let cfg = PerturbConfig::default();
    let mut members = 0;
    for trial in 0..5 {
        let crops: Vec<([Tensor; 2], Tensor)> = (0..3 + trial)
            .map(|_| {
                let z = net.template_tokens(&image(&mut rng, 8)).unwrap();
                ([z.clone(), z], image(&mut rng, 16))
            })
            .collect();
        let (eps, _) = select_epsilon(&net, &crops, &cfg).unwrap();
        members += usize::from(cfg.epsilon_grid.contains(&eps));
    }
    outcome(
        worst <= 1e-5 && identity && members == 5 && min_g >= G_FLOOR,
        format!(
            "f*g vs h max rel err {worst:.1e} over 1000 passes; eps=0 identity {identity}; grid members {members}/5"
        ),
    )
}

fn freezing_check() -> Outcome {
    let split = generate_split(6, 2, 1, 55, &SplitConfig::default()).unwrap();
    let classes = class_list(
        &split
            .train
            .iter()
            .chain(&split.val)
            .cloned()
            .collect::<Vec<_>>(),
    );
    let mut net = TrackerNet::new(NetConfig {
        feature_dim: 8,
        box_hidden: 4,
        n_classes: classes.len(),
        train_mode: TrainMode::TwoStage,
        ..Default::default()
    })
    .unwrap();
    let ood_before = net.params.checksum(exitrack_net::params::Block::OodHead);
    let cfg = TrainConfig {
        epochs: 1,
        stage2_epochs: 2,
        samples_per_epoch: 16,
        val_samples: 4,
        ..Default::default()
    };
    let rep = train(
        &mut net,
        &classes,
        &split.train,
        &split.val,
        &cfg,
        &mut |_| {},
    )
    .unwrap();
    let (before, after) = rep.frozen_checksums.expect("two-stage reports checksums");
    let moved = net.params.checksum(exitrack_net::params::Block::OodHead) != ood_before;
    outcome(
        before == after && moved,
        format!("box-path checksums {before:x?} -> {after:x?}; OOD head updated {moved}"),
    )
}

/// Desk-scale model shared by the differential criteria.
struct Desk {
    split: Split,
    net: TrackerNet,
    classes: Vec<String>,
    monitor: OodMonitor,
    exit_test: Vec<Sequence>,
    evals: Vec<SequenceEval>,
    ood: MetricsReport,
    template: MetricsReport,
    seconds: f64,
}

const DESK_SEED: u64 = 7;
const DESK_COUNTS: (usize, usize, usize) = (200, 30, 60);

fn desk() -> Desk {
    let t0 = Instant::now();
    let (n_train, n_val, n_test) = DESK_COUNTS;
    let split = generate_split(n_train, n_val, n_test, DESK_SEED, &SplitConfig::default()).unwrap();
    let classes = class_list(
        &split
            .train
            .iter()
            .chain(&split.val)
            .cloned()
            .collect::<Vec<_>>(),
    );
    let mut net = TrackerNet::new(NetConfig {
        n_classes: classes.len(),
        ..Default::default()
    })
    .unwrap();
    let tc = TrainConfig::default();
    train(
        &mut net,
        &classes,
        &split.train,
        &split.val,
        &tc,
        &mut |_| {},
    )
    .unwrap();
    let (monitor, _) = calibrate(
        &net,
        &split.val_id_only(),
        &PerturbConfig::default(),
        &ExitDecider::default(),
    )
    .unwrap();
    let exit_test: Vec<Sequence> = split
        .test
        .iter()
        .filter(|s| s.has_exit())
        .cloned()
        .collect();
    let evals: Vec<SequenceEval> = exit_test
        .iter()
        .map(|s| evaluate_sequence(&net, s, &monitor).unwrap())
        .collect();
    let ood_preds: Vec<_> = evals.iter().map(|e| e.ood.clone()).collect();
    let tmpl_preds: Vec<_> = evals.iter().map(|e| e.template.clone()).collect();
    let ood = evaluate_dataset("ood", &ood_preds, &exit_test, CenterNorm::L2).unwrap();
    let template = evaluate_dataset("template", &tmpl_preds, &exit_test, CenterNorm::L2).unwrap();
    Desk {
        split,
        net,
        classes,
        monitor,
        exit_test,
        evals,
        ood,
        template,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

fn desk_differential(d: &Desk) -> Outcome {
    let (ao, at) = (
        d.ood.auroc.unwrap_or(f64::NAN),
        d.template.auroc.unwrap_or(f64::NAN),
    );
    let (fo, ft) = (
        d.ood.fpr.unwrap_or(f64::NAN),
        d.template.fpr.unwrap_or(f64::NAN),
    );
    outcome(
        ao >= at + 0.05 && fo < ft,
        format!(
            "AUROC ood {ao:.3} vs template {at:.3}; FPR ood {fo:.3} vs template {ft:.3}; \
             {} exit sequences, {} train; eps* {}, phi {:.4}; {:.0} s",
            d.exit_test.len(),
            d.split.train.len(),
            d.monitor.epsilon,
            d.monitor.decider.phi,
            d.seconds
        ),
    )
}

fn task_sim_differential(d: &Desk) -> Outcome {
    let (mut ood, mut none, mut oracle) = (Vec::new(), Vec::new(), Vec::new());
    for (seq, e) in d.exit_test.iter().zip(&d.evals) {
        let f = &seq.frames[0];
        let zone = PlaceZone::conveyor(seq, (f.width, f.height), 3, 5);
        let flags: Vec<bool> = e.ood.pred_visible.iter().map(|v| !v).collect();
        ood.push(run_episode(seq, &e.ood.boxes, &flags, &zone).unwrap());
        none.push(run_episode(seq, &e.template.boxes, &vec![false; seq.len()], &zone).unwrap());
        let gt: Vec<bool> = seq.visibility().iter().map(|v| !v).collect();
        oracle.push(run_episode(seq, &e.template.boxes, &gt, &zone).unwrap());
    }
    let (so, sn, sr) = (
        success_rate(&ood),
        success_rate(&none),
        success_rate(&oracle),
    );
    outcome(
        so > sn && sr == 1.0,
        format!(
            "success ood {:.1}% vs none {:.1}%; oracle {:.1}% over {} episodes",
            100.0 * so,
            100.0 * sn,
            100.0 * sr,
            ood.len()
        ),
    )
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

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_exitrack"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn without_sidecar(mut t: BTreeMap<PathBuf, Vec<u8>>, name: &str) -> BTreeMap<PathBuf, Vec<u8>> {
    t.remove(Path::new(name));
    t
}

fn reproducibility(d: &Desk) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s);
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (_, _, n_test) = DESK_COUNTS;
    let seed = DESK_SEED.to_string();
    let n_test = n_test.to_string();
    let gen = |out: &Path| {
        cli(&[
            "gen",
            "--out",
            &s(out),
            "--seed",
            &seed,
            "--n-train",
            "1",
            "--n-val",
            "1",
            "--n-test",
            &n_test,
        ])
    };
    if !(gen(&p("data_a")) && gen(&p("data_b"))) {
        return outcome(false, "gen failed");
    }
    let gen_same = without_sidecar(tree(&p("data_a")), "gen.config.txt")
        == without_sidecar(tree(&p("data_b")), "gen.config.txt");

    let ck = p("run/checkpoint.bin");
    fs::create_dir_all(p("run")).unwrap();
    Checkpoint {
        net: d.net.clone(),
        classes: d.classes.clone(),
    }
    .save(&ck)
    .unwrap();
    let mut calib = KvMap::new();
    PerturbConfig {
        epsilon_star: Some(d.monitor.epsilon),
        score_variant: d.monitor.variant,
        ..Default::default()
    }
    .write_kv(&mut calib);
    d.monitor.decider.write_kv(&mut calib);
    fs::write(exitrack_cli::cmd::calib_path(&ck), calib.to_text()).unwrap();
    let eval = |out: &Path| {
        cli(&[
            "eval",
            "--checkpoint",
            &s(&ck),
            "--data",
            &s(&p("data_a")),
            "--out",
            &s(out),
        ])
    };
    if !(eval(&p("eval_a")) && eval(&p("eval_b"))) {
        return outcome(false, "eval failed");
    }
    let eval_same = without_sidecar(tree(&p("eval_a")), "eval.config.txt")
        == without_sidecar(tree(&p("eval_b")), "eval.config.txt");
    // the on-disk round trip must reproduce the in-process numbers
    let report = KvMap::parse(&fs::read_to_string(p("eval_a/report.txt")).unwrap()).unwrap();
    let mut expected = KvMap::new();
    d.ood.write_kv("ood", &mut expected);
    d.template.write_kv("template", &mut expected);
    let consistent = expected.iter().all(|(k, v)| report.get(k) == Some(v));
    outcome(
        gen_same && eval_same && consistent,
        format!("gen identical {gen_same}; eval identical {eval_same}; eval matches in-process {consistent}"),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, o: Outcome| {
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    };
    report("oracle equivalence", oracle_equivalence());
    report("geometry suite", geometry_suite());
    report("gradient checks", gradient_checks());
    report("decomposition consistency", decomposition_consistency());
    report("freezing check", freezing_check());
    let d = desk();
    report("desk-scale differential", desk_differential(&d));
    report("task-sim differential", task_sim_differential(&d));
    report("reproducibility", reproducibility(&d));
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
