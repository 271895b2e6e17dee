use exitrack_core::ood::ScoreVariant;
use exitrack_net::gradcheck::{check_params, check_score_input, Term};
use exitrack_net::graph::Tensor;
use exitrack_net::train::{Sample, Target};
use exitrack_net::{NetConfig, TrackerNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-3;

fn net() -> TrackerNet {
    TrackerNet::new(NetConfig {
        feature_dim: 8,
        box_hidden: 4,
        n_classes: 3,
        search_size: 16,
        template_size: 8,
        init_seed: 11,
        ..Default::default()
    })
    .unwrap()
}

fn image(rng: &mut ChaCha8Rng, side: usize) -> Tensor {
    Tensor::new(
        vec![3, side, side],
        (0..3 * side * side).map(|_| rng.random()).collect(),
    )
}

fn batch(seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = |target| Sample {
        templates: [image(&mut rng, 8), image(&mut rng, 8)],
        search: image(&mut rng, 16),
        target,
    };
    vec![
        s(Target {
            gt: Some([0.3, 0.35, 0.62, 0.7]),
            visible: true,
            class: 1,
        }),
        s(Target {
            gt: Some([0.1, 0.5, 0.3, 0.9]),
            visible: true,
            class: 2,
        }),
        s(Target {
            gt: None,
            visible: false,
            class: 0,
        }),
    ]
}

fn assert_term(term: Term) {
    let r = check_params(&net(), &batch(3), term, 3, 5).unwrap();
    assert!(r.checked > 50, "{term:?}: only {} coordinates", r.checked);
    assert!(
        r.max_rel_err < TOL,
        "{term:?}: relative error {}",
        r.max_rel_err
    );
    assert!(r.max_abs_grad > 1e-3, "{term:?}: gradients vanish");
    eprintln!(
        "{term:?}: {} coords, max rel err {:.2e}",
        r.checked, r.max_rel_err
    );
}

#[test]
fn box_loss_gradient() {
    assert_term(Term::Box);
}

#[test]
fn update_score_bce_gradient() {
    assert_term(Term::Bce);
}

#[test]
fn ood_cross_entropy_gradient() {
    assert_term(Term::Ce);
}

#[test]
fn total_loss_gradient() {
    assert_term(Term::Total);
}

#[test]
fn score_parameter_gradients() {
    assert_term(Term::Score(ScoreVariant::MaxH));
    assert_term(Term::Score(ScoreVariant::G));
}

#[test]
fn score_input_gradient() {
    let net = net();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z = net.template_tokens(&image(&mut rng, 8)).unwrap();
    let x = image(&mut rng, 16);
    for v in [ScoreVariant::MaxH, ScoreVariant::G] {
        let r = check_score_input(&net, [&z, &z], &x, v, 64, 1).unwrap();
        assert_eq!(r.checked, 64);
        assert!(r.max_rel_err < TOL, "{v}: relative error {}", r.max_rel_err);
        assert!(r.max_abs_grad > 1e-4, "{v}: gradients vanish");
        eprintln!(
            "{v} input: max rel err {:.2e}, max |grad| {:.2e}",
            r.max_rel_err, r.max_abs_grad
        );
    }
}
