use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use relabel::baselines::{
    frequency_baseline, label_propagation, label_propagation_split, single_tree_labeler,
    PropagationConfig,
};
use relabel::dataset::Vocab;
use relabel::downstream::{
    noise_aware_gradient, noise_aware_loss, predict_scores, train_classifier_targets,
    ClassifierParams, TrainConfig,
};
use relabel::synthgen::{generate, SynthSpec};
use relabel::{split_with, SplitConfig, SplitDataset};

fn small_split() -> SplitDataset {
    let mut spec = SynthSpec::acceptance(6);
    spec.instances_per_predicate = 60;
    let (ds, m) = generate(&spec).unwrap();
    split_with(
        &ds,
        &SplitConfig {
            n: 10,
            seed: 1,
            negative_ratio: m.negative_ratio,
            ..Default::default()
        },
    )
    .unwrap()
}

fn assert_distributions(rows: &[Vec<f64>], k: usize) {
    for r in rows {
        assert_eq!(r.len(), k);
        assert!(r.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
        assert_relative_eq!(r.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }
}

#[test]
fn baseline_outputs_are_distributions() {
    let split = small_split();
    let np = split.num_predicates;
    for overlap in [false, true] {
        let (_, d) = frequency_baseline(&split, &split.unlabeled, overlap);
        assert_eq!(d.len(), split.unlabeled.len());
        assert_distributions(&d, np);
    }
    let (_, d) = single_tree_labeler(&split, Some(3)).unwrap();
    assert_distributions(&d, np);
    let r = label_propagation_split(&split, &PropagationConfig::default()).unwrap();
    assert_eq!(r.unlabeled.len(), split.unlabeled.len());
    assert_distributions(&r.unlabeled, np);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn propagation_rows_are_distributions(
        lab in prop::collection::vec((prop::collection::vec(-3.0..3.0f64, 2), 0usize..3), 2..12),
        unl in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 2), 1..30),
    ) {
        let x: Vec<Vec<f64>> = lab.iter().map(|r| r.0.clone()).collect();
        let y: Vec<usize> = lab.iter().map(|r| r.1).collect();
        let cfg = PropagationConfig { k_neighbors: 4, ..Default::default() };
        let r = label_propagation(&x, &y, &unl, 3, &cfg).unwrap();
        assert_distributions(&r.unlabeled, 3);
    }

    #[test]
    fn noise_aware_gradient_matches_finite_differences(
        theta in prop::collection::vec(-2.0..2.0f64, 4),
        v in prop::collection::vec(-2.0..2.0f64, 3),
        p in 0.0..1.0f64,
    ) {
        let g = noise_aware_gradient(&theta, &v, p);
        let h = 1e-6;
        for j in 0..theta.len() {
            let mut up = theta.clone();
            up[j] += h;
            let mut dn = theta.clone();
            dn[j] -= h;
            let fd = (noise_aware_loss(&up, &v, p) - noise_aware_loss(&dn, &v, p)) / (2.0 * h);
            assert_relative_eq!(g[j], fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn noise_aware_loss_is_minimized_at_target(z in -5.0..5.0f64, p in 0.01..0.99f64) {
        // with a single bias weight the loss is minimized where sigmoid(b) = p
        let best = (p / (1.0 - p)).ln();
        prop_assert!(noise_aware_loss(&[best], &[], p) <= noise_aware_loss(&[z], &[], p) + 1e-12);
    }
}

/// Two Gaussian classes in three dimensions, well separated along a
/// diagonal.
fn separable(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let c = i % 2;
        let mu = if c == 0 { -2.0 } else { 2.0 };
        x.push((0..3).map(|_| mu + noise.sample(&mut rng)).collect());
        y.push(c);
    }
    (x, y)
}

#[test]
fn separable_fixture_is_recovered() {
    let (x, y) = separable(400, 3);
    let targets: Vec<Vec<f64>> = y
        .iter()
        .map(|&c| {
            if c == 0 {
                vec![1.0, 0.0]
            } else {
                vec![0.0, 1.0]
            }
        })
        .collect();
    let params = train_classifier_targets(&x, &targets, 2, &TrainConfig::default())
        .unwrap()
        .params;
    let (xt, yt) = separable(400, 4);
    let correct = xt
        .iter()
        .zip(&yt)
        .filter(|(v, &c)| {
            let s = predict_scores(&params, v).unwrap();
            (if s[1] > s[0] { 1 } else { 0 }) == c
        })
        .count();
    assert!(correct as f64 >= 0.95 * xt.len() as f64, "{correct}/400");
}

#[test]
fn soft_targets_train_like_hard_ones_on_clean_data() {
    let (x, y) = separable(300, 5);
    let soft: Vec<Vec<f64>> = y
        .iter()
        .map(|&c| {
            if c == 0 {
                vec![0.9, 0.1]
            } else {
                vec![0.1, 0.9]
            }
        })
        .collect();
    let params = train_classifier_targets(&x, &soft, 2, &TrainConfig::default())
        .unwrap()
        .params;
    let agree = x
        .iter()
        .zip(&y)
        .filter(|(v, &c)| {
            let s = predict_scores(&params, v).unwrap();
            (if s[1] > s[0] { 1 } else { 0 }) == c
        })
        .count();
    assert!(agree as f64 >= 0.95 * x.len() as f64);
}

#[test]
fn classifier_json_round_trip() {
    let (x, y) = separable(100, 6);
    let targets: Vec<Vec<f64>> = y
        .iter()
        .map(|&c| vec![(c == 0) as u8 as f64, c as f64])
        .collect();
    let params = train_classifier_targets(&x, &targets, 2, &TrainConfig::default())
        .unwrap()
        .params;
    let vocab = Vocab::new(["left", "right"]).unwrap();
    let text = serde_json::to_string(&params.to_json(&vocab)).unwrap();
    let back = ClassifierParams::from_json(&serde_json::from_str(&text).unwrap(), &vocab).unwrap();
    assert_eq!(back, params);
}
