//! Trainer behavior on small synthetic benchmarks.

use std::collections::BTreeSet;

use unea::config::TrainConfig;
use unea::synth::{generate, SynthSpec};
use unea::trainer::Trainer;

fn small(seed: u64) -> TrainConfig {
    TrainConfig {
        dim: 32,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn identical_features_give_exact_initial_pseudo_labels() {
    let spec = SynthSpec {
        feature_noise_sigma: 0.0,
        ..SynthSpec::default()
    };
    let ds = generate(&spec).unwrap();
    let mut t = Trainer::<f32>::new(&ds.pair, &ds.features, small(0)).unwrap();
    t.refresh().unwrap();
    let truth: BTreeSet<_> = ds.ground_truth.iter().copied().collect();
    let labels = t.state.pseudo.pairs();
    assert!(!labels.is_empty());
    assert!(labels.iter().all(|p| truth.contains(p)), "precision below 1");
}

#[test]
fn loss_decreases_over_first_epochs() {
    let mut drops = Vec::new();
    for seed in 0..5 {
        let spec = SynthSpec {
            n_entities: 100,
            n_triples: 400,
            seed,
            ..SynthSpec::default()
        };
        let ds = generate(&spec).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            ..small(seed)
        };
        let mut t = Trainer::<f32>::new(&ds.pair, &ds.features, cfg).unwrap();
        let h = t.run(|_| {}).unwrap();
        drops.push(h[0].loss.total - h[9].loss.total);
    }
    drops.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert!(drops[2] > 0.0, "median drop {}", drops[2]);
}

#[test]
fn frozen_momentum_keeps_trees() {
    let ds = generate(&SynthSpec {
        n_entities: 60,
        n_triples: 240,
        ..SynthSpec::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        mu: 1.0,
        m: 1,
        epochs: 3,
        ..small(5)
    };
    let mut t = Trainer::<f32>::new(&ds.pair, &ds.features, cfg).unwrap();
    t.refresh().unwrap();
    let first = t.state.trees.clone();
    t.run(|_| {}).unwrap();
    assert_eq!(t.state.trees, first);
}

#[test]
fn refresh_is_repeatable() {
    let ds = generate(&SynthSpec {
        n_entities: 60,
        n_triples: 240,
        feature_noise_sigma: 0.2,
        ..SynthSpec::default()
    })
    .unwrap();
    let run = || {
        let mut t = Trainer::<f32>::new(&ds.pair, &ds.features, small(9)).unwrap();
        t.refresh().unwrap();
        t.state.pseudo.clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn ablation_variants_train() {
    let ds = generate(&SynthSpec {
        n_entities: 50,
        n_triples: 200,
        ..SynthSpec::default()
    })
    .unwrap();
    for flag in ["uniform_sampling", "plain_gnn_encoder", "no_mi"] {
        let mut cfg = TrainConfig {
            epochs: 3,
            m: 2,
            ..small(1)
        };
        cfg.set(flag, "true").unwrap();
        let mut t = Trainer::<f32>::new(&ds.pair, &ds.features, cfg).unwrap();
        let h = t.run(|_| {}).unwrap();
        assert_eq!(h.len(), 3);
        assert!(h.iter().all(|r| r.loss.is_finite()), "{flag}");
        let m = h.last().unwrap().metrics.unwrap();
        assert!(m.hits1 > 0.5, "{flag}: {m:?}");
        if flag == "no_mi" {
            assert_eq!(h[0].loss.l_mi, 0.0);
        }
        if flag == "plain_gnn_encoder" {
            assert!(t.state.trees[0].iter().all(|tr| tr.root.height() <= 1));
        }
    }
}
