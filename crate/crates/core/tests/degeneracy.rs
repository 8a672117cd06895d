//! Reductions between model variants and ensemble modes.

mod common;

use lobrm_autodiff::Graph;
use lobrm_core::experiments::{run_ablation, ExperimentConfig};
use lobrm_core::model::{LobrmModel, Mode, Regressor, Variant};
use lobrm_core::pipeline::Part;
use lobrm_core::preprocess::SampleWindow;
use lobrm_core::train::TrainConfig;
use lobrm_core::types::Side;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

fn windows(window: usize) -> Vec<SampleWindow> {
    let p = common::prepared(&common::market(3, 40.0, 21, false));
    let all = p.samples(Part::Test, Side::Ask, window).unwrap();
    all.into_iter().step_by(7).take(64).collect()
}

fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn decay_with_a_silent_rate_network_is_a_plain_gru() {
    let ws = windows(12);
    for (decay, plain) in [(Variant::Decay, Variant::Gru), (Variant::DecayT, Variant::GruT)] {
        for mode in Mode::ALL.into_iter().filter(|m| m.uses_es()) {
            for seed in 0..3 {
                let mut cfg = common::tiny_config(12, 6);
                cfg.variant = decay;
                let mut d = LobrmModel::new(cfg.clone(), Side::Ask, mode, seed, 0.4).unwrap();
                d.params.zero_prefix("es.decay.");
                cfg.variant = plain;
                let g = LobrmModel::new(cfg, Side::Ask, mode, seed, 0.4).unwrap();
                let diff = max_diff(&d.predict(&ws).unwrap(), &g.predict(&ws).unwrap());
                assert!(diff <= TOL, "{decay} vs {plain} in {mode}: {diff}");
            }
        }
    }
}

#[test]
fn zeroed_weighting_scheme_is_the_fixed_half_ensemble() {
    let ws = windows(12);
    for seed in 0..5 {
        let cfg = common::tiny_config(12, 6);
        let mut full = LobrmModel::new(cfg.clone(), Side::Ask, Mode::Full, seed, 0.4).unwrap();
        full.params.zero_prefix("ws.");
        let fixed = LobrmModel::new(cfg, Side::Ask, Mode::HcEs, seed, 0.4).unwrap();
        let diff = max_diff(&full.predict(&ws).unwrap(), &fixed.predict(&ws).unwrap());
        assert!(diff <= TOL, "{diff}");
    }
}

#[test]
fn ensemble_lies_between_its_branches() {
    let ws = windows(6);
    let refs: Vec<&SampleWindow> = ws.iter().take(8).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..1_000 {
        let mode = if i % 2 == 0 { Mode::Full } else { Mode::HcEs };
        let mut cfg = common::tiny_config(6, 3);
        cfg.fixed_weight = rng.gen_range(0.0..=1.0);
        let mut m = LobrmModel::new(cfg, Side::Ask, mode, i, 0.4).unwrap();
        let scale: f64 = rng.gen_range(0.1..3.0);
        for (_, p) in m.params.iter_mut() {
            for x in p.value.data_mut() {
                *x = rng.gen_range(-scale..scale);
            }
        }
        let inputs = m.inputs(&refs).unwrap();
        let mut g = Graph::new();
        let parts = m.parts(&mut g, &m.params, &inputs).unwrap();
        let out = g.value(parts.output).data();
        let hc = g.value(parts.hc.unwrap()).data();
        let es = g.value(parts.es.unwrap()).data();
        for j in 0..out.len() {
            let (lo, hi) = (hc[j].min(es[j]), hc[j].max(es[j]));
            // one rounding of the final sum
            let slack = 4.0 * f64::EPSILON * hi.abs().max(lo.abs());
            assert!(out[j] >= lo - slack && out[j] <= hi + slack, "{mode} #{i}: {} not in [{lo}, {hi}]", out[j]);
        }
    }
}

#[test]
fn frozen_zero_weighting_row_matches_the_fixed_half_row() {
    let p = common::prepared(&common::market(3, 40.0, 8, true));
    let cfg = ExperimentConfig {
        model: common::tiny_config(8, 4),
        train: TrainConfig {
            iterations: 2,
            lr: 1e-3,
            batch_size: 64,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let rows = run_ablation(&p, Side::Bid, &cfg, true).unwrap();
    assert_eq!(rows.len(), 4);
    let get = |m: Mode| rows.iter().find(|r| r.0 == m).unwrap().1;
    assert!((get(Mode::Full) - get(Mode::HcEs)).abs() <= TOL);
}
