//! Finite-difference checks of whole-model gradients at small dimensions.

mod common;

use lobrm_autodiff::{grad_check, GradCheckConfig, Graph, ParamStore, Result, Tensor, Var};
use lobrm_core::model::{es_forward, hc_forward, ws_forward, LobrmModel, Mode, Regressor, Slfn, SlfnConfig, Variant};
use lobrm_core::pipeline::Part;
use lobrm_core::preprocess::SampleWindow;
use lobrm_core::trend::{TrendEncoding, TrendModel};
use lobrm_core::types::Side;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INSTANCES: u64 = 20;
const WINDOW: usize = 4;
const HIDDEN: usize = 3;

fn windows() -> Vec<SampleWindow> {
    let p = common::prepared(&common::market(3, 40.0, 11, false));
    p.samples(Part::Train, Side::Bid, WINDOW).unwrap()
}

/// Every parameter redrawn away from activation kinks.
fn scramble(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for (_, p) in store.iter_mut() {
        for x in p.value.data_mut() {
            let m: f64 = rng.gen_range(0.05..0.6);
            *x = if rng.gen_bool(0.5) { m } else { -m };
        }
    }
}

fn pick<'a>(all: &'a [SampleWindow], rng: &mut ChaCha8Rng) -> Vec<&'a SampleWindow> {
    (0..3).map(|_| &all[rng.gen_range(0..all.len())]).collect()
}

fn weighted(g: &mut Graph, y: Var, rng_seed: u64) -> Result<Var> {
    let t = g.value(y);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let w = Tensor::matrix(t.rows(), t.cols(), (0..t.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn assert_passes<F>(store: &ParamStore, f: F, what: &str)
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    assert_passes_with(store, f, what, GradCheckConfig::default());
}

fn assert_passes_with<F>(store: &ParamStore, f: F, what: &str, cfg: GradCheckConfig)
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let r = grad_check(f, store, cfg).unwrap();
    assert!(r.passed, "{what}: max rel err {} at {:?} abs {}", r.max_rel_error, r.worst, r.max_abs_error);
}

#[test]
fn event_simulator_with_decay_and_time_feature() {
    let all = windows();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = common::tiny_config(WINDOW, HIDDEN);
        assert_eq!(cfg.variant, Variant::DecayT);
        let mut m = LobrmModel::new(cfg, Side::Bid, Mode::Es, seed, 0.3).unwrap();
        scramble(&mut m.params, &mut rng);
        let inputs = m.inputs(&pick(&all, &mut rng)).unwrap();
        assert_passes(
            &m.params,
            |g, s| {
                let y = es_forward(g, s, &m.config, &inputs.es_x, &inputs.phis).map_err(lift)?;
                weighted(g, y, seed)
            },
            "es",
        );
    }
}

#[test]
fn history_compiler() {
    let all = windows();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = LobrmModel::new(common::tiny_config(WINDOW, HIDDEN), Side::Bid, Mode::Hc, seed, 0.3).unwrap();
        scramble(&mut m.params, &mut rng);
        let inputs = m.inputs(&pick(&all, &mut rng)).unwrap();
        assert_passes(
            &m.params,
            |g, s| {
                let y = hc_forward(g, s, &m.config, &inputs.hc_x).map_err(lift)?;
                weighted(g, y, seed)
            },
            "hc",
        );
    }
}

#[test]
fn weighting_scheme() {
    let all = windows();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = LobrmModel::new(common::tiny_config(WINDOW, HIDDEN), Side::Bid, Mode::Full, seed, 0.3).unwrap();
        scramble(&mut m.params, &mut rng);
        let inputs = m.inputs(&pick(&all, &mut rng)).unwrap();
        let mut ws_only = ParamStore::new();
        for (k, p) in m.params.iter().filter(|(k, _)| k.starts_with("ws.")) {
            ws_only.insert(k.clone(), p.value.clone());
        }
        assert_passes(
            &ws_only,
            |g, s| {
                let y = ws_forward(g, s, &m.config, &inputs.masks).map_err(lift)?;
                weighted(g, y, seed)
            },
            "ws",
        );
    }
}

#[test]
fn full_ensemble_under_l1() {
    let all = windows();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = LobrmModel::new(common::tiny_config(WINDOW, HIDDEN), Side::Bid, Mode::Full, seed, 0.3).unwrap();
        scramble(&mut m.params, &mut rng);
        let batch = pick(&all, &mut rng);
        let target = Tensor::matrix(
            batch.len(),
            4,
            batch.iter().flat_map(|w| w.label.iter().map(|y| y + 5.0)).collect(),
        );
        assert_passes_with(
            &m.params,
            |g, s| {
                let y = m.forward_with(g, s, &batch).map_err(lift)?;
                let t = g.constant(target.clone());
                g.l1_loss(y, t)
            },
            "full",
            // the loss sits near 5, so a wider step keeps rounding below the
            // smallest gradients
            GradCheckConfig {
                step: 1e-4,
                ..GradCheckConfig::default()
            },
        );
    }
}

#[test]
fn single_layer_network() {
    let all = windows();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = SlfnConfig {
            window: WINDOW,
            hidden: 5,
            ..SlfnConfig::default()
        };
        let mut m = Slfn::new(cfg, seed).unwrap();
        scramble(&mut m.params, &mut rng);
        let batch = pick(&all, &mut rng);
        assert_passes(
            &m.params,
            |g, s| {
                let y = m.forward_with(g, s, &batch).map_err(lift)?;
                weighted(g, y, seed)
            },
            "slfn",
        );
    }
}

#[test]
fn trend_classifier_for_every_encoding() {
    for seed in 0..INSTANCES {
        for enc in TrendEncoding::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let width = enc.width(2);
            let mut m = TrendModel::new(enc, width, HIDDEN, seed).unwrap();
            scramble(&mut m.params, &mut rng);
            let steps: Vec<Tensor> = (0..WINDOW)
                .map(|_| Tensor::matrix(2, width, (0..2 * width).map(|_| rng.gen_range(-1.0..1.0)).collect()))
                .collect();
            let classes = [rng.gen_range(0..3), rng.gen_range(0..3)];
            assert_passes(
                &m.params,
                |g, s| {
                    let z = m.logits_with(g, s, &steps).map_err(lift)?;
                    g.cross_entropy(z, &classes)
                },
                enc.as_str(),
            );
        }
    }
}

fn lift(e: lobrm_core::Error) -> lobrm_autodiff::AutodiffError {
    match e {
        lobrm_core::Error::Autodiff(a) => a,
        other => panic!("unexpected error {other}"),
    }
}
