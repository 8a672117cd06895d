//! Learning and reproducibility on simulated markets.

mod common;

use lobrm_core::experiments::{run_training_size_study, ExperimentConfig, SplitSamples};
use lobrm_core::metrics::{eval_l1, eval_r_squared};
use lobrm_core::model::{LobrmModel, Mode, Regressor, RidgeModel, RIDGE_LAMBDAS};
use lobrm_core::pipeline::{fit_transforms, Part, PrepConfig, Prepared};
use lobrm_core::preprocess::SplitScheme;
use lobrm_core::synth::simulate;
use lobrm_core::train::{train, Checkpoint, IterationUnit, ModelState, TrainConfig};
use lobrm_core::trend::{run_trend_experiment, TrendConfig};
use lobrm_core::types::{Side, TradeRecord};

fn zero_l1(labels: &[Vec<f64>]) -> f64 {
    let zeros: Vec<Vec<f64>> = labels.iter().map(|l| vec![0.0; l.len()]).collect();
    eval_l1(&zeros, labels).unwrap()
}

#[test]
fn simulation_is_seeded() {
    let a = simulate(&common::market(2, 20.0, 1, true)).unwrap();
    let b = simulate(&common::market(2, 20.0, 1, true)).unwrap();
    let c = simulate(&common::market(2, 20.0, 2, true)).unwrap();
    for i in 0..2 {
        assert_eq!(a.days[i].message_csv().unwrap(), b.days[i].message_csv().unwrap());
        assert_eq!(a.days[i].orderbook_csv().unwrap(), b.days[i].orderbook_csv().unwrap());
    }
    assert_ne!(a.days[0].message_csv().unwrap(), c.days[0].message_csv().unwrap());
}

#[test]
fn ridge_recovers_the_linear_link() {
    let p = common::prepared(&common::market(5, 240.0, 7, true));
    let window = 50;
    let s = SplitSamples::new(&p, Side::Ask, window).unwrap();
    let (ridge, _) = RidgeModel::fit_select(&s.train, &s.val, window, 8, 100, false, &RIDGE_LAMBDAS).unwrap();
    let labels: Vec<Vec<f64>> = s.test.iter().map(|w| w.label.clone()).collect();
    let r2 = eval_r_squared(&ridge.predict(&s.test).unwrap(), &labels).unwrap();
    assert!(r2 > 0.99, "test R² {r2}");
}

fn small_lobrm_config() -> ExperimentConfig {
    ExperimentConfig {
        model: common::tiny_config(20, 8),
        train: TrainConfig {
            iterations: 3,
            lr: 5e-3,
            batch_size: 64,
            seed: 4,
            ..TrainConfig::default()
        },
        prep: PrepConfig::default(),
    }
}

#[test]
fn end_to_end_beats_the_zero_predictor() {
    let p = common::prepared(&common::market(5, 90.0, 3, true));
    let cfg = small_lobrm_config();
    let s = SplitSamples::new(&p, Side::Bid, cfg.model.window).unwrap();
    let mut m = LobrmModel::new(cfg.model.clone(), Side::Bid, Mode::Full, 4, p.mean_train_phi()).unwrap();
    train(&mut m, &s.train, &s.val, &cfg.train).unwrap();
    let labels: Vec<Vec<f64>> = s.test.iter().map(|w| w.label.clone()).collect();
    let l1 = eval_l1(&m.predict(&s.test).unwrap(), &labels).unwrap();
    assert!(l1 < zero_l1(&labels), "{l1}");
}

fn checkpoint_json(days: &[Vec<TradeRecord>], cfg: &ExperimentConfig) -> String {
    let p = Prepared::fit(days, &cfg.prep).unwrap();
    let s = SplitSamples::new(&p, Side::Ask, cfg.model.window).unwrap();
    let mut m = LobrmModel::new(cfg.model.clone(), Side::Ask, Mode::Full, cfg.train.seed, p.mean_train_phi()).unwrap();
    let outcome = train(&mut m, &s.train, &s.val, &cfg.train).unwrap();
    let ckpt = Checkpoint {
        symbol: "SYN".into(),
        side: Side::Ask,
        norm_stats: p.stats,
        winsor_cuts: p.cuts,
        model: ModelState::Lobrm(m),
        train_config: Some(cfg.train.clone()),
        outcome: Some(outcome),
    };
    serde_json::to_string(&ckpt).unwrap()
}

#[test]
fn test_day_cannot_reach_fitted_state() {
    let days = common::simulated_days(&common::market(5, 60.0, 12, true));
    let mut tainted = days.clone();
    for r in tainted.last_mut().unwrap() {
        r.event.quote.ask_volume *= 7.0;
        r.event.quote.bid_volume += 1_000.0;
        r.event.trade.volume *= 3.0;
        for v in r.ask.volumes.iter_mut().chain(r.bid.volumes.iter_mut()) {
            *v = *v * 5.0 + 11.0;
        }
    }
    let cfg = small_lobrm_config();
    assert_eq!(
        fit_transforms(&days, &cfg.prep).unwrap(),
        fit_transforms(&tainted, &cfg.prep).unwrap()
    );
    assert_eq!(checkpoint_json(&days, &cfg), checkpoint_json(&tainted, &cfg));
}

#[test]
fn training_is_bit_reproducible() {
    let days = common::simulated_days(&common::market(4, 45.0, 2, true));
    let cfg = small_lobrm_config();
    assert_eq!(checkpoint_json(&days, &cfg), checkpoint_json(&days, &cfg));
}

#[test]
fn training_size_study_on_a_stationary_market() {
    let days = common::simulated_days(&common::market(5, 60.0, 6, true));
    // equal optimizer budgets, so only the amount of data differs
    let mut cfg = small_lobrm_config();
    cfg.train.unit = IterationUnit::Steps;
    cfg.train.iterations = 300;
    let study = run_training_size_study(&days, Side::Ask, Mode::HcEs, &cfg).unwrap();
    let schemes: Vec<_> = study.rows.iter().map(|r| (r.scheme, r.train_days)).collect();
    assert_eq!(
        schemes,
        [(SplitScheme::Day3, 1), (SplitScheme::Day2And3, 2), (SplitScheme::Day1To3, 3)]
    );
    let losses: Vec<f64> = study.rows.iter().map(|r| r.test_l1).collect();
    let (lo, hi) = losses.iter().fold((f64::MAX, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    assert!(hi / lo < 1.5, "{losses:?}");
    assert!(matches!(
        run_training_size_study(&days[..4], Side::Ask, Mode::HcEs, &cfg),
        Err(lobrm_core::Error::NotEnoughDays { have: 4, need: 5 })
    ));
}

#[test]
fn trend_models_beat_the_majority_class_on_a_momentum_market() {
    let mut market = common::market(5, 120.0, 0, false);
    market.momentum = 0.95;
    market.session = common::session(120.0, 10.0);
    let days = common::simulated_days(&market);
    let mut cfg = TrendConfig::default();
    cfg.train.iterations = 20;
    cfg.train.lr = 5e-3;
    let r = run_trend_experiment(&days, &cfg).unwrap();
    assert_eq!(r.cells.len(), 6);
    let total: f64 = r.train_distribution.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    for c in &r.cells {
        assert!(
            c.test_accuracy > r.majority_accuracy,
            "{:?}/{:?}: {} vs {}",
            c.encoding,
            c.scaling,
            c.test_accuracy,
            r.majority_accuracy
        );
    }
    assert_eq!(r.to_csv().lines().count(), 3);
}

#[test]
fn split_parts_do_not_overlap() {
    let p = common::prepared(&common::market(5, 30.0, 1, false));
    let total: usize = [Part::Train, Part::Val, Part::Test].iter().map(|&x| p.days(x).len()).sum();
    assert_eq!(total, 5);
    assert_eq!((p.train.len(), p.val.len(), p.test.len()), (3, 1, 1));
}
