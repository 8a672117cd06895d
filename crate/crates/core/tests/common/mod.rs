#![allow(dead_code)]

use std::io::Cursor;

use lobrm_core::lobster::{align_and_filter, parse_message_file, parse_orderbook_file, SessionConfig};
use lobrm_core::model::{BranchConfig, EsConfig, LobrmConfig};
use lobrm_core::pipeline::{PrepConfig, Prepared};
use lobrm_core::synth::{simulate, LinearLink, MarketConfig, Simulation};
use lobrm_core::types::TradeRecord;

/// A session of `minutes` with `trim` minutes dropped at each end.
pub fn session(minutes: f64, trim: f64) -> SessionConfig {
    SessionConfig {
        open: 34_200.0,
        close: 34_200.0 + minutes * 60.0,
        open_trim_s: trim * 60.0,
        close_trim_s: trim * 60.0,
        include_hidden: true,
    }
}

pub fn market(days: usize, minutes: f64, seed: u64, linked: bool) -> MarketConfig {
    MarketConfig {
        seed,
        days,
        session: session(minutes, 5.0),
        linear_link: linked.then(|| LinearLink::seeded(5, seed + 100)),
        ..MarketConfig::default()
    }
}

/// Runs the simulated files through the parsers, as ingestion would.
pub fn load(sim: &Simulation) -> Vec<Vec<TradeRecord>> {
    sim.days
        .iter()
        .map(|d| {
            let msgs = parse_message_file(Cursor::new(d.message_csv().unwrap())).unwrap();
            let rows = parse_orderbook_file(Cursor::new(d.orderbook_csv().unwrap()), sim.config.levels).unwrap();
            align_and_filter(&msgs, &rows, &sim.config.session, sim.config.tick).unwrap()
        })
        .collect()
}

pub fn simulated_days(cfg: &MarketConfig) -> Vec<Vec<TradeRecord>> {
    load(&simulate(cfg).unwrap())
}

pub fn prepared(cfg: &MarketConfig) -> Prepared {
    Prepared::fit(&simulated_days(cfg), &PrepConfig::default()).unwrap()
}

/// Small model dimensions for exhaustive checks.
pub fn tiny_config(window: usize, hidden: usize) -> LobrmConfig {
    LobrmConfig {
        window,
        es: EsConfig {
            gru_units: hidden,
            decay_mlp: vec![4],
            decoder: vec![4],
            latent: 3,
        },
        hc: BranchConfig {
            gru_units: hidden,
            decoder: vec![4],
            latent: 3,
        },
        ws: BranchConfig {
            gru_units: hidden,
            decoder: vec![3],
            latent: 2,
        },
        ..LobrmConfig::default()
    }
}
