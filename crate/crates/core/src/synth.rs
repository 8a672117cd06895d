//! Seeded synthetic continuous double auction emitting LOBSTER files.
//!
//! The book keeps `levels` price levels per side exactly one tick apart.
//! Submissions, partial cancellations and executions arrive as a Poisson
//! stream. Executions eat the top level; a depleted level shifts the book
//! away from the spread, and submissions inside a wide spread shift it back.
//! In linear-link mode every execution resets the deep levels to an affine
//! function of the last [`LINK_LAGS`] trade-time observations.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lobster::{write_message_file, write_orderbook_file, Level, RawBookRow, RawMessage, SessionConfig};
use crate::pipeline::{DayFiles, Manifest};
use crate::types::{Side, CENT_TICK, LEVELS};

/// Number of past trade-time observations feeding the linear link.
pub const LINK_LAGS: usize = 10;

/// Deep volume of level `l` (2-based) after an execution:
/// `intercept[l] + Σ_j trade[l][j] · trade_volume(t − j) + quote[l][j] · top_volume(t − j)`,
/// rounded and floored at one share. `top_volume` is the post-trade top
/// volume of the side being set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLink {
    pub intercept: Vec<f64>,
    pub trade: Vec<Vec<f64>>,
    pub quote: Vec<Vec<f64>>,
}

impl LinearLink {
    /// Random coefficients with a stable feedback through the top volume.
    pub fn seeded(levels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let deep = levels.saturating_sub(1);
        Self {
            intercept: (0..deep).map(|l| 200.0 + 50.0 * l as f64).collect(),
            trade: (0..deep)
                .map(|_| (0..LINK_LAGS).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect(),
            quote: (0..deep)
                .map(|_| (0..LINK_LAGS).map(|_| rng.gen_range(-0.05..0.1)).collect())
                .collect(),
        }
    }

    fn validate(&self, levels: usize) -> Result<()> {
        let deep = levels - 1;
        let ok = self.intercept.len() == deep
            && self.trade.len() == deep
            && self.quote.len() == deep
            && self.trade.iter().chain(&self.quote).all(|c| c.len() == LINK_LAGS);
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "linear link needs {deep} levels of {LINK_LAGS} lags"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketConfig {
    pub seed: u64,
    pub symbol: String,
    pub days: usize,
    pub session: SessionConfig,
    pub tick: i64,
    pub levels: usize,
    pub start_price: i64,
    /// Initial volume of each level, also the refill of a level exposed by a shift.
    pub base_volumes: Vec<i64>,
    pub order_size: i64,
    pub trade_size: i64,
    /// Poisson rates per second.
    pub submit_rate: f64,
    pub cancel_rate: f64,
    pub execute_rate: f64,
    /// Probability that a submission improves a spread wider than one tick.
    pub inside_prob: f64,
    /// Relative half-width of the uniform noise on submitted sizes.
    pub volume_noise: f64,
    /// Probability that an execution hits the same side as the previous one.
    pub momentum: f64,
    pub linear_link: Option<LinearLink>,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            symbol: "SYN".into(),
            days: 5,
            session: SessionConfig::default(),
            tick: CENT_TICK,
            levels: LEVELS,
            start_price: 1_000_000,
            base_volumes: vec![400, 500, 600, 700, 800],
            order_size: 100,
            trade_size: 100,
            submit_rate: 1.0,
            cancel_rate: 0.6,
            execute_rate: 0.1,
            inside_prob: 0.6,
            volume_noise: 0.5,
            momentum: 0.5,
            linear_link: None,
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.levels < 2 {
            return bad("need at least two levels".into());
        }
        if self.tick <= 0 || self.start_price <= self.tick * self.levels as i64 * 2 {
            return bad("tick and start price must be positive with room for the book".into());
        }
        if self.base_volumes.len() != self.levels || self.base_volumes.iter().any(|&v| v <= 0) {
            return bad(format!("need {} positive base volumes", self.levels));
        }
        if self.order_size <= 0 || self.trade_size <= 0 {
            return bad("order and trade sizes must be positive".into());
        }
        for (name, r) in [
            ("submit", self.submit_rate),
            ("cancel", self.cancel_rate),
            ("execute", self.execute_rate),
        ] {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("{name} rate must be positive"));
            }
        }
        for (name, p) in [("inside_prob", self.inside_prob), ("momentum", self.momentum)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.volume_noise) {
            return bad("volume noise must lie in [0, 1)".into());
        }
        if self.session.close <= self.session.open {
            return bad("session close must follow open".into());
        }
        if let Some(link) = &self.linear_link {
            link.validate(self.levels)?;
        }
        Ok(())
    }
}

/// Deep volumes the simulator held right after an execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLabel {
    pub time: f64,
    pub ask_deep: Vec<i64>,
    pub bid_deep: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDay {
    pub messages: Vec<RawMessage>,
    pub book: Vec<RawBookRow>,
    /// One entry per execution, whole session.
    pub truth: Vec<TruthLabel>,
}

impl SimDay {
    pub fn message_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_message_file(&self.messages, &mut buf)?;
        Ok(String::from_utf8(buf).expect("ascii output"))
    }

    pub fn orderbook_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_orderbook_file(&self.book, &mut buf)?;
        Ok(String::from_utf8(buf).expect("ascii output"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub config: MarketConfig,
    pub days: Vec<SimDay>,
}

impl Simulation {
    /// Writes one message/orderbook pair per day and a `manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        std::fs::create_dir_all(dir)?;
        let c = &self.config;
        let mut days = Vec::new();
        for (i, d) in self.days.iter().enumerate() {
            let stem = format!("{}_day{}_{}", c.symbol, i + 1, c.levels);
            let message_path = format!("{stem}_message.csv");
            let orderbook_path = format!("{stem}_orderbook.csv");
            std::fs::write(dir.join(&message_path), d.message_csv()?)?;
            std::fs::write(dir.join(&orderbook_path), d.orderbook_csv()?)?;
            days.push(DayFiles {
                message_path: message_path.into(),
                orderbook_path: orderbook_path.into(),
            });
        }
        let manifest = Manifest {
            symbol: c.symbol.clone(),
            days,
            tick: c.tick,
            levels: c.levels,
            session: c.session,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

struct BookSide {
    top: i64,
    volumes: Vec<i64>,
}

struct Market<'a> {
    cfg: &'a MarketConfig,
    rng: ChaCha8Rng,
    ask: BookSide,
    bid: BookSide,
    next_id: i64,
    last_exec: Side,
    /// Most recent first: (trade volume, ask top volume, bid top volume).
    history: Vec<(f64, f64, f64)>,
}

/// Rounds a time to the nanosecond grid used in the files.
fn on_grid(t: f64) -> f64 {
    format!("{t:.9}").parse().expect("formatted float")
}

impl<'a> Market<'a> {
    fn side(&mut self, s: Side) -> &mut BookSide {
        match s {
            Side::Ask => &mut self.ask,
            Side::Bid => &mut self.bid,
        }
    }

    fn fresh_book(&mut self) {
        let c = self.cfg;
        let half = c.tick;
        self.ask = BookSide {
            top: c.start_price + half,
            volumes: c.base_volumes.clone(),
        };
        self.bid = BookSide {
            top: c.start_price - half,
            volumes: c.base_volumes.clone(),
        };
        self.history.clear();
    }

    fn spread_ticks(&self) -> i64 {
        (self.ask.top - self.bid.top) / self.cfg.tick
    }

    fn noisy(&mut self, size: i64) -> i64 {
        let n = self.cfg.volume_noise;
        let f = if n > 0.0 { self.rng.gen_range(1.0 - n..1.0 + n) } else { 1.0 };
        ((size as f64 * f).round() as i64).max(1)
    }

    fn coin(&mut self) -> Side {
        if self.rng.gen_bool(0.5) {
            Side::Ask
        } else {
            Side::Bid
        }
    }

    fn row(&self) -> RawBookRow {
        let t = self.cfg.tick;
        let levels = |b: &BookSide, s: Side| {
            b.volumes
                .iter()
                .enumerate()
                .map(|(l, &size)| Level {
                    price: s.level_price(b.top, l + 1, t),
                    size,
                })
                .collect()
        };
        RawBookRow {
            ask: levels(&self.ask, Side::Ask),
            bid: levels(&self.bid, Side::Bid),
        }
    }

    fn message(&mut self, time: f64, event_type: u8, size: i64, price: i64, side: Side) -> RawMessage {
        self.next_id += 1;
        RawMessage {
            time,
            event_type,
            order_id: self.next_id,
            size,
            price,
            direction: match side {
                Side::Ask => -1,
                Side::Bid => 1,
            },
        }
    }

    fn submit(&mut self, time: f64) -> RawMessage {
        let s = self.coin();
        let size = self.noisy(self.cfg.order_size);
        let tick = self.cfg.tick;
        let levels = self.cfg.levels;
        if self.spread_ticks() > 1 && self.rng.gen_bool(self.cfg.inside_prob) {
            let b = self.side(s);
            b.top = match s {
                Side::Ask => b.top - tick,
                Side::Bid => b.top + tick,
            };
            b.volumes.pop();
            b.volumes.insert(0, size);
            let price = b.top;
            return self.message(time, 1, size, price, s);
        }
        let l = self.rng.gen_range(0..levels);
        let b = self.side(s);
        b.volumes[l] += size;
        let price = s.level_price(b.top, l + 1, tick);
        self.message(time, 1, size, price, s)
    }

    fn cancel(&mut self, time: f64) -> RawMessage {
        let s = self.coin();
        let l = self.rng.gen_range(0..self.cfg.levels);
        let vol = self.side(s).volumes[l];
        if vol < 2 {
            return self.submit(time);
        }
        let size = self.rng.gen_range(1..=vol / 2);
        let tick = self.cfg.tick;
        let b = self.side(s);
        b.volumes[l] -= size;
        let price = s.level_price(b.top, l + 1, tick);
        self.message(time, 2, size, price, s)
    }

    fn execute(&mut self, time: f64) -> RawMessage {
        let s = if self.rng.gen_bool(self.cfg.momentum) {
            self.last_exec
        } else {
            self.coin()
        };
        self.last_exec = s;
        let wanted = self.rng.gen_range(1..=2 * self.cfg.trade_size);
        let tick = self.cfg.tick;
        let refill = *self.cfg.base_volumes.last().expect("validated");
        let b = self.side(s);
        let price = b.top;
        let size = wanted.min(b.volumes[0]);
        b.volumes[0] -= size;
        if b.volumes[0] == 0 {
            b.volumes.remove(0);
            b.volumes.push(refill);
            b.top = match s {
                Side::Ask => b.top + tick,
                Side::Bid => b.top - tick,
            };
        }
        self.history
            .insert(0, (size as f64, self.ask.volumes[0] as f64, self.bid.volumes[0] as f64));
        self.history.truncate(LINK_LAGS);
        if let Some(link) = &self.cfg.linear_link {
            let history = &self.history;
            let lagged = |j: usize| history.get(j).copied().unwrap_or((0.0, 0.0, 0.0));
            let mut fresh = Vec::with_capacity(2);
            for side in Side::BOTH {
                let deep: Vec<i64> = (0..self.cfg.levels - 1)
                    .map(|l| {
                        let mut v = link.intercept[l];
                        for j in 0..LINK_LAGS {
                            let (tv, av, bv) = lagged(j);
                            let top = if side == Side::Ask { av } else { bv };
                            v += link.trade[l][j] * tv + link.quote[l][j] * top;
                        }
                        (v.round() as i64).max(1)
                    })
                    .collect();
                fresh.push((side, deep));
            }
            for (side, deep) in fresh {
                self.side(side).volumes[1..].copy_from_slice(&deep);
            }
        }
        self.message(time, 4, size, price, s)
    }

    fn day(&mut self) -> SimDay {
        self.fresh_book();
        let c = self.cfg;
        let total = c.submit_rate + c.cancel_rate + c.execute_rate;
        let mut t = c.session.open;
        let mut day = SimDay {
            messages: Vec::new(),
            book: Vec::new(),
            truth: Vec::new(),
        };
        loop {
            let u: f64 = 1.0 - self.rng.gen::<f64>();
            t += -u.ln() / total;
            if t >= c.session.close {
                break;
            }
            let time = on_grid(t);
            let pick = self.rng.gen::<f64>() * total;
            let msg = if pick < c.submit_rate {
                self.submit(time)
            } else if pick < c.submit_rate + c.cancel_rate {
                self.cancel(time)
            } else {
                let m = self.execute(time);
                day.truth.push(TruthLabel {
                    time,
                    ask_deep: self.ask.volumes[1..].to_vec(),
                    bid_deep: self.bid.volumes[1..].to_vec(),
                });
                m
            };
            day.messages.push(msg);
            day.book.push(self.row());
        }
        day
    }
}

/// Runs the market for `cfg.days` sessions. Each day starts from the same
/// book; the random stream continues across days.
pub fn simulate(cfg: &MarketConfig) -> Result<Simulation> {
    cfg.validate()?;
    let empty = BookSide {
        top: 0,
        volumes: Vec::new(),
    };
    let mut m = Market {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        ask: empty,
        bid: BookSide {
            top: 0,
            volumes: Vec::new(),
        },
        next_id: 0,
        last_exec: Side::Ask,
        history: Vec::new(),
    };
    let days = (0..cfg.days).map(|_| m.day()).collect();
    Ok(Simulation {
        config: cfg.clone(),
        days,
    })
}

/// Simulator-side deep volumes at every execution inside the trimmed
/// session, per day.
pub fn ground_truth_labels(sim: &Simulation, session: &SessionConfig) -> Vec<Vec<TruthLabel>> {
    sim.days
        .iter()
        .map(|d| d.truth.iter().filter(|t| session.contains(t.time)).cloned().collect())
        .collect()
}
