//! Trade-time records shared by every stage of the pipeline.
//!
//! Prices are integers in units of 1e-4 dollars (the LOBSTER convention).
//! Volumes are `f64` so the same types carry raw share counts, scaled and
//! winsorized volumes, and z-scores as the data moves through preprocessing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Number of book levels per side the models look at.
pub const LEVELS: usize = 5;

/// One cent in LOBSTER price units.
pub const CENT_TICK: i64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Ask,
    Bid,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Ask, Side::Bid];

    /// Price of book level `level` (1-based) given the top price.
    pub fn level_price(self, top: i64, level: usize, tick: i64) -> i64 {
        let off = (level as i64 - 1) * tick;
        match self {
            Side::Ask => top + off,
            Side::Bid => top - off,
        }
    }

    /// Signed number of ticks from `reference` to `price`, measured away from
    /// the spread: positive means deeper into this side of the book.
    pub fn depth_ticks(self, price: i64, reference: i64, tick: i64) -> Result<i64, Error> {
        let diff = match self {
            Side::Ask => price - reference,
            Side::Bid => reference - price,
        };
        ticks(diff, tick)
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Ask => "ask",
            Side::Bid => "bid",
        })
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "ask" => Ok(Side::Ask),
            "bid" => Ok(Side::Bid),
            other => Err(Error::InvalidConfig(format!("unknown side `{other}`"))),
        }
    }
}

/// `diff / tick`, failing if `diff` is off the tick grid.
pub fn ticks(diff: i64, tick: i64) -> Result<i64, Error> {
    if tick <= 0 || diff % tick != 0 {
        return Err(Error::OffGrid { diff, tick });
    }
    Ok(diff / tick)
}

/// Best ask and best bid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quote {
    pub ask_price: i64,
    pub ask_volume: f64,
    pub bid_price: i64,
    pub bid_volume: f64,
}

impl Quote {
    pub fn price(&self, side: Side) -> i64 {
        match side {
            Side::Ask => self.ask_price,
            Side::Bid => self.bid_price,
        }
    }

    pub fn volume(&self, side: Side) -> f64 {
        match side {
            Side::Ask => self.ask_volume,
            Side::Bid => self.bid_volume,
        }
    }

    pub fn mid(&self) -> f64 {
        (self.ask_price + self.bid_price) as f64 / 2.0
    }
}

/// An execution. `direction` follows the LOBSTER convention: -1 when a
/// resting sell order was hit (trade at the ask), +1 when a resting buy
/// order was hit (trade at the bid).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub price: i64,
    pub volume: f64,
    pub direction: i8,
}

/// One trades-and-quotes observation at a trade time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaqEvent {
    pub timestamp: f64,
    pub quote: Quote,
    pub trade: Trade,
}

/// One side of the book at a trade time, on the tick grid: `volumes[l]` is
/// the volume resting `l` ticks behind `top_price`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LobSnapshot {
    pub timestamp: f64,
    pub side: Side,
    pub top_price: i64,
    pub tick: i64,
    pub volumes: Vec<f64>,
}

impl LobSnapshot {
    /// Price of level `level` (1-based).
    pub fn price(&self, level: usize) -> i64 {
        self.side.level_price(self.top_price, level, self.tick)
    }

    /// Volumes of levels 2 and deeper.
    pub fn deep(&self) -> &[f64] {
        &self.volumes[1..]
    }
}

/// Everything known at one trade time: the public TAQ view plus both book
/// sides (the labels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub event: TaqEvent,
    pub ask: LobSnapshot,
    pub bid: LobSnapshot,
}

impl TradeRecord {
    pub fn book(&self, side: Side) -> &LobSnapshot {
        match side {
            Side::Ask => &self.ask,
            Side::Bid => &self.bid,
        }
    }

    pub fn timestamp(&self) -> f64 {
        self.event.timestamp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_prices_are_one_tick_apart() {
        assert_eq!(Side::Ask.level_price(31_340_000, 1, 100), 31_340_000);
        assert_eq!(Side::Ask.level_price(31_340_000, 5, 100), 31_340_400);
        assert_eq!(Side::Bid.level_price(31_330_000, 3, 100), 31_329_800);
    }

    #[test]
    fn depth_ticks_sign_follows_the_side() {
        assert_eq!(Side::Ask.depth_ticks(300, 100, 100).unwrap(), 2);
        assert_eq!(Side::Bid.depth_ticks(-100, 100, 100).unwrap(), 2);
        assert!(matches!(Side::Ask.depth_ticks(150, 100, 100), Err(Error::OffGrid { .. })));
    }

    #[test]
    fn side_round_trips_through_strings() {
        for s in Side::BOTH {
            assert_eq!(s.to_string().parse::<Side>().unwrap(), s);
        }
        assert!("both".parse::<Side>().is_err());
    }
}
