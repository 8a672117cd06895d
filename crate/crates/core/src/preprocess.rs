//! Volume scaling and clipping, time-weighted z-scores, rolling windows and
//! the chronological day split.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LobSnapshot, Side, TaqEvent, TradeRecord};

/// Raw share counts are divided by this before anything else.
pub const VOLUME_SCALE: f64 = 100.0;

/// Default winsorizing quantiles.
pub const LOWER_Q: f64 = 0.005;
pub const UPPER_Q: f64 = 0.995;

/// Quantile of sorted data by linear interpolation between closest ranks.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinsorCut {
    pub lo: f64,
    pub hi: f64,
}

impl WinsorCut {
    /// Fits cut-points on already scaled values.
    pub fn fit(scaled: &[f64], lower_q: f64, upper_q: f64) -> Result<Self> {
        if scaled.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !(0.0..=1.0).contains(&lower_q) || !(lower_q..=1.0).contains(&upper_q) {
            return Err(Error::InvalidConfig(format!(
                "quantiles must satisfy 0 <= lower <= upper <= 1, got {lower_q}, {upper_q}"
            )));
        }
        let mut sorted = scaled.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            lo: quantile(&sorted, lower_q),
            hi: quantile(&sorted, upper_q),
        })
    }

    /// Scales a raw volume and clips it.
    pub fn apply(&self, raw: f64) -> f64 {
        (raw / VOLUME_SCALE).clamp(self.lo, self.hi)
    }
}

/// Scales by 1/100 and clips to the empirical quantiles of the scaled input.
/// The cut-points are returned so other data can be clipped identically.
pub fn scale_and_winsorize(
    volumes: &[f64],
    lower_q: f64,
    upper_q: f64,
) -> Result<(Vec<f64>, WinsorCut)> {
    let scaled: Vec<f64> = volumes.iter().map(|v| v / VOLUME_SCALE).collect();
    let cut = WinsorCut::fit(&scaled, lower_q, upper_q)?;
    Ok((volumes.iter().map(|&v| cut.apply(v)).collect(), cut))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideCuts {
    pub top: WinsorCut,
    pub deep: WinsorCut,
    pub trade: WinsorCut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinsorCuts {
    pub ask: SideCuts,
    pub bid: SideCuts,
}

impl WinsorCuts {
    pub fn side(&self, side: Side) -> &SideCuts {
        match side {
            Side::Ask => &self.ask,
            Side::Bid => &self.bid,
        }
    }

    /// Scales and clips the quote and trade volumes of one event.
    pub fn apply_event(&self, ev: &TaqEvent) -> Result<TaqEvent> {
        let mut ev = *ev;
        ev.quote.ask_volume = self.ask.top.apply(ev.quote.ask_volume);
        ev.quote.bid_volume = self.bid.top.apply(ev.quote.bid_volume);
        ev.trade.volume = self.side(trade_side(ev.trade.direction)?).trade.apply(ev.trade.volume);
        Ok(ev)
    }
}

/// Side of the book a trade executed against.
pub fn trade_side(direction: i8) -> Result<Side> {
    match direction {
        -1 => Ok(Side::Ask),
        1 => Ok(Side::Bid),
        d => Err(Error::BadDirection(d as i64)),
    }
}

/// Fits per-side cut-points for top, deep and trade volumes.
pub fn fit_winsor_cuts(days: &[Vec<TradeRecord>], lower_q: f64, upper_q: f64) -> Result<WinsorCuts> {
    let fit_side = |side: Side| -> Result<SideCuts> {
        let mut top = Vec::new();
        let mut deep = Vec::new();
        let mut trade = Vec::new();
        for r in days.iter().flatten() {
            let b = r.book(side);
            top.push(b.volumes[0] / VOLUME_SCALE);
            deep.extend(b.deep().iter().map(|v| v / VOLUME_SCALE));
            if trade_side(r.event.trade.direction)? == side {
                trade.push(r.event.trade.volume / VOLUME_SCALE);
            }
        }
        Ok(SideCuts {
            top: WinsorCut::fit(&top, lower_q, upper_q)?,
            deep: WinsorCut::fit(&deep, lower_q, upper_q)?,
            trade: WinsorCut::fit(&trade, lower_q, upper_q)?,
        })
    };
    Ok(WinsorCuts {
        ask: fit_side(Side::Ask)?,
        bid: fit_side(Side::Bid)?,
    })
}

/// Scales and clips every volume of a day.
pub fn apply_cuts(day: &[TradeRecord], cuts: &WinsorCuts) -> Result<Vec<TradeRecord>> {
    day.iter()
        .map(|r| {
            let mut r = r.clone();
            r.event = cuts.apply_event(&r.event)?;
            for book in [&mut r.ask, &mut r.bid] {
                let c = cuts.side(book.side);
                for (l, v) in book.volumes.iter_mut().enumerate() {
                    *v = if l == 0 { c.top.apply(*v) } else { c.deep.apply(*v) };
                }
            }
            Ok(r)
        })
        .collect()
}

/// Mean and population std of `(weight, value)` pairs.
fn weighted_moments(pairs: &[(f64, f64)]) -> Result<(f64, f64)> {
    let total: f64 = pairs.iter().map(|p| p.0).sum();
    if total <= 0.0 {
        return Err(Error::DegenerateSpan);
    }
    let mean = pairs.iter().map(|(w, v)| w * v).sum::<f64>() / total;
    let var = pairs.iter().map(|(w, v)| w * (v - mean) * (v - mean)).sum::<f64>() / total;
    Ok((mean, var.sqrt()))
}

/// Mean and std of a step function taking value `values[i]` on
/// `[timestamps[i], timestamps[i + 1])`.
pub fn time_weighted_stats(values: &[f64], timestamps: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if timestamps.len() != values.len() + 1 {
        return Err(Error::InvalidConfig(format!(
            "{} values need {} timestamps, got {}",
            values.len(),
            values.len() + 1,
            timestamps.len()
        )));
    }
    if timestamps[timestamps.len() - 1] == timestamps[0] {
        return Err(Error::DegenerateSpan);
    }
    for i in 1..timestamps.len() {
        if timestamps[i] <= timestamps[i - 1] {
            return Err(Error::NonIncreasingTime { index: i });
        }
    }
    let pairs: Vec<(f64, f64)> = values
        .iter()
        .zip(timestamps.windows(2))
        .map(|(&v, t)| (t[1] - t[0], v))
        .collect();
    weighted_moments(&pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideStats {
    pub top_mean: f64,
    pub top_std: f64,
    pub deep_mean: f64,
    pub deep_std: f64,
    pub trade_mean: f64,
    pub trade_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub ask: SideStats,
    pub bid: SideStats,
}

impl NormStats {
    pub fn side(&self, side: Side) -> &SideStats {
        match side {
            Side::Ask => &self.ask,
            Side::Bid => &self.bid,
        }
    }

    /// Z-scores every volume of a clipped record. Trades use the stats of
    /// the side they executed against.
    pub fn standardize_record(&self, r: &TradeRecord) -> Result<TradeRecord> {
        let mut r = r.clone();
        r.event = self.standardize_event(&r.event)?;
        for book in [&mut r.ask, &mut r.bid] {
            let s = *self.side(book.side);
            for (l, v) in book.volumes.iter_mut().enumerate() {
                *v = if l == 0 {
                    standardize(*v, s.top_mean, s.top_std)?
                } else {
                    standardize(*v, s.deep_mean, s.deep_std)?
                };
            }
        }
        Ok(r)
    }

    /// Z-scores the quote and trade volumes of a clipped event.
    pub fn standardize_event(&self, ev: &TaqEvent) -> Result<TaqEvent> {
        let mut ev = *ev;
        ev.quote.ask_volume = standardize(ev.quote.ask_volume, self.ask.top_mean, self.ask.top_std)?;
        ev.quote.bid_volume = standardize(ev.quote.bid_volume, self.bid.top_mean, self.bid.top_std)?;
        let s = self.side(trade_side(ev.trade.direction)?);
        ev.trade.volume = standardize(ev.trade.volume, s.trade_mean, s.trade_std)?;
        Ok(ev)
    }

    /// Maps a deep-level z-score back to shares.
    pub fn deep_to_shares(&self, side: Side, z: f64) -> Result<f64> {
        let s = self.side(side);
        Ok(invert_standardize(z, s.deep_mean, s.deep_std)? * VOLUME_SCALE)
    }
}

/// Collapses records sharing a timestamp to the last one (the book state
/// that persisted) and returns `(weight, record)` pairs. The final record of
/// a day has no successor and closes the previous interval.
fn persisted(day: &[TradeRecord]) -> Vec<(f64, &TradeRecord)> {
    let mut states: Vec<&TradeRecord> = Vec::new();
    for r in day {
        match states.last_mut() {
            Some(last) if last.timestamp() == r.timestamp() => *last = r,
            _ => states.push(r),
        }
    }
    states
        .windows(2)
        .map(|w| (w[1].timestamp() - w[0].timestamp(), w[0]))
        .collect()
}

fn plain_moments(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let pairs: Vec<(f64, f64)> = values.iter().map(|&v| (1.0, v)).collect();
    weighted_moments(&pairs)
}

/// Time-weighted book statistics and plain trade statistics, pooled over
/// the given (already clipped) days.
pub fn fit_norm_stats(days: &[Vec<TradeRecord>]) -> Result<NormStats> {
    let intervals: Vec<(f64, &TradeRecord)> = days.iter().flat_map(|d| persisted(d)).collect();
    let fit_side = |side: Side| -> Result<SideStats> {
        let top: Vec<(f64, f64)> = intervals
            .iter()
            .map(|(w, r)| (*w, r.book(side).volumes[0]))
            .collect();
        let deep: Vec<(f64, f64)> = intervals
            .iter()
            .flat_map(|(w, r)| r.book(side).deep().iter().map(move |&v| (*w, v)))
            .collect();
        let trades: Vec<f64> = days
            .iter()
            .flatten()
            .filter(|r| trade_side(r.event.trade.direction).ok() == Some(side))
            .map(|r| r.event.trade.volume)
            .collect();
        let (top_mean, top_std) = weighted_moments(&top)?;
        let (deep_mean, deep_std) = weighted_moments(&deep)?;
        let (trade_mean, trade_std) = plain_moments(&trades)?;
        for (name, std) in [("top", top_std), ("deep", deep_std), ("trade", trade_std)] {
            if std <= 0.0 {
                return Err(Error::ZeroVariance(format!("{side} {name} volumes")));
            }
        }
        Ok(SideStats {
            top_mean,
            top_std,
            deep_mean,
            deep_std,
            trade_mean,
            trade_std,
        })
    };
    Ok(NormStats {
        ask: fit_side(Side::Ask)?,
        bid: fit_side(Side::Bid)?,
    })
}

pub fn standardize(x: f64, mean: f64, std: f64) -> Result<f64> {
    if std <= 0.0 || !std.is_finite() {
        return Err(Error::ZeroStd(std));
    }
    Ok((x - mean) / std)
}

pub fn invert_standardize(z: f64, mean: f64, std: f64) -> Result<f64> {
    if std <= 0.0 || !std.is_finite() {
        return Err(Error::ZeroStd(std));
    }
    Ok(z * std + mean)
}

/// One standardized trading day, plus the raw deep volumes kept for
/// volatility diagnostics.
#[derive(Debug, Clone)]
pub struct StdDay {
    pub events: Arc<[TaqEvent]>,
    pub ask: Vec<LobSnapshot>,
    pub bid: Vec<LobSnapshot>,
    pub raw_ask_deep: Vec<Vec<f64>>,
    pub raw_bid_deep: Vec<Vec<f64>>,
}

impl StdDay {
    /// Clips and standardizes `raw`, a day of share-count records.
    pub fn new(raw: &[TradeRecord], cuts: &WinsorCuts, stats: &NormStats) -> Result<Self> {
        let clipped = apply_cuts(raw, cuts)?;
        let std: Vec<TradeRecord> = clipped
            .iter()
            .map(|r| stats.standardize_record(r))
            .collect::<Result<_>>()?;
        Ok(Self {
            events: std.iter().map(|r| r.event).collect(),
            ask: std.iter().map(|r| r.ask.clone()).collect(),
            bid: std.into_iter().map(|r| r.bid).collect(),
            raw_ask_deep: raw.iter().map(|r| r.ask.deep().to_vec()).collect(),
            raw_bid_deep: raw.iter().map(|r| r.bid.deep().to_vec()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn book(&self, side: Side) -> &[LobSnapshot] {
        match side {
            Side::Ask => &self.ask,
            Side::Bid => &self.bid,
        }
    }

    pub fn raw_deep(&self, side: Side) -> &[Vec<f64>] {
        match side {
            Side::Ask => &self.raw_ask_deep,
            Side::Bid => &self.raw_bid_deep,
        }
    }
}

/// `S` consecutive events of one day and the deep volumes of one side at the
/// last of them.
#[derive(Debug, Clone)]
pub struct SampleWindow {
    events: Arc<[TaqEvent]>,
    start: usize,
    len: usize,
    pub side: Side,
    /// Standardized deep volumes at the last event.
    pub label: Vec<f64>,
    /// Deep volumes in shares at the last event.
    pub raw_label: Vec<f64>,
}

impl SampleWindow {
    pub fn events(&self) -> &[TaqEvent] {
        &self.events[self.start..self.start + self.len]
    }

    pub fn last(&self) -> &TaqEvent {
        &self.events[self.start + self.len - 1]
    }

    pub fn end_time(&self) -> f64 {
        self.last().timestamp
    }

    pub fn start_index(&self) -> usize {
        self.start
    }

    /// Inter-arrival gaps in seconds; the first is 0.
    pub fn gaps(&self) -> Vec<f64> {
        let ev = self.events();
        std::iter::once(0.0)
            .chain(ev.windows(2).map(|w| (w[1].timestamp - w[0].timestamp).max(0.0)))
            .collect()
    }

    pub fn ref_ask(&self) -> i64 {
        self.last().quote.ask_price
    }

    pub fn ref_bid(&self) -> i64 {
        self.last().quote.bid_price
    }
}

/// Rolling windows of length `window` over one day, in chronological order.
pub fn build_samples(day: &StdDay, side: Side, window: usize) -> Result<Vec<SampleWindow>> {
    let n = day.len();
    if window == 0 {
        return Err(Error::InvalidConfig("window length must be positive".into()));
    }
    if n < window {
        return Err(Error::TooFewEvents { have: n, need: window });
    }
    let book = day.book(side);
    let raw = day.raw_deep(side);
    Ok((0..=n - window)
        .map(|start| {
            let end = start + window - 1;
            SampleWindow {
                events: day.events.clone(),
                start,
                len: window,
                side,
                label: book[end].deep().to_vec(),
                raw_label: raw[end].clone(),
            }
        })
        .collect())
}

/// One unlabelled window ending at every event of a raw TAQ stream, for
/// inference. Events are clipped and standardized with the given
/// transforms; windows ending before the `window`-th event are left-padded
/// with copies of the first event, so padded gaps are zero.
pub fn replay_windows(
    events: &[TaqEvent],
    side: Side,
    window: usize,
    cuts: &WinsorCuts,
    stats: &NormStats,
) -> Result<Vec<SampleWindow>> {
    if window == 0 {
        return Err(Error::InvalidConfig("window length must be positive".into()));
    }
    let Some(first) = events.first() else {
        return Ok(Vec::new());
    };
    for (i, w) in events.windows(2).enumerate() {
        if w[1].timestamp < w[0].timestamp {
            return Err(Error::NonMonotonicTime { line: i + 3 });
        }
    }
    let std = |ev: &TaqEvent| stats.standardize_event(&cuts.apply_event(ev)?);
    let pad = std(first)?;
    let mut padded = vec![pad; window - 1];
    for ev in events {
        padded.push(std(ev)?);
    }
    let padded: Arc<[TaqEvent]> = padded.into();
    Ok((0..events.len())
        .map(|start| SampleWindow {
            events: padded.clone(),
            start,
            len: window,
            side,
            label: Vec::new(),
            raw_label: Vec::new(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitScheme {
    /// All but the last two days train, then one validation and one test day.
    Default,
    /// Only the day before validation trains.
    Day3,
    /// The two days before validation train.
    Day2And3,
    /// The three days before validation train.
    Day1To3,
}

impl SplitScheme {
    fn train_days(self, available: usize) -> usize {
        match self {
            SplitScheme::Default => available,
            SplitScheme::Day3 => 1,
            SplitScheme::Day2And3 => 2,
            SplitScheme::Day1To3 => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

pub fn chronological_split<T: Clone>(days: &[T], scheme: SplitScheme) -> Result<Split<T>> {
    let need = match scheme {
        SplitScheme::Default => 3,
        s => s.train_days(0) + 2,
    };
    let n = days.len();
    if n < need {
        return Err(Error::NotEnoughDays { have: n, need });
    }
    let train_end = n - 2;
    let train_start = train_end - scheme.train_days(train_end);
    Ok(Split {
        train: days[train_start..train_end].to_vec(),
        val: vec![days[n - 2].clone()],
        test: vec![days[n - 1].clone()],
    })
}
