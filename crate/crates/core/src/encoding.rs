//! Positional one-hot features for quotes and trades.
//!
//! A quote `sp` ticks away from the reference price lands at index
//! `k - 1 + sp` of a length `2k - 1` vector holding its (standardized)
//! volume; anything further than `k - 1` ticks is dropped. References are
//! the quotes at the last event of the window.

use lobrm_autodiff::Tensor;

use crate::error::{Error, Result};
use crate::preprocess::SampleWindow;
use crate::types::{ticks, Side, TaqEvent, Trade};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseQuoteVec {
    pub values: Vec<f64>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrimmedQuoteVec {
    pub values: Vec<f64>,
    pub mask: Vec<f64>,
}

/// Slot of a `sp`-tick offset in a `2k - 1` vector, if in range.
fn slot(sp: i64, k: usize) -> Option<usize> {
    let half = k as i64 - 1;
    (-half..=half).contains(&sp).then(|| (half + sp) as usize)
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig("encoding half-width k must be positive".into()));
    }
    Ok(())
}

pub fn encode_quote_sparse(
    price: i64,
    volume: f64,
    reference: i64,
    k: usize,
    tick: i64,
) -> Result<SparseQuoteVec> {
    check_k(k)?;
    let mut values = vec![0.0; 2 * k - 1];
    place(&mut values, price, volume, reference, k, tick)?;
    Ok(SparseQuoteVec { values, k })
}

fn place(out: &mut [f64], price: i64, volume: f64, reference: i64, k: usize, tick: i64) -> Result<()> {
    if let Some(i) = slot(ticks(price - reference, tick)?, k) {
        out[i] = volume;
    }
    Ok(())
}

/// Reference for a trade: the best ask for trades against sellers
/// (`direction = -1`), the best bid otherwise.
fn trade_reference(trade: &Trade, ref_ask: i64, ref_bid: i64) -> Result<i64> {
    match trade.direction {
        -1 => Ok(ref_ask),
        1 => Ok(ref_bid),
        d => Err(Error::BadDirection(d as i64)),
    }
}

pub fn encode_trade_sparse(
    trade: &Trade,
    ref_ask: i64,
    ref_bid: i64,
    k: usize,
    tick: i64,
) -> Result<SparseQuoteVec> {
    check_k(k)?;
    let reference = trade_reference(trade, ref_ask, ref_bid)?;
    encode_quote_sparse(trade.price, trade.volume, reference, k, tick)
}

/// Keeps a quote only if it sits on one of the deep levels `2..=levels` of
/// the reference book on `side`.
pub fn trim_for_hc(
    price: i64,
    volume: f64,
    reference: i64,
    side: Side,
    levels: usize,
    tick: i64,
) -> Result<TrimmedQuoteVec> {
    let n = levels.saturating_sub(1);
    let mut values = vec![0.0; n];
    let mut mask = vec![0.0; n];
    let depth = side.depth_ticks(price, reference, tick)?;
    if depth >= 1 && depth as usize <= n {
        values[depth as usize - 1] = volume;
        mask[depth as usize - 1] = 1.0;
    }
    Ok(TrimmedQuoteVec { values, mask })
}

/// Feature width of one sparse-encoded timestep.
pub fn sparse_width(k: usize, split_trades: bool) -> usize {
    (if split_trades { 4 } else { 3 }) * (2 * k - 1)
}

/// Writes one sparse timestep `[ask quote | bid quote | trades]` into `out`.
/// With `split_trades`, trades against sellers and buyers get their own blocks.
pub fn write_sparse_row(
    ev: &TaqEvent,
    ref_ask: i64,
    ref_bid: i64,
    k: usize,
    tick: i64,
    split_trades: bool,
    out: &mut [f64],
) -> Result<()> {
    let w = 2 * k - 1;
    let q = &ev.quote;
    place(&mut out[..w], q.ask_price, q.ask_volume, ref_ask, k, tick)?;
    place(&mut out[w..2 * w], q.bid_price, q.bid_volume, ref_bid, k, tick)?;
    let t = &ev.trade;
    let reference = trade_reference(t, ref_ask, ref_bid)?;
    let block = if split_trades && t.direction == 1 { 3 } else { 2 };
    place(&mut out[block * w..(block + 1) * w], t.price, t.volume, reference, k, tick)
}

pub fn encode_window_sparse(
    window: &SampleWindow,
    k: usize,
    tick: i64,
    split_trades: bool,
) -> Result<Tensor> {
    check_k(k)?;
    let width = sparse_width(k, split_trades);
    let ev = window.events();
    let mut data = vec![0.0; ev.len() * width];
    for (e, row) in ev.iter().zip(data.chunks_mut(width)) {
        write_sparse_row(e, window.ref_ask(), window.ref_bid(), k, tick, split_trades, row)?;
    }
    Ok(Tensor::matrix(ev.len(), width, data))
}

pub const EXPLICIT_WIDTH: usize = 7;

/// `[ask ticks, ask vol, bid ticks, bid vol, trade ticks, trade vol, direction]`
pub fn write_explicit_row(ev: &TaqEvent, ref_ask: i64, ref_bid: i64, tick: i64, out: &mut [f64]) -> Result<()> {
    let q = &ev.quote;
    let t = &ev.trade;
    let reference = trade_reference(t, ref_ask, ref_bid)?;
    out[0] = ticks(q.ask_price - ref_ask, tick)? as f64;
    out[1] = q.ask_volume;
    out[2] = ticks(q.bid_price - ref_bid, tick)? as f64;
    out[3] = q.bid_volume;
    out[4] = ticks(t.price - reference, tick)? as f64;
    out[5] = t.volume;
    out[6] = t.direction as f64;
    Ok(())
}

pub fn encode_window_explicit(window: &SampleWindow, tick: i64) -> Result<Tensor> {
    let ev = window.events();
    let mut data = vec![0.0; ev.len() * EXPLICIT_WIDTH];
    for (e, row) in ev.iter().zip(data.chunks_mut(EXPLICIT_WIDTH)) {
        write_explicit_row(e, window.ref_ask(), window.ref_bid(), tick, row)?;
    }
    Ok(Tensor::matrix(ev.len(), EXPLICIT_WIDTH, data))
}

/// Writes the trimmed quote of `side` and its mask for one timestep.
pub fn write_trimmed_row(
    ev: &TaqEvent,
    reference: i64,
    side: Side,
    tick: i64,
    values: &mut [f64],
    mask: &mut [f64],
) -> Result<()> {
    let n = values.len();
    let depth = side.depth_ticks(ev.quote.price(side), reference, tick)?;
    if depth >= 1 && depth as usize <= n {
        values[depth as usize - 1] = ev.quote.volume(side);
        mask[depth as usize - 1] = 1.0;
    }
    Ok(())
}

/// Trimmed values and masks (`S x (levels - 1)` each) for one side.
pub fn encode_window_trimmed(
    window: &SampleWindow,
    side: Side,
    levels: usize,
    tick: i64,
) -> Result<(Tensor, Tensor)> {
    let n = levels.saturating_sub(1);
    let ev = window.events();
    let reference = window.last().quote.price(side);
    let mut values = vec![0.0; ev.len() * n];
    let mut mask = vec![0.0; ev.len() * n];
    for (i, e) in ev.iter().enumerate() {
        write_trimmed_row(
            e,
            reference,
            side,
            tick,
            &mut values[i * n..(i + 1) * n],
            &mut mask[i * n..(i + 1) * n],
        )?;
    }
    Ok((
        Tensor::matrix(ev.len(), n, values),
        Tensor::matrix(ev.len(), n, mask),
    ))
}
