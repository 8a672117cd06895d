//! LOBSTER message/orderbook files and their reduction to trade-time records.
//!
//! Book row `i` is the state after message `i`, so the quote attached to a
//! trade is the post-trade quote.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LobSnapshot, Quote, Side, TaqEvent, Trade, TradeRecord};

/// Execution of a visible limit order.
pub const EXECUTE_VISIBLE: u8 = 4;
/// Execution of a hidden limit order.
pub const EXECUTE_HIDDEN: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawMessage {
    pub time: f64,
    pub event_type: u8,
    pub order_id: i64,
    pub size: i64,
    pub price: i64,
    pub direction: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Level {
    pub price: i64,
    pub size: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawBookRow {
    pub ask: Vec<Level>,
    pub bid: Vec<Level>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub open: f64,
    pub close: f64,
    pub open_trim_s: f64,
    pub close_trim_s: f64,
    pub include_hidden: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            open: 34_200.0,
            close: 57_600.0,
            open_trim_s: 1_800.0,
            close_trim_s: 1_800.0,
            include_hidden: true,
        }
    }
}

impl SessionConfig {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.open + self.open_trim_s && t <= self.close - self.close_trim_s
    }

    fn keeps(&self, event_type: u8) -> bool {
        event_type == EXECUTE_VISIBLE || (self.include_hidden && event_type == EXECUTE_HIDDEN)
    }
}

fn malformed(line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedRow {
        line,
        reason: reason.into(),
    }
}

fn field<T: std::str::FromStr>(raw: &str, line: usize, name: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| malformed(line, format!("{name} `{}` is not numeric", raw.trim())))
}

/// Yields `(line_no, fields)` for every non-blank line.
fn rows<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, Vec<String>)>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Err(e) => Some(Err(Error::Io(e))),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(Ok((i + 1, l.split(',').map(str::to_owned).collect()))),
        })
}

pub fn parse_message_file<R: BufRead>(reader: R) -> Result<Vec<RawMessage>> {
    let mut out: Vec<RawMessage> = Vec::new();
    for row in rows(reader) {
        let (line, f) = row?;
        if f.len() != 6 {
            return Err(malformed(line, format!("expected 6 fields, got {}", f.len())));
        }
        let time: f64 = field(&f[0], line, "time")?;
        if !time.is_finite() || time < 0.0 {
            return Err(malformed(line, "time must be finite and non-negative"));
        }
        let msg = RawMessage {
            time,
            event_type: field(&f[1], line, "event type")?,
            order_id: field(&f[2], line, "order id")?,
            size: field(&f[3], line, "size")?,
            price: field(&f[4], line, "price")?,
            direction: field(&f[5], line, "direction")?,
        };
        if msg.size < 0 {
            return Err(malformed(line, "negative size"));
        }
        if (1..=5).contains(&msg.event_type) && msg.price <= 0 {
            return Err(malformed(line, "non-positive price"));
        }
        if msg.direction != 1 && msg.direction != -1 {
            return Err(malformed(line, "direction must be 1 or -1"));
        }
        if out.last().is_some_and(|p| msg.time < p.time) {
            return Err(Error::NonMonotonicTime { line });
        }
        out.push(msg);
    }
    Ok(out)
}

pub fn parse_orderbook_file<R: BufRead>(reader: R, levels: usize) -> Result<Vec<RawBookRow>> {
    let mut out = Vec::new();
    for row in rows(reader) {
        let (line, f) = row?;
        if f.len() != 4 * levels {
            return Err(malformed(
                line,
                format!("expected {} fields, got {}", 4 * levels, f.len()),
            ));
        }
        let mut ask = Vec::with_capacity(levels);
        let mut bid = Vec::with_capacity(levels);
        for l in 0..levels {
            let c = &f[4 * l..4 * l + 4];
            ask.push(Level {
                price: field(&c[0], line, "ask price")?,
                size: field(&c[1], line, "ask size")?,
            });
            bid.push(Level {
                price: field(&c[2], line, "bid price")?,
                size: field(&c[3], line, "bid size")?,
            });
        }
        if levels > 0 && ask[0].price <= bid[0].price {
            return Err(Error::CrossedBook { line });
        }
        out.push(RawBookRow { ask, bid });
    }
    Ok(out)
}

pub fn write_message_file<W: Write>(messages: &[RawMessage], mut w: W) -> Result<()> {
    for m in messages {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            m.time, m.event_type, m.order_id, m.size, m.price, m.direction
        )?;
    }
    Ok(())
}

pub fn write_orderbook_file<W: Write>(rows: &[RawBookRow], mut w: W) -> Result<()> {
    for r in rows {
        let fields: Vec<String> = r
            .ask
            .iter()
            .zip(&r.bid)
            .flat_map(|(a, b)| [a.price, a.size, b.price, b.size])
            .map(|x| x.to_string())
            .collect();
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Volumes on the tick grid behind the top price; grid prices missing from
/// the row count as empty.
fn snapshot(levels: &[Level], side: Side, timestamp: f64, tick: i64) -> LobSnapshot {
    let top = levels[0].price;
    let volumes = (1..=levels.len())
        .map(|l| {
            let p = side.level_price(top, l, tick);
            levels
                .iter()
                .find(|x| x.price == p)
                .map_or(0.0, |x| x.size as f64)
        })
        .collect();
    LobSnapshot {
        timestamp,
        side,
        top_price: top,
        tick,
        volumes,
    }
}

/// Keeps executions inside the trimmed session and pairs each with the
/// book state after it.
pub fn align_and_filter(
    messages: &[RawMessage],
    rows: &[RawBookRow],
    session: &SessionConfig,
    tick: i64,
) -> Result<Vec<TradeRecord>> {
    if messages.len() != rows.len() {
        return Err(Error::LengthMismatch {
            messages: messages.len(),
            rows: rows.len(),
        });
    }
    let mut out = Vec::new();
    for (m, r) in messages.iter().zip(rows) {
        if !session.keeps(m.event_type) || !session.contains(m.time) {
            continue;
        }
        if r.ask.is_empty() || r.bid.is_empty() {
            return Err(Error::EmptyInput);
        }
        let quote = Quote {
            ask_price: r.ask[0].price,
            ask_volume: r.ask[0].size as f64,
            bid_price: r.bid[0].price,
            bid_volume: r.bid[0].size as f64,
        };
        let trade = Trade {
            price: m.price,
            volume: m.size as f64,
            direction: m.direction,
        };
        out.push(TradeRecord {
            event: TaqEvent {
                timestamp: m.time,
                quote,
                trade,
            },
            ask: snapshot(&r.ask, Side::Ask, m.time, tick),
            bid: snapshot(&r.bid, Side::Bid, m.time, tick),
        });
    }
    Ok(out)
}

/// Header of the normalized trade-time dump for `levels` book levels.
pub fn taq_header(levels: usize) -> String {
    let mut cols = vec!["timestamp".to_owned()];
    for side in ["ask", "bid"] {
        for l in 1..=levels {
            cols.push(format!("{side}_p{l}"));
            cols.push(format!("{side}_v{l}"));
        }
    }
    cols.extend(["trade_p", "trade_v", "trade_d"].map(str::to_owned));
    cols.join(",")
}

pub fn write_taq_csv<W: Write>(records: &[TradeRecord], mut w: W) -> Result<()> {
    let levels = records.first().map_or(crate::types::LEVELS, |r| r.ask.volumes.len());
    writeln!(w, "{}", taq_header(levels))?;
    for r in records {
        let mut cols = vec![r.event.timestamp.to_string()];
        for book in [&r.ask, &r.bid] {
            for l in 1..=levels {
                cols.push(book.price(l).to_string());
                cols.push(book.volumes[l - 1].to_string());
            }
        }
        let t = &r.event.trade;
        cols.extend([t.price.to_string(), t.volume.to_string(), t.direction.to_string()]);
        writeln!(w, "{}", cols.join(","))?;
    }
    Ok(())
}

/// Reads the TAQ columns of a trade-time CSV. Only `timestamp`, `ask_p1`,
/// `ask_v1`, `bid_p1`, `bid_v1`, `trade_p`, `trade_v` and `trade_d` are
/// required; other columns are ignored.
pub fn read_taq_csv<R: BufRead>(reader: R) -> Result<Vec<TaqEvent>> {
    const NEEDED: [&str; 8] = [
        "timestamp", "ask_p1", "ask_v1", "bid_p1", "bid_v1", "trade_p", "trade_v", "trade_d",
    ];
    let mut it = rows(reader);
    let (_, header) = match it.next() {
        None => return Ok(Vec::new()),
        Some(h) => h?,
    };
    let mut idx = [0usize; 8];
    for (slot, name) in idx.iter_mut().zip(NEEDED) {
        *slot = header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| malformed(1, format!("missing column `{name}`")))?;
    }
    let mut out: Vec<TaqEvent> = Vec::new();
    for row in it {
        let (line, f) = row?;
        if f.len() != header.len() {
            return Err(malformed(line, format!("expected {} fields, got {}", header.len(), f.len())));
        }
        let g = |i: usize| f[idx[i]].as_str();
        let ev = TaqEvent {
            timestamp: field(g(0), line, "timestamp")?,
            quote: Quote {
                ask_price: field(g(1), line, "ask_p1")?,
                ask_volume: field(g(2), line, "ask_v1")?,
                bid_price: field(g(3), line, "bid_p1")?,
                bid_volume: field(g(4), line, "bid_v1")?,
            },
            trade: Trade {
                price: field(g(5), line, "trade_p")?,
                volume: field(g(6), line, "trade_v")?,
                direction: field(g(7), line, "trade_d")?,
            },
        };
        if ev.quote.ask_price <= ev.quote.bid_price {
            return Err(Error::CrossedBook { line });
        }
        if out.last().is_some_and(|p| ev.timestamp < p.timestamp) {
            return Err(Error::NonMonotonicTime { line });
        }
        out.push(ev);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_an_execution_row() {
        let m = parse_message_file("34200.189,4,11885113,21,31335000,-1\n".as_bytes()).unwrap();
        assert_eq!(
            m,
            vec![RawMessage {
                time: 34200.189,
                event_type: 4,
                order_id: 11885113,
                size: 21,
                price: 31335000,
                direction: -1,
            }]
        );
    }

    #[test]
    fn empty_message_input() {
        assert!(parse_message_file("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn short_row_is_malformed() {
        let e = parse_message_file("34200.1,9,0,0".as_bytes()).unwrap_err();
        assert!(matches!(e, Error::MalformedRow { line: 1, .. }));
    }

    #[test]
    fn decreasing_time_is_rejected() {
        let s = "34200.2,1,1,10,100,1\n34200.1,1,2,10,100,1\n";
        assert!(matches!(
            parse_message_file(s.as_bytes()),
            Err(Error::NonMonotonicTime { line: 2 })
        ));
    }

    #[test]
    fn parses_a_single_level_book() {
        let b = parse_orderbook_file("31340000,100,31330000,50\n".as_bytes(), 1).unwrap();
        assert_eq!(b[0].ask, vec![Level { price: 31340000, size: 100 }]);
        assert_eq!(b[0].bid, vec![Level { price: 31330000, size: 50 }]);
    }

    #[test]
    fn crossed_book_is_rejected() {
        assert!(matches!(
            parse_orderbook_file("31330000,1,31340000,1".as_bytes(), 1),
            Err(Error::CrossedBook { line: 1 })
        ));
    }

    #[test]
    fn five_level_row() {
        let mut f = Vec::new();
        for l in 0..5i64 {
            f.extend([1000 + 100 * l, 10, 900 - 100 * l, 20]);
        }
        let line = f.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let b = parse_orderbook_file(line.as_bytes(), 5).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].ask.len(), 5);
        assert_eq!(b[0].bid[4].price, 500);
    }

    fn book(ask: i64, bid: i64) -> RawBookRow {
        RawBookRow {
            ask: vec![Level { price: ask, size: 10 }, Level { price: ask + 100, size: 7 }],
            bid: vec![Level { price: bid, size: 20 }, Level { price: bid - 200, size: 9 }],
        }
    }

    fn msg(time: f64, event_type: u8) -> RawMessage {
        RawMessage {
            time,
            event_type,
            order_id: 1,
            size: 5,
            price: 10_000,
            direction: -1,
        }
    }

    #[test]
    fn keeps_only_executions() {
        let m = [msg(40_000.0, 1), msg(40_001.0, 4), msg(40_002.0, 3)];
        let rows = vec![book(10_000, 9_900); 3];
        let out = align_and_filter(&m, &rows, &SessionConfig::default(), 100).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].event.timestamp, 40_001.0);
        assert_eq!(out[0].event.trade.volume, 5.0);
    }

    #[test]
    fn opening_half_hour_is_dropped() {
        let m = [msg(34_200.0, 4)];
        let out = align_and_filter(&m, &[book(10_000, 9_900)], &SessionConfig::default(), 100);
        assert!(out.unwrap().is_empty());
    }

    #[test]
    fn hidden_executions_can_be_excluded() {
        let m = [msg(40_000.0, 5)];
        let rows = [book(10_000, 9_900)];
        let mut s = SessionConfig::default();
        assert_eq!(align_and_filter(&m, &rows, &s, 100).unwrap().len(), 1);
        s.include_hidden = false;
        assert!(align_and_filter(&m, &rows, &s, 100).unwrap().is_empty());
    }

    #[test]
    fn length_mismatch() {
        let m = vec![msg(40_000.0, 4); 5];
        let rows = vec![book(10_000, 9_900); 4];
        assert!(matches!(
            align_and_filter(&m, &rows, &SessionConfig::default(), 100),
            Err(Error::LengthMismatch { messages: 5, rows: 4 })
        ));
    }

    #[test]
    fn snapshots_sit_on_the_tick_grid() {
        let out = align_and_filter(&[msg(40_000.0, 4)], &[book(10_000, 9_900)], &SessionConfig::default(), 100)
            .unwrap();
        assert_eq!(out[0].ask.volumes, vec![10.0, 7.0]);
        // bid level 2 at 9_800 is empty; the 9_700 level falls off the grid
        assert_eq!(out[0].bid.volumes, vec![20.0, 0.0]);
    }

    #[test]
    fn taq_dump_reads_back() {
        let out = align_and_filter(&[msg(40_000.0, 4)], &[book(10_000, 9_900)], &SessionConfig::default(), 100)
            .unwrap();
        let mut buf = Vec::new();
        write_taq_csv(&out, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp,ask_p1,ask_v1,ask_p2,ask_v2,bid_p1"));
        let back = read_taq_csv(buf.as_slice()).unwrap();
        assert_eq!(back, vec![out[0].event]);
    }
}
