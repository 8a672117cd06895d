//! From per-day trade-time records to standardized, split sample windows.
//! Clipping cut-points are fit on training days only and z-score statistics
//! on training plus validation days; test days only ever pass through the
//! fitted transforms.

use std::path::{Path, PathBuf};

use lobrm_autodiff::phi;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lobster::{align_and_filter, parse_message_file, parse_orderbook_file, SessionConfig};
use crate::preprocess::{
    apply_cuts, build_samples, chronological_split, fit_norm_stats, fit_winsor_cuts, NormStats, SampleWindow,
    SplitScheme, StdDay, WinsorCuts, LOWER_Q, UPPER_Q,
};
use crate::types::{Side, TradeRecord, CENT_TICK, LEVELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayFiles {
    pub message_path: PathBuf,
    pub orderbook_path: PathBuf,
}

/// The files of one symbol, in date order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub symbol: String,
    pub days: Vec<DayFiles>,
    #[serde(default = "default_tick")]
    pub tick: i64,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default)]
    pub session: SessionConfig,
}

fn default_tick() -> i64 {
    CENT_TICK
}

fn default_levels() -> usize {
    LEVELS
}

impl Manifest {
    /// Reads a manifest; relative day paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut m: Manifest = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut m.days {
            for p in [&mut d.message_path, &mut d.orderbook_path] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(m)
    }

    pub fn load_days(&self) -> Result<Vec<Vec<TradeRecord>>> {
        self.days
            .iter()
            .map(|d| {
                let open = |p: &Path| std::fs::File::open(p).map(std::io::BufReader::new);
                let messages = parse_message_file(open(&d.message_path)?)?;
                let rows = parse_orderbook_file(open(&d.orderbook_path)?, self.levels)?;
                align_and_filter(&messages, &rows, &self.session, self.tick)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    pub lower_q: f64,
    pub upper_q: f64,
    pub scheme: SplitScheme,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            lower_q: LOWER_Q,
            upper_q: UPPER_Q,
            scheme: SplitScheme::Default,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

/// Fitted transforms and the standardized days of each split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cuts: WinsorCuts,
    pub stats: NormStats,
    pub train: Vec<StdDay>,
    pub val: Vec<StdDay>,
    pub test: Vec<StdDay>,
}

/// Clipping cut-points from the training days and statistics from training
/// plus validation days of a split.
pub fn fit_transforms(
    days: &[Vec<TradeRecord>],
    cfg: &PrepConfig,
) -> Result<(WinsorCuts, NormStats)> {
    let split = chronological_split(days, cfg.scheme)?;
    let cuts = fit_winsor_cuts(&split.train, cfg.lower_q, cfg.upper_q)?;
    let fit_days: Vec<Vec<TradeRecord>> = split
        .train
        .iter()
        .chain(&split.val)
        .map(|d| apply_cuts(d, &cuts))
        .collect::<Result<_>>()?;
    Ok((cuts, fit_norm_stats(&fit_days)?))
}

impl Prepared {
    pub fn fit(days: &[Vec<TradeRecord>], cfg: &PrepConfig) -> Result<Self> {
        let (cuts, stats) = fit_transforms(days, cfg)?;
        Self::with_transforms(days, cfg.scheme, cuts, stats)
    }

    pub fn with_transforms(
        days: &[Vec<TradeRecord>],
        scheme: SplitScheme,
        cuts: WinsorCuts,
        stats: NormStats,
    ) -> Result<Self> {
        let split = chronological_split(days, scheme)?;
        let std = |ds: &[Vec<TradeRecord>]| -> Result<Vec<StdDay>> {
            ds.iter().map(|d| StdDay::new(d, &cuts, &stats)).collect()
        };
        Ok(Self {
            train: std(&split.train)?,
            val: std(&split.val)?,
            test: std(&split.test)?,
            cuts,
            stats,
        })
    }

    pub fn days(&self, part: Part) -> &[StdDay] {
        match part {
            Part::Train => &self.train,
            Part::Val => &self.val,
            Part::Test => &self.test,
        }
    }

    /// Windows of every day of a split, day by day in date order.
    pub fn samples(&self, part: Part, side: Side, window: usize) -> Result<Vec<SampleWindow>> {
        let mut out = Vec::new();
        for d in self.days(part) {
            out.extend(build_samples(d, side, window)?);
        }
        if out.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(out)
    }

    /// Mean smoothed inter-trade gap over the training days.
    pub fn mean_train_phi(&self) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for d in &self.train {
            for w in d.events.windows(2) {
                sum += phi((w[1].timestamp - w[0].timestamp).max(0.0));
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}
