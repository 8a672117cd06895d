//! Test-set metrics: z-score L1, pooled and hourly R², loss as a share of
//! mean volume, and the hourly loss/volatility correlation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{NormStats, SampleWindow};
use crate::types::Side;

/// Permutations used for correlation p-values.
pub const PERMUTATIONS: usize = 10_000;

const HOUR: f64 = 3_600.0;

fn check_pairs(preds: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidConfig(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if let Some((p, _)) = preds.iter().zip(labels).find(|(p, l)| p.len() != l.len()) {
        return Err(Error::InvalidConfig(format!("prediction of width {}", p.len())));
    }
    Ok(())
}

/// Mean absolute error over every label component.
pub fn eval_l1(preds: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<f64> {
    check_pairs(preds, labels)?;
    let n: usize = labels.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(Error::EmptyTestSet);
    }
    let total: f64 = preds
        .iter()
        .zip(labels)
        .flat_map(|(p, l)| p.iter().zip(l).map(|(a, b)| (a - b).abs()))
        .sum();
    Ok(total / n as f64)
}

/// Per-sample mean absolute error.
pub fn sample_l1(preds: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_pairs(preds, labels)?;
    Ok(preds
        .iter()
        .zip(labels)
        .map(|(p, l)| p.iter().zip(l).map(|(a, b)| (a - b).abs()).sum::<f64>() / l.len().max(1) as f64)
        .collect())
}

/// `1 − SS_res / SS_tot` over flat series.
pub fn r_squared(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::InvalidConfig("prediction and target lengths differ".into()));
    }
    if targets.len() < 2 {
        return Err(Error::EmptyTestSet);
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ZeroVariance("targets".into()));
    }
    let ss_res: f64 = preds.iter().zip(targets).map(|(p, y)| (y - p) * (y - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// R² pooled over all deep levels.
pub fn eval_r_squared(preds: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<f64> {
    check_pairs(preds, labels)?;
    let p: Vec<f64> = preds.iter().flatten().copied().collect();
    let y: Vec<f64> = labels.iter().flatten().copied().collect();
    r_squared(&p, &y)
}

fn hour_of(t: f64) -> i64 {
    (t / HOUR).floor() as i64
}

/// Per-level averages of predictions and labels within each wall-clock hour,
/// in hour order. Samples of different days sharing an hour are averaged
/// together only if `days` assigns them the same day index.
pub fn hourly_means(
    preds: &[Vec<f64>],
    labels: &[Vec<f64>],
    times: &[f64],
    days: &[usize],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    check_pairs(preds, labels)?;
    let mut buckets: BTreeMap<(usize, i64), (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for i in 0..preds.len() {
        let e = buckets
            .entry((days[i], hour_of(times[i])))
            .or_insert_with(|| (vec![0.0; preds[i].len()], vec![0.0; labels[i].len()], 0));
        e.0.iter_mut().zip(&preds[i]).for_each(|(a, b)| *a += b);
        e.1.iter_mut().zip(&labels[i]).for_each(|(a, b)| *a += b);
        e.2 += 1;
    }
    let mut p = Vec::new();
    let mut y = Vec::new();
    for (sp, sy, n) in buckets.into_values() {
        p.push(sp.into_iter().map(|v| v / n as f64).collect());
        y.push(sy.into_iter().map(|v| v / n as f64).collect());
    }
    Ok((p, y))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::TooFewBuckets(x.len().min(y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance("correlation input".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Two-sided permutation p-value of the Pearson correlation:
/// `(1 + #{|ρ_perm| ≥ |ρ|}) / (1 + permutations)`.
pub fn permutation_p_value(x: &[f64], y: &[f64], permutations: usize, seed: u64) -> Result<f64> {
    let observed = pearson(x, y)?.abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = y.to_vec();
    let mut hits = 0usize;
    for _ in 0..permutations {
        shuffled.shuffle(&mut rng);
        // rounding can make an identical permutation differ in the last bit
        if pearson(x, &shuffled)?.abs() >= observed - 1e-12 {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (1 + permutations) as f64)
}

/// Loss expressed as a fraction of mean volume: `z · std / mean`.
pub fn pct_loss(z_loss: f64, mean: f64, std: f64) -> Result<f64> {
    if mean <= 0.0 {
        return Err(Error::ZeroMean(mean));
    }
    Ok(z_loss * std / mean)
}

/// Population standard deviation.
fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourBucket {
    pub day: usize,
    pub hour: i64,
    pub samples: usize,
    pub l1: f64,
    pub volume_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyCorr {
    pub rho: f64,
    pub p_value: f64,
    pub buckets: Vec<HourBucket>,
}

/// Groups samples by (day, hour), then correlates mean L1 with the std of raw
/// deep volumes across buckets.
pub fn hourly_corr(
    losses: &[f64],
    raw_deep: &[Vec<f64>],
    times: &[f64],
    days: &[usize],
    permutations: usize,
    seed: u64,
) -> Result<HourlyCorr> {
    let mut groups: BTreeMap<(usize, i64), (f64, usize, Vec<f64>)> = BTreeMap::new();
    for i in 0..losses.len() {
        let e = groups.entry((days[i], hour_of(times[i]))).or_default();
        e.0 += losses[i];
        e.1 += 1;
        e.2.extend(&raw_deep[i]);
    }
    if groups.len() < 2 {
        return Err(Error::TooFewBuckets(groups.len()));
    }
    let buckets: Vec<HourBucket> = groups
        .into_iter()
        .map(|((day, hour), (sum, n, vols))| HourBucket {
            day,
            hour,
            samples: n,
            l1: sum / n as f64,
            volume_std: std_dev(&vols),
        })
        .collect();
    let l1: Vec<f64> = buckets.iter().map(|b| b.l1).collect();
    let vs: Vec<f64> = buckets.iter().map(|b| b.volume_std).collect();
    Ok(HourlyCorr {
        rho: pearson(&l1, &vs)?,
        p_value: permutation_p_value(&l1, &vs, permutations, seed)?,
        buckets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub side: Side,
    pub samples: usize,
    pub test_l1: f64,
    pub r_squared: Option<f64>,
    pub r_squared_hourly: Option<f64>,
    pub pct_loss: f64,
    /// Hourly correlation; absent with fewer than two buckets.
    pub hourly: Option<HourlyCorr>,
}

impl EvalReport {
    /// `metric,value` lines.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_owned(), |x| x.to_string());
        let mut s = String::from("metric,value\n");
        s += &format!("samples,{}\n", self.samples);
        s += &format!("test_l1,{}\n", self.test_l1);
        s += &format!("r_squared,{}\n", opt(self.r_squared));
        s += &format!("r_squared_hourly,{}\n", opt(self.r_squared_hourly));
        s += &format!("pct_loss,{}\n", self.pct_loss);
        s += &format!("hourly_rho,{}\n", opt(self.hourly.as_ref().map(|h| h.rho)));
        s += &format!("hourly_p_value,{}\n", opt(self.hourly.as_ref().map(|h| h.p_value)));
        s
    }
}

/// Every metric for one side. `day_of` gives the day index of each window.
pub fn evaluate(
    preds: &[Vec<f64>],
    windows: &[SampleWindow],
    day_of: &[usize],
    stats: &NormStats,
    side: Side,
    permutations: usize,
    seed: u64,
) -> Result<EvalReport> {
    let labels: Vec<Vec<f64>> = windows.iter().map(|w| w.label.clone()).collect();
    let times: Vec<f64> = windows.iter().map(SampleWindow::end_time).collect();
    let test_l1 = eval_l1(preds, &labels)?;
    let r_squared = optional(eval_r_squared(preds, &labels))?;
    let (hp, hy) = hourly_means(preds, &labels, &times, day_of)?;
    let r_squared_hourly = optional(eval_r_squared(&hp, &hy))?;
    let s = stats.side(side);
    let raw: Vec<Vec<f64>> = windows.iter().map(|w| w.raw_label.clone()).collect();
    let hourly = match hourly_corr(&sample_l1(preds, &labels)?, &raw, &times, day_of, permutations, seed) {
        Ok(h) => Some(h),
        Err(Error::TooFewBuckets(_) | Error::ZeroVariance(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        side,
        samples: windows.len(),
        test_l1,
        r_squared,
        r_squared_hourly,
        pct_loss: pct_loss(test_l1, s.deep_mean, s.deep_std)?,
        hourly,
    })
}

fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::ZeroVariance(_) | Error::EmptyTestSet) => Ok(None),
        Err(e) => Err(e),
    }
}
