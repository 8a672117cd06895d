//! Ablation over ensemble modes and the training-size study.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::eval_l1;
use crate::model::{LobrmConfig, LobrmModel, Mode, Regressor};
use crate::pipeline::{Part, PrepConfig, Prepared};
use crate::preprocess::{SampleWindow, SplitScheme};
use crate::train::{train, TrainConfig, TrainOutcome};
use crate::types::{Side, TradeRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: LobrmConfig,
    pub train: TrainConfig,
    pub prep: PrepConfig,
}

/// Windows of the three splits for one side.
#[derive(Debug, Clone)]
pub struct SplitSamples {
    pub train: Vec<SampleWindow>,
    pub val: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
    /// Day index (within the test split) of each test window.
    pub test_days: Vec<usize>,
}

impl SplitSamples {
    pub fn new(p: &Prepared, side: Side, window: usize) -> Result<Self> {
        let mut test_days = Vec::new();
        for (i, d) in p.test.iter().enumerate() {
            test_days.extend(std::iter::repeat_n(i, (d.len() + 1).saturating_sub(window)));
        }
        Ok(Self {
            train: p.samples(Part::Train, side, window)?,
            val: p.samples(Part::Val, side, window)?,
            test: p.samples(Part::Test, side, window)?,
            test_days,
        })
    }
}

/// Trains one LOBRM model and scores it on the test windows.
pub fn train_and_test(
    model: &mut LobrmModel,
    samples: &SplitSamples,
    cfg: &TrainConfig,
) -> Result<(TrainOutcome, f64)> {
    let outcome = train(model, &samples.train, &samples.val, cfg)?;
    let preds = model.predict(&samples.test)?;
    let labels: Vec<Vec<f64>> = samples.test.iter().map(|w| w.label.clone()).collect();
    Ok((outcome, eval_l1(&preds, &labels)?))
}

/// Test L1 of every mode, each trained from the same seed and data. With
/// `freeze_zero_ws` the learned weighting branch is zeroed and frozen, which
/// pins its weights at one half.
pub fn run_ablation(
    prepared: &Prepared,
    side: Side,
    cfg: &ExperimentConfig,
    freeze_zero_ws: bool,
) -> Result<Vec<(Mode, f64)>> {
    let samples = SplitSamples::new(prepared, side, cfg.model.window)?;
    let terminal = prepared.mean_train_phi();
    Mode::ALL
        .into_iter()
        .map(|mode| {
            let mut m = LobrmModel::new(cfg.model.clone(), side, mode, cfg.train.seed, terminal)?;
            if mode == Mode::Full && freeze_zero_ws {
                m.params.zero_prefix("ws.");
                m.params.freeze_prefix("ws.");
            }
            let (_, l1) = train_and_test(&mut m, &samples, &cfg.train)?;
            Ok((mode, l1))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: Mode,
    pub losses: Vec<f64>,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub runs: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// One column per labelled run, one row per mode, plus the row average.
    pub fn from_runs(runs: &[(String, Vec<(Mode, f64)>)]) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::EmptyInput);
        }
        let rows = Mode::ALL
            .into_iter()
            .map(|mode| {
                let losses: Vec<f64> = runs
                    .iter()
                    .map(|(label, r)| {
                        r.iter()
                            .find(|(m, _)| *m == mode)
                            .map(|x| x.1)
                            .ok_or_else(|| Error::InvalidConfig(format!("run {label} lacks mode {mode}")))
                    })
                    .collect::<Result<_>>()?;
                let average = losses.iter().sum::<f64>() / losses.len() as f64;
                Ok(AblationRow { mode, losses, average })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            runs: runs.iter().map(|r| r.0.clone()).collect(),
            rows,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("mode,{},avg\n", self.runs.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r.losses.iter().map(f64::to_string).collect();
            s += &format!("{},{},{}\n", r.mode, cells.join(","), r.average);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub scheme: SplitScheme,
    pub train_days: usize,
    pub test_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeStudy {
    pub side: Side,
    pub mode: Mode,
    pub rows: Vec<SizeRow>,
}

impl SizeStudy {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scheme,train_days,test_l1\n");
        for r in &self.rows {
            let name = serde_json::to_value(r.scheme).ok().and_then(|v| v.as_str().map(str::to_owned));
            s += &format!("{},{},{}\n", name.unwrap_or_default(), r.train_days, r.test_l1);
        }
        s
    }
}

/// Retrains with one, two and three training days before a fixed
/// validation and test day. Transforms are refit for each training window.
pub fn run_training_size_study(
    days: &[Vec<TradeRecord>],
    side: Side,
    mode: Mode,
    cfg: &ExperimentConfig,
) -> Result<SizeStudy> {
    if days.len() < 5 {
        return Err(Error::NotEnoughDays { have: days.len(), need: 5 });
    }
    let rows = [SplitScheme::Day3, SplitScheme::Day2And3, SplitScheme::Day1To3]
        .into_iter()
        .map(|scheme| {
            let prep = PrepConfig { scheme, ..cfg.prep };
            let prepared = Prepared::fit(days, &prep)?;
            let samples = SplitSamples::new(&prepared, side, cfg.model.window)?;
            let mut m = LobrmModel::new(cfg.model.clone(), side, mode, cfg.train.seed, prepared.mean_train_phi())?;
            let (_, test_l1) = train_and_test(&mut m, &samples, &cfg.train)?;
            Ok(SizeRow {
                scheme,
                train_days: prepared.train.len(),
                test_l1,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SizeStudy { side, mode, rows })
}
