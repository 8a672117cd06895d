//! Mini-batch Adam on L1 loss with validation-based model selection, and
//! checkpoints.

use std::path::Path;

use lobrm_autodiff::{Adam, Graph, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::eval_l1;
use crate::model::{LobrmModel, Mode, Regressor, RidgeModel, Slfn, Variant};
use crate::preprocess::{NormStats, SampleWindow, WinsorCuts};
use crate::types::Side;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationUnit {
    /// One iteration is a full pass over the training set.
    Epochs,
    /// One iteration is a single mini-batch.
    Steps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub unit: IterationUnit,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 150,
            unit: IterationUnit::Epochs,
            lr: 2e-4,
            batch_size: 256,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be finite and non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub best_iteration: usize,
    pub best_val_loss: f64,
    pub curve: Vec<EpochRecord>,
    pub optimizer: Adam,
}

/// `epoch,train_loss,val_loss` lines.
pub fn curve_csv(curve: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for r in curve {
        s += &format!("{},{},{}\n", r.epoch, r.train_loss, r.val_loss);
    }
    s
}

fn labels(windows: &[&SampleWindow]) -> Tensor {
    let cols = windows[0].label.len();
    Tensor::matrix(
        windows.len(),
        cols,
        windows.iter().flat_map(|w| w.label.iter().copied()).collect(),
    )
}

/// L1 over `windows` with the model's current parameters.
pub fn validation_loss<M: Regressor>(model: &M, windows: &[SampleWindow]) -> Result<f64> {
    let preds = model.predict(windows)?;
    let y: Vec<Vec<f64>> = windows.iter().map(|w| w.label.clone()).collect();
    eval_l1(&preds, &y)
}

/// Trains in place and leaves the model at the iteration with the lowest
/// validation loss. Only the order of training windows within batches is
/// shuffled.
pub fn train<M: Regressor>(
    model: &mut M,
    train: &[SampleWindow],
    val: &[SampleWindow],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut curve = Vec::with_capacity(cfg.iterations);

    for it in 1..=cfg.iterations {
        let batches = match cfg.unit {
            IterationUnit::Epochs => train.len().div_ceil(cfg.batch_size),
            IterationUnit::Steps => 1,
        };
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for _ in 0..batches {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let end = (cursor + cfg.batch_size).min(order.len());
            let batch: Vec<&SampleWindow> = order[cursor..end].iter().map(|&i| &train[i]).collect();
            cursor = end;

            let mut g = Graph::new();
            let pred = model.forward(&mut g, &batch)?;
            let target = g.constant(labels(&batch));
            let loss = g.l1_loss(pred, target)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    what: "training loss".into(),
                    epoch: it,
                });
            }
            let grads = g.backward(loss);
            let grads = g.param_grads(&grads);
            opt.step(model.params_mut(), &grads);
            loss_sum += value * batch.len() as f64;
            count += batch.len();
        }
        let val_loss = validation_loss(model, val)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite {
                what: "validation loss".into(),
                epoch: it,
            });
        }
        curve.push(EpochRecord {
            epoch: it,
            train_loss: loss_sum / count as f64,
            val_loss,
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, it, model.params().clone()));
        }
    }
    let (best_val_loss, best_iteration, params) = best.expect("at least one iteration");
    *model.params_mut() = params;
    Ok(TrainOutcome {
        best_iteration,
        best_val_loss,
        curve,
        optimizer: opt,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelState {
    Lobrm(LobrmModel),
    Slfn(Slfn),
    Ridge(RidgeModel),
}

impl ModelState {
    pub fn predict(&self, windows: &[SampleWindow]) -> Result<Vec<Vec<f64>>> {
        match self {
            ModelState::Lobrm(m) => m.predict(windows),
            ModelState::Slfn(m) => m.predict(windows),
            ModelState::Ridge(m) => m.predict(windows),
        }
    }

    /// Window length the model consumes.
    pub fn window(&self) -> usize {
        match self {
            ModelState::Lobrm(m) => m.config.window,
            ModelState::Slfn(m) => m.config.window,
            ModelState::Ridge(m) => m.window,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ModelState::Lobrm(m) => format!("{}_{}", m.config.variant, m.mode),
            ModelState::Slfn(_) => "slfn".into(),
            ModelState::Ridge(_) => "ridge".into(),
        }
    }
}

/// A trained model with the transforms it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub symbol: String,
    pub side: Side,
    pub norm_stats: NormStats,
    pub winsor_cuts: WinsorCuts,
    pub model: ModelState,
    pub train_config: Option<TrainConfig>,
    pub outcome: Option<TrainOutcome>,
}

impl Checkpoint {
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.ckpt.json", self.symbol, self.side, self.model.label())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// `<symbol>_<side>_<variant>_<mode>.ckpt.json`
pub fn checkpoint_name(symbol: &str, side: Side, variant: Variant, mode: Mode) -> String {
    format!("{symbol}_{side}_{variant}_{mode}.ckpt.json")
}
