//! Ridge regression and a single-hidden-layer network over flattened sparse
//! windows.

use lobrm_autodiff::{init_mlp, Activation, BoundMlp, Graph, MlpSpec, ParamStore, Tensor, Var};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Regressor;
use crate::encoding::{sparse_width, write_sparse_row};
use crate::error::{Error, Result};
use crate::preprocess::SampleWindow;
use crate::types::{CENT_TICK, LEVELS};

/// Validation grid for the ridge penalty.
pub const RIDGE_LAMBDAS: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

/// Non-zero entries of the flattened `S x width` sparse encoding.
pub fn window_features(window: &SampleWindow, k: usize, tick: i64, split_trades: bool) -> Result<Vec<(usize, f64)>> {
    let width = sparse_width(k, split_trades);
    let mut row = vec![0.0; width];
    let mut out = Vec::new();
    for (t, ev) in window.events().iter().enumerate() {
        row.iter_mut().for_each(|x| *x = 0.0);
        write_sparse_row(ev, window.ref_ask(), window.ref_bid(), k, tick, split_trades, &mut row)?;
        out.extend(
            row.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, &v)| (t * width + j, v)),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeWeights {
    /// `outputs x features`
    pub coef: Vec<Vec<f64>>,
    pub intercept: Vec<f64>,
}

impl RidgeWeights {
    pub fn predict_sparse(&self, row: &[(usize, f64)]) -> Vec<f64> {
        self.coef
            .iter()
            .zip(&self.intercept)
            .map(|(c, b)| b + row.iter().map(|&(j, v)| c[j] * v).sum::<f64>())
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.coef
            .iter()
            .zip(&self.intercept)
            .map(|(c, b)| b + c.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }
}

/// Sufficient statistics for ridge regression, accumulated from sparse rows.
#[derive(Debug, Clone)]
pub struct RidgeAccumulator {
    features: usize,
    outputs: usize,
    n: usize,
    sum_x: Vec<f64>,
    sum_y: Vec<f64>,
    /// Upper triangle of XᵀX, row-major `features x features`.
    xtx: Vec<f64>,
    /// Xᵀy, `features x outputs`.
    xty: Vec<f64>,
    active: Vec<bool>,
}

impl RidgeAccumulator {
    pub fn new(features: usize, outputs: usize) -> Self {
        Self {
            features,
            outputs,
            n: 0,
            sum_x: vec![0.0; features],
            sum_y: vec![0.0; outputs],
            xtx: vec![0.0; features * features],
            xty: vec![0.0; features * outputs],
            active: vec![false; features],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Adds one sample given its non-zero features (indices ascending).
    pub fn push(&mut self, row: &[(usize, f64)], y: &[f64]) -> Result<()> {
        if y.len() != self.outputs {
            return Err(Error::InvalidConfig(format!("expected {} targets, got {}", self.outputs, y.len())));
        }
        if let Some(&(j, _)) = row.iter().find(|(j, _)| *j >= self.features) {
            return Err(Error::InvalidConfig(format!("feature index {j} out of range")));
        }
        self.n += 1;
        for (s, v) in self.sum_y.iter_mut().zip(y) {
            *s += v;
        }
        let p = self.features;
        for (a, &(i, vi)) in row.iter().enumerate() {
            self.active[i] = true;
            self.sum_x[i] += vi;
            for (o, yo) in y.iter().enumerate() {
                self.xty[i * self.outputs + o] += vi * yo;
            }
            for &(j, vj) in &row[a..] {
                let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
                self.xtx[lo * p + hi] += vi * vj;
            }
        }
        Ok(())
    }

    /// Solves the centred normal equations; the intercept is not penalized.
    /// Features never seen get zero weight.
    pub fn solve(&self, lambda: f64) -> Result<RidgeWeights> {
        if self.n == 0 {
            return Err(Error::EmptyInput);
        }
        if lambda < 0.0 {
            return Err(Error::InvalidConfig("ridge penalty must be non-negative".into()));
        }
        let idx: Vec<usize> = (0..self.features).filter(|&j| self.active[j]).collect();
        if lambda == 0.0 && idx.len() < self.features {
            return Err(Error::SingularSystem);
        }
        let n = self.n as f64;
        let p = self.features;
        let mean_x: Vec<f64> = self.sum_x.iter().map(|s| s / n).collect();
        let mean_y: Vec<f64> = self.sum_y.iter().map(|s| s / n).collect();
        let q = idx.len();
        let a = DMatrix::from_fn(q, q, |r, c| {
            let (i, j) = (idx[r].min(idx[c]), idx[r].max(idx[c]));
            let centred = self.xtx[i * p + j] - n * mean_x[i] * mean_x[j];
            centred + if r == c { lambda } else { 0.0 }
        });
        let b = DMatrix::from_fn(q, self.outputs, |r, o| {
            let i = idx[r];
            self.xty[i * self.outputs + o] - n * mean_x[i] * mean_y[o]
        });
        let max_diag = (0..q).map(|i| a[(i, i)]).fold(0.0f64, f64::max);
        let chol = a.cholesky().ok_or(Error::SingularSystem)?;
        let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, &d| m.min(d * d));
        if q > 0 && min_pivot <= 1e-12 * max_diag.max(f64::MIN_POSITIVE) {
            return Err(Error::SingularSystem);
        }
        let w = chol.solve(&b);
        let mut coef = vec![vec![0.0; p]; self.outputs];
        for (r, &i) in idx.iter().enumerate() {
            for (o, c) in coef.iter_mut().enumerate() {
                c[i] = w[(r, o)];
            }
        }
        let intercept = (0..self.outputs)
            .map(|o| mean_y[o] - idx.iter().map(|&i| mean_x[i] * coef[o][i]).sum::<f64>())
            .collect();
        Ok(RidgeWeights { coef, intercept })
    }
}

/// Ridge fit on dense rows.
pub fn ridge_fit(x: &[Vec<f64>], y: &[Vec<f64>], lambda: f64) -> Result<RidgeWeights> {
    let (Some(x0), Some(y0)) = (x.first(), y.first()) else {
        return Err(Error::EmptyInput);
    };
    if x.len() != y.len() {
        return Err(Error::InvalidConfig(format!("{} rows but {} targets", x.len(), y.len())));
    }
    let mut acc = RidgeAccumulator::new(x0.len(), y0.len());
    for (row, t) in x.iter().zip(y) {
        if row.len() != x0.len() {
            return Err(Error::InvalidConfig("ragged design matrix".into()));
        }
        let nz: Vec<(usize, f64)> = row.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
        acc.push(&nz, t)?;
    }
    acc.solve(lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub lambda: f64,
    pub window: usize,
    pub k: usize,
    pub tick: i64,
    pub split_trades: bool,
    pub weights: RidgeWeights,
}

impl RidgeModel {
    /// Fits every penalty in `lambdas` and keeps the one with the lowest
    /// validation L1. Returns the model and `(lambda, val_l1)` per candidate.
    pub fn fit_select(
        train: &[SampleWindow],
        val: &[SampleWindow],
        window: usize,
        k: usize,
        tick: i64,
        split_trades: bool,
        lambdas: &[f64],
    ) -> Result<(Self, Vec<(f64, f64)>)> {
        let features = window * sparse_width(k, split_trades);
        let outputs = train.first().ok_or(Error::EmptyInput)?.label.len();
        let mut acc = RidgeAccumulator::new(features, outputs);
        for w in train {
            acc.push(&window_features(w, k, tick, split_trades)?, &w.label)?;
        }
        let val_rows: Vec<Vec<(usize, f64)>> = val
            .iter()
            .map(|w| window_features(w, k, tick, split_trades))
            .collect::<Result<_>>()?;
        let mut best: Option<(f64, f64, RidgeWeights)> = None;
        let mut scores = Vec::new();
        for &lambda in lambdas {
            let weights = acc.solve(lambda)?;
            let loss = mean_abs(val.iter().zip(&val_rows).map(|(w, r)| (weights.predict_sparse(r), &w.label)));
            scores.push((lambda, loss));
            if best.as_ref().is_none_or(|(b, _, _)| loss < *b) {
                best = Some((loss, lambda, weights));
            }
        }
        let (_, lambda, weights) = best.ok_or_else(|| Error::InvalidConfig("empty penalty grid".into()))?;
        Ok((
            Self {
                lambda,
                window,
                k,
                tick,
                split_trades,
                weights,
            },
            scores,
        ))
    }

    pub fn predict(&self, windows: &[SampleWindow]) -> Result<Vec<Vec<f64>>> {
        windows
            .iter()
            .map(|w| Ok(self.weights.predict_sparse(&window_features(w, self.k, self.tick, self.split_trades)?)))
            .collect()
    }
}

fn mean_abs<'a>(pairs: impl Iterator<Item = (Vec<f64>, &'a Vec<f64>)>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, y) in pairs {
        sum += p.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>();
        n += y.len();
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlfnConfig {
    pub window: usize,
    pub k: usize,
    pub tick: i64,
    pub split_trades: bool,
    pub hidden: usize,
    pub levels: usize,
}

impl Default for SlfnConfig {
    fn default() -> Self {
        Self {
            window: 100,
            k: 8,
            tick: CENT_TICK,
            split_trades: false,
            hidden: 64,
            levels: LEVELS,
        }
    }
}

impl SlfnConfig {
    pub fn input(&self) -> usize {
        self.window * sparse_width(self.k, self.split_trades)
    }

    pub fn spec(&self) -> MlpSpec {
        MlpSpec {
            input: self.input(),
            hidden: vec![self.hidden],
            output: self.levels - 1,
            hidden_act: Activation::Relu,
            output_act: Activation::Identity,
        }
    }
}

/// One ReLU hidden layer over the flattened sparse window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slfn {
    pub config: SlfnConfig,
    pub params: ParamStore,
}

impl Slfn {
    pub fn new(config: SlfnConfig, seed: u64) -> Result<Self> {
        if config.window == 0 || config.k == 0 || config.hidden == 0 || config.levels < 2 {
            return Err(Error::InvalidConfig("network dimensions must be positive".into()));
        }
        let mut params = ParamStore::new();
        init_mlp(&mut params, "slfn", &config.spec(), &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self { config, params })
    }

    /// `B x (S · width)` input matrix.
    pub fn inputs(&self, batch: &[&SampleWindow]) -> Result<Tensor> {
        let c = &self.config;
        let width = c.input();
        let mut data = vec![0.0; batch.len() * width];
        for (b, w) in batch.iter().enumerate() {
            if w.events().len() != c.window {
                return Err(Error::InvalidConfig(format!(
                    "window of {} events, model expects {}",
                    w.events().len(),
                    c.window
                )));
            }
            for (j, v) in window_features(w, c.k, c.tick, c.split_trades)? {
                data[b * width + j] = v;
            }
        }
        Ok(Tensor::matrix(batch.len(), width, data))
    }

    pub fn forward_input(&self, g: &mut Graph, store: &ParamStore, x: Tensor) -> Result<Var> {
        let mlp = BoundMlp::bind(g, store, "slfn", &self.config.spec())?;
        let x = g.constant(x);
        Ok(mlp.forward(g, x)?)
    }
}

impl Regressor for Slfn {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward_with(&self, g: &mut Graph, store: &ParamStore, batch: &[&SampleWindow]) -> Result<Var> {
        let x = self.inputs(batch)?;
        self.forward_input(g, store, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let w = ridge_fit(&[vec![1.0], vec![2.0]], &[vec![2.0], vec![4.0]], 0.0).unwrap();
        assert!((w.coef[0][0] - 2.0).abs() < 1e-12);
        assert!(w.intercept[0].abs() < 1e-12);
    }

    #[test]
    fn heavy_penalty_shrinks() {
        let w = ridge_fit(&[vec![1.0], vec![2.0]], &[vec![2.0], vec![4.0]], 1e6).unwrap();
        assert!(w.coef[0][0].abs() < 1e-3);
    }

    #[test]
    fn zero_targets_give_zero_weights() {
        let x = vec![vec![1.0, 3.0], vec![2.0, -1.0], vec![0.5, 0.5]];
        let w = ridge_fit(&x, &vec![vec![0.0]; 3], 0.1).unwrap();
        assert!(w.coef[0].iter().all(|c| *c == 0.0));
        assert_eq!(w.intercept[0], 0.0);
    }

    #[test]
    fn singular_without_penalty() {
        let x = vec![vec![1.0], vec![1.0]];
        assert!(matches!(ridge_fit(&x, &[vec![1.0], vec![2.0]], 0.0), Err(Error::SingularSystem)));
        let x = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]];
        let y = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert!(matches!(ridge_fit(&x, &y, 0.0), Err(Error::SingularSystem)));
        assert!(ridge_fit(&x, &y, 0.1).is_ok());
    }

    #[test]
    fn zero_slfn_predicts_zero() {
        let cfg = SlfnConfig {
            window: 2,
            k: 2,
            hidden: 3,
            ..SlfnConfig::default()
        };
        let mut m = Slfn::new(cfg, 0).unwrap();
        m.params.zero_prefix("slfn");
        let mut g = Graph::new();
        let y = m.forward_input(&mut g, &m.params, Tensor::full(&[2, m.config.input()], 1.0)).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 4]);
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));
    }
}
