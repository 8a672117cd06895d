//! Mid-price direction classification, used to compare the sparse quote
//! encoding against a small convolutional encoding of explicit quotes.
//!
//! Labels come from the mean mid over the next `horizon` trade-time steps.
//! Each sample is a window of quotes ending at the labelled step; the
//! classifier is a per-step dense layer, a GRU and a softmax head.

use lobrm_autodiff::{
    gru_cell, init_gru, init_mlp, Activation, Adam, BoundGru, BoundMlp, Graph, MlpSpec, ParamStore, Tensor, Var,
    LEAKY_SLOPE,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::encode_quote_sparse;
use crate::error::{Error, Result};
use crate::preprocess::{chronological_split, SplitScheme};
use crate::train::{IterationUnit, TrainConfig};
use crate::types::{Quote, TradeRecord, CENT_TICK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendLabel {
    Down,
    Same,
    Up,
}

impl TrendLabel {
    pub const ALL: [TrendLabel; 3] = [TrendLabel::Down, TrendLabel::Same, TrendLabel::Up];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Label of step `i` compares the mean of `mids[i+1..=i+horizon]` with
/// `mids[i]`; moves within `eps` ticks are `Same`. The last `horizon` steps
/// get no label.
pub fn label_trend(mids: &[f64], horizon: usize, eps: f64, tick: i64) -> Result<Vec<TrendLabel>> {
    if horizon == 0 || mids.len() <= horizon {
        return Err(Error::TooShortSeries {
            have: mids.len(),
            horizon,
        });
    }
    let band = eps * tick as f64;
    Ok((0..mids.len() - horizon)
        .map(|i| {
            let ahead = mids[i + 1..=i + horizon].iter().sum::<f64>() / horizon as f64;
            let d = ahead - mids[i];
            if d > band {
                TrendLabel::Up
            } else if d < -band {
                TrendLabel::Down
            } else {
                TrendLabel::Same
            }
        })
        .collect())
}

/// Fractions of down, same and up labels.
pub fn label_distribution(labels: &[TrendLabel]) -> [f64; 3] {
    let mut c = [0usize; 3];
    for l in labels {
        c[l.index()] += 1;
    }
    let n = labels.len().max(1) as f64;
    c.map(|x| x as f64 / n)
}

pub const EPSILON_GRID_STEP: f64 = 0.05;
pub const EPSILON_GRID_MAX: f64 = 5.0;

/// Grid value of `eps` whose pooled label balance is closest, in squared
/// distance, to `target` (down, same, up). Ties go to the smaller value.
pub fn fit_epsilon(days_mids: &[Vec<f64>], horizon: usize, tick: i64, target: [f64; 3]) -> Result<f64> {
    let steps = (EPSILON_GRID_MAX / EPSILON_GRID_STEP).round() as usize;
    let mut best: Option<(f64, f64)> = None;
    for s in 0..=steps {
        let eps = s as f64 * EPSILON_GRID_STEP;
        let mut labels = Vec::new();
        for m in days_mids {
            labels.extend(label_trend(m, horizon, eps, tick)?);
        }
        let dist = label_distribution(&labels);
        let err: f64 = dist.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum();
        if best.is_none_or(|(e, _)| err < e) {
            best = Some((err, eps));
        }
    }
    best.map(|b| b.1).ok_or(Error::EmptyInput)
}

pub fn mids(quotes: &[Quote]) -> Vec<f64> {
    quotes.iter().map(Quote::mid).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendEncoding {
    /// One-hot quote vectors around the window-end quotes.
    Sparse,
    /// `[ask_p, ask_v, bid_p, bid_v]` through the convolution.
    ConvPrice,
    /// `[ask_v, bid_v]` through the convolution.
    ConvNoPrice,
}

impl TrendEncoding {
    pub const ALL: [TrendEncoding; 3] = [TrendEncoding::Sparse, TrendEncoding::ConvPrice, TrendEncoding::ConvNoPrice];

    pub fn as_str(self) -> &'static str {
        match self {
            TrendEncoding::Sparse => "sparse",
            TrendEncoding::ConvPrice => "conv_price",
            TrendEncoding::ConvNoPrice => "conv_no_price",
        }
    }

    /// Per-step input width.
    pub fn width(self, k: usize) -> usize {
        match self {
            TrendEncoding::Sparse => 2 * (2 * k - 1),
            TrendEncoding::ConvPrice => 4,
            TrendEncoding::ConvNoPrice => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    MinMax,
    ZScore,
}

impl Scaling {
    pub const ALL: [Scaling; 2] = [Scaling::MinMax, Scaling::ZScore];

    pub fn as_str(self) -> &'static str {
        match self {
            Scaling::MinMax => "min_max",
            Scaling::ZScore => "z_score",
        }
    }
}

/// Column-wise `(x - offset) / scale` over `[ask_p, ask_v, bid_p, bid_v]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuoteScaler {
    pub scaling: Scaling,
    pub offset: [f64; 4],
    pub scale: [f64; 4],
}

fn columns(q: &Quote) -> [f64; 4] {
    [q.ask_price as f64, q.ask_volume, q.bid_price as f64, q.bid_volume]
}

impl QuoteScaler {
    pub fn fit(quotes: &[Quote], scaling: Scaling) -> Result<Self> {
        if quotes.is_empty() {
            return Err(Error::EmptyInput);
        }
        let n = quotes.len() as f64;
        let mut offset = [0.0; 4];
        let mut scale = [0.0; 4];
        for c in 0..4 {
            let col = quotes.iter().map(|q| columns(q)[c]);
            let (o, s) = match scaling {
                Scaling::MinMax => {
                    let lo = col.clone().fold(f64::INFINITY, f64::min);
                    let hi = col.fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi - lo)
                }
                Scaling::ZScore => {
                    let mean = col.clone().sum::<f64>() / n;
                    let var = col.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    (mean, var.sqrt())
                }
            };
            if s <= 0.0 {
                return Err(Error::ZeroVariance(format!("quote column {c}")));
            }
            offset[c] = o;
            scale[c] = s;
        }
        Ok(Self { scaling, offset, scale })
    }

    pub fn apply(&self, q: &Quote) -> [f64; 4] {
        let x = columns(q);
        std::array::from_fn(|c| (x[c] - self.offset[c]) / self.scale[c])
    }
}

/// Step-major features of one window: `steps x width`.
pub fn encode_trend_window(
    window: &[Quote],
    encoding: TrendEncoding,
    scaler: &QuoteScaler,
    k: usize,
    tick: i64,
) -> Result<Vec<f64>> {
    let last = window.last().ok_or(Error::EmptyInput)?;
    let mut out = Vec::with_capacity(window.len() * encoding.width(k));
    for q in window {
        let s = scaler.apply(q);
        match encoding {
            TrendEncoding::Sparse => {
                out.extend(encode_quote_sparse(q.ask_price, s[1], last.ask_price, k, tick)?.values);
                out.extend(encode_quote_sparse(q.bid_price, s[3], last.bid_price, k, tick)?.values);
            }
            TrendEncoding::ConvPrice => out.extend(s),
            TrendEncoding::ConvNoPrice => out.extend([s[1], s[3]]),
        }
    }
    Ok(out)
}

/// Encoded windows with their labels.
#[derive(Debug, Clone, Default)]
pub struct TrendDataset {
    pub steps: usize,
    pub width: usize,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<TrendLabel>,
}

impl TrendDataset {
    /// One sample per labelled step that closes a full window.
    pub fn build(
        days: &[Vec<Quote>],
        eps: f64,
        encoding: TrendEncoding,
        scaler: &QuoteScaler,
        cfg: &TrendConfig,
    ) -> Result<Self> {
        let mut ds = TrendDataset {
            steps: cfg.window,
            width: encoding.width(cfg.k),
            ..Default::default()
        };
        for quotes in days {
            let labels = label_trend(&mids(quotes), cfg.horizon, eps, cfg.tick)?;
            for (i, &label) in labels.iter().enumerate().skip(cfg.window - 1) {
                let w = &quotes[i + 1 - cfg.window..=i];
                ds.features.push(encode_trend_window(w, encoding, scaler, cfg.k, cfg.tick)?);
                ds.labels.push(label);
            }
        }
        if ds.labels.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Step-major batch tensors, each `batch x width`.
    pub fn batch(&self, idx: &[usize]) -> Vec<Tensor> {
        (0..self.steps)
            .map(|t| {
                let mut data = Vec::with_capacity(idx.len() * self.width);
                for &i in idx {
                    data.extend_from_slice(&self.features[i][t * self.width..(t + 1) * self.width]);
                }
                Tensor::matrix(idx.len(), self.width, data)
            })
            .collect()
    }
}

pub const CONV_CHANNELS: usize = 16;

/// Width-2, stride-2 convolution along the feature axis. Each entry of
/// `positions` is a `batch x channels` block; adjacent pairs are joined and
/// mapped through `weight` (`out x 2·channels`). Returns pre-activations.
pub fn conv_pairs(g: &mut Graph, positions: &[Var], weight: Var, bias: Option<Var>) -> Result<Vec<Var>> {
    if positions.len() % 2 != 0 {
        return Err(Error::OddFeatureCount(positions.len()));
    }
    positions
        .chunks(2)
        .map(|pair| {
            let x = g.concat(pair)?;
            let z = g.linear(x, weight)?;
            Ok(match bias {
                Some(b) => g.add_row(z, b)?,
                None => z,
            })
        })
        .collect()
}

/// Number of stacked convolutions that reduce `width` features to one position.
pub fn conv_depth(width: usize) -> Result<usize> {
    let mut w = width;
    let mut depth = 0;
    while w > 1 {
        if w % 2 != 0 {
            return Err(Error::OddFeatureCount(w));
        }
        w /= 2;
        depth += 1;
    }
    Ok(depth)
}

/// Splits a `batch x width` step into single-column positions and applies
/// the bound convolution layers with LeakyReLU.
pub fn conv_encode(g: &mut Graph, x: Var, layers: &[(Var, Var)]) -> Result<Var> {
    let width = g.value(x).cols();
    let mut pos: Vec<Var> = (0..width).map(|c| g.slice_cols(x, c, c + 1)).collect::<std::result::Result<_, _>>()?;
    for &(w, b) in layers {
        pos = conv_pairs(g, &pos, w, Some(b))?
            .into_iter()
            .map(|z| g.leaky_relu(z, LEAKY_SLOPE))
            .collect();
    }
    if pos.len() != 1 {
        return Err(Error::OddFeatureCount(pos.len()));
    }
    Ok(pos[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendModel {
    pub encoding: TrendEncoding,
    pub input: usize,
    pub hidden: usize,
    pub params: ParamStore,
}

const CONV: &str = "conv";
const EMBED: &str = "embed";
const GRU: &str = "gru";
const HEAD: &str = "head";

impl TrendModel {
    pub fn new(encoding: TrendEncoding, input: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut step_width = input;
        if encoding != TrendEncoding::Sparse {
            let mut c_in = 1;
            for l in 0..conv_depth(input)? {
                params.init_weight(&format!("{CONV}.l{l}.weight"), CONV_CHANNELS, 2 * c_in, &mut rng);
                params.init_bias(&format!("{CONV}.l{l}.bias"), CONV_CHANNELS);
                c_in = CONV_CHANNELS;
            }
            step_width = CONV_CHANNELS;
        }
        let m = Self {
            encoding,
            input,
            hidden,
            params: ParamStore::new(),
        };
        init_mlp(&mut params, EMBED, &m.embed_spec(step_width), &mut rng);
        init_gru(&mut params, GRU, hidden, hidden, &mut rng);
        init_mlp(&mut params, HEAD, &m.head_spec(), &mut rng);
        Ok(Self { params, ..m })
    }

    fn conv_layers(&self) -> usize {
        match self.encoding {
            TrendEncoding::Sparse => 0,
            _ => conv_depth(self.input).unwrap_or(0),
        }
    }

    fn embed_spec(&self, input: usize) -> MlpSpec {
        MlpSpec {
            input,
            hidden: vec![],
            output: self.hidden,
            hidden_act: Activation::Relu,
            output_act: Activation::Relu,
        }
    }

    fn head_spec(&self) -> MlpSpec {
        MlpSpec {
            input: self.hidden,
            hidden: vec![self.hidden],
            output: 3,
            hidden_act: Activation::Relu,
            output_act: Activation::Identity,
        }
    }

    /// Class logits for step-major inputs.
    pub fn logits_with(&self, g: &mut Graph, store: &ParamStore, steps: &[Tensor]) -> Result<Var> {
        let rows = steps.first().ok_or(Error::EmptyInput)?.rows();
        let conv: Vec<(Var, Var)> = (0..self.conv_layers())
            .map(|l| {
                Ok((
                    store.bind(g, &format!("{CONV}.l{l}.weight"))?,
                    store.bind(g, &format!("{CONV}.l{l}.bias"))?,
                ))
            })
            .collect::<Result<_>>()?;
        let step_width = if conv.is_empty() { self.input } else { CONV_CHANNELS };
        let embed = BoundMlp::bind(g, store, EMBED, &self.embed_spec(step_width))?;
        let gru = BoundGru::bind(g, store, GRU)?;
        let head = BoundMlp::bind(g, store, HEAD, &self.head_spec())?;
        let mut h = gru.zero_state(g, rows);
        for x in steps {
            let mut x = g.constant(x.clone());
            if !conv.is_empty() {
                x = conv_encode(g, x, &conv)?;
            }
            let e = embed.forward(g, x)?;
            h = gru_cell(g, e, h, &gru)?;
        }
        Ok(head.forward(g, h)?)
    }

    pub fn probabilities(&self, steps: &[Tensor]) -> Result<Tensor> {
        let mut g = Graph::new();
        let z = self.logits_with(&mut g, &self.params, steps)?;
        let p = g.softmax(z);
        Ok(g.value(p).clone())
    }

    pub fn predict(&self, ds: &TrendDataset) -> Result<Vec<TrendLabel>> {
        let mut out = Vec::with_capacity(ds.len());
        let idx: Vec<usize> = (0..ds.len()).collect();
        for chunk in idx.chunks(256) {
            let p = self.probabilities(&ds.batch(chunk))?;
            for r in 0..p.rows() {
                let row = p.row(r);
                let best = (0..3).fold(0, |b, c| if row[c] > row[b] { c } else { b });
                out.push(TrendLabel::ALL[best]);
            }
        }
        Ok(out)
    }
}

/// Confusion counts indexed `[true][predicted]`.
pub type Confusion = [[usize; 3]; 3];

pub fn confusion(truth: &[TrendLabel], pred: &[TrendLabel]) -> Confusion {
    let mut c = [[0; 3]; 3];
    for (t, p) in truth.iter().zip(pred) {
        c[t.index()][p.index()] += 1;
    }
    c
}

pub fn accuracy(c: &Confusion) -> f64 {
    let total: usize = c.iter().flatten().sum();
    let hit: usize = (0..3).map(|i| c[i][i]).sum();
    hit as f64 / total.max(1) as f64
}

/// Recall per true class; classes absent from the truth get 0.
pub fn recall(c: &Confusion) -> [f64; 3] {
    std::array::from_fn(|i| {
        let n: usize = c[i].iter().sum();
        if n == 0 {
            0.0
        } else {
            c[i][i] as f64 / n as f64
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub best_iteration: usize,
    pub val_accuracy: f64,
    pub curve: Vec<(usize, f64, f64)>,
}

/// Cross-entropy training with Adam; keeps the iteration with the highest
/// validation accuracy (earliest on ties).
pub fn train_trend(model: &mut TrendModel, train: &TrendDataset, val: &TrendDataset, cfg: &TrainConfig) -> Result<TrendFit> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut curve = Vec::new();
    for it in 1..=cfg.iterations {
        let batches = match cfg.unit {
            IterationUnit::Epochs => train.len().div_ceil(cfg.batch_size),
            IterationUnit::Steps => 1,
        };
        let (mut sum, mut count) = (0.0, 0usize);
        for _ in 0..batches {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let end = (cursor + cfg.batch_size).min(order.len());
            let idx = &order[cursor..end];
            cursor = end;
            let classes: Vec<usize> = idx.iter().map(|&i| train.labels[i].index()).collect();
            let mut g = Graph::new();
            let z = model.logits_with(&mut g, &model.params, &train.batch(idx))?;
            let loss = g.cross_entropy(z, &classes)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    what: "trend loss".into(),
                    epoch: it,
                });
            }
            let grads = g.backward(loss);
            opt.step(&mut model.params, &g.param_grads(&grads));
            sum += value * idx.len() as f64;
            count += idx.len();
        }
        let acc = accuracy(&confusion(&val.labels, &model.predict(val)?));
        curve.push((it, sum / count as f64, acc));
        if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
            best = Some((acc, it, model.params.clone()));
        }
    }
    let (val_accuracy, best_iteration, params) = best.expect("at least one iteration");
    model.params = params;
    Ok(TrendFit {
        best_iteration,
        val_accuracy,
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrendConfig {
    pub window: usize,
    pub k: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub tick: i64,
    /// Fixed threshold in ticks; fit on training labels when absent.
    pub epsilon: Option<f64>,
    /// Target balance of down, same and up labels for the threshold fit.
    pub target: [f64; 3],
    pub scheme: SplitScheme,
    pub train: TrainConfig,
}

impl Default for TrendConfig {
    fn default() -> Self {
        Self {
            window: 50,
            k: 5,
            horizon: 5,
            hidden: 16,
            tick: CENT_TICK,
            epsilon: None,
            target: [0.31, 0.40, 0.29],
            scheme: SplitScheme::Default,
            train: TrainConfig {
                iterations: 50,
                lr: 1e-3,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCell {
    pub encoding: TrendEncoding,
    pub scaling: Scaling,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub best_iteration: usize,
    pub confusion: Confusion,
    pub recall: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub epsilon: f64,
    /// Down, same, up fractions per split.
    pub train_distribution: [f64; 3],
    pub val_distribution: [f64; 3],
    pub test_distribution: [f64; 3],
    /// Test accuracy of always predicting the most common training label.
    pub majority_accuracy: f64,
    pub cells: Vec<TrendCell>,
}

impl TrendReport {
    /// Rows are scalings, columns encodings; cells `val/test` accuracy.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scaling");
        for e in TrendEncoding::ALL {
            s += &format!(",{0}_val,{0}_test", e.as_str());
        }
        s.push('\n');
        for sc in Scaling::ALL {
            s += sc.as_str();
            for e in TrendEncoding::ALL {
                match self.cells.iter().find(|c| c.encoding == e && c.scaling == sc) {
                    Some(c) => s += &format!(",{},{}", c.val_accuracy, c.test_accuracy),
                    None => s += ",,",
                }
            }
            s.push('\n');
        }
        s
    }
}

fn day_quotes(days: &[Vec<TradeRecord>]) -> Vec<Vec<Quote>> {
    days.iter().map(|d| d.iter().map(|r| r.event.quote).collect()).collect()
}

fn pooled_labels(days: &[Vec<Quote>], cfg: &TrendConfig, eps: f64) -> Result<Vec<TrendLabel>> {
    let mut out = Vec::new();
    for d in days {
        out.extend(label_trend(&mids(d), cfg.horizon, eps, cfg.tick)?);
    }
    Ok(out)
}

/// Trains every encoding under both scalings on a chronological split and
/// reports validation-selected test accuracies.
pub fn run_trend_experiment(days: &[Vec<TradeRecord>], cfg: &TrendConfig) -> Result<TrendReport> {
    if cfg.window == 0 || cfg.k == 0 {
        return Err(Error::InvalidConfig("window and k must be positive".into()));
    }
    let split = chronological_split(&day_quotes(days), cfg.scheme)?;
    let train_mids: Vec<Vec<f64>> = split.train.iter().map(|d| mids(d)).collect();
    let eps = match cfg.epsilon {
        Some(e) => e,
        None => fit_epsilon(&train_mids, cfg.horizon, cfg.tick, cfg.target)?,
    };
    let train_labels = pooled_labels(&split.train, cfg, eps)?;
    let train_distribution = label_distribution(&train_labels);
    let majority = (0..3).fold(0, |b, c| if train_distribution[c] > train_distribution[b] { c } else { b });

    let train_quotes: Vec<Quote> = split.train.iter().flatten().copied().collect();
    let mut cells = Vec::new();
    let mut test_truth = Vec::new();
    let mut val_truth = Vec::new();
    for scaling in Scaling::ALL {
        let scaler = QuoteScaler::fit(&train_quotes, scaling)?;
        for encoding in TrendEncoding::ALL {
            let tr = TrendDataset::build(&split.train, eps, encoding, &scaler, cfg)?;
            let va = TrendDataset::build(&split.val, eps, encoding, &scaler, cfg)?;
            let te = TrendDataset::build(&split.test, eps, encoding, &scaler, cfg)?;
            let mut model = TrendModel::new(encoding, tr.width, cfg.hidden, cfg.train.seed)?;
            let fit = train_trend(&mut model, &tr, &va, &cfg.train)?;
            let c = confusion(&te.labels, &model.predict(&te)?);
            cells.push(TrendCell {
                encoding,
                scaling,
                val_accuracy: fit.val_accuracy,
                test_accuracy: accuracy(&c),
                best_iteration: fit.best_iteration,
                confusion: c,
                recall: recall(&c),
            });
            test_truth = te.labels;
            val_truth = va.labels;
        }
    }
    let majority_accuracy =
        test_truth.iter().filter(|l| l.index() == majority).count() as f64 / test_truth.len().max(1) as f64;
    Ok(TrendReport {
        epsilon: eps,
        train_distribution,
        val_distribution: label_distribution(&val_truth),
        test_distribution: label_distribution(&test_truth),
        majority_accuracy,
        cells,
    })
}
