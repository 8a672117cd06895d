//! The ensemble: an event simulator (ES) that integrates decoded order
//! arrival rates over irregular gaps, a history compiler (HC) over quotes that
//! hit the target levels, and a weighting scheme (WS) mixing the two per level.

mod baselines;
mod inputs;

use std::fmt;
use std::str::FromStr;

use lobrm_autodiff::{
    decay_with_phi, gru_cell, init_gru, init_mlp, Activation, BoundGru, BoundMlp, Graph,
    MlpSpec, ParamStore, Tensor, Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::SampleWindow;
use crate::types::{Side, CENT_TICK, LEVELS};

pub use baselines::{
    ridge_fit, window_features, RidgeAccumulator, RidgeModel, RidgeWeights, Slfn, SlfnConfig,
    RIDGE_LAMBDAS,
};
pub use inputs::BatchInputs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "gru")]
    Gru,
    #[serde(rename = "gru-t")]
    GruT,
    #[serde(rename = "decay")]
    Decay,
    #[serde(rename = "decay-t")]
    DecayT,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Gru, Variant::GruT, Variant::Decay, Variant::DecayT];

    /// Whether the latent state decays across gaps.
    pub fn decays(self) -> bool {
        matches!(self, Variant::Decay | Variant::DecayT)
    }

    /// Whether the smoothed gap is appended to each input.
    pub fn time_feature(self) -> bool {
        matches!(self, Variant::GruT | Variant::DecayT)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Gru => "gru",
            Variant::GruT => "gru-t",
            Variant::Decay => "decay",
            Variant::DecayT => "decay-t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "hc")]
    Hc,
    #[serde(rename = "es")]
    Es,
    /// HC and ES mixed with a fixed weight.
    #[serde(rename = "hc+es")]
    HcEs,
    /// HC and ES mixed with learned per-level weights.
    #[serde(rename = "full")]
    Full,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Hc, Mode::Es, Mode::HcEs, Mode::Full];

    pub fn uses_es(self) -> bool {
        self != Mode::Hc
    }

    pub fn uses_hc(self) -> bool {
        self != Mode::Es
    }

    pub fn uses_ws(self) -> bool {
        self == Mode::Full
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Hc => "hc",
            Mode::Es => "es",
            Mode::HcEs => "hc+es",
            Mode::Full => "full",
        }
    }
}

macro_rules! string_enum {
    ($t:ty, $what:literal) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                Self::ALL
                    .into_iter()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown {} `{s}`", $what)))
            }
        }
    };
}

string_enum!(Variant, "variant");
string_enum!(Mode, "mode");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputEncoding {
    Sparse,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsConfig {
    pub gru_units: usize,
    pub decay_mlp: Vec<usize>,
    pub decoder: Vec<usize>,
    pub latent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub gru_units: usize,
    pub decoder: Vec<usize>,
    pub latent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LobrmConfig {
    pub variant: Variant,
    pub window: usize,
    pub k: usize,
    pub levels: usize,
    pub tick: i64,
    pub encoding: InputEncoding,
    /// Separate trade blocks for trades against sellers and buyers.
    pub split_trades: bool,
    /// Constrain decoded arrival rates to be non-negative.
    pub nonneg_rates: bool,
    /// HC weight used by the fixed-weight mode.
    pub fixed_weight: f64,
    pub es: EsConfig,
    pub hc: BranchConfig,
    pub ws: BranchConfig,
}

impl Default for LobrmConfig {
    fn default() -> Self {
        Self {
            variant: Variant::DecayT,
            window: 100,
            k: 8,
            levels: LEVELS,
            tick: CENT_TICK,
            encoding: InputEncoding::Sparse,
            split_trades: false,
            nonneg_rates: false,
            fixed_weight: 0.5,
            es: EsConfig {
                gru_units: 64,
                decay_mlp: vec![32, 32],
                decoder: vec![64, 64],
                latent: 32,
            },
            hc: BranchConfig {
                gru_units: 64,
                decoder: vec![64, 64],
                latent: 32,
            },
            ws: BranchConfig {
                gru_units: 16,
                decoder: vec![16],
                latent: 16,
            },
        }
    }
}

impl LobrmConfig {
    pub fn outputs(&self) -> usize {
        self.levels - 1
    }

    /// Width of one ES input row.
    pub fn es_input(&self) -> usize {
        let base = match self.encoding {
            InputEncoding::Sparse => crate::encoding::sparse_width(self.k, self.split_trades),
            InputEncoding::Explicit => crate::encoding::EXPLICIT_WIDTH,
        };
        base + usize::from(self.variant.time_feature())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.window == 0 {
            return bad("window must be positive");
        }
        if self.k == 0 {
            return bad("k must be positive");
        }
        if self.levels < 2 {
            return bad("need at least two levels");
        }
        if self.tick <= 0 {
            return bad("tick must be positive");
        }
        if !(0.0..=1.0).contains(&self.fixed_weight) {
            return bad("fixed weight must lie in [0, 1]");
        }
        let dims = [
            self.es.gru_units,
            self.es.latent,
            self.hc.gru_units,
            self.hc.latent,
            self.ws.gru_units,
            self.ws.latent,
        ];
        let widths = self.es.decay_mlp.iter().chain(&self.es.decoder).chain(&self.hc.decoder).chain(&self.ws.decoder);
        if dims.iter().chain(widths).any(|&d| d == 0) {
            return bad("layer sizes must be positive");
        }
        Ok(())
    }

    fn decoder(&self, gru_units: usize, latent: usize, hidden: &[usize], act: Activation, out: Activation) -> MlpSpec {
        let mut widths = vec![latent];
        widths.extend(hidden);
        MlpSpec {
            input: gru_units,
            hidden: widths,
            output: self.outputs(),
            hidden_act: act,
            output_act: out,
        }
    }

    pub fn es_decoder(&self) -> MlpSpec {
        let out = if self.nonneg_rates { Activation::Softplus } else { Activation::Identity };
        self.decoder(self.es.gru_units, self.es.latent, &self.es.decoder, Activation::Tanh, out)
    }

    pub fn decay_rate(&self) -> MlpSpec {
        MlpSpec {
            input: self.es.gru_units,
            hidden: self.es.decay_mlp.clone(),
            output: self.es.gru_units,
            hidden_act: Activation::Relu,
            output_act: Activation::Identity,
        }
    }

    pub fn hc_decoder(&self) -> MlpSpec {
        self.decoder(self.hc.gru_units, self.hc.latent, &self.hc.decoder, Activation::LeakyRelu, Activation::Identity)
    }

    pub fn ws_decoder(&self) -> MlpSpec {
        self.decoder(self.ws.gru_units, self.ws.latent, &self.ws.decoder, Activation::Sigmoid, Activation::Sigmoid)
    }
}

/// Parameter path of the learned weight on the last step's rates.
pub const TERMINAL: &str = "es.terminal";

/// Creates the parameters a mode needs. Each branch draws from its own
/// stream of the seeded generator, so a branch starts identically in every
/// mode that contains it.
pub fn init_params(cfg: &LobrmConfig, mode: Mode, seed: u64, terminal_init: f64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let rng = |stream: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(stream);
        r
    };
    if mode.uses_es() {
        let mut r = rng(1);
        init_gru(&mut store, "es.gru", cfg.es_input(), cfg.es.gru_units, &mut r);
        init_mlp(&mut store, "es.decoder", &cfg.es_decoder(), &mut r);
        if cfg.variant.decays() {
            init_mlp(&mut store, "es.decay", &cfg.decay_rate(), &mut r);
        }
        store.insert(TERMINAL, Tensor::matrix(1, 1, vec![terminal_init]));
    }
    if mode.uses_hc() {
        let mut r = rng(2);
        init_gru(&mut store, "hc.gru", cfg.outputs(), cfg.hc.gru_units, &mut r);
        init_mlp(&mut store, "hc.decoder", &cfg.hc_decoder(), &mut r);
    }
    if mode.uses_ws() {
        let mut r = rng(3);
        init_gru(&mut store, "ws.gru", cfg.outputs(), cfg.ws.gru_units, &mut r);
        init_mlp(&mut store, "ws.decoder", &cfg.ws_decoder(), &mut r);
    }
    Ok(store)
}

/// `Σ_i rates[i] ⊙ weights[i]`, each weight an `m x 1` column scaling a row.
pub fn accumulate(g: &mut Graph, rates: &[Var], weights: &[Var]) -> Result<Option<Var>> {
    if rates.len() != weights.len() {
        return Err(Error::InvalidConfig(format!(
            "{} rate steps but {} weights",
            rates.len(),
            weights.len()
        )));
    }
    let mut total = None;
    for (&r, &w) in rates.iter().zip(weights) {
        let term = g.mul_col(r, w)?;
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    Ok(total)
}

/// Event-simulator prediction: the latent state optionally decays over each
/// gap, absorbs the step input through a GRU, and is decoded to rates that are
/// integrated over the following gap. The last step's rates are weighted by a
/// learned scalar.
pub fn es_forward(g: &mut Graph, store: &ParamStore, cfg: &LobrmConfig, x: &[Tensor], phis: &[Tensor]) -> Result<Var> {
    let steps = x.len();
    if steps == 0 || phis.len() != steps {
        return Err(Error::InvalidConfig("event simulator needs one gap per step".into()));
    }
    let gru = BoundGru::bind(g, store, "es.gru")?;
    let decoder = BoundMlp::bind(g, store, "es.decoder", &cfg.es_decoder())?;
    let decay = if cfg.variant.decays() {
        Some(BoundMlp::bind(g, store, "es.decay", &cfg.decay_rate())?)
    } else {
        None
    };
    let terminal = store.bind(g, TERMINAL)?;
    let phi: Vec<Var> = phis.iter().map(|p| g.constant(p.clone())).collect();
    let mut h = gru.zero_state(g, x[0].rows());
    let mut rates = Vec::with_capacity(steps);
    for (t, xt) in x.iter().enumerate() {
        if let Some(d) = &decay {
            h = decay_with_phi(g, h, phi[t], d)?;
        }
        let xt = g.constant(xt.clone());
        h = gru_cell(g, xt, h, &gru)?;
        rates.push(decoder.forward(g, h)?);
    }
    let last = g.mul_scalar(rates[steps - 1], terminal)?;
    match accumulate(g, &rates[..steps - 1], &phi[1..])? {
        Some(body) => Ok(g.add(body, last)?),
        None => Ok(last),
    }
}

/// GRU over a step sequence, decoded from the final state.
fn branch_forward(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    decoder: &MlpSpec,
    x: &[Tensor],
) -> Result<Var> {
    if x.is_empty() {
        return Err(Error::InvalidConfig("empty input sequence".into()));
    }
    let gru = BoundGru::bind(g, store, &format!("{prefix}.gru"))?;
    let dec = BoundMlp::bind(g, store, &format!("{prefix}.decoder"), decoder)?;
    let mut h = gru.zero_state(g, x[0].rows());
    for xt in x {
        let xt = g.constant(xt.clone());
        h = gru_cell(g, xt, h, &gru)?;
    }
    Ok(dec.forward(g, h)?)
}

/// History-compiler prediction from trimmed quote volumes.
pub fn hc_forward(g: &mut Graph, store: &ParamStore, cfg: &LobrmConfig, trimmed: &[Tensor]) -> Result<Var> {
    branch_forward(g, store, "hc", &cfg.hc_decoder(), trimmed)
}

/// Per-level HC weights in (0, 1) from the trimming masks.
pub fn ws_forward(g: &mut Graph, store: &ParamStore, cfg: &LobrmConfig, masks: &[Tensor]) -> Result<Var> {
    branch_forward(g, store, "ws", &cfg.ws_decoder(), masks)
}

/// `w ⊙ hc + (1 − w) ⊙ es`
pub fn combine(g: &mut Graph, w: Var, hc: Var, es: Var) -> Result<Var> {
    let a = g.mul(w, hc)?;
    let neg = g.scale(w, -1.0);
    let rest = g.add_const(neg, 1.0);
    let b = g.mul(rest, es)?;
    Ok(g.add(a, b)?)
}

/// Branch outputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Parts {
    pub output: Var,
    pub hc: Option<Var>,
    pub es: Option<Var>,
    pub weight: Option<Var>,
}

pub fn ensemble_forward(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &LobrmConfig,
    mode: Mode,
    inputs: &BatchInputs,
) -> Result<Parts> {
    let es = if mode.uses_es() {
        Some(es_forward(g, store, cfg, &inputs.es_x, &inputs.phis)?)
    } else {
        None
    };
    let hc = if mode.uses_hc() {
        Some(hc_forward(g, store, cfg, &inputs.hc_x)?)
    } else {
        None
    };
    let weight = match mode {
        Mode::Full => Some(ws_forward(g, store, cfg, &inputs.masks)?),
        Mode::HcEs => Some(g.constant(Tensor::full(&[inputs.rows, cfg.outputs()], cfg.fixed_weight))),
        _ => None,
    };
    let output = match (hc, es, weight) {
        (Some(h), Some(e), Some(w)) => combine(g, w, h, e)?,
        (Some(h), None, _) => h,
        (None, Some(e), _) => e,
        _ => unreachable!("every mode has at least one branch"),
    };
    Ok(Parts { output, hc, es, weight })
}

/// Anything that maps a batch of windows to `B x (L − 1)` predictions on a
/// tape.
pub trait Regressor {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn forward_with(&self, g: &mut Graph, store: &ParamStore, batch: &[&SampleWindow]) -> Result<Var>;

    fn forward(&self, g: &mut Graph, batch: &[&SampleWindow]) -> Result<Var> {
        self.forward_with(g, self.params(), batch)
    }

    /// Predictions for every window, evaluated in chunks.
    fn predict(&self, windows: &[SampleWindow]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(256) {
            let refs: Vec<&SampleWindow> = chunk.iter().collect();
            let mut g = Graph::new();
            let y = self.forward(&mut g, &refs)?;
            let t = g.value(y);
            out.extend((0..t.rows()).map(|i| t.row(i).to_vec()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LobrmModel {
    pub config: LobrmConfig,
    pub side: Side,
    pub mode: Mode,
    pub params: ParamStore,
}

impl LobrmModel {
    pub fn new(config: LobrmConfig, side: Side, mode: Mode, seed: u64, terminal_init: f64) -> Result<Self> {
        let params = init_params(&config, mode, seed, terminal_init)?;
        Ok(Self {
            config,
            side,
            mode,
            params,
        })
    }

    pub fn inputs(&self, batch: &[&SampleWindow]) -> Result<BatchInputs> {
        BatchInputs::build(&self.config, self.side, self.mode, batch)
    }

    pub fn parts(&self, g: &mut Graph, store: &ParamStore, inputs: &BatchInputs) -> Result<Parts> {
        ensemble_forward(g, store, &self.config, self.mode, inputs)
    }
}

impl Regressor for LobrmModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward_with(&self, g: &mut Graph, store: &ParamStore, batch: &[&SampleWindow]) -> Result<Var> {
        let inputs = self.inputs(batch)?;
        Ok(self.parts(g, store, &inputs)?.output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LobrmConfig {
        LobrmConfig {
            window: 3,
            es: EsConfig {
                gru_units: 3,
                decay_mlp: vec![4],
                decoder: vec![5],
                latent: 2,
            },
            hc: BranchConfig {
                gru_units: 3,
                decoder: vec![4],
                latent: 2,
            },
            ws: BranchConfig {
                gru_units: 2,
                decoder: vec![3],
                latent: 2,
            },
            ..LobrmConfig::default()
        }
    }

    #[test]
    fn names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{v}\""));
        }
        for m in Mode::ALL {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("lstm".parse::<Variant>().is_err());
    }

    #[test]
    fn default_dimensions() {
        let c = LobrmConfig::default();
        assert_eq!(c.es_input(), 46);
        assert_eq!(c.es_decoder().widths(), vec![64, 32, 64, 64, 4]);
        assert_eq!(c.decay_rate().widths(), vec![64, 32, 32, 64]);
    }

    #[test]
    fn branches_are_created_per_mode() {
        let cfg = tiny();
        let hc = init_params(&cfg, Mode::Hc, 1, 0.3).unwrap();
        assert!(hc.iter().all(|(n, _)| n.starts_with("hc.")));
        let full = init_params(&cfg, Mode::Full, 1, 0.3).unwrap();
        let es = init_params(&cfg, Mode::Es, 1, 0.3).unwrap();
        for (name, p) in es.iter() {
            assert_eq!(full.get(name), Some(p));
        }
        assert_eq!(full.value(TERMINAL).unwrap().item(), 0.3);
        let gru = init_params(&LobrmConfig { variant: Variant::Gru, ..cfg }, Mode::Es, 1, 0.3).unwrap();
        assert!(gru.iter().all(|(n, _)| !n.starts_with("es.decay")));
    }

    #[test]
    fn combine_with_fixed_half() {
        let mut g = Graph::new();
        let w = g.constant(Tensor::full(&[1, 4], 0.5));
        let hc = g.constant(Tensor::full(&[1, 4], 1.0));
        let es = g.constant(Tensor::full(&[1, 4], 3.0));
        let y = combine(&mut g, w, hc, es).unwrap();
        assert_eq!(g.value(y).data(), &[2.0; 4]);
        let one = g.constant(Tensor::full(&[1, 4], 1.0));
        let hc = g.constant(Tensor::vector(vec![0.1, -7.3, 1e9, 3.3]));
        let y = combine(&mut g, one, hc, es).unwrap();
        assert_eq!(g.value(y).data(), g.value(hc).data());
    }

    #[test]
    fn accumulation_of_two_steps() {
        let mut g = Graph::new();
        let rates = [g.constant(Tensor::scalar(1.0)), g.constant(Tensor::scalar(2.0))];
        let w = [g.constant(Tensor::scalar(1.0)), g.constant(Tensor::scalar(0.5))];
        let s = accumulate(&mut g, &rates, &w).unwrap().unwrap();
        assert_eq!(g.value(s).item(), 2.0);
    }

    #[test]
    fn invalid_config() {
        let c = LobrmConfig {
            fixed_weight: 1.5,
            ..tiny()
        };
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    }
}
