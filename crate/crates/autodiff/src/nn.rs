//! Layers built on the tape: dense MLPs, the GRU cell and the exponential
//! decay kernel for irregularly spaced inputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::LeakyRelu => g.leaky_relu(x, LEAKY_SLOPE),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Softplus => g.softplus(x),
        }
    }
}

/// Time smoothing applied to inter-event gaps: `ln(1 + dt)` with `dt` in seconds.
pub fn phi(dt: f64) -> f64 {
    dt.ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub hidden_act: Activation,
    pub output_act: Activation,
}

impl MlpSpec {
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend(&self.hidden);
        w.push(self.output);
        w
    }
}

/// Creates the weights of an MLP under `prefix` (`prefix.l0.weight`, ...).
pub fn init_mlp(store: &mut ParamStore, prefix: &str, spec: &MlpSpec, rng: &mut impl Rng) {
    let w = spec.widths();
    for (i, pair) in w.windows(2).enumerate() {
        store.init_weight(&format!("{prefix}.l{i}.weight"), pair[1], pair[0], rng);
        store.init_bias(&format!("{prefix}.l{i}.bias"), pair[1]);
    }
}

/// An MLP whose parameters are recorded on a graph.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
    hidden_act: Activation,
    output_act: Activation,
}

impl BoundMlp {
    pub fn bind(g: &mut Graph, store: &ParamStore, prefix: &str, spec: &MlpSpec) -> Result<Self> {
        let n = spec.hidden.len() + 1;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let w = store.bind(g, &format!("{prefix}.l{i}.weight"))?;
            let b = store.bind(g, &format!("{prefix}.l{i}.bias"))?;
            layers.push((w, b));
        }
        Ok(Self {
            layers,
            hidden_act: spec.hidden_act,
            output_act: spec.output_act,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        mlp_forward(g, x, self)
    }
}

/// Affine map followed by the hidden activation for every layer but the
/// last, which uses the output activation.
pub fn mlp_forward(g: &mut Graph, x: Var, mlp: &BoundMlp) -> Result<Var> {
    let mut h = x;
    let last = mlp.layers.len() - 1;
    for (i, &(w, b)) in mlp.layers.iter().enumerate() {
        let z = g.linear(h, w)?;
        let z = g.add_row(z, b)?;
        let act = if i == last { mlp.output_act } else { mlp.hidden_act };
        h = act.apply(g, z);
    }
    Ok(h)
}

/// Creates GRU weights under `prefix`: `w_*` are `hidden x input`, `u_*` are
/// `hidden x hidden`, biases `1 x hidden`, for gates `z`, `r` and candidate `h`.
pub fn init_gru(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) {
    for gate in ["z", "r", "h"] {
        store.init_weight(&format!("{prefix}.w_{gate}"), hidden, input, rng);
        store.init_weight(&format!("{prefix}.u_{gate}"), hidden, hidden, rng);
        store.init_bias(&format!("{prefix}.b_{gate}"), hidden);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundGru {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
    pub hidden: usize,
}

impl BoundGru {
    pub fn bind(g: &mut Graph, store: &ParamStore, prefix: &str) -> Result<Self> {
        let mut b = |n: &str| store.bind(g, &format!("{prefix}.{n}"));
        let w_z = b("w_z")?;
        let u_z = b("u_z")?;
        let b_z = b("b_z")?;
        let w_r = b("w_r")?;
        let u_r = b("u_r")?;
        let b_r = b("b_r")?;
        let w_h = b("w_h")?;
        let u_h = b("u_h")?;
        let b_h = b("b_h")?;
        let hidden = store.value(&format!("{prefix}.u_z"))?.rows();
        Ok(Self {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
            hidden,
        })
    }

    /// Zero initial state for a batch of `rows`.
    pub fn zero_state(&self, g: &mut Graph, rows: usize) -> Var {
        g.constant(Tensor::zeros(&[rows, self.hidden]))
    }
}

fn gate(g: &mut Graph, x: Var, h: Var, w: Var, u: Var, b: Var) -> Result<Var> {
    let a = g.linear(x, w)?;
    let c = g.linear(h, u)?;
    let s = g.add(a, c)?;
    g.add_row(s, b)
}

/// One GRU update:
/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = (1 − z) ⊙ h + z ⊙ h̃`.
pub fn gru_cell(g: &mut Graph, x: Var, h: Var, p: &BoundGru) -> Result<Var> {
    let z = gate(g, x, h, p.w_z, p.u_z, p.b_z)?;
    let z = g.sigmoid(z);
    let r = gate(g, x, h, p.w_r, p.u_r, p.b_r)?;
    let r = g.sigmoid(r);
    let rh = g.mul(r, h)?;
    let cand = gate(g, x, rh, p.w_h, p.u_h, p.b_h)?;
    let cand = g.tanh(cand);
    // (1 - z) h + z h̃ = h + z (h̃ - h)
    let diff = g.sub(cand, h)?;
    let step = g.mul(z, diff)?;
    g.add(h, step)
}

/// Smoothed gaps as an `m x 1` column, rejecting negative gaps.
pub fn phi_column(gaps: &[f64]) -> Result<Tensor> {
    if let Some(&bad) = gaps.iter().find(|&&dt| dt < 0.0 || dt.is_nan()) {
        return Err(AutodiffError::NegativeGap(bad));
    }
    Ok(Tensor::matrix(gaps.len(), 1, gaps.iter().map(|&dt| phi(dt)).collect()))
}

/// Latent decay between inputs: `h' = h ⊙ exp(−max(0, f(h)) ⊙ Φ(dt))`, one
/// gap per row. The rate is clamped at zero so states only shrink toward 0.
pub fn decay_step(g: &mut Graph, h: Var, gaps: &[f64], rate: &BoundMlp) -> Result<Var> {
    let phi = phi_column(gaps)?;
    if phi.rows() != g.value(h).rows() {
        return Err(AutodiffError::ShapeMismatch {
            op: "decay_step",
            left: vec![g.value(h).rows(), g.value(h).cols()],
            right: vec![gaps.len()],
        });
    }
    let phi = g.constant(phi);
    decay_with_phi(g, h, phi, rate)
}

/// [`decay_step`] with a precomputed `m x 1` column of smoothed gaps.
pub fn decay_with_phi(g: &mut Graph, h: Var, phi: Var, rate: &BoundMlp) -> Result<Var> {
    let f = rate.forward(g, h)?;
    let f = g.relu(f);
    let e = g.mul_col(f, phi)?;
    let e = g.scale(e, -1.0);
    let e = g.exp(e);
    g.mul(h, e)
}
