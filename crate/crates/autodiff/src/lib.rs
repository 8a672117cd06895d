//! A small reverse-mode differentiation core over dense `f64` matrices.
//!
//! Enough machinery for recurrent sequence models: affine layers, the usual
//! activations, a GRU cell, an exponential decay kernel for irregular time
//! gaps, L1 and cross-entropy losses, Adam, and a finite-difference checker.
//!
//! ```
//! use lobrm_autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.variable(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y);
//! assert_eq!(grads.wrt(&g, x).unwrap().item(), 6.0);
//! ```

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;

pub use error::{AutodiffError, Result};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use nn::{
    decay_step, decay_with_phi, gru_cell, init_gru, init_mlp, mlp_forward, phi, phi_column,
    Activation, BoundGru, BoundMlp, MlpSpec, LEAKY_SLOPE,
};
pub use optim::Adam;
pub use params::{Param, ParamStore};
pub use tensor::Tensor;
