use lobrm_autodiff::{phi, Tensor};

use super::{InputEncoding, LobrmConfig, Mode};
use crate::encoding::{write_explicit_row, write_sparse_row, write_trimmed_row};
use crate::error::{Error, Result};
use crate::preprocess::SampleWindow;
use crate::types::Side;

/// Step-major model inputs for a batch: `es_x[t]`, `hc_x[t]` and `masks[t]`
/// hold row `b` for window `b` at step `t`; `phis[t]` is the smoothed gap
/// column. Branches the mode does not use are left empty.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInputs {
    pub rows: usize,
    pub es_x: Vec<Tensor>,
    pub phis: Vec<Tensor>,
    pub hc_x: Vec<Tensor>,
    pub masks: Vec<Tensor>,
}

impl BatchInputs {
    pub fn build(cfg: &LobrmConfig, side: Side, mode: Mode, batch: &[&SampleWindow]) -> Result<Self> {
        let rows = batch.len();
        if rows == 0 {
            return Err(Error::EmptyInput);
        }
        let steps = cfg.window;
        if let Some(w) = batch.iter().find(|w| w.events().len() != steps) {
            return Err(Error::InvalidConfig(format!(
                "window of {} events, model expects {steps}",
                w.events().len()
            )));
        }
        let mut out = Self {
            rows,
            es_x: Vec::new(),
            phis: Vec::new(),
            hc_x: Vec::new(),
            masks: Vec::new(),
        };
        if mode.uses_es() {
            let width = cfg.es_input();
            let mut x = vec![vec![0.0; rows * width]; steps];
            let mut p = vec![vec![0.0; rows]; steps];
            for (b, w) in batch.iter().enumerate() {
                let gaps = w.gaps();
                for (t, ev) in w.events().iter().enumerate() {
                    let row = &mut x[t][b * width..(b + 1) * width];
                    match cfg.encoding {
                        InputEncoding::Sparse => write_sparse_row(
                            ev,
                            w.ref_ask(),
                            w.ref_bid(),
                            cfg.k,
                            cfg.tick,
                            cfg.split_trades,
                            row,
                        )?,
                        InputEncoding::Explicit => write_explicit_row(ev, w.ref_ask(), w.ref_bid(), cfg.tick, row)?,
                    }
                    p[t][b] = phi(gaps[t]);
                    if cfg.variant.time_feature() {
                        row[width - 1] = p[t][b];
                    }
                }
            }
            out.es_x = x.into_iter().map(|d| Tensor::matrix(rows, width, d)).collect();
            out.phis = p.into_iter().map(|d| Tensor::matrix(rows, 1, d)).collect();
        }
        if mode.uses_hc() {
            let n = cfg.outputs();
            let mut v = vec![vec![0.0; rows * n]; steps];
            let mut m = vec![vec![0.0; rows * n]; steps];
            for (b, w) in batch.iter().enumerate() {
                let reference = w.last().quote.price(side);
                for (t, ev) in w.events().iter().enumerate() {
                    let r = b * n..(b + 1) * n;
                    write_trimmed_row(ev, reference, side, cfg.tick, &mut v[t][r.clone()], &mut m[t][r])?;
                }
            }
            out.hc_x = v.into_iter().map(|d| Tensor::matrix(rows, n, d)).collect();
            if mode.uses_ws() {
                out.masks = m.into_iter().map(|d| Tensor::matrix(rows, n, d)).collect();
            }
        }
        Ok(out)
    }
}
