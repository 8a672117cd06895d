//! Finite-difference verification of reverse-mode gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so that gradients that
    /// are zero up to rounding do not blow up the ratio.
    pub abs_floor: f64,
    /// A mismatching entry whose forward and backward one-sided differences
    /// differ by at least this multiple of the mismatch is attributed to a
    /// kink within one step. A lone kink gives a multiple of two; a smooth
    /// point gives step times curvature.
    pub kink_ratio: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            kink_ratio: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Mismatching entries whose one-sided differences disagree; the
    /// function is not differentiable within one step of them and they are
    /// left out of the error maxima.
    pub kinks: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter path and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub passed: bool,
}

/// Compares the tape gradient of the scalar produced by `f` against central
/// differences for every entry of every trainable parameter in `store`.
/// Entries within one step of a non-differentiable point are counted in
/// `kinks` instead of being compared.
pub fn grad_check<F>(f: F, store: &ParamStore, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let grads = g.backward(loss);
    let analytic = g.param_grads(&grads);

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let l = f(&mut g, s)?;
        Ok(g.value(l).data().iter().sum())
    };

    let base = eval(store)?;
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        checked: 0,
        kinks: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        passed: true,
    };
    let names: Vec<String> = store
        .iter()
        .filter(|(_, p)| !p.frozen)
        .map(|(n, _)| n.clone())
        .collect();
    for name in names {
        let n = store.value(&name)?.len();
        for i in 0..n {
            let orig = store.value(&name)?.data()[i];
            set(&mut probe, &name, i, orig + cfg.step);
            let up = eval(&probe)?;
            set(&mut probe, &name, i, orig - cfg.step);
            let down = eval(&probe)?;
            set(&mut probe, &name, i, orig);

            let numeric = (up - down) / (2.0 * cfg.step);
            let tape = analytic.get(&name).map_or(0.0, |t| t.data()[i]);
            let abs = (numeric - tape).abs();
            let rel = abs / numeric.abs().max(tape.abs()).max(cfg.abs_floor);
            if rel >= cfg.tolerance {
                let forward = (up - base) / cfg.step;
                let backward = (base - down) / cfg.step;
                if (forward - backward).abs() >= cfg.kink_ratio * abs {
                    report.kinks += 1;
                    continue;
                }
            }
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((name.clone(), i));
            }
        }
    }
    report.passed = report.max_rel_error < cfg.tolerance;
    Ok(report)
}

fn set(store: &mut ParamStore, name: &str, i: usize, x: f64) {
    if let Some(p) = store.get_mut(name) {
        p.value.data_mut()[i] = x;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_at_three() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::scalar(3.0));
        let r = grad_check(
            |g, s| {
                let x = s.bind(g, "x")?;
                g.mul(x, x)
            },
            &s,
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.passed);
        assert!(r.max_rel_error < 1e-6);

        let mut g = Graph::new();
        let x = s.bind(&mut g, "x").unwrap();
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y);
        assert!((grads.wrt(&g, x).unwrap().item() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::vector(vec![1.0, 2.0]));
        let r = grad_check(
            |g, s| {
                let _ = s.bind(g, "x")?;
                Ok(g.constant(Tensor::scalar(4.0)))
            },
            &s,
            GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(r.max_abs_error, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn zero_tolerance_fails() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::scalar(0.3));
        let cfg = GradCheckConfig {
            tolerance: 0.0,
            ..Default::default()
        };
        let r = grad_check(
            |g, s| {
                let x = s.bind(g, "x")?;
                Ok(g.tanh(x))
            },
            &s,
            cfg,
        )
        .unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn relu_kink_inside_the_step_is_skipped() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::vector(vec![3e-6, -0.4, 0.7]));
        let r = grad_check(
            |g, s| {
                let x = s.bind(g, "x")?;
                let y = g.relu(x);
                Ok(g.sum(y))
            },
            &s,
            GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!((r.checked, r.kinks), (2, 1));
        assert!(r.passed);
    }

    #[test]
    fn wrong_gradient_at_a_smooth_point_is_not_excused() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::vector(vec![0.8, -1.3]));
        // x times a detached copy of itself: the tape sees half the slope
        let r = grad_check(
            |g, s| {
                let x = s.bind(g, "x")?;
                let c = g.constant(s.value("x")?.clone());
                let y = g.mul(x, c)?;
                Ok(g.sum(y))
            },
            &s,
            GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!((r.checked, r.kinks), (2, 0));
        assert!(!r.passed);
        assert!((r.max_rel_error - 0.5).abs() < 1e-6);
    }
}
