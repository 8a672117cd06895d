//! Algebraic properties of the tape that hold for any input.

use lobrm_autodiff::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |d| Tensor::matrix(r, c, d))
    })
}

fn grad(g: &Graph, loss: Var, x: Var) -> Tensor {
    g.backward(loss).wrt(g, x).expect("gradient")
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(t in matrix(4, 6)) {
        let mut g = Graph::new();
        let x = g.constant(t.clone());
        let y = g.softmax(x);
        let y = g.value(y);
        for r in 0..t.rows() {
            let row = y.row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|p| *p > 0.0 && *p <= 1.0));
        }
    }

    #[test]
    fn sum_and_mean_spread_gradient_evenly(t in matrix(4, 5)) {
        let n = t.len() as f64;
        let mut g = Graph::new();
        let x = g.variable(t.clone());
        let s = g.sum(x);
        prop_assert!(grad(&g, s, x).data().iter().all(|d| *d == 1.0));
        let m = g.mean(x);
        prop_assert!(grad(&g, m, x).data().iter().all(|d| (d - 1.0 / n).abs() < 1e-15));
    }

    #[test]
    fn reused_variables_accumulate(t in matrix(3, 3), w in -2.0f64..2.0) {
        let mut g = Graph::new();
        let x = g.variable(t.clone());
        let a = g.scale(x, w);
        let y = g.add(a, x).unwrap();
        let y = g.sum(y);
        prop_assert!(grad(&g, y, x).data().iter().all(|d| (d - (w + 1.0)).abs() < 1e-12));
    }

    #[test]
    fn backward_is_linear_in_the_loss(t in matrix(3, 4), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut g = Graph::new();
        let x = g.variable(t);
        let th = g.tanh(x);
        let l1 = g.sum(th);
        let sq = g.mul(x, x).unwrap();
        let l2 = g.mean(sq);
        let sa = g.scale(l1, a);
        let sb = g.scale(l2, b);
        let l = g.add(sa, sb).unwrap();
        let (g1, g2, gl) = (grad(&g, l1, x), grad(&g, l2, x), grad(&g, l, x));
        for i in 0..gl.len() {
            let expected = a * g1.data()[i] + b * g2.data()[i];
            prop_assert!((gl.data()[i] - expected).abs() < 1e-12 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn cross_entropy_gradient_rows_sum_to_zero(t in matrix(4, 5), seed in any::<u64>()) {
        let classes: Vec<usize> = (0..t.rows()).map(|r| (seed as usize + r) % t.cols()).collect();
        let mut g = Graph::new();
        let x = g.variable(t.clone());
        let l = g.cross_entropy(x, &classes).unwrap();
        prop_assert!(g.value(l).item() >= 0.0);
        let d = grad(&g, l, x);
        for r in 0..t.rows() {
            prop_assert!(d.row(r).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn gru_state_stays_in_the_unit_box(x in matrix(3, 4), seed in any::<u64>(), h0 in -1.0f64..1.0) {
        let hidden = 3;
        let mut s = ParamStore::new();
        init_gru(&mut s, "gru", x.cols(), hidden, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut g = Graph::new();
        let p = BoundGru::bind(&mut g, &s, "gru").unwrap();
        let xv = g.constant(x.clone());
        let mut h = g.constant(Tensor::full(&[x.rows(), hidden], h0));
        for _ in 0..5 {
            h = gru_cell(&mut g, xv, h, &p).unwrap();
        }
        prop_assert!(g.value(h).data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn smoothed_gaps_are_monotone(a in 0.0f64..1e4, b in 0.0f64..1e4) {
        prop_assert!(phi(0.0) == 0.0);
        prop_assert_eq!(a < b, phi(a) < phi(b));
        prop_assert!(phi_column(&[a, -b - 1e-9]).is_err());
    }
}
