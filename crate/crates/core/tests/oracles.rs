//! Closed-form statistics against brute-force recomputations.

use lobrm_autodiff::{Graph, Tensor};
use lobrm_core::metrics::{eval_l1, eval_r_squared, hourly_corr, pct_loss};
use lobrm_core::model::accumulate;
use lobrm_core::preprocess::{invert_standardize, standardize, time_weighted_stats};
use proptest::prelude::*;

const TOL: f64 = 1e-12;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 200,
        ..ProptestConfig::default()
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * (1.0 + a.abs().max(b.abs()))
}

/// Plain moments of the step function sampled once per grid unit.
fn discretized(values: &[f64], durations: &[u32]) -> (f64, f64) {
    let mut samples = Vec::new();
    for (&v, &d) in values.iter().zip(durations) {
        samples.extend(std::iter::repeat_n(v, d as usize));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn step_function() -> impl Strategy<Value = (Vec<f64>, Vec<u32>)> {
    (1usize..25).prop_flat_map(|n| (prop::collection::vec(-10.0f64..10.0, n), prop::collection::vec(1u32..60, n)))
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn time_weighting_matches_a_sampled_step_function((values, durations) in step_function()) {
        // grid unit of 1/1024 s keeps every timestamp difference exact
        let unit = 1.0 / 1024.0;
        let mut ts = vec![34_200.0];
        for &d in &durations {
            ts.push(ts[ts.len() - 1] + d as f64 * unit);
        }
        let (mean, std) = time_weighted_stats(&values, &ts).unwrap();
        let (m, s) = discretized(&values, &durations);
        prop_assert!(close(mean, m), "{mean} vs {m}");
        prop_assert!(close(std, s), "{std} vs {s}");
    }

    #[test]
    fn time_weighting_on_a_fine_uniform_grid((values, durations) in step_function()) {
        let ts: Vec<f64> = std::iter::once(0.0)
            .chain(durations.iter().scan(0.0, |t, &d| {
                *t += d as f64 * 0.37;
                Some(*t)
            }))
            .collect();
        let (mean, std) = time_weighted_stats(&values, &ts).unwrap();
        let grid = 200_000;
        let span = ts[ts.len() - 1];
        let mut samples = Vec::with_capacity(grid);
        let mut seg = 0;
        for i in 0..grid {
            let t = (i as f64 + 0.5) * span / grid as f64;
            while t >= ts[seg + 1] {
                seg += 1;
            }
            samples.push(values[seg]);
        }
        let n = samples.len() as f64;
        let m = samples.iter().sum::<f64>() / n;
        let s = (samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!((mean - m).abs() < 1e-3 * (1.0 + m.abs()));
        prop_assert!((std - s).abs() < 1e-3 * (1.0 + s));
    }

    #[test]
    fn pooled_r_squared(
        rows in prop::collection::vec(prop::collection::vec((-5.0f64..5.0, -1.0f64..1.0), 4), 2..40)
    ) {
        let labels: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x.0).collect()).collect();
        let preds: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x.0 + x.1).collect()).collect();
        let r2 = eval_r_squared(&preds, &labels).unwrap();
        // sum of squares via Σy² − nȳ², accumulated level by level
        let mut n = 0.0;
        let (mut sy, mut syy, mut sres) = (0.0, 0.0, 0.0);
        for lvl in 0..4 {
            for (p, y) in preds.iter().zip(&labels) {
                n += 1.0;
                sy += y[lvl];
                syy += y[lvl] * y[lvl];
                sres += (p[lvl] - y[lvl]).powi(2);
            }
        }
        let tot = syy - sy * sy / n;
        let expected = 1.0 - sres / tot;
        prop_assert!(close(r2, expected), "{r2} vs {expected}");
    }

    #[test]
    fn l1_is_the_mean_absolute_deviation(
        rows in prop::collection::vec(prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 4), 1..40)
    ) {
        let p: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x.0).collect()).collect();
        let y: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x.1).collect()).collect();
        let mut total = 0.0;
        for j in 0..4 {
            for i in 0..p.len() {
                total += (p[i][j] - y[i][j]).abs();
            }
        }
        prop_assert!(close(eval_l1(&p, &y).unwrap(), total / (4 * p.len()) as f64));
    }

    #[test]
    fn loss_as_share_of_mean_volume(
        pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..60),
        mean in 0.5f64..50.0,
        std in 0.1f64..20.0,
    ) {
        let p: Vec<Vec<f64>> = pairs.iter().map(|x| vec![x.0]).collect();
        let y: Vec<Vec<f64>> = pairs.iter().map(|x| vec![x.1]).collect();
        let z = eval_l1(&p, &y).unwrap();
        // de-standardize both sides, then take the mean share error
        let shares: f64 = pairs
            .iter()
            .map(|&(a, b)| ((a * std + mean) - (b * std + mean)).abs())
            .sum::<f64>()
            / pairs.len() as f64;
        prop_assert!(close(pct_loss(z, mean, std).unwrap(), shares / mean));
    }

    #[test]
    fn hourly_correlation(
        samples in prop::collection::vec((0usize..2, 0.0f64..14_400.0, 0.0f64..3.0, prop::collection::vec(1.0f64..900.0, 4)), 8..80)
    ) {
        let days: Vec<usize> = samples.iter().map(|s| s.0).collect();
        let times: Vec<f64> = samples.iter().map(|s| 34_200.0 + s.1).collect();
        let losses: Vec<f64> = samples.iter().map(|s| s.2).collect();
        let raw: Vec<Vec<f64>> = samples.iter().map(|s| s.3.clone()).collect();

        let mut keys: Vec<(usize, i64)> = Vec::new();
        for i in 0..samples.len() {
            let k = (days[i], (times[i] / 3600.0).floor() as i64);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.sort();
        prop_assume!(keys.len() >= 2);
        let mut l1 = Vec::new();
        let mut vs = Vec::new();
        for k in &keys {
            let members: Vec<usize> = (0..samples.len())
                .filter(|&i| (days[i], (times[i] / 3600.0).floor() as i64) == *k)
                .collect();
            l1.push(members.iter().map(|&i| losses[i]).sum::<f64>() / members.len() as f64);
            let pooled: Vec<f64> = members.iter().flat_map(|&i| raw[i].iter().copied()).collect();
            let m = pooled.iter().sum::<f64>() / pooled.len() as f64;
            vs.push((pooled.iter().map(|v| (v - m).powi(2)).sum::<f64>() / pooled.len() as f64).sqrt());
        }
        // sample-covariance form of the correlation
        let n = l1.len() as f64;
        let (ma, mb) = (l1.iter().sum::<f64>() / n, vs.iter().sum::<f64>() / n);
        let cov: f64 = l1.iter().zip(&vs).map(|(a, b)| (a - ma) * (b - mb)).sum::<f64>() / (n - 1.0);
        let sa = (l1.iter().map(|a| (a - ma).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let sb = (vs.iter().map(|b| (b - mb).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        prop_assume!(sa > 0.0 && sb > 0.0);
        let h = hourly_corr(&losses, &raw, &times, &days, 20, 1).unwrap();
        prop_assert_eq!(h.buckets.len(), keys.len());
        prop_assert!(close(h.rho, cov / (sa * sb)), "{} vs {}", h.rho, cov / (sa * sb));
    }

    #[test]
    fn rate_accumulation(
        steps in 1usize..8,
        rows in 1usize..4,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rates: Vec<Vec<f64>> = (0..steps).map(|_| (0..rows * 4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let weights: Vec<Vec<f64>> = (0..steps).map(|_| (0..rows).map(|_| rng.gen_range(0.0..3.0)).collect()).collect();
        let mut g = Graph::new();
        let rv: Vec<_> = rates.iter().map(|r| g.constant(Tensor::matrix(rows, 4, r.clone()))).collect();
        let wv: Vec<_> = weights.iter().map(|w| g.constant(Tensor::matrix(rows, 1, w.clone()))).collect();
        let out = accumulate(&mut g, &rv, &wv).unwrap().unwrap();
        let got = g.value(out).data().to_vec();
        for b in 0..rows {
            for j in 0..4 {
                let mut s = 0.0;
                for t in 0..steps {
                    s += rates[t][b * 4 + j] * weights[t][b];
                }
                prop_assert!(close(got[b * 4 + j], s));
            }
        }
    }

    #[test]
    fn standardization_round_trip(x in -1e6f64..1e6, mean in -1e3f64..1e3, std in 1e-3f64..1e3) {
        let back = invert_standardize(standardize(x, mean, std).unwrap(), mean, std).unwrap();
        prop_assert!((back - x).abs() <= TOL * x.abs().max(mean.abs()).max(1.0));
    }
}
