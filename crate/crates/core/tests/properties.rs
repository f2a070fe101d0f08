mod common;

use common::{brute_force_roc, exhaustive_min_distance};
use fedua::codebook::{hamming_distance, min_distance_bound, BinaryEmbedding};
use fedua::eval::{fpr_at_tpr, roc_curve};
use fedua::federation::{clients_per_round, federated_average, ClientUpdate};
use fedua::fedua::{calibrate_from_distances, correlation_loss, decide, Verdict};
use fedua::nn::{ModelParams, Tensor};
use fedua::UserId;
use num_bigint::BigUint;
use proptest::prelude::*;

fn scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    // a coarse grid makes ties common
    prop::collection::vec((0u32..40).prop_map(|v| v as f64 / 8.0), 1..max)
}

fn distinct(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::hash_set(0u32..1_000_000, 1..max).prop_map(|s| {
        let mut v: Vec<f64> = s.into_iter().map(|x| x as f64 / 1e4).collect();
        v.sort_by(f64::total_cmp);
        v
    })
}

fn bits(n_e: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..2, n_e)
}

proptest! {
    #[test]
    fn roc_matches_exhaustive_counting(g in scores(12), i in scores(12)) {
        let c = roc_curve(&g, &i).unwrap();
        let oracle = brute_force_roc(&g, &i);
        prop_assert_eq!(c.points.len(), oracle.len());
        for ((t, p), o) in c.thresholds.iter().zip(&c.points).zip(&oracle) {
            prop_assert_eq!((*t, p.0, p.1), *o);
        }
        prop_assert_eq!(c.points[0], (0.0, 0.0));
        prop_assert_eq!(*c.points.last().unwrap(), (1.0, 1.0));
        for w in c.points.windows(2) {
            prop_assert!(w[0].0 <= w[1].0 && w[0].1 <= w[1].1);
        }
        prop_assert!((0.0..=1.0).contains(&c.auc));
    }

    #[test]
    fn auc_complement_without_ties(s in distinct(24), split in 1usize..23) {
        prop_assume!(split < s.len());
        // interleave so both sides get a mix
        let (mut g, mut i) = (Vec::new(), Vec::new());
        for (k, v) in s.iter().enumerate() {
            if (k * 7 + split) % s.len() < split { g.push(*v) } else { i.push(*v) }
        }
        prop_assume!(!g.is_empty() && !i.is_empty());
        let a = roc_curve(&g, &i).unwrap().auc;
        let b = roc_curve(&i, &g).unwrap().auc;
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fpr_at_tpr_is_monotone(g in scores(15), i in scores(15), a in 0.01f64..1.0, b in 0.01f64..1.0) {
        let c = roc_curve(&g, &i).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(fpr_at_tpr(&c, lo).unwrap() <= fpr_at_tpr(&c, hi).unwrap());
    }

    #[test]
    fn warm_up_accepts_floor_k_r(d in distinct(60), r in 0.01f64..=1.0) {
        let k = d.len();
        let i = ((k as f64 * r) + 1e-9).floor() as usize;
        match calibrate_from_distances(UserId(0), d.clone(), r) {
            Ok(c) => {
                prop_assert!(i >= 1);
                prop_assert_eq!(d.iter().filter(|&&x| x <= c.tau).count(), i);
                prop_assert!(d.contains(&c.tau));
            }
            Err(_) => prop_assert_eq!(i, 0),
        }
    }

    #[test]
    fn raising_r_never_lowers_tau(d in scores(40), a in 0.05f64..=1.0, b in 0.05f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if let (Ok(x), Ok(y)) = (calibrate_from_distances(UserId(0), d.clone(), lo), calibrate_from_distances(UserId(0), d, hi)) {
            prop_assert!(x.tau <= y.tau);
        }
    }

    #[test]
    fn decision_is_threshold_comparison(score in 0.0f64..10.0, tau in 0.0f64..10.0) {
        let d = decide(score, tau);
        prop_assert_eq!(d.verdict == Verdict::Accept, score <= tau);
    }

    #[test]
    fn correlation_loss_lower_bound(y in bits(9), p in prop::collection::vec(0.0f64..=1.0, 18)) {
        let e = BinaryEmbedding::new(UserId(0), y.clone()).unwrap();
        let pred = Tensor::new(vec![2, 9], p).unwrap();
        let (l, _) = correlation_loss(&e, &pred).unwrap();
        let ones = y.iter().filter(|&&b| b == 1).count() as f64;
        prop_assert!(l >= -ones - 1e-12);
        prop_assert!(l >= -9.0);
        let ideal: Vec<f64> = y.iter().chain(&y).map(|&b| b as f64).collect();
        let (best, _) = correlation_loss(&e, &Tensor::new(vec![2, 9], ideal).unwrap()).unwrap();
        prop_assert_eq!(best, -ones);
    }

    #[test]
    fn hamming_is_a_metric(a in bits(12), b in bits(12), c in bits(12)) {
        let [a, b, c] = [a, b, c].map(|v| BinaryEmbedding::new(UserId(0), v).unwrap());
        let d = |x: &BinaryEmbedding, y: &BinaryEmbedding| hamming_distance(x, y).unwrap();
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert_eq!(d(&a, &a), 0);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert_eq!(d(&a, &a.complement()), 12);
    }

    #[test]
    fn average_is_a_convex_combination(
        vals in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..6),
        counts in prop::collection::vec(1usize..20, 6),
    ) {
        let updates: Vec<ClientUpdate> = vals.iter().enumerate().map(|(u, v)| ClientUpdate {
            user_id: UserId(u as u32),
            params: ModelParams { version: 1, layers: vec![vec![Tensor::new(vec![3], v.clone()).unwrap()]] },
            sample_count: counts[u],
            mean_loss: 0.0,
        }).collect();
        let avg = federated_average(&updates).unwrap().flatten();
        let mut reversed = updates.clone();
        reversed.reverse();
        prop_assert_eq!(&avg, &federated_average(&reversed).unwrap().flatten());
        for k in 0..3 {
            let lo = vals.iter().map(|v| v[k]).fold(f64::INFINITY, f64::min);
            let hi = vals.iter().map(|v| v[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= avg[k] && avg[k] <= hi);
        }
    }

    #[test]
    fn clients_per_round_bounds(n in 1usize..5000, c in 0.0001f64..=1.0) {
        let m = clients_per_round(n, c);
        prop_assert!(m >= 1 && m <= n);
    }
}

#[test]
fn bound_is_exact_for_two_users_and_below_exhaustive_otherwise() {
    for n in 2..=3 {
        for n_e in 1..=4 {
            for tau in 1..=n_e {
                let (good, total) = exhaustive_min_distance(n, n_e, tau);
                let b = min_distance_bound(n, n_e, tau).unwrap();
                let (num, exp) = b.exact();
                // bound = num / 2^exp, exhaustive = good / total
                let lhs = num * BigUint::from(total);
                let rhs = BigUint::from(good) << exp;
                if n == 2 {
                    assert_eq!(lhs, rhs, "n={n} n_e={n_e} tau={tau}");
                } else {
                    assert!(lhs <= rhs, "n={n} n_e={n_e} tau={tau}");
                }
            }
        }
    }
}
