use afdr_core::data::make_folds;
use afdr_core::filter::{aggregate_afdr, threshold_values, SelectionResult};
use afdr_core::glm::{mean_nll, nll_gradient};
use afdr_core::knockoffs::KnockoffModel;
use afdr_core::Variant;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Scan every candidate magnitude in increasing order.
fn oracle(w: &[f64], q: f64, variant: Variant) -> (f64, Vec<usize>) {
    let mut cands: Vec<f64> = w.iter().filter(|v| **v != 0.0).map(|v| v.abs()).collect();
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for t in cands {
        let neg = w.iter().filter(|&&v| v <= -t).count() as f64;
        let pos = w.iter().filter(|&&v| v >= t).count() as f64;
        let ok = match variant {
            Variant::Knockoff => pos > 0.0 && neg / pos <= q,
            Variant::KnockoffPlus => (1.0 + neg) / pos.max(1.0) <= q,
        };
        if ok {
            return (t, (0..w.len()).filter(|&j| w[j] >= t).collect());
        }
    }
    (f64::INFINITY, vec![])
}

fn w_vector() -> impl Strategy<Value = Vec<f64>> {
    let entry = prop_oneof![
        Just(0.0),
        (-4i32..=4).prop_map(f64::from),
        -5.0f64..5.0,
    ];
    prop::collection::vec(entry, 1..=12)
}

fn variant() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::Knockoff), Just(Variant::KnockoffPlus)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn threshold_matches_brute_force(w in w_vector(), q in 0.0f64..=1.0, v in variant()) {
        let r = threshold_values(&w, q, v).unwrap();
        let (t, sel) = oracle(&w, q, v);
        prop_assert_eq!(r.threshold, t);
        prop_assert_eq!(r.selected, sel);
    }

    #[test]
    fn selection_grows_with_q(w in w_vector(), a in 0.0f64..=1.0, b in 0.0f64..=1.0, v in variant()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = threshold_values(&w, lo, v).unwrap().selected;
        let large = threshold_values(&w, hi, v).unwrap().selected;
        prop_assert!(small.iter().all(|j| large.contains(j)));
    }

    #[test]
    fn positive_rescaling_keeps_selection(w in w_vector(), q in 0.0f64..=1.0, c in 0.01f64..100.0, v in variant()) {
        let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
        let a = threshold_values(&w, q, v).unwrap();
        let b = threshold_values(&scaled, q, v).unwrap();
        prop_assert_eq!(&a.selected, &b.selected);
        if a.threshold.is_finite() {
            prop_assert!((b.threshold - a.threshold * c).abs() <= 1e-12 * b.threshold.abs());
        }
    }

    #[test]
    fn negating_a_statistic_never_adds_it(w in w_vector(), q in 0.0f64..=1.0, v in variant(), pick in any::<prop::sample::Index>()) {
        let j = pick.index(w.len());
        let mut flipped = w.clone();
        flipped[j] = -(w[j].abs() + 0.5);
        let r = threshold_values(&flipped, q, v).unwrap();
        let (_, sel) = oracle(&flipped, q, v);
        prop_assert!(!r.selected.contains(&j));
        prop_assert_eq!(r.selected, sel);
    }

    #[test]
    fn union_contains_every_run(ws in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 8), 1..5), q in 0.0f64..=1.0) {
        let runs: Vec<SelectionResult> = ws
            .iter()
            .map(|w| threshold_values(w, q, Variant::KnockoffPlus).unwrap())
            .collect();
        let agg = aggregate_afdr(&runs).unwrap();
        for r in &runs {
            prop_assert!(r.selected.iter().all(|j| agg.selected.contains(j)));
        }
        prop_assert!(agg.selected.windows(2).all(|p| p[0] < p[1]));
        prop_assert_eq!(agg.runs.len(), runs.len());
    }

    #[test]
    fn folds_partition_rows(n in 10usize..200, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let y: Vec<f64> = (0..n).map(|i| f64::from(i % 3 == 0)).collect();
        let folds = make_folds(n, k, Some(&y), seed).unwrap();
        let mut seen = vec![0usize; n];
        for f in 0..k {
            for i in folds.validation(f) {
                seen[i] += 1;
            }
            prop_assert_eq!(folds.training(f).len() + folds.validation(f).len(), n);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes = folds.sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let positives: Vec<usize> = (0..k)
            .map(|f| folds.validation(f).iter().filter(|&&i| y[i] == 1.0).count())
            .collect();
        prop_assert!(positives.iter().max().unwrap() - positives.iter().min().unwrap() <= 1);
    }

    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>(), n in 5usize..30, p in 1usize..5) {
        let mut state = seed | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let x = DMatrix::from_fn(n, p, |_, _| next() * 4.0 - 2.0);
        let y = DVector::from_fn(n, |_, _| f64::from(next() < 0.5));
        let beta: Vec<f64> = (0..p).map(|_| next() * 2.0 - 1.0).collect();
        let b0 = next() - 0.5;
        let (g0, g) = nll_gradient(&x, &y, b0, &beta);
        let h = 1e-5;
        let fd0 = (mean_nll(&x, &y, b0 + h, &beta) - mean_nll(&x, &y, b0 - h, &beta)) / (2.0 * h);
        let mut worst = (g0 - fd0).abs();
        let mut scale = g0.abs();
        for j in 0..p {
            let mut up = beta.clone();
            let mut down = beta.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (mean_nll(&x, &y, b0, &up) - mean_nll(&x, &y, b0, &down)) / (2.0 * h);
            worst = worst.max((g[j] - fd).abs());
            scale = scale.max(g[j].abs());
        }
        prop_assert!(worst <= 1e-6 * scale.max(1e-3), "{worst} vs {scale}");
    }

    #[test]
    fn equicorrelated_model_is_valid(rho in 0.0f64..0.95, p in 2usize..8) {
        let sigma = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho });
        let model = KnockoffModel::from_sigma(sigma.clone(), 0.999, 0.0).unwrap();
        prop_assert!(model.lambda_min_v() > 0.0);
        let g = model.joint_covariance();
        prop_assert!((&g - g.transpose()).amax() == 0.0);
        let eig = g.symmetric_eigenvalues();
        prop_assert!(eig.min() > -1e-10);
        let expected = 0.999 * (2.0 * (1.0 - rho)).min(1.0);
        prop_assert!(model.s().iter().all(|s| (s - expected).abs() < 1e-10));
    }
}
