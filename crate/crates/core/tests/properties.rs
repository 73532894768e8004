use proptest::prelude::*;

use somspike_core::data::{batch_plan, stratified_split, SplitRatios, Subset};
use somspike_core::matrix::{Matrix, Param};
use somspike_core::metrics::{
    accuracy, paired_ttest, per_class_prf, student_t_two_tailed, weighted_metrics, ConfusionMatrix,
};
use somspike_core::objective::{smooth_labels, smoothed_ce, AdamConfig, AdamState, PlateauScheduler};
use somspike_core::softsom::{distances, soft_assign};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-5.0f64..5.0, rows * cols)
        .prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distances_translation_invariant(
        x in matrix(3, 4), p in matrix(5, 4), shift in prop::collection::vec(-10.0f64..10.0, 4)
    ) {
        let shifted = |m: &Matrix| Matrix::from_fn(m.rows(), 4, |i, j| m[(i, j)] + shift[j]);
        let a = distances(&x, &p, 1e-8).unwrap();
        let b = distances(&shifted(&x), &shifted(&p), 1e-8).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn soft_rows_are_distributions(x in matrix(4, 3), p in matrix(6, 3), tau in 0.05f64..5.0) {
        let d = distances(&x, &p, 1e-8).unwrap();
        let s = soft_assign(&d, tau);
        for i in 0..4 {
            let row = s.row(i);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        // the nearest prototype gets the largest weight
        let near = d.map(|v| -v).argmax_rows();
        for (i, &j) in near.iter().enumerate() {
            let best = s.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(s[(i, j)], best);
        }
    }

    #[test]
    fn ce_is_shift_invariant(z in matrix(3, 5), shift in -20.0f64..20.0, eps in 0.0f64..0.3) {
        let labels = [0, 4, 2];
        let (l1, g1) = smoothed_ce(&z, &labels, eps).unwrap();
        let (l2, g2) = smoothed_ce(&z.map(|v| v + shift), &labels, eps).unwrap();
        prop_assert!((l1 - l2).abs() < 1e-9);
        prop_assert!(g1.max_abs_diff(&g2) < 1e-12);
        for i in 0..3 {
            prop_assert!(g1.row(i).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rate_adam_is_identity(values in prop::collection::vec(-3.0f64..3.0, 6),
                                  grads in prop::collection::vec(-3.0f64..3.0, 6)) {
        let mut p = Param::new(Matrix::from_vec(2, 3, values.clone()).unwrap());
        p.grad = Matrix::from_vec(2, 3, grads).unwrap();
        let mut adam = AdamState::new(AdamConfig { learning_rate: 0.0, ..AdamConfig::default() });
        for _ in 0..3 {
            adam.step([&mut p]).unwrap();
        }
        prop_assert_eq!(p.value.as_slice(), values.as_slice());
    }

    #[test]
    fn scheduler_never_raises_rate(accs in prop::collection::vec(0.0f64..100.0, 1..40)) {
        let mut s = PlateauScheduler::new(1e-3);
        let mut last = s.learning_rate;
        for a in accs {
            s.step(a);
            prop_assert!(s.learning_rate <= last);
            last = s.learning_rate;
        }
    }

    #[test]
    fn ttest_is_antisymmetric(a in prop::collection::vec(80.0f64..100.0, 3..10),
                              noise in prop::collection::vec(-1.0f64..1.0, 10)) {
        let b: Vec<f64> = a.iter().zip(&noise).map(|(x, e)| x + 0.3 + e).collect();
        let ab = paired_ttest(&a, &b).unwrap();
        let ba = paired_ttest(&b, &a).unwrap();
        prop_assert!((ab.t + ba.t).abs() < 1e-9 * (1.0 + ab.t.abs()));
        prop_assert!((ab.p - ba.p).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.p));
    }

    #[test]
    fn p_falls_with_abs_t(t1 in 0.0f64..20.0, t2 in 0.0f64..20.0, df in 1usize..30) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let p_lo = student_t_two_tailed(lo, df as f64).unwrap();
        let p_hi = student_t_two_tailed(hi, df as f64).unwrap();
        prop_assert!(p_hi <= p_lo + 1e-15);
        prop_assert!((student_t_two_tailed(-lo, df as f64).unwrap() - p_lo).abs() < 1e-15);
    }

    #[test]
    fn f1_bounded_and_accuracy_is_weighted_recall(
        counts in prop::collection::vec(0u64..50, 16)
    ) {
        let rows: Vec<Vec<u64>> = counts.chunks(4).map(<[u64]>::to_vec).collect();
        let cm = ConfusionMatrix::from_rows(&rows).unwrap();
        prop_assume!(cm.total() > 0);
        for c in per_class_prf(&cm).unwrap() {
            prop_assert!(c.f1 <= c.precision.max(c.recall) + 1e-15);
            prop_assert!(c.f1 >= c.precision.min(c.recall) - 1e-15);
        }
        let w = weighted_metrics(&cm).unwrap();
        prop_assert!((accuracy(&cm).unwrap() / 100.0 - w.recall).abs() < 1e-12);
    }

    #[test]
    fn split_partitions_and_stratifies(
        counts in prop::collection::vec(3usize..60, 2..6), seed in any::<u64>()
    ) {
        let labels: Vec<usize> = counts.iter().enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let ratios = SplitRatios::default();
        let split = stratified_split(&labels, counts.len(), ratios, seed).unwrap();
        let mut seen: Vec<usize> = Subset::ALL.iter().flat_map(|&s| split.indices(s)).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..labels.len()).collect::<Vec<_>>());
        for (c, got) in split.per_class_counts(&labels, counts.len()).iter().enumerate() {
            prop_assert_eq!(*got, ratios.class_counts(counts[c]));
            prop_assert!((got[0] as f64 - 0.7 * counts[c] as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn batches_cover_subset_once(n in 1usize..200, size in 1usize..50, shuffle in any::<bool>(),
                                 seed in any::<u64>(), epoch in 0u64..10) {
        let subset: Vec<usize> = (0..n).map(|i| i * 3 + 1).collect();
        let plan = batch_plan(&subset, size, shuffle, seed, epoch).unwrap();
        prop_assert_eq!(plan.len(), n.div_ceil(size));
        prop_assert!(plan.iter().all(|b| !b.is_empty() && b.len() <= size));
        let mut flat: Vec<usize> = plan.concat();
        flat.sort_unstable();
        prop_assert_eq!(flat, subset);
    }
}

#[test]
fn smoothed_labels_sum_to_one() {
    for c in 2..=32 {
        for eps in [0.0, 0.05, 0.1] {
            for label in [0, c / 2, c - 1] {
                let y = smooth_labels(label, c, eps).unwrap();
                assert!((y.iter().sum::<f64>() - 1.0).abs() <= 1e-12, "C={c} eps={eps}");
            }
        }
    }
}

/// Two-tailed tail mass by Simpson's rule on `u = tan θ`.
fn simpson_p(t: f64, df: f64) -> f64 {
    let ln_c = libm::lgamma((df + 1.0) / 2.0) - libm::lgamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let f = |theta: f64| {
        let u = theta.tan();
        let sec2 = 1.0 / (theta.cos() * theta.cos());
        (ln_c - (df + 1.0) / 2.0 * (1.0 + u * u / df).ln()).exp() * sec2
    };
    let (a, b) = (t.abs().atan(), std::f64::consts::FRAC_PI_2 - 1e-12);
    let n = 20_000;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for k in 1..n {
        sum += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    2.0 * sum * h / 3.0
}

#[test]
fn p_value_matches_quadrature() {
    let mut state = 0x5eed_u64;
    let mut next = || {
        state = somspike_core::rng::mix(state, 1);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let a: Vec<f64> = (0..8).map(|_| 90.0 + 2.0 * next()).collect();
    let b: Vec<f64> = a.iter().map(|x| x + 0.4 + next()).collect();
    let r = paired_ttest(&a, &b).unwrap();
    let oracle = simpson_p(r.t, r.df as f64);
    assert!(((r.p - oracle) / oracle).abs() < 1e-6, "{} vs {}", r.p, oracle);
    for (t, df) in [(0.5, 3.0), (2.0, 7.0), (4.0, 12.0)] {
        let p = student_t_two_tailed(t, df).unwrap();
        let q = simpson_p(t, df);
        assert!(((p - q) / q).abs() < 1e-6, "t={t} df={df}: {p} vs {q}");
    }
}
