use ndarray::array;
use pairnet::metrics::{median_pairwise_distance, mmd_rbf, pearson_corr, pehe, wasserstein1_1d, wasserstein1_weighted, Bandwidth};
use pairnet::seed;
use pairnet::stats::{
    ks_uniform_statistic, ln_gamma, paired_t_test_one_sided, regularized_incomplete_beta, student_t_cdf, two_sample_t_test,
};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::{beta::beta_reg, gamma::ln_gamma as sr_ln_gamma};

const QUANTILES: [(f64, [f64; 6]); 2] = [
    (0.975, [12.706205, 4.302653, 2.570582, 2.228139, 2.042272, 1.983972]),
    (0.95, [6.313752, 2.919986, 2.015048, 1.812461, 1.697261, 1.660234]),
];
const DFS: [f64; 6] = [1.0, 2.0, 5.0, 10.0, 30.0, 100.0];

#[test]
fn t_cdf_matches_tabulated_quantiles() {
    for (q, row) in QUANTILES {
        for (df, t) in DFS.iter().zip(row) {
            let c = student_t_cdf(t, *df).unwrap();
            assert!((c - q).abs() < 5e-5, "df {df}: cdf({t}) = {c}");
            assert!((student_t_cdf(-t, *df).unwrap() - (1.0 - q)).abs() < 5e-5);
        }
    }
}

#[test]
fn t_cdf_agrees_with_reference_implementation() {
    let mut rng = seed::rng(0);
    for _ in 0..500 {
        let df = rng.random_range(0.5..200.0);
        let t = rng.random_range(-20.0..20.0);
        let reference = StudentsT::new(0.0, 1.0, df).unwrap().cdf(t);
        assert!((student_t_cdf(t, df).unwrap() - reference).abs() < 1e-10, "df {df} t {t}");
    }
    assert!(student_t_cdf(1.0, 0.0).is_err());
}

#[test]
fn special_functions_agree_with_reference() {
    for x in [0.1, 0.5, 1.0, 2.5, 10.0, 123.4] {
        assert!((ln_gamma(x) - sr_ln_gamma(x)).abs() < 1e-10 * sr_ln_gamma(x).abs().max(1.0));
    }
    for (a, b, x) in [(0.5, 0.5, 0.3), (2.0, 5.0, 0.9), (50.0, 0.5, 0.99), (1.0, 1.0, 0.42)] {
        assert!((regularized_incomplete_beta(a, b, x).unwrap() - beta_reg(a, b, x)).abs() < 1e-10);
    }
    assert_eq!(regularized_incomplete_beta(2.0, 3.0, 0.0).unwrap(), 0.0);
    assert_eq!(regularized_incomplete_beta(2.0, 3.0, 1.0).unwrap(), 1.0);
}

#[test]
fn paired_t_test_example() {
    let r = paired_t_test_one_sided(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]).unwrap();
    assert!((r.t - 3.4641).abs() < 1e-4);
    assert!((r.p - 0.0371).abs() < 1e-4);
    let same = paired_t_test_one_sided(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
    assert_eq!((same.t, same.p), (0.0, 0.5));
    assert!(paired_t_test_one_sided(&[1.0], &[2.0]).is_err());
    assert!(paired_t_test_one_sided(&[1.0, 2.0], &[2.0]).is_err());
}

#[test]
fn null_p_values_are_uniform() {
    let mut rng = seed::rng(1);
    let n = 2000;
    let p: Vec<f64> = (0..n)
        .map(|_| {
            let a: Vec<f64> = (0..10).map(|_| StandardNormal.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..10).map(|_| StandardNormal.sample(&mut rng)).collect();
            paired_t_test_one_sided(&a, &b).unwrap().p
        })
        .collect();
    let d = ks_uniform_statistic(&p);
    assert!(d < 1.628 / (n as f64).sqrt(), "KS distance {d}");
}

#[test]
fn ks_detects_non_uniform_values() {
    let v: Vec<f64> = (0..1000).map(|i| (i as f64 / 1000.0).powi(2)).collect();
    assert!(ks_uniform_statistic(&v) > 0.2);
}

#[test]
fn two_sample_test_against_reference() {
    let a = [1.0, 2.0, 3.0, 4.0];
    let b = [2.0, 4.0, 6.0, 8.0, 10.0];
    let (t, p) = two_sample_t_test(&a, &b).unwrap();
    let sp2 = (3.0 * 5.0 / 3.0 + 4.0 * 10.0) / 7.0;
    let t_ref = (2.5 - 6.0) / (sp2 * (0.25 + 0.2f64)).sqrt();
    assert!((t - t_ref).abs() < 1e-12);
    let p_ref = 2.0 * StudentsT::new(0.0, 1.0, 7.0).unwrap().cdf(-t_ref.abs());
    assert!((p - p_ref).abs() < 1e-10);
}

#[test]
fn mmd_examples() {
    let x = array![[0.0]];
    let y = array![[1.0]];
    let m = mmd_rbf(x.view(), y.view(), Bandwidth::Fixed(1.0)).unwrap();
    assert!((m - 0.8871).abs() < 1e-4);
    assert_eq!(mmd_rbf(x.view(), x.view(), Bandwidth::MedianHeuristic).unwrap(), 0.0);
    assert!(mmd_rbf(x.view(), array![[1.0, 2.0]].view(), Bandwidth::Fixed(1.0)).is_err());
}

#[test]
fn median_distance_of_small_sets() {
    let x = array![[0.0], [1.0]];
    let y = array![[3.0]];
    assert_eq!(median_pairwise_distance(x.view(), y.view()), 2.0);
}

#[test]
fn wasserstein_examples() {
    assert!((wasserstein1_1d(&[0.0, 2.0], &[1.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
    let w = wasserstein1_weighted(&[0.0, 1.0], &[1.0, 0.0], &[0.0, 1.0], &[0.0, 2.0]).unwrap();
    assert!((w - 1.0).abs() < 1e-12);
    assert!(wasserstein1_1d(&[], &[1.0]).is_err());
}

#[test]
fn pearson_and_pehe_examples() {
    assert!((pearson_corr(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap() - 0.9820).abs() < 1e-4);
    assert!(pearson_corr(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    assert_eq!(pehe(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert!((pehe(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
    assert!(pehe(&[1.0], &[]).is_err());
}

proptest! {
    #[test]
    fn t_cdf_is_monotone_and_symmetric(df in 0.5..500.0f64, a in -30.0..30.0f64, b in -30.0..30.0f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (cl, ch) = (student_t_cdf(lo, df).unwrap(), student_t_cdf(hi, df).unwrap());
        prop_assert!(cl <= ch + 1e-15);
        prop_assert!((student_t_cdf(-a, df).unwrap() + student_t_cdf(a, df).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_is_symmetric_and_shift_equivariant(v in proptest::collection::vec(-10.0..10.0f64, 1..20), shift in -5.0..5.0f64) {
        let w: Vec<f64> = v.iter().map(|x| x + shift).collect();
        let d = wasserstein1_1d(&v, &w).unwrap();
        prop_assert!((d - shift.abs()).abs() < 1e-9);
        prop_assert!((d - wasserstein1_1d(&w, &v).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mmd_is_symmetric_and_nonnegative(s in 0u64..500) {
        let mut rng = seed::rng(s);
        let x = ndarray::Array2::from_shape_fn((8, 2), |_| rng.random::<f64>());
        let y = ndarray::Array2::from_shape_fn((6, 2), |_| rng.random::<f64>() + 0.5);
        let a = mmd_rbf(x.view(), y.view(), Bandwidth::MedianHeuristic).unwrap();
        let b = mmd_rbf(y.view(), x.view(), Bandwidth::MedianHeuristic).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn pearson_is_bounded(v in proptest::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 3..30)) {
        let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        if let Ok(r) = pearson_corr(&a, &b) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        }
    }
}
