use ndarray::{array, Array1, Array2};
use pairnet::losses::SquaredError;
use pairnet::nn::{
    adam_step, elu, finite_diff_check, forward, l2_penalty, Activation, AdamConfig, AdamState, Dense, LayerSpec,
    Mlp, Network, ParamStore, QueryBatch, RegConfig,
};
use pairnet::{seed, Error};
use proptest::prelude::*;

fn small_mlp(seed_value: u64) -> Mlp {
    let layers = vec![
        LayerSpec::new(3, 4, Activation::Elu),
        LayerSpec::new(4, 4, Activation::Elu),
        LayerSpec::new(4, 1, Activation::Identity),
    ];
    Mlp::new("net", layers, &mut seed::rng(seed_value)).unwrap()
}

#[test]
fn elu_matches_closed_form() {
    assert!((elu(-1.0) - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
    assert!((elu(-1.0) + 0.63212).abs() < 1e-5);
    assert_eq!(elu(0.0), 0.0);
    assert_eq!(elu(2.5), 2.5);
}

#[test]
fn forward_of_identity_layer_is_affine() {
    let spec = LayerSpec::new(2, 1, Activation::Identity);
    let layer = Dense { weight: array![[2.0, -1.0]], bias: array![0.5] };
    let out = forward("lin", &[layer], &[spec], &[3.0, 4.0]).unwrap();
    assert_eq!(out, vec![2.5]);
}

#[test]
fn shape_mismatch_names_the_block() {
    let spec = LayerSpec::new(2, 1, Activation::Identity);
    let layer = Dense { weight: Array2::zeros((1, 3)), bias: Array1::zeros(1) };
    match forward("head_0", &[layer], &[spec], &[1.0, 2.0]) {
        Err(Error::ShapeMismatch { block, .. }) => assert_eq!(block, "head_0"),
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn non_finite_parameters_are_reported_by_block() {
    let mut net = small_mlp(1);
    *net.params_mut().coord_mut(0).unwrap() = f64::NAN;
    match net.params().check_finite() {
        Err(Error::NonFinite { block }) => assert_eq!(block, "net"),
        other => panic!("expected non-finite error, got {other:?}"),
    }
}

#[test]
fn adam_first_step_moves_each_coordinate_by_lr() {
    let net = small_mlp(2);
    let mut params = net.params().clone();
    let before = params.to_flat();
    let mut grads = params.zeros_like();
    let n = grads.num_params();
    grads.set_flat(&(0..n).map(|i| (i as f64 + 1.0) * if i % 2 == 0 { 1.0 } else { -0.01 }).collect::<Vec<_>>()).unwrap();
    let lr = 1e-3;
    let mut state = AdamState::new(&params, AdamConfig { lr, ..AdamConfig::default() }).unwrap();
    adam_step(&mut params, &grads, &mut state).unwrap();
    for (a, b) in params.to_flat().iter().zip(&before) {
        assert!(((a - b).abs() - lr).abs() < 1e-6 * lr.max(1.0), "step {}", (a - b).abs());
    }
}

#[test]
fn adam_rejects_mismatched_gradients() {
    let net = small_mlp(3);
    let mut params = net.params().clone();
    let other = small_mlp(3);
    let mut grads = ParamStore::new();
    grads.insert("other", other.params().block("net").unwrap().to_vec());
    let mut state = AdamState::new(&params, AdamConfig::default()).unwrap();
    assert!(adam_step(&mut params, &grads, &mut state).is_err());
}

#[test]
fn empty_batches_are_rejected() {
    assert!(SquaredError::factual(Array2::zeros((0, 3)).view(), &[], &[]).is_err());
}

#[test]
fn l2_penalty_skips_biases() {
    let mut p = ParamStore::new();
    p.insert("phi", vec![Dense { weight: array![[1.0, 2.0]], bias: array![10.0] }]);
    p.insert("head_0", vec![Dense { weight: array![[3.0]], bias: array![10.0] }]);
    let reg = RegConfig { l2_phi_weight: 1.0, l2_head_weight: 0.5 };
    assert!((l2_penalty(&p, &reg) - (5.0 + 4.5)).abs() < 1e-12);
}

#[test]
fn finite_difference_agrees_with_backprop_including_penalty() {
    let net = small_mlp(5);
    let mut rng = seed::rng(6);
    let x = Array2::from_shape_fn((7, 3), |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
    let y: Vec<f64> = (0..7).map(|i| i as f64 * 0.3 - 1.0).collect();
    let obj = SquaredError::factual(x.view(), &[0.0; 7], &y).unwrap();
    let reg = RegConfig { l2_phi_weight: 0.3, l2_head_weight: 0.1 };
    assert!(finite_diff_check(&net, &obj, &reg, 1e-5).unwrap() <= 1e-4);
}

#[test]
fn finite_difference_rejects_bad_epsilon() {
    let net = small_mlp(7);
    let obj = SquaredError::factual(Array2::zeros((1, 3)).view(), &[0.0], &[1.0]).unwrap();
    assert!(finite_diff_check(&net, &obj, &RegConfig::NONE, 1e-2).is_err());
    assert!(finite_diff_check(&net, &obj, &RegConfig::NONE, 1e-9).is_err());
}

#[test]
fn mlp_requires_scalar_output() {
    let layers = vec![LayerSpec::new(2, 3, Activation::Elu)];
    assert!(Mlp::new("bad", layers, &mut seed::rng(0)).is_err());
}

#[test]
fn forward_is_deterministic_and_row_independent() {
    let net = small_mlp(8);
    let x = array![[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]];
    let q = QueryBatch::new(x.clone(), vec![0.0, 0.0]).unwrap();
    let both = net.predict_queries(&q).unwrap();
    let second = net.predict_queries(&QueryBatch::new(x.slice(ndarray::s![1..2, ..]).to_owned(), vec![0.0]).unwrap()).unwrap();
    assert_eq!(both[1], second[0]);
    assert_eq!(both, net.predict_queries(&q).unwrap());
}

proptest! {
    #[test]
    fn flat_and_snapshot_roundtrip(seed_value in 0u64..1000) {
        let net = small_mlp(seed_value);
        let p = net.params();
        let mut q = p.zeros_like();
        q.set_flat(&p.to_flat()).unwrap();
        prop_assert_eq!(&q, p);
        let back = ParamStore::from_snapshot(&p.to_snapshot()).unwrap();
        prop_assert_eq!(&back, p);
    }

    #[test]
    fn init_respects_fan_in_bound(fan_in in 1usize..64, fan_out in 1usize..16, s in 0u64..100) {
        let spec = LayerSpec::new(fan_in, fan_out, Activation::Elu);
        let d = Dense::init(&spec, &mut seed::rng(s));
        let bound = (3.0 / fan_in as f64).sqrt();
        prop_assert!(d.weight.iter().all(|w| w.abs() <= bound));
        prop_assert!(d.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences_on_random_nets(s in 0u64..50) {
        let net = small_mlp(s);
        let mut rng = seed::rng(s + 1000);
        let x = Array2::from_shape_fn((5, 3), |_| rand::Rng::random_range(&mut rng, -2.0..2.0));
        let y: Vec<f64> = (0..5).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
        let obj = SquaredError::factual(x.view(), &[0.0; 5], &y).unwrap();
        prop_assert!(finite_diff_check(&net, &obj, &RegConfig::default(), 1e-5).unwrap() <= 1e-4);
    }
}
