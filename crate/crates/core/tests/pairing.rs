use ndarray::Array2;
use pairnet::data::Dataset;
use pairnet::models::{build_model, Architecture, TreatmentMode};
use pairnet::pairing::{
    create_pair_ds, neighbor_diagnostics, neighbor_distribution, softmax_neg, EmbeddingProvider, Eligibility, PairDataset,
    PairRecord, PairSampler, PairingConfig, Provenance,
};
use pairnet::{seed, Error};
use proptest::prelude::*;
use rand::Rng;

fn binary_data(n: usize, dim: usize, s: u64) -> Dataset {
    let mut rng = seed::rng(s);
    let x = Array2::from_shape_fn((n, dim), |_| rng.random_range(-1.0..1.0));
    let t = (0..n).map(|i| (i % 2) as f64).collect();
    let y = (0..n).map(|i| i as f64).collect();
    Dataset::new(x, t, y, TreatmentMode::Binary).unwrap()
}

#[test]
fn softmax_example() {
    let p = softmax_neg(&[0.0, 1.0], &[true, true], 1.0).unwrap();
    assert!((p[0] - 0.7311).abs() < 1e-4 && (p[1] - 0.2689).abs() < 1e-4);
    let p = softmax_neg(&[0.0, 1.0, 5.0], &[false, true, true], 1.0).unwrap();
    assert_eq!(p[0], 0.0);
    assert!(softmax_neg(&[1.0], &[false], 1.0).is_none());
}

#[test]
fn softmax_survives_huge_temperatures() {
    let p = softmax_neg(&[3.0, 1.0, 2.0], &[true; 3], 1e9).unwrap();
    assert_eq!(p, vec![0.0, 1.0, 0.0]);
}

#[test]
fn hundred_anchors_three_neighbors_trim_ten_percent() {
    let d = binary_data(100, 2, 1);
    let cfg = PairingConfig::default();
    let pairs = create_pair_ds(&d, &d, &cfg, &EmbeddingProvider::identity(2), 7).unwrap();
    assert_eq!(pairs.pre_trim, 300);
    assert_eq!(pairs.len(), 270);
    let kept_max = pairs.records.iter().map(|r| r.distance).fold(0.0, f64::max);
    assert!(pairs.records.len() == 270 && kept_max.is_finite());
}

#[test]
fn trimming_drops_the_farthest_pairs() {
    let d = binary_data(60, 1, 2);
    let cfg = PairingConfig { delta_pair: 0.0, ..Default::default() };
    let p = EmbeddingProvider::identity(1);
    let all = create_pair_ds(&d, &d, &cfg, &p, 3).unwrap();
    let trimmed = create_pair_ds(&d, &d, &PairingConfig { delta_pair: 0.5, ..cfg }, &p, 3).unwrap();
    let mut dist: Vec<f64> = all.records.iter().map(|r| r.distance).collect();
    dist.sort_by(f64::total_cmp);
    let cut = dist[trimmed.len() - 1];
    assert!(trimmed.records.iter().all(|r| r.distance <= cut));
    assert_eq!(trimmed.len(), 90);
}

#[test]
fn delta_hat_example() {
    let rec = |anchor, distance| PairRecord {
        anchor,
        neighbor: 0,
        x: vec![0.0],
        t: 0.0,
        y: 0.0,
        x_prime: vec![0.0],
        t_prime: 1.0,
        y_prime: 0.0,
        distance,
        target: 1.0,
    };
    let pairs = PairDataset {
        records: vec![rec(0, 1.0), rec(0, 3.0), rec(1, 2.0)],
        mode: TreatmentMode::Binary,
        provenance: Provenance {
            anchor_id: String::new(),
            candidate_id: String::new(),
            config: PairingConfig::default(),
            seed: 0,
        },
        skipped: vec![],
        pre_trim: 3,
    };
    let d = neighbor_diagnostics(&pairs).unwrap();
    assert_eq!(d.delta_hat, 2.0);
    assert_eq!(d.counts, vec![3, 0]);
    assert!((d.mean_distance - 2.0).abs() < 1e-15);
}

#[test]
fn single_group_data_yields_no_pairs() {
    let x = Array2::zeros((5, 1));
    let d = Dataset::new(x, vec![0.0; 5], vec![0.0; 5], TreatmentMode::Binary).unwrap();
    let r = create_pair_ds(&d, &d, &PairingConfig::default(), &EmbeddingProvider::identity(1), 0);
    assert!(matches!(r, Err(Error::EmptyPairDataset)));
}

#[test]
fn anchors_without_candidates_are_skipped() {
    let anchors = binary_data(6, 1, 4);
    let x = Array2::zeros((3, 1));
    let candidates = Dataset::new(x, vec![1.0; 3], vec![0.0; 3], TreatmentMode::Binary).unwrap();
    let pairs = create_pair_ds(&anchors, &candidates, &PairingConfig::default(), &EmbeddingProvider::identity(1), 0).unwrap();
    assert_eq!(pairs.skipped, vec![1, 3, 5]);
    assert!(pairs.records.iter().all(|r| r.t == 0.0));
}

#[test]
fn few_candidates_fall_back_to_replacement() {
    let anchors = binary_data(4, 1, 5);
    let x = Array2::zeros((1, 1));
    let candidates = Dataset::new(x, vec![1.0], vec![0.0], TreatmentMode::Binary).unwrap();
    let cfg = PairingConfig { delta_pair: 0.0, ..Default::default() };
    let pairs = create_pair_ds(&anchors, &candidates, &cfg, &EmbeddingProvider::identity(1), 0).unwrap();
    assert_eq!(pairs.len(), 2 * 3);
}

#[test]
fn continuous_neighbors_fall_in_the_window() {
    let mut rng = seed::rng(8);
    let n = 400;
    let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>());
    let t: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let d = Dataset::new(x, t, vec![0.0; n], TreatmentMode::Continuous5Bin).unwrap();
    let cfg = PairingConfig::default();
    let pairs = create_pair_ds(&d, &d, &cfg, &EmbeddingProvider::identity(2), 1).unwrap();
    assert!(!pairs.is_empty());
    for r in &pairs.records {
        assert!((r.t_prime - r.target).abs() < cfg.continuous_halfwidth);
        assert_ne!(r.anchor, r.neighbor);
    }
}

#[test]
fn neighbor_distribution_is_a_distribution_over_eligible_rows() {
    let d = binary_data(20, 2, 9);
    let p = neighbor_distribution(&[0.0, 0.0], Eligibility::OppositeOf(0.0), Some(1), &d, &EmbeddingProvider::identity(2), 2.0)
        .unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for (j, v) in p.iter().enumerate() {
        if j % 2 == 0 || j == 1 {
            assert_eq!(*v, 0.0);
        }
    }
}

#[test]
fn providers_embed_to_declared_dimensions() {
    let d = binary_data(5, 4, 10);
    let rp = EmbeddingProvider::random_projection(4, 3, 0).unwrap();
    assert_eq!(rp.embed_batch(d.x.view()).unwrap().dim(), (5, 3));
    let cols = EmbeddingProvider::columns(4, vec![0, 2]).unwrap();
    let e = cols.embed_batch(d.x.view()).unwrap();
    assert_eq!(e[[1, 1]], d.x[[1, 2]]);
    assert!(EmbeddingProvider::columns(4, vec![4]).is_err());
    let model = build_model(Architecture::Shallow, TreatmentMode::Binary, 4, 0).unwrap();
    let phi = EmbeddingProvider::factual_phi(model.frozen_phi());
    assert_eq!(phi.output_dim(), 200);
    assert!(phi.embed(&[0.0, 0.0]).is_err());
}

#[test]
fn sampler_redraws_differ_across_seeds() {
    let d = binary_data(80, 2, 11);
    let s = PairSampler::new(&d, &d, PairingConfig::default(), &EmbeddingProvider::identity(2), Some((0..80).collect())).unwrap();
    let a = s.sample(1).unwrap();
    let b = s.sample(1).unwrap();
    let c = s.sample(2).unwrap();
    assert_eq!(a.content_hash(), b.content_hash());
    assert_ne!(a.content_hash(), c.content_hash());
}

#[test]
fn pair_csv_has_one_line_per_record() {
    let d = binary_data(10, 1, 12);
    let pairs = create_pair_ds(&d, &d, &PairingConfig::default(), &EmbeddingProvider::identity(1), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.csv");
    pairs.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().count(), pairs.len() + 1);
}

#[test]
fn invalid_config_is_rejected() {
    let d = binary_data(10, 1, 13);
    let p = EmbeddingProvider::identity(1);
    for cfg in [
        PairingConfig { delta_pair: 1.0, ..Default::default() },
        PairingConfig { num_neighbors: 0, ..Default::default() },
        PairingConfig { temperature: -1.0, ..Default::default() },
    ] {
        assert!(create_pair_ds(&d, &d, &cfg, &p, 0).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pairs_cross_treatments_and_never_self_pair(s in 0u64..10_000, n in 4usize..40, lambda in 0.0..20.0f64) {
        let d = binary_data(n, 2, s);
        let cfg = PairingConfig { temperature: lambda, ..Default::default() };
        let pairs = create_pair_ds(&d, &d, &cfg, &EmbeddingProvider::identity(2), s).unwrap();
        for r in &pairs.records {
            prop_assert_ne!(r.t, r.t_prime);
            prop_assert_ne!(r.anchor, r.neighbor);
            prop_assert_eq!(r.y_prime, d.y[r.neighbor]);
        }
        let again = create_pair_ds(&d, &d, &cfg, &EmbeddingProvider::identity(2), s).unwrap();
        prop_assert_eq!(pairs.records, again.records);
    }
}
