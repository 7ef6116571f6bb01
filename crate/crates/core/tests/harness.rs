use pairnet::data::{gen_polynomial_synth, write_csv, Dataset, PolySynthConfig};
use pairnet::harness::{
    compare_methods, evaluate, run_experiment, train, DataSpec, ExperimentSpec, ExperimentSummary, Grid, MethodSpec, PsiConfig,
    TrainConfig,
};
use pairnet::losses::LossConfig;
use pairnet::models::{build_model, Architecture, TreatmentMode};
use pairnet::nn::Network;
use pairnet::seed;

fn data(n: usize, s: u64) -> Dataset {
    gen_polynomial_synth(n, &PolySynthConfig::default(), &mut seed::rng(s)).unwrap()
}

fn quick(loss: LossConfig) -> TrainConfig {
    TrainConfig {
        loss,
        lr: 1e-3,
        batch_size: 32,
        max_epochs: 12,
        patience: 3,
        arch: Architecture::Shallow,
        psi: PsiConfig::Identity,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn defaults_follow_the_training_recipe() {
    let c = TrainConfig::default();
    assert_eq!((c.lr, c.batch_size, c.max_epochs, c.patience, c.val_fraction), (1e-4, 100, 1000, 10, 0.3));
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let d = data(60, 1);
    let cfg = TrainConfig { max_epochs: 0, ..quick(LossConfig::Factual) };
    let (m, rec) = train(&d, &cfg).unwrap();
    let fresh = build_model(Architecture::Shallow, TreatmentMode::Binary, 10, seed::derive(cfg.seed, &[2])).unwrap();
    assert_eq!(m.params(), fresh.params());
    assert_eq!(rec.stopping_epoch, 0);
    assert!(rec.train_losses.is_empty());
}

#[test]
fn identical_configs_give_identical_records() {
    let d = data(80, 2);
    for loss in [LossConfig::Factual, LossConfig::Pair, LossConfig::Matching] {
        let cfg = quick(loss);
        let (m1, r1) = train(&d, &cfg).unwrap();
        let (m2, r2) = train(&d, &cfg).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1.params(), m2.params());
    }
}

#[test]
fn best_snapshot_is_restored() {
    let d = data(100, 3);
    for loss in [LossConfig::Factual, LossConfig::Pair, LossConfig::PairAlpha { alpha: 1.0 }] {
        let cfg = TrainConfig { lr: 5e-2, max_epochs: 15, patience: 15, ..quick(loss) };
        let (_, rec) = train(&d, &cfg).unwrap();
        let min = rec.val_losses.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(rec.final_val, Some(min));
        assert_eq!(rec.val_losses[rec.best_epoch - 1], min);
        assert!(rec.stopping_epoch <= cfg.max_epochs);
    }
}

#[test]
fn patience_stops_training_early() {
    let d = data(100, 4);
    let cfg = TrainConfig { lr: 5e-2, max_epochs: 300, patience: 2, ..quick(LossConfig::Factual) };
    let (_, rec) = train(&d, &cfg).unwrap();
    assert!(rec.stopping_epoch < 200);
    assert_eq!(rec.stopping_epoch, rec.best_epoch + 2);
}

#[test]
fn training_pairs_are_redrawn_each_epoch() {
    let d = data(80, 5);
    let (_, rec) = train(&d, &quick(LossConfig::Pair)).unwrap();
    assert_eq!(rec.pair_hashes.len(), rec.stopping_epoch);
    assert!(rec.pair_hashes.windows(2).any(|w| w[0] != w[1]));
    assert!(rec.val_pairs > 0);
}

#[test]
fn factual_psi_runs_a_factual_stage_first() {
    let d = data(80, 6);
    let cfg = TrainConfig { psi: PsiConfig::FactualPhi, ..quick(LossConfig::Pair) };
    let (_, rec) = train(&d, &cfg).unwrap();
    let stage = rec.factual_stage.expect("factual stage recorded");
    assert!(stage.stopping_epoch > 0);
    assert!(stage.pair_hashes.is_empty());
}

#[test]
fn training_reduces_factual_error() {
    let d = data(300, 7);
    let cfg = TrainConfig { max_epochs: 60, patience: 60, ..quick(LossConfig::Factual) };
    let (_, rec) = train(&d, &cfg).unwrap();
    assert!(rec.final_val.unwrap() < 0.7 * rec.val_losses[0]);
}

#[test]
fn tracked_diagnostics_have_one_entry_per_epoch() {
    let d = data(80, 8);
    let cfg = TrainConfig { track_diagnostics: true, ..quick(LossConfig::Pair) };
    let (m, rec) = train(&d, &cfg).unwrap();
    assert_eq!(rec.epoch_val_factual.len(), rec.stopping_epoch);
    assert_eq!(rec.epoch_val_pair.len(), rec.stopping_epoch);
    assert_eq!(rec.epoch_val_ite_risk.len(), rec.stopping_epoch);
    assert!(evaluate(&m, &d, 0).unwrap().is_finite());
}

#[test]
fn invalid_configs_fail_before_training() {
    let d = data(40, 9);
    assert!(train(&d, &TrainConfig { val_fraction: 1.0, ..quick(LossConfig::Factual) }).is_err());
    assert!(train(&d, &TrainConfig { batch_size: 0, ..quick(LossConfig::Factual) }).is_err());
    assert!(train(&d, &quick(LossConfig::PairAlpha { alpha: 3.0 })).is_err());
}

#[test]
fn compare_methods_examples() {
    let a: Vec<(u64, f64)> = (0..10).map(|s| (s, s as f64)).collect();
    assert_eq!(compare_methods(&a, &a).unwrap().p, 0.5);
    let b: Vec<(u64, f64)> = (0..10).map(|s| (s, s as f64 + 1.0 + 1e-3 * ((s * 7) % 5) as f64)).collect();
    let r = compare_methods(&a, &b).unwrap();
    assert!(r.p < 0.01);
    assert!((r.mean_other - r.mean_reference - 1.0).abs() < 0.01);
    assert!(compare_methods(&[(1, 1.0)], &[(1, 2.0)]).is_err());
    assert!(compare_methods(&a, &b[..9]).is_err());
    let shifted: Vec<(u64, f64)> = b.iter().map(|&(s, v)| (s + 100, v)).collect();
    assert!(compare_methods(&a, &shifted).is_err());
}

fn small_spec() -> ExperimentSpec {
    ExperimentSpec {
        name: "small".into(),
        data: DataSpec::Polynomial { n_train: 80, n_test: 50, config: PolySynthConfig::default() },
        methods: vec![
            MethodSpec { name: "pairnet".into(), loss: LossConfig::Pair, psi: None, arch: None },
            MethodSpec { name: "factual".into(), loss: LossConfig::Factual, psi: None, arch: None },
        ],
        seeds: vec![0, 1, 2],
        base: TrainConfig { max_epochs: 4, ..quick(LossConfig::Pair) },
        grid: Grid { temperature: vec![0.0, 5.0], ..Default::default() },
        diagnostics: true,
        reference: None,
    }
}

#[test]
fn experiment_writes_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let summary = run_experiment(&spec, Some(dir.path())).unwrap();
    assert_eq!(summary.cells.len(), 3 * 2 + 3);
    assert!(summary.cells.iter().all(|c| c.error.is_none()));
    assert_eq!(summary.comparisons.len(), 2);
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10);
    let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let back: ExperimentSummary = serde_json::from_str(&text).unwrap();
    let rerun = run_experiment(&back.spec, None).unwrap();
    for (a, b) in summary.cells.iter().zip(&rerun.cells) {
        let (ra, rb) = (a.report.as_ref().unwrap(), b.report.as_ref().unwrap());
        assert_eq!(ra.pehe_in.to_bits(), rb.pehe_in.to_bits());
        assert_eq!(ra.pehe_out.to_bits(), rb.pehe_out.to_bits());
    }
    let pair_cell = summary.cells.iter().find(|c| c.method == "pairnet").unwrap();
    let diag = &pair_cell.report.as_ref().unwrap().diagnostics;
    for key in ["mmd_p0_p1", "mmd_p_q", "delta_hat"] {
        assert!(diag.contains_key(key), "missing {key}");
    }
}

#[test]
fn experiment_output_does_not_depend_on_thread_count() {
    let spec = ExperimentSpec { seeds: vec![0, 1], ..small_spec() };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let a = one.install(|| run_experiment(&spec, None).unwrap());
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let b = four.install(|| run_experiment(&spec, None).unwrap());
    assert_eq!(a.cells, b.cells);
}

#[test]
fn failing_cells_are_recorded_and_others_proceed() {
    let mut spec = small_spec();
    spec.methods.push(MethodSpec {
        name: "broken".into(),
        loss: LossConfig::Pair,
        psi: Some(PsiConfig::Columns { columns: vec![99] }),
        arch: None,
    });
    let summary = run_experiment(&spec, None).unwrap();
    let broken: Vec<_> = summary.cells.iter().filter(|c| c.method == "broken").collect();
    assert!(!broken.is_empty() && broken.iter().all(|c| c.error.is_some() && c.report.is_none()));
    assert!(summary.cells.iter().filter(|c| c.method != "broken").all(|c| c.report.is_some()));
}

#[test]
fn empty_method_list_is_rejected() {
    let spec = ExperimentSpec { methods: vec![], ..small_spec() };
    assert!(run_experiment(&spec, None).is_err());
}

#[test]
fn csv_experiments_use_the_given_files() {
    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.csv");
    let test_path = dir.path().join("test.csv");
    write_csv(&data(80, 10), &train_path).unwrap();
    write_csv(&data(30, 10), &test_path).unwrap();
    let spec = ExperimentSpec {
        data: DataSpec::Csv { train: train_path, test: Some(test_path), mode: TreatmentMode::Binary },
        seeds: vec![0, 1],
        grid: Grid::default(),
        ..small_spec()
    };
    let summary = run_experiment(&spec, None).unwrap();
    assert!(summary.cells.iter().all(|c| c.report.as_ref().is_some_and(|r| r.pehe_out.is_finite())));
}
