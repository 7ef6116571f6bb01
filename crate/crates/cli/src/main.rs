use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use pairnet::data::{
    gen_continuous_response, gen_gaussian_confounded, load_csv, write_csv, ContinuousFamily, CsvSchema, Dataset, GpToyConfig,
    Oracle, PolySynthConfig,
};
use pairnet::harness::{
    evaluate, run_experiment, toy_corr, toy_mmd, train, ExperimentSpec, PsiConfig, ToyMmdConfig, TrainConfig,
};
use pairnet::losses::LossConfig;
use pairnet::models::{Architecture, Checkpoint, TreatmentMode, TwoHeadedNetwork};
use pairnet::pairing::{create_pair_ds, neighbor_diagnostics, EmbeddingProvider, PairingConfig};
use pairnet::seed;
use pairnet::stats::paired_t_test_one_sided;
use pairnet::theory::{
    confounded_scene, consistency_sweep, random_scene, verify_ite_bound, verify_lemma_identity, Ipm, NeighborKernel,
    SweepConfig, SweepGenerator,
};
use serde_json::{json, Value};

const OUT_DIR_VAR: &str = "PAIRNET_OUT_DIR";

#[derive(Parser)]
#[command(name = "pairnet", version, about = "Pair-based treatment effect estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset CSV with its ground-truth sidecar.
    Gen(GenArgs),
    /// Build a pair dataset and write it as CSV.
    Pairs(PairsArgs),
    /// Train one model and write its checkpoint and run record.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset with ground truth.
    Eval(EvalArgs),
    /// Run an experiment descriptor.
    Experiment { spec: PathBuf },
    /// Run the finite-scene identity, bound and consistency checks.
    Verify(VerifyArgs),
    /// Loss/risk correlations on the one-dimensional Gaussian-process toy.
    ToyCorr(ToyCorrArgs),
    /// Covariate shift between groups versus between anchors and their neighbors.
    ToyMmd(ToyMmdArgs),
    /// One-sided paired t-test that the first file's values are smaller.
    Ttest(TtestArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Polynomial,
    Confounded,
    Continuous,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "polynomial")]
    kind: GenKind,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Also write a test set of this size drawn from the same outcome functions.
    #[arg(long)]
    test_n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "data")]
    name: String,
    #[arg(long, default_value_t = 1.0)]
    propensity_strength: f64,
    #[arg(long, default_value_t = 0.1)]
    noise_sd: f64,
    /// Mean of the treated covariates for the confounded generator.
    #[arg(long, default_value_t = 1.0)]
    shift: f64,
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    /// Covariate CSV (header row, numeric columns) for the continuous generator.
    #[arg(long)]
    covariates: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tcga0")]
    family: Family,
    #[arg(long, default_value_t = 2.0)]
    dosage_bias: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_scale: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    IhdpCont,
    News,
    Tcga0,
    Tcga1,
    Tcga2,
}

impl From<Family> for ContinuousFamily {
    fn from(f: Family) -> Self {
        match f {
            Family::IhdpCont => ContinuousFamily::IhdpCont,
            Family::News => ContinuousFamily::News,
            Family::Tcga0 => ContinuousFamily::Tcga0,
            Family::Tcga1 => ContinuousFamily::Tcga1,
            Family::Tcga2 => ContinuousFamily::Tcga2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Binary,
    Continuous,
}

impl From<Mode> for TreatmentMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Binary => TreatmentMode::Binary,
            Mode::Continuous => TreatmentMode::Continuous5Bin,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "binary")]
    mode: Mode,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        load_dataset(&self.data, self.mode)
    }
}

#[derive(Args)]
struct PairingArgs {
    /// Softmax temperature over negative embedding distances.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    delta_pair: Option<f64>,
    #[arg(long)]
    num_neighbors: Option<usize>,
}

impl PairingArgs {
    fn apply(&self, c: &mut PairingConfig) {
        if let Some(v) = self.lambda {
            c.temperature = v;
        }
        if let Some(v) = self.delta_pair {
            c.delta_pair = v;
        }
        if let Some(v) = self.num_neighbors {
            c.num_neighbors = v;
        }
    }
}

#[derive(Args)]
struct PairsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    pairing: PairingArgs,
    /// identity, columns:0,1,2, projection:<dim>, or factual-phi (needs --checkpoint).
    #[arg(long, default_value = "identity")]
    psi: String,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "pairs")]
    name: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Loss {
    Factual,
    Pair,
    Matching,
    PairBinary,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Deep,
    Shallow,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Optional held-out set with ground truth for out-of-sample error.
    #[arg(long)]
    test: Option<PathBuf>,
    /// JSON training configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    loss: Option<Loss>,
    /// Residual weight of the pair loss in [0, 2].
    #[arg(long)]
    alpha: Option<f64>,
    #[command(flatten)]
    pairing: PairingArgs,
    /// identity, columns:0,1,2, projection:<dim> or factual-phi.
    #[arg(long)]
    psi: Option<String>,
    #[arg(long, value_enum)]
    arch: Option<Arch>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "model")]
    name: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 50)]
    scenes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    sweep_seeds: u64,
}

#[derive(Args)]
struct ToyCorrArgs {
    /// JSON toy configuration; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    pairing: PairingArgs,
}

#[derive(Args)]
struct ToyMmdArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    pairing: PairingArgs,
}

#[derive(Args)]
struct TtestArgs {
    a: PathBuf,
    b: PathBuf,
    /// Column holding the values; rows are matched on a `seed` column when both files have one.
    #[arg(long, default_value = "pehe_out")]
    column: String,
}

fn out_dir() -> Result<PathBuf> {
    let dir = std::env::var_os(OUT_DIR_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_dataset(path: &Path, mode: Mode) -> Result<Dataset> {
    load_csv(path, &CsvSchema::new(mode.into())).with_context(|| format!("loading {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn parse_psi(s: &str) -> Result<PsiConfig> {
    let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
    Ok(match kind {
        "identity" => PsiConfig::Identity,
        "factual-phi" | "factual_phi" => PsiConfig::FactualPhi,
        "projection" => PsiConfig::RandomProjection { dim: arg.parse().context("projection needs a dimension")? },
        "columns" => PsiConfig::Columns {
            columns: arg.split(',').map(|c| c.trim().parse()).collect::<std::result::Result<_, _>>().context("bad column list")?,
        },
        _ => bail!("unknown psi `{s}`"),
    })
}

fn read_covariates(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("line {}: non-numeric covariate", i + 2))?;
        if rows.first().is_some_and(|r| r.len() != row.len()) {
            bail!("line {}: expected {} columns", i + 2, rows[0].len());
        }
        rows.push(row);
    }
    let d = rows.first().map_or(0, Vec::len);
    Ok(Array2::from_shape_vec((rows.len(), d), rows.concat())?)
}

fn gen(args: GenArgs) -> Result<Value> {
    let dir = out_dir()?;
    let mut rng = seed::rng(args.seed);
    let mut written = Vec::new();
    let mut save = |d: &Dataset, suffix: &str| -> Result<()> {
        let path = dir.join(format!("{}{suffix}.csv", args.name));
        write_csv(d, &path)?;
        written.push(path.display().to_string());
        Ok(())
    };
    let mut extra = json!({});
    match args.kind {
        GenKind::Polynomial => {
            let config =
                PolySynthConfig { propensity_strength: args.propensity_strength, noise_sd: args.noise_sd, ..Default::default() };
            let oracle = Arc::new(Oracle::Polynomial(config.draw_oracle(&mut rng)?));
            save(&config.sample(&oracle, args.n, &mut rng)?, "")?;
            if let Some(m) = args.test_n {
                save(&config.sample(&oracle, m, &mut rng)?, "_test")?;
            }
        }
        GenKind::Confounded => {
            let n0 = args.n / 2;
            save(&gen_gaussian_confounded(args.shift, args.separation, n0, args.n - n0, &mut rng)?, "")?;
        }
        GenKind::Continuous => {
            let path = args.covariates.as_ref().context("--covariates is required for continuous data")?;
            let x = read_covariates(path)?;
            let (d, redraws) = gen_continuous_response(&x, args.family.into(), args.dosage_bias, args.noise_scale, &mut rng)?;
            save(&d, "")?;
            extra = json!({ "redraws": redraws });
        }
    }
    Ok(json!({ "files": written, "extra": extra }))
}

fn provider(psi: &str, checkpoint: Option<&Path>, d: &Dataset, seed_value: u64) -> Result<EmbeddingProvider> {
    Ok(match parse_psi(psi)? {
        PsiConfig::Identity => EmbeddingProvider::identity(d.dim()),
        PsiConfig::RandomProjection { dim } => EmbeddingProvider::random_projection(d.dim(), dim, seed_value)?,
        PsiConfig::Columns { columns } => EmbeddingProvider::columns(d.dim(), columns)?,
        PsiConfig::FactualPhi => {
            let path = checkpoint.context("factual-phi needs --checkpoint")?;
            let net = TwoHeadedNetwork::from_checkpoint(&read_json::<Checkpoint>(path)?)?;
            EmbeddingProvider::factual_phi(net.frozen_phi())
        }
    })
}

fn pairs(args: PairsArgs) -> Result<Value> {
    let d = args.data.load()?;
    let mut config = PairingConfig::default();
    args.pairing.apply(&mut config);
    let provider = provider(&args.psi, args.checkpoint.as_deref(), &d, seed::derive_str(args.seed, "projection", &[]))?;
    let ds = create_pair_ds(&d, &d, &config, &provider, args.seed)?;
    let path = out_dir()?.join(format!("{}.csv", args.name));
    ds.write_csv(&path)?;
    let diag = neighbor_diagnostics(&ds)?;
    Ok(json!({
        "file": path.display().to_string(),
        "pairs": ds.len(),
        "before_trim": ds.pre_trim,
        "skipped_anchors": ds.skipped.len(),
        "hash": ds.content_hash(),
        "diagnostics": diag,
    }))
}

fn train_cmd(args: TrainArgs) -> Result<Value> {
    let d = args.data.load()?;
    let mut config: TrainConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(loss) = args.loss {
        config.loss = match loss {
            Loss::Factual => LossConfig::Factual,
            Loss::Pair => LossConfig::Pair,
            Loss::Matching => LossConfig::Matching,
            Loss::PairBinary => LossConfig::PairBinary,
        };
    }
    if let Some(alpha) = args.alpha {
        if !matches!(config.loss, LossConfig::Pair | LossConfig::PairAlpha { .. }) {
            bail!("--alpha applies only to the pair loss");
        }
        config.loss = LossConfig::PairAlpha { alpha };
    }
    args.pairing.apply(&mut config.pairing);
    if let Some(psi) = &args.psi {
        config.psi = parse_psi(psi)?;
    }
    if let Some(arch) = args.arch {
        config.arch = match arch {
            Arch::Deep => Architecture::Deep,
            Arch::Shallow => Architecture::Shallow,
        };
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let (net, record) = train(&d, &config)?;
    let dir = out_dir()?;
    let model_path = dir.join(format!("{}.model.json", args.name));
    let record_path = dir.join(format!("{}.run.json", args.name));
    write_json(&model_path, &net.to_checkpoint())?;
    write_json(&record_path, &record)?;
    let mut scores = BTreeMap::new();
    if d.truth.is_some() {
        scores.insert("pehe_in", evaluate(&net, &d, config.seed)?);
    }
    if let Some(test) = &args.test {
        scores.insert("pehe_out", evaluate(&net, &load_dataset(test, args.data.mode)?, config.seed)?);
    }
    Ok(json!({
        "model": model_path.display().to_string(),
        "record": record_path.display().to_string(),
        "config_hash": record.config_hash,
        "stopping_epoch": record.stopping_epoch,
        "best_epoch": record.best_epoch,
        "scores": scores,
    }))
}

fn eval_cmd(args: EvalArgs) -> Result<Value> {
    let net = TwoHeadedNetwork::from_checkpoint(&read_json::<Checkpoint>(&args.model)?)?;
    let d = args.data.load()?;
    Ok(json!({ "pehe": evaluate(&net, &d, args.seed)?, "rows": d.len() }))
}

fn experiment(path: &Path) -> Result<Value> {
    let spec: ExperimentSpec = read_json(path)?;
    let dir = out_dir()?.join(&spec.name);
    let summary = run_experiment(&spec, Some(&dir))?;
    let failed = summary.cells.iter().filter(|c| c.error.is_some()).count();
    let comparisons: Vec<Value> = summary
        .comparisons
        .iter()
        .map(|c| json!({ "reference": c.reference, "other": c.other, "grid_index": c.grid_index, "t": c.report.t, "p": c.report.p }))
        .collect();
    Ok(json!({ "dir": dir.display().to_string(), "cells": summary.cells.len(), "failed_cells": failed, "comparisons": comparisons }))
}

fn verify(args: VerifyArgs) -> Result<Value> {
    let mut rng = seed::rng(args.seed);
    let mut max_gap = 0.0f64;
    for _ in 0..args.scenes {
        let scene = random_scene(12, 3, NeighborKernel::MassWeighted { lambda: 2.0 }, &mut rng);
        max_gap = max_gap.max(verify_lemma_identity(&scene)?.gap);
    }
    let mut bound_failures = 0;
    let mut min_margin = f64::INFINITY;
    for _ in 0..args.scenes {
        let scene = random_scene(15, 1, NeighborKernel::MassWeighted { lambda: 3.0 }, &mut rng);
        let b = verify_ite_bound(&scene, Ipm::Wasserstein1)?;
        bound_failures += usize::from(!b.holds);
        min_margin = min_margin.min(b.margin);
    }
    let mut ipm_smaller = 0;
    let confounded = args.scenes.min(10);
    for _ in 0..confounded {
        let scene = confounded_scene(15, 1.5, NeighborKernel::MassWeighted { lambda: 5.0 }, &mut rng);
        let b = verify_ite_bound(&scene, Ipm::Wasserstein1)?;
        ipm_smaller += usize::from(b.pair_ipm < b.factual_ipm);
    }
    let mut shrinking = 0;
    for s in 0..args.sweep_seeds {
        let rows = consistency_sweep(&SweepConfig::default(), seed::derive(args.seed, &[s]))?;
        shrinking += usize::from(rows[rows.len() - 1].delta_hat < 0.5 * rows[0].delta_hat);
    }
    let control = SweepConfig { generator: SweepGenerator::DisjointSupports { gap: 2.0 }, ..Default::default() };
    let rows = consistency_sweep(&control, args.seed)?;
    let control_ratio = rows[rows.len() - 1].delta_hat / rows[0].delta_hat;
    let ok = max_gap <= 1e-10 && bound_failures == 0 && ipm_smaller == confounded && control_ratio > 0.9;
    let report = json!({
        "lemma_max_gap": max_gap,
        "bound_failures": bound_failures,
        "bound_min_margin": min_margin,
        "pair_ipm_smaller": ipm_smaller,
        "confounded_scenes": confounded,
        "sweep_shrinking_seeds": shrinking,
        "sweep_seeds": args.sweep_seeds,
        "control_ratio": control_ratio,
    });
    if !ok {
        bail!("verification failed: {report}");
    }
    Ok(report)
}

fn toy_corr_cmd(args: ToyCorrArgs) -> Result<Value> {
    let mut config: GpToyConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => GpToyConfig::default(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let mut pairing = PairingConfig::default();
    args.pairing.apply(&mut pairing);
    Ok(serde_json::to_value(toy_corr(&config, &pairing)?)?)
}

fn toy_mmd_cmd(args: ToyMmdArgs) -> Result<Value> {
    let mut config = ToyMmdConfig::default();
    if let Some(n) = args.n {
        config.n_per_group = n;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    args.pairing.apply(&mut config.pairing);
    Ok(serde_json::to_value(toy_mmd(&config)?)?)
}

fn read_column(path: &Path, column: &str) -> Result<Vec<(Option<String>, f64)>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let value_idx = headers.iter().position(|h| h == column).with_context(|| format!("{} has no `{column}` column", path.display()))?;
    let seed_idx = headers.iter().position(|h| h == "seed");
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let v: f64 = rec[value_idx].trim().parse().with_context(|| format!("{} line {}: bad value", path.display(), i + 2))?;
        out.push((seed_idx.map(|s| rec[s].to_string()), v));
    }
    Ok(out)
}

fn ttest(args: TtestArgs) -> Result<Value> {
    let a = read_column(&args.a, &args.column)?;
    let b = read_column(&args.b, &args.column)?;
    let (ra, rb): (Vec<f64>, Vec<f64>) = if a.iter().chain(&b).all(|r| r.0.is_some()) {
        let bm: BTreeMap<&str, f64> = b.iter().map(|(s, v)| (s.as_deref().unwrap(), *v)).collect();
        if bm.len() != b.len() || a.len() != b.len() {
            bail!("seed columns must match one to one");
        }
        a.iter()
            .map(|(s, v)| bm.get(s.as_deref().unwrap()).map(|w| (*v, *w)).with_context(|| format!("seed {} missing", s.as_ref().unwrap())))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip()
    } else {
        if a.len() != b.len() {
            bail!("files have {} and {} rows", a.len(), b.len());
        }
        (a.iter().map(|r| r.1).collect(), b.iter().map(|r| r.1).collect())
    };
    Ok(serde_json::to_value(paired_t_test_one_sided(&ra, &rb)?)?)
}

fn run(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Pairs(a) => pairs(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Experiment { spec } => experiment(&spec),
        Command::Verify(a) => verify(a),
        Command::ToyCorr(a) => toy_corr_cmd(a),
        Command::ToyMmd(a) => toy_mmd_cmd(a),
        Command::Ttest(a) => ttest(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = e.downcast_ref::<pairnet::Error>().map_or("error", error_kind);
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("{}", json!({ "error": kind, "message": chain.join(": ") }));
            ExitCode::FAILURE
        }
    }
}

fn error_kind(e: &pairnet::Error) -> &'static str {
    use pairnet::Error::*;
    match e {
        ShapeMismatch { .. } => "shape_mismatch",
        NonFinite { .. } => "non_finite",
        TreatmentDomain { .. } => "treatment_domain",
        InvalidArgument(_) => "invalid_argument",
        NoEligibleNeighbor { .. } => "no_eligible_neighbor",
        EmptyPairDataset => "empty_pair_dataset",
        MissingGroundTruth => "missing_ground_truth",
        Factorization { .. } => "factorization",
        Parse { .. } => "parse",
        Unsupported(_) => "unsupported",
        Io(_) => "io",
        Csv(_) => "csv",
        Json(_) => "json",
    }
}
