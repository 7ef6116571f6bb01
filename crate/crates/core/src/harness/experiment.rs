use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, CsvSchema};
use crate::data::PolySynthConfig;
use crate::data::{Dataset, Oracle};
use crate::error::{invalid, Result};
use crate::losses::LossConfig;
use crate::metrics::{mmd_rbf, pearson_corr, Bandwidth, EvalReport};
use crate::models::{Architecture, TreatmentMode, TwoHeadedNetwork};
use crate::pairing::{create_pair_ds, neighbor_diagnostics, EmbeddingProvider};
use crate::seed;
use crate::stats::{paired_t_test_one_sided, TTestReport};

use super::toys::{median_bandwidth, subsample_rows};
use super::train::{evaluate, pair_sides, train_with_provider, PsiConfig, RunRecord, TrainConfig};

const DATA: u64 = 11;
const DIAG: u64 = 12;
const EVAL_IN: u64 = 13;
const EVAL_OUT: u64 = 14;
const DIAG_POINTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    /// A fresh polynomial oracle and sample per seed.
    Polynomial {
        n_train: usize,
        n_test: usize,
        #[serde(default)]
        config: PolySynthConfig,
    },
    /// Fixed files shared by all seeds; without a test file only in-sample PEHE is reported.
    Csv { train: PathBuf, test: Option<PathBuf>, mode: TreatmentMode },
}

impl DataSpec {
    fn load(&self, seed_value: u64) -> Result<(Dataset, Option<Dataset>)> {
        match self {
            DataSpec::Polynomial { n_train, n_test, config } => {
                let mut rng = seed::rng_at(seed_value, &[DATA]);
                let oracle = Arc::new(Oracle::Polynomial(config.draw_oracle(&mut rng)?));
                let train = config.sample(&oracle, *n_train, &mut rng)?.with_id(format!("polynomial-{seed_value}-train"));
                let test = config.sample(&oracle, *n_test, &mut rng)?.with_id(format!("polynomial-{seed_value}-test"));
                Ok((train, Some(test)))
            }
            DataSpec::Csv { train, test, mode } => {
                let schema = CsvSchema::new(*mode);
                let t = test.as_ref().map(|p| load_csv(p, &schema)).transpose()?;
                Ok((load_csv(train, &schema)?, t))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub loss: LossConfig,
    #[serde(default)]
    pub psi: Option<PsiConfig>,
    #[serde(default)]
    pub arch: Option<Architecture>,
}

/// Sweep values; an empty list keeps the base configuration's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub temperature: Vec<f64>,
    pub delta_pair: Vec<f64>,
    pub num_neighbors: Vec<usize>,
    pub alpha: Vec<f64>,
    pub psi: Vec<PsiConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub temperature: Option<f64>,
    pub delta_pair: Option<f64>,
    pub num_neighbors: Option<usize>,
    pub alpha: Option<f64>,
    pub psi: Option<PsiConfig>,
}

fn axis<T: Clone>(v: &[T]) -> Vec<Option<T>> {
    if v.is_empty() {
        vec![None]
    } else {
        v.iter().cloned().map(Some).collect()
    }
}

impl Grid {
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for temperature in axis(&self.temperature) {
            for delta_pair in axis(&self.delta_pair) {
                for num_neighbors in axis(&self.num_neighbors) {
                    for alpha in axis(&self.alpha) {
                        for psi in axis(&self.psi) {
                            out.push(GridPoint { temperature, delta_pair, num_neighbors, alpha, psi: psi.clone() });
                        }
                    }
                }
            }
        }
        out
    }
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub data: DataSpec,
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub base: TrainConfig,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default = "default_true")]
    pub diagnostics: bool,
    /// Method used as the reference in paired comparisons; defaults to the first pair-based method.
    #[serde(default)]
    pub reference: Option<String>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(invalid("experiment needs at least one method"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("experiment needs at least one seed"));
        }
        let mut names: Vec<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("method names must be unique"));
        }
        for m in &self.methods {
            m.loss.validate()?;
        }
        self.base.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: String,
    pub seed: u64,
    pub grid_index: usize,
    pub grid: GridPoint,
    pub config: TrainConfig,
    pub stopping_epoch: Option<usize>,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reference: String,
    pub other: String,
    pub grid_index: usize,
    pub report: TTestReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub spec: ExperimentSpec,
    pub cells: Vec<CellResult>,
    pub comparisons: Vec<Comparison>,
}

impl ExperimentSummary {
    /// Out-of-sample PEHE per seed for one method and grid point, skipping failed cells.
    pub fn pehe_out(&self, method: &str, grid_index: usize) -> Vec<(u64, f64)> {
        self.cells
            .iter()
            .filter(|c| c.method == method && c.grid_index == grid_index)
            .filter_map(|c| c.report.as_ref().map(|r| (c.seed, r.pehe_out)))
            .collect()
    }
}

/// One-sided paired t-test that `reference` has lower values than `other`, matched by seed.
pub fn compare_methods(reference: &[(u64, f64)], other: &[(u64, f64)]) -> Result<TTestReport> {
    let sorted = |v: &[(u64, f64)]| {
        let mut v = v.to_vec();
        v.sort_by_key(|p| p.0);
        v
    };
    let (a, b) = (sorted(reference), sorted(other));
    if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.0 != y.0) || a.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(invalid("compared results must cover the same distinct seeds"));
    }
    let va: Vec<f64> = a.iter().map(|p| p.1).collect();
    let vb: Vec<f64> = b.iter().map(|p| p.1).collect();
    paired_t_test_one_sided(&va, &vb)
}

struct SeedData {
    train: Dataset,
    test: Option<Dataset>,
    mmd_p0_p1: Option<(f64, f64)>,
}

struct Cell {
    method: usize,
    seed: u64,
    grid_index: usize,
    grid: GridPoint,
    config: TrainConfig,
}

fn factual_key(config: &TrainConfig, data_seed: u64) -> TrainConfig {
    TrainConfig {
        loss: LossConfig::Factual,
        pairing: Default::default(),
        psi: PsiConfig::FactualPhi,
        seed: seed::derive_str(data_seed, "factual", &[]),
        ..config.clone()
    }
}

fn cell_config(spec: &ExperimentSpec, m: &MethodSpec, g: &GridPoint, seed_value: u64, grid_index: usize) -> TrainConfig {
    let mut c = TrainConfig { loss: m.loss.clone(), track_diagnostics: spec.diagnostics, ..spec.base.clone() };
    if let Some(a) = m.arch {
        c.arch = a;
    }
    if let Some(p) = &m.psi {
        c.psi = p.clone();
    }
    if !m.loss.uses_pairs() {
        return factual_key(&c, seed_value);
    }
    if let Some(v) = g.temperature {
        c.pairing.temperature = v;
    }
    if let Some(v) = g.delta_pair {
        c.pairing.delta_pair = v;
    }
    if let Some(v) = g.num_neighbors {
        c.pairing.num_neighbors = v;
    }
    if let (Some(a), LossConfig::Pair | LossConfig::PairAlpha { .. }) = (g.alpha, &m.loss) {
        c.loss = LossConfig::PairAlpha { alpha: a };
    }
    if let Some(p) = &g.psi {
        c.psi = p.clone();
    }
    c.seed = seed::derive_str(seed_value, &m.name, &[grid_index as u64]);
    c
}

fn group_rows(d: &Dataset, t: f64) -> ndarray::Array2<f64> {
    d.x.select(ndarray::Axis(0), &d.group(t))
}

fn seed_data(spec: &ExperimentSpec, seed_value: u64) -> Result<SeedData> {
    let (train, test) = spec.data.load(seed_value)?;
    let mmd_p0_p1 = if spec.diagnostics && train.mode == TreatmentMode::Binary {
        let mut rng = seed::rng_at(seed_value, &[DIAG]);
        let x0 = subsample_rows(&group_rows(&train, 0.0), DIAG_POINTS, &mut rng);
        let x1 = subsample_rows(&group_rows(&train, 1.0), DIAG_POINTS, &mut rng);
        if x0.nrows() > 0 && x1.nrows() > 0 {
            let sigma = median_bandwidth(x0.view(), x1.view());
            Some((mmd_rbf(x0.view(), x1.view(), Bandwidth::Fixed(sigma))?, sigma))
        } else {
            None
        }
    } else {
        None
    };
    Ok(SeedData { train, test, mmd_p0_p1 })
}

fn report(
    net: &TwoHeadedNetwork,
    record: &RunRecord,
    data: &SeedData,
    config: &TrainConfig,
    provider: Option<&EmbeddingProvider>,
) -> Result<EvalReport> {
    let mut diagnostics = BTreeMap::new();
    let pehe_in = evaluate(net, &data.train, seed::derive(config.seed, &[EVAL_IN]))?;
    let pehe_out = match &data.test {
        Some(t) => evaluate(net, t, seed::derive(config.seed, &[EVAL_OUT]))?,
        None => f64::NAN,
    };
    if config.track_diagnostics {
        let risk = &record.epoch_val_ite_risk;
        if let Ok(c) = pearson_corr(&record.epoch_val_factual, risk) {
            diagnostics.insert("corr_factual_ite".into(), c);
        }
        if let Ok(c) = pearson_corr(&record.epoch_val_pair, risk) {
            diagnostics.insert("corr_pair_ite".into(), c);
        }
        if let Some((m, sigma)) = data.mmd_p0_p1 {
            diagnostics.insert("mmd_p0_p1".into(), m);
            if let Some(p) = provider {
                let pairs = create_pair_ds(&data.train, &data.train, &config.pairing, p, seed::derive(config.seed, &[DIAG]))?;
                let nd = neighbor_diagnostics(&pairs)?;
                diagnostics.insert("delta_hat".into(), nd.delta_hat);
                diagnostics.insert("mean_pair_distance".into(), nd.mean_distance);
                let mut rng = seed::rng_at(config.seed, &[DIAG, 1]);
                let mut total = 0.0;
                for t in [0.0, 1.0] {
                    let (a, b) = pair_sides(&pairs, t);
                    if a.nrows() == 0 {
                        continue;
                    }
                    let u = data.train.group(t).len() as f64 / data.train.len() as f64;
                    let a = subsample_rows(&a, DIAG_POINTS, &mut rng);
                    let b = subsample_rows(&b, DIAG_POINTS, &mut rng);
                    total += u * mmd_rbf(a.view(), b.view(), Bandwidth::Fixed(sigma))?;
                }
                diagnostics.insert("mmd_p_q".into(), total);
            }
        }
    }
    diagnostics.insert("best_val".into(), record.best_val.unwrap_or(f64::NAN));
    Ok(EvalReport { pehe_in, pehe_out, diagnostics, seed: config.seed, config_hash: config.hash() })
}

fn psi_provider(psi: &PsiConfig, d: &Dataset, config: &TrainConfig, factual: Option<&TwoHeadedNetwork>) -> Result<EmbeddingProvider> {
    match psi {
        PsiConfig::Identity => Ok(EmbeddingProvider::identity(d.dim())),
        PsiConfig::RandomProjection { dim } => {
            EmbeddingProvider::random_projection(d.dim(), *dim, seed::derive_str(config.seed, "projection", &[]))
        }
        PsiConfig::Columns { columns } => EmbeddingProvider::columns(d.dim(), columns.clone()),
        PsiConfig::FactualPhi => {
            factual.map(|m| EmbeddingProvider::factual_phi(m.frozen_phi())).ok_or_else(|| invalid("factual stage missing"))
        }
    }
}

fn fmt_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn results_csv(cells: &[CellResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "method",
        "seed",
        "grid_index",
        "temperature",
        "delta_pair",
        "num_neighbors",
        "alpha",
        "psi",
        "pehe_in",
        "pehe_out",
        "stopping_epoch",
        "error",
    ])?;
    for c in cells {
        let psi = c.grid.psi.as_ref().map(|p| serde_json::to_string(p).expect("psi serializes"));
        let (pin, pout) = c.report.as_ref().map_or((String::new(), String::new()), |r| {
            (r.pehe_in.to_string(), if r.pehe_out.is_nan() { String::new() } else { r.pehe_out.to_string() })
        });
        w.write_record([
            c.method.clone(),
            c.seed.to_string(),
            c.grid_index.to_string(),
            fmt_opt(&c.grid.temperature),
            fmt_opt(&c.grid.delta_pair),
            fmt_opt(&c.grid.num_neighbors),
            fmt_opt(&c.grid.alpha),
            psi.unwrap_or_default(),
            pin,
            pout,
            fmt_opt(&c.stopping_epoch),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    w.into_inner().map_err(|e| invalid(e.to_string()))
}

/// Runs every (method, seed, grid point) cell and, given `out_dir`, writes `results.csv`
/// and `summary.json` there. Failed cells carry their error message.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: Option<&Path>) -> Result<ExperimentSummary> {
    spec.validate()?;
    let seeds: Vec<u64> = spec.seeds.clone();
    let data: Vec<std::result::Result<SeedData, String>> =
        seeds.par_iter().map(|&s| seed_data(spec, s).map_err(|e| e.to_string())).collect();

    let points = spec.grid.points();
    let mut cells = Vec::new();
    for (mi, m) in spec.methods.iter().enumerate() {
        let grid: &[GridPoint] = if m.loss.uses_pairs() { &points } else { &points[..1] };
        for (gi, g) in grid.iter().enumerate() {
            for &s in &seeds {
                let g = if m.loss.uses_pairs() { g.clone() } else { GridPoint::default() };
                cells.push(Cell { method: mi, seed: s, grid_index: gi, config: cell_config(spec, m, &g, s, gi), grid: g });
            }
        }
    }

    let mut factual_jobs: Vec<(usize, TrainConfig)> = Vec::new();
    for c in &cells {
        let key = factual_key(&c.config, c.seed);
        let needs = !c.config.loss.uses_pairs() || c.config.psi == PsiConfig::FactualPhi;
        let si = seeds.iter().position(|&s| s == c.seed).expect("seed listed");
        if needs && !factual_jobs.iter().any(|(i, k)| *i == si && *k == key) {
            factual_jobs.push((si, key));
        }
    }
    let identity = EmbeddingProvider::identity(0);
    let factual: Vec<std::result::Result<(TwoHeadedNetwork, RunRecord), String>> = factual_jobs
        .par_iter()
        .map(|(si, key)| {
            let d = data[*si].as_ref().map_err(Clone::clone)?;
            train_with_provider(&d.train, key, &identity).map_err(|e| e.to_string())
        })
        .collect();
    let factual_map: HashMap<(usize, String), usize> =
        factual_jobs.iter().enumerate().map(|(j, (si, k))| ((*si, k.hash()), j)).collect();

    let results: Vec<CellResult> = cells
        .par_iter()
        .map(|c| {
            let si = seeds.iter().position(|&s| s == c.seed).expect("seed listed");
            let run = || -> std::result::Result<(usize, EvalReport), String> {
                let d = data[si].as_ref().map_err(Clone::clone)?;
                let stage = factual_map.get(&(si, factual_key(&c.config, c.seed).hash())).map(|&j| &factual[j]);
                let stage = match stage {
                    Some(Ok(pair)) => Some(pair),
                    Some(Err(e)) => return Err(format!("factual stage failed: {e}")),
                    None => None,
                };
                if !c.config.loss.uses_pairs() {
                    let (net, rec) = stage.ok_or("factual stage missing")?;
                    let r = report(net, rec, d, &c.config, None).map_err(|e| e.to_string())?;
                    return Ok((rec.stopping_epoch, r));
                }
                let provider = psi_provider(&c.config.psi, &d.train, &c.config, stage.map(|s| &s.0))
                    .map_err(|e| e.to_string())?;
                let (net, rec) = train_with_provider(&d.train, &c.config, &provider).map_err(|e| e.to_string())?;
                let r = report(&net, &rec, d, &c.config, Some(&provider)).map_err(|e| e.to_string())?;
                Ok((rec.stopping_epoch, r))
            };
            let (stopping_epoch, report, error) = match run() {
                Ok((e, r)) => (Some(e), Some(r), None),
                Err(e) => (None, None, Some(e)),
            };
            CellResult {
                method: spec.methods[c.method].name.clone(),
                seed: c.seed,
                grid_index: c.grid_index,
                grid: c.grid.clone(),
                config: c.config.clone(),
                stopping_epoch,
                report,
                error,
            }
        })
        .collect();

    let mut summary = ExperimentSummary { spec: spec.clone(), cells: results, comparisons: Vec::new() };
    summary.comparisons = comparisons(&summary);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join("results.csv"), &results_csv(&summary.cells)?)?;
        let json = serde_json::to_vec_pretty(&summary)?;
        write_atomic(&dir.join("summary.json"), &json)?;
    }
    Ok(summary)
}

fn comparisons(summary: &ExperimentSummary) -> Vec<Comparison> {
    let spec = &summary.spec;
    let reference = spec
        .reference
        .clone()
        .or_else(|| spec.methods.iter().find(|m| m.loss.uses_pairs()).map(|m| m.name.clone()));
    let Some(reference) = reference else { return Vec::new() };
    let Some(ref_method) = spec.methods.iter().find(|m| m.name == reference) else { return Vec::new() };
    let grid_len = if ref_method.loss.uses_pairs() { spec.grid.points().len() } else { 1 };
    let mut out = Vec::new();
    for gi in 0..grid_len {
        let a = summary.pehe_out(&reference, gi);
        for m in spec.methods.iter().filter(|m| m.name != reference) {
            let ogi = if m.loss.uses_pairs() { gi } else { 0 };
            let b = summary.pehe_out(&m.name, ogi);
            if let Ok(report) = compare_methods(&a, &b) {
                if report.p.is_finite() {
                    out.push(Comparison { reference: reference.clone(), other: m.name.clone(), grid_index: gi, report });
                }
            }
        }
    }
    out
}
