use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{split_indices, Dataset};
use crate::error::{invalid, Result};
use crate::losses::{LossConfig, PairBinaryObjective, PairObjective, SquaredError};
use crate::metrics::{pehe, EvalReport};
use crate::models::{Architecture, TreatmentMode, TwoHeadedNetwork};
use crate::nn::{adam_step, gradient, loss_value, AdamConfig, AdamState, Network, Objective, ParamStore, RegConfig};
use crate::pairing::{EmbeddingProvider, PairDataset, PairRecord, PairSampler, PairingConfig};
use crate::seed;

const SPLIT: u64 = 1;
const MODEL: u64 = 2;
const PAIRS: u64 = 3;
const SHUFFLE: u64 = 4;
const VAL_PAIRS: u64 = 5;
const PSI: u64 = 6;
const EVAL: u64 = 7;

/// Embedding used to find neighbors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsiConfig {
    Identity,
    RandomProjection { dim: usize },
    /// Frozen representation of a model first trained on the factual loss.
    FactualPhi,
    Columns { columns: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub pairing: PairingConfig,
    pub reg: RegConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub arch: Architecture,
    pub psi: PsiConfig,
    /// Record per-epoch validation factual loss, pair loss and oracle effect risk.
    pub track_diagnostics: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::Pair,
            pairing: PairingConfig::default(),
            reg: RegConfig::default(),
            lr: 1e-4,
            batch_size: 100,
            max_epochs: 1000,
            patience: 10,
            val_fraction: 0.3,
            arch: Architecture::Deep,
            psi: PsiConfig::FactualPhi,
            track_diagnostics: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.pairing.validate()?;
        self.reg.validate()?;
        if !(self.lr >= 0.0) || self.batch_size == 0 {
            return Err(invalid("lr must be non-negative and batch_size positive"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(invalid("val_fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn factual_stage(&self) -> Self {
        Self { loss: LossConfig::Factual, track_diagnostics: false, seed: seed::derive(self.seed, &[PSI]), ..self.clone() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub stopping_epoch: usize,
    pub best_epoch: usize,
    pub best_val: Option<f64>,
    /// Validation objective of the returned parameters, recomputed after restoration.
    pub final_val: Option<f64>,
    /// Digest of each epoch's training pair set.
    pub pair_hashes: Vec<String>,
    pub skipped_anchors: usize,
    pub clamped: usize,
    pub val_pairs: usize,
    /// Per-epoch validation factual loss, pair loss (alpha = 2) and oracle effect risk.
    pub epoch_val_factual: Vec<f64>,
    pub epoch_val_pair: Vec<f64>,
    pub epoch_val_ite_risk: Vec<f64>,
    pub factual_stage: Option<Box<RunRecord>>,
    pub report: Option<EvalReport>,
}

enum Stage<'a> {
    Rows { data: &'a Dataset, val: &'a Dataset },
    Pairs { sampler: PairSampler<'a>, val_pairs: PairDataset },
}

fn pair_objective(loss: &LossConfig, batch: &[&PairRecord]) -> Result<Box<dyn Objective>> {
    Ok(match loss {
        LossConfig::Pair | LossConfig::PairAlpha { .. } => Box::new(PairObjective::new(batch, loss.alpha())?),
        LossConfig::Matching => Box::new(SquaredError::matching(batch, true)?),
        LossConfig::PairBinary => Box::new(PairBinaryObjective::new(batch)?),
        LossConfig::Factual => return Err(invalid("factual loss does not use pairs")),
    })
}

fn objective_value(net: &TwoHeadedNetwork, obj: &dyn Objective) -> Result<f64> {
    loss_value(net, obj, &RegConfig::NONE)
}

fn oracle_risk(net: &TwoHeadedNetwork, d: &Dataset, t_pairs: &[(f64, f64)]) -> Result<f64> {
    let (truth, pred) = effects(net, d, t_pairs)?;
    Ok(pehe(&truth, &pred)?.powi(2))
}

fn treatment_pairs(d: &Dataset, seed: u64) -> Vec<(f64, f64)> {
    match d.mode {
        TreatmentMode::Binary => vec![(1.0, 0.0); d.len()],
        TreatmentMode::Continuous5Bin => {
            let mut rng = seed::rng(seed);
            (0..d.len()).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect()
        }
    }
}

fn effects(net: &TwoHeadedNetwork, d: &Dataset, t_pairs: &[(f64, f64)]) -> Result<(Vec<f64>, Vec<f64>)> {
    let t1: Vec<f64> = t_pairs.iter().map(|p| p.0).collect();
    let t0: Vec<f64> = t_pairs.iter().map(|p| p.1).collect();
    let a = net.predict_batch(d.x.view(), &t1)?;
    let b = net.predict_batch(d.x.view(), &t0)?;
    let pred = a.iter().zip(b.iter()).map(|(u, v)| u - v).collect();
    let truth = (0..d.len()).map(|i| d.true_ite(i, t_pairs[i].0, t_pairs[i].1)).collect::<Result<Vec<_>>>()?;
    Ok((truth, pred))
}

/// PEHE of a model on a dataset with ground truth. Continuous data uses treatment pairs
/// drawn uniformly from a stream seeded by `seed`.
pub fn evaluate(net: &TwoHeadedNetwork, d: &Dataset, seed: u64) -> Result<f64> {
    let tp = treatment_pairs(d, seed::derive(seed, &[EVAL]));
    let (truth, pred) = effects(net, d, &tp)?;
    pehe(&truth, &pred)
}

fn provider_for(config: &TrainConfig, d: &Dataset) -> Result<(EmbeddingProvider, Option<RunRecord>)> {
    Ok(match &config.psi {
        PsiConfig::Identity => (EmbeddingProvider::identity(d.dim()), None),
        PsiConfig::RandomProjection { dim } => {
            (EmbeddingProvider::random_projection(d.dim(), *dim, seed::derive(config.seed, &[PSI, 1]))?, None)
        }
        PsiConfig::Columns { columns } => (EmbeddingProvider::columns(d.dim(), columns.clone())?, None),
        PsiConfig::FactualPhi => {
            let (model, record) = train(d, &config.factual_stage())?;
            (EmbeddingProvider::factual_phi(model.frozen_phi()), Some(record))
        }
    })
}

/// Trains on `d` with the configured loss; pair losses first obtain their neighbor
/// embedding as configured.
pub fn train(d: &Dataset, config: &TrainConfig) -> Result<(TwoHeadedNetwork, RunRecord)> {
    config.validate()?;
    if !config.loss.uses_pairs() {
        return fit(d, config, None);
    }
    let (provider, stage) = provider_for(config, d)?;
    let (model, mut record) = fit(d, config, Some(&provider))?;
    record.factual_stage = stage.map(Box::new);
    Ok((model, record))
}

/// Pair-loss training with an already chosen neighbor embedding.
pub fn train_with_provider(d: &Dataset, config: &TrainConfig, provider: &EmbeddingProvider) -> Result<(TwoHeadedNetwork, RunRecord)> {
    config.validate()?;
    fit(d, config, config.loss.uses_pairs().then_some(provider))
}

fn fit(d: &Dataset, config: &TrainConfig, provider: Option<&EmbeddingProvider>) -> Result<(TwoHeadedNetwork, RunRecord)> {
    let mut split_rng = seed::rng_at(config.seed, &[SPLIT]);
    let (train_idx, val_idx) = split_indices(d, config.val_fraction, &mut split_rng)?;
    let train_ds = d.subset(&train_idx);
    let val_ds = d.subset(&val_idx);
    let mut net = TwoHeadedNetwork::build(config.arch, d.mode, d.dim(), seed::derive(config.seed, &[MODEL]))?;
    let mut record = RunRecord { config_hash: config.hash(), ..Default::default() };

    let stage = match provider {
        None => Stage::Rows { data: &train_ds, val: &val_ds },
        Some(p) => {
            let val_sampler = PairSampler::new(&val_ds, d, config.pairing, p, Some(val_idx.clone()))?;
            let val_pairs = val_sampler.sample(seed::derive(config.seed, &[VAL_PAIRS]))?;
            record.val_pairs = val_pairs.len();
            let n = train_ds.len();
            let sampler = PairSampler::new(&train_ds, &train_ds, config.pairing, p, Some((0..n).collect()))?;
            Stage::Pairs { sampler, val_pairs }
        }
    };
    let val_objective: Box<dyn Objective> = match &stage {
        Stage::Rows { val, .. } => Box::new(SquaredError::factual(val.x.view(), &val.t, &val.y)?),
        Stage::Pairs { val_pairs, .. } => pair_objective(&config.loss, &val_pairs.records.iter().collect::<Vec<_>>())?,
    };
    let diag = if config.track_diagnostics && val_ds.truth.is_some() {
        let factual = SquaredError::factual(val_ds.x.view(), &val_ds.t, &val_ds.y)?;
        let pair = match &stage {
            Stage::Pairs { val_pairs, .. } => Some(PairObjective::new(&val_pairs.records.iter().collect::<Vec<_>>(), 2.0)?),
            Stage::Rows { .. } => None,
        };
        Some((factual, pair, treatment_pairs(&val_ds, seed::derive(config.seed, &[EVAL, 1]))))
    } else {
        None
    };

    let mut adam = AdamState::new(net.params(), AdamConfig { lr: config.lr, ..AdamConfig::default() })?;
    let mut best: Option<(f64, ParamStore)> = None;
    let mut wait = 0;
    for epoch in 0..config.max_epochs {
        let mut rng = seed::rng_at(config.seed, &[SHUFFLE, epoch as u64]);
        let (sum, count) = match &stage {
            Stage::Rows { data, .. } => {
                let mut order: Vec<usize> = (0..data.len()).collect();
                order.shuffle(&mut rng);
                let mut sum = 0.0;
                for chunk in order.chunks(config.batch_size) {
                    let obj = SquaredError::factual_rows(data, chunk)?;
                    let (v, g) = gradient(&net, &obj, &config.reg)?;
                    sum += (v - crate::nn::l2_penalty(net.params(), &config.reg)) * chunk.len() as f64;
                    adam_step(net.params_mut(), &g, &mut adam)?;
                }
                (sum, data.len())
            }
            Stage::Pairs { sampler, .. } => {
                let pairs = sampler.sample(seed::derive(config.seed, &[PAIRS, epoch as u64]))?;
                record.pair_hashes.push(pairs.content_hash());
                record.skipped_anchors += pairs.skipped.len();
                let mut order: Vec<usize> = (0..pairs.len()).collect();
                order.shuffle(&mut rng);
                let mut sum = 0.0;
                for chunk in order.chunks(config.batch_size) {
                    let batch: Vec<&PairRecord> = chunk.iter().map(|&i| &pairs.records[i]).collect();
                    let obj = pair_objective(&config.loss, &batch)?;
                    let (v, g) = gradient(&net, obj.as_ref(), &config.reg)?;
                    sum += (v - crate::nn::l2_penalty(net.params(), &config.reg)) * chunk.len() as f64;
                    adam_step(net.params_mut(), &g, &mut adam)?;
                }
                (sum, pairs.len())
            }
        };
        record.train_losses.push(sum / count as f64);
        let val = objective_value(&net, val_objective.as_ref())?;
        record.val_losses.push(val);
        if let Some((factual, pair, tp)) = &diag {
            record.epoch_val_factual.push(objective_value(&net, factual)?);
            if let Some(p) = pair {
                record.epoch_val_pair.push(objective_value(&net, p)?);
            }
            record.epoch_val_ite_risk.push(oracle_risk(&net, &val_ds, tp)?);
        }
        record.stopping_epoch = epoch + 1;
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, net.params().clone()));
            record.best_epoch = epoch + 1;
            record.best_val = Some(val);
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.patience {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        *net.params_mut() = params;
        record.final_val = Some(objective_value(&net, val_objective.as_ref())?);
    }
    Ok((net, record))
}

/// Dense covariate matrix of a pair set's anchors and neighbors, per anchor treatment.
pub(crate) fn pair_sides(pairs: &PairDataset, t: f64) -> (Array2<f64>, Array2<f64>) {
    let recs: Vec<&PairRecord> = pairs.records.iter().filter(|r| r.t == t).collect();
    let d = pairs.records.first().map_or(0, |r| r.x.len());
    let a: Vec<f64> = recs.iter().flat_map(|r| r.x.iter().copied()).collect();
    let b: Vec<f64> = recs.iter().flat_map(|r| r.x_prime.iter().copied()).collect();
    (
        Array2::from_shape_vec((recs.len(), d), a).expect("rectangular"),
        Array2::from_shape_vec((recs.len(), d), b).expect("rectangular"),
    )
}
