//! Neighbor pairing in an embedding space: softmax sampling over eligible
//! opposite-treatment candidates, global trimming of the farthest pairs, and
//! neighborhood diagnostics.

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::models::{FrozenPhi, TreatmentMode};
use crate::seed;

/// Above this many anchor-candidate pairs, distances are recomputed per draw instead of cached.
const DISTANCE_CACHE_LIMIT: usize = 4_000_000;

#[derive(Clone, Debug, PartialEq)]
pub enum EmbeddingKind {
    Identity,
    RandomProjection { dim: usize, seed: u64 },
    FactualPhi(FrozenPhi),
    /// Keeps a subset of covariate columns.
    Columns(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingProvider {
    kind: EmbeddingKind,
    input_dim: usize,
    projection: Option<Array2<f64>>,
}

impl EmbeddingProvider {
    pub fn identity(input_dim: usize) -> Self {
        Self { kind: EmbeddingKind::Identity, input_dim, projection: None }
    }

    /// Gaussian projection scaled by `1/sqrt(dim)`.
    pub fn random_projection(input_dim: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || input_dim == 0 {
            return Err(invalid("projection dimensions must be positive"));
        }
        let mut rng = seed::rng(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let p = Array2::from_shape_simple_fn((input_dim, dim), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        });
        Ok(Self { kind: EmbeddingKind::RandomProjection { dim, seed }, input_dim, projection: Some(p) })
    }

    pub fn factual_phi(phi: FrozenPhi) -> Self {
        Self { input_dim: phi.input_dim(), kind: EmbeddingKind::FactualPhi(phi), projection: None }
    }

    pub fn columns(input_dim: usize, cols: Vec<usize>) -> Result<Self> {
        if cols.is_empty() || cols.iter().any(|&c| c >= input_dim) {
            return Err(invalid(format!("column subset {cols:?} invalid for {input_dim} covariates")));
        }
        Ok(Self { kind: EmbeddingKind::Columns(cols), input_dim, projection: None })
    }

    pub fn kind(&self) -> &EmbeddingKind {
        &self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        match &self.kind {
            EmbeddingKind::Identity => self.input_dim,
            EmbeddingKind::RandomProjection { dim, .. } => *dim,
            EmbeddingKind::FactualPhi(phi) => phi.output_dim(),
            EmbeddingKind::Columns(c) => c.len(),
        }
    }

    pub fn embed_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim {
            return Err(invalid(format!("embedding expects {} columns, got {}", self.input_dim, x.ncols())));
        }
        match &self.kind {
            EmbeddingKind::Identity => Ok(x.to_owned()),
            EmbeddingKind::RandomProjection { .. } => Ok(x.dot(self.projection.as_ref().expect("projection"))),
            EmbeddingKind::FactualPhi(phi) => phi.embed_batch(x),
            EmbeddingKind::Columns(c) => Ok(x.select(Axis(1), c)),
        }
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        let v = ArrayView2::from_shape((1, x.len()), x).map_err(|e| invalid(e.to_string()))?;
        Ok(self.embed_batch(v)?.row(0).to_vec())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Replacement {
    /// Without replacement when enough candidates are eligible, otherwise with.
    Auto,
    Always,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairingConfig {
    pub delta_pair: f64,
    pub num_neighbors: usize,
    pub temperature: f64,
    pub continuous_halfwidth: f64,
    pub replacement: Replacement,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self { delta_pair: 0.1, num_neighbors: 3, temperature: 1.0, continuous_halfwidth: 0.05, replacement: Replacement::Auto }
    }
}

impl PairingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.delta_pair) {
            return Err(invalid(format!("delta_pair {} not in [0,1)", self.delta_pair)));
        }
        if self.num_neighbors == 0 {
            return Err(invalid("num_neighbors must be positive"));
        }
        if !(self.temperature >= 0.0) {
            return Err(invalid("temperature must be non-negative"));
        }
        if !(self.continuous_halfwidth > 0.0) {
            return Err(invalid("continuous_halfwidth must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub anchor: usize,
    pub neighbor: usize,
    pub x: Vec<f64>,
    pub t: f64,
    pub y: f64,
    pub x_prime: Vec<f64>,
    pub t_prime: f64,
    pub y_prime: f64,
    pub distance: f64,
    /// Treatment the neighbor was sought for: `1 − t` for binary data, the drawn
    /// window center for continuous data.
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub anchor_id: String,
    pub candidate_id: String,
    pub config: PairingConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairDataset {
    pub records: Vec<PairRecord>,
    pub mode: TreatmentMode,
    pub provenance: Provenance,
    /// Anchors without any eligible candidate.
    pub skipped: Vec<usize>,
    pub pre_trim: usize,
}

impl PairDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Digest of (anchor, neighbor, distance) over all records.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update((r.anchor as u64).to_le_bytes());
            h.update((r.neighbor as u64).to_le_bytes());
            h.update(r.distance.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["anchor_idx", "nbr_idx", "t", "y", "t_prime", "y_prime", "distance"])?;
        for r in &self.records {
            w.write_record([
                r.anchor.to_string(),
                r.neighbor.to_string(),
                r.t.to_string(),
                r.y.to_string(),
                r.t_prime.to_string(),
                r.y_prime.to_string(),
                r.distance.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// What an anchor is looking for among the candidates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Eligibility {
    /// Binary data: any candidate with a different treatment.
    OppositeOf(f64),
    /// Continuous data: candidates with `|t_j − center| < halfwidth`.
    Window { center: f64, halfwidth: f64 },
}

impl Eligibility {
    fn admits(&self, t: f64) -> bool {
        match *self {
            Eligibility::OppositeOf(ta) => t != ta,
            Eligibility::Window { center, halfwidth } => (t - center).abs() < halfwidth,
        }
    }

    fn target(&self) -> f64 {
        match *self {
            Eligibility::OppositeOf(ta) => 1.0 - ta,
            Eligibility::Window { center, .. } => center,
        }
    }
}

fn euclid(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// Softmax of `−λ d` over eligible entries; ineligible entries (and `exclude`) get 0.
pub fn softmax_neg(distances: &[f64], eligible: &[bool], temperature: f64) -> Option<Vec<f64>> {
    let dmin = distances
        .iter()
        .zip(eligible)
        .filter(|(_, &e)| e)
        .map(|(&d, _)| d)
        .fold(f64::INFINITY, f64::min);
    if !dmin.is_finite() {
        return None;
    }
    let mut w: Vec<f64> = distances
        .iter()
        .zip(eligible)
        .map(|(&d, &e)| if e { (-temperature * (d - dmin)).exp() } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Some(w)
}

/// Neighbor probabilities of one anchor over all candidates.
pub fn neighbor_distribution(
    anchor_x: &[f64],
    rule: Eligibility,
    exclude: Option<usize>,
    candidates: &Dataset,
    provider: &EmbeddingProvider,
    temperature: f64,
) -> Result<Vec<f64>> {
    let a = provider.embed(anchor_x)?;
    let c = provider.embed_batch(candidates.x.view())?;
    let a = ndarray::Array1::from(a);
    let dist: Vec<f64> = c.axis_iter(Axis(0)).map(|r| euclid(a.view(), r)).collect();
    let eligible: Vec<bool> = (0..candidates.len()).map(|j| Some(j) != exclude && rule.admits(candidates.t[j])).collect();
    softmax_neg(&dist, &eligible, temperature).ok_or(Error::NoEligibleNeighbor { anchor: exclude.unwrap_or(0) })
}

/// Draws `k` candidates from `probs` restricted to `support`. Without replacement, once
/// the remaining mass underflows to zero the nearest remaining candidate is taken, so
/// extreme temperatures still yield nearest neighbors.
fn draw_indices<R: Rng + ?Sized>(
    support: &[usize],
    probs: &[f64],
    dist: &[f64],
    k: usize,
    replace: bool,
    rng: &mut R,
) -> Vec<usize> {
    let mut w: Vec<f64> = support.iter().map(|&j| probs[j]).collect();
    let mut taken = vec![false; support.len()];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = w.iter().sum();
        let mut pick = None;
        if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            for (s, &ws) in w.iter().enumerate() {
                if ws > 0.0 {
                    pick = Some(s);
                    if u < ws {
                        break;
                    }
                    u -= ws;
                }
            }
        }
        let pick = pick.or_else(|| {
            (0..support.len()).filter(|&s| !taken[s]).min_by(|&a, &b| dist[support[a]].total_cmp(&dist[support[b]]))
        });
        let Some(p) = pick else { break };
        out.push(support[p]);
        if !replace {
            taken[p] = true;
            w[p] = 0.0;
        }
    }
    out
}

/// Reusable pairing state for a fixed anchor set, candidate set and embedding.
pub struct PairSampler<'a> {
    anchors: &'a Dataset,
    candidates: &'a Dataset,
    anchor_emb: Array2<f64>,
    cand_emb: Array2<f64>,
    self_index: Option<Vec<usize>>,
    distances: Option<Array2<f64>>,
    config: PairingConfig,
}

impl<'a> PairSampler<'a> {
    /// `self_index[i]` is anchor `i`'s own row among the candidates, if present.
    pub fn new(
        anchors: &'a Dataset,
        candidates: &'a Dataset,
        config: PairingConfig,
        provider: &EmbeddingProvider,
        self_index: Option<Vec<usize>>,
    ) -> Result<Self> {
        config.validate()?;
        if anchors.dim() != candidates.dim() || anchors.mode != candidates.mode {
            return Err(invalid("anchor and candidate datasets differ in dimension or treatment mode"));
        }
        if let Some(s) = &self_index {
            if s.len() != anchors.len() || s.iter().any(|&j| j >= candidates.len()) {
                return Err(invalid("self index does not match the anchor set"));
            }
        }
        let anchor_emb = provider.embed_batch(anchors.x.view())?;
        let cand_emb = provider.embed_batch(candidates.x.view())?;
        let distances = (anchors.len() * candidates.len() <= DISTANCE_CACHE_LIMIT).then(|| {
            let rows: Vec<Vec<f64>> = (0..anchors.len())
                .into_par_iter()
                .map(|i| cand_emb.axis_iter(Axis(0)).map(|c| euclid(anchor_emb.row(i), c)).collect())
                .collect();
            Array2::from_shape_vec((anchors.len(), candidates.len()), rows.concat()).expect("rectangular")
        });
        Ok(Self { anchors, candidates, anchor_emb, cand_emb, self_index, distances, config })
    }

    fn distances_from(&self, i: usize) -> Vec<f64> {
        match &self.distances {
            Some(d) => d.row(i).to_vec(),
            None => self.cand_emb.axis_iter(Axis(0)).map(|c| euclid(self.anchor_emb.row(i), c)).collect(),
        }
    }

    fn anchor_pairs(&self, i: usize, seed: u64) -> Option<Vec<PairRecord>> {
        let mut rng = seed::rng_at(seed, &[i as u64]);
        let ta = self.anchors.t[i];
        let rule = match self.anchors.mode {
            TreatmentMode::Binary => Eligibility::OppositeOf(ta),
            TreatmentMode::Continuous5Bin => {
                Eligibility::Window { center: rng.random::<f64>(), halfwidth: self.config.continuous_halfwidth }
            }
        };
        let own = self.self_index.as_ref().map(|s| s[i]);
        let dist = self.distances_from(i);
        let eligible: Vec<bool> =
            (0..self.candidates.len()).map(|j| Some(j) != own && rule.admits(self.candidates.t[j])).collect();
        let probs = softmax_neg(&dist, &eligible, self.config.temperature)?;
        let support: Vec<usize> = (0..eligible.len()).filter(|&j| eligible[j]).collect();
        let replace = self.config.replacement == Replacement::Always || support.len() < self.config.num_neighbors;
        let picks = draw_indices(&support, &probs, &dist, self.config.num_neighbors, replace, &mut rng);
        let x = self.anchors.x.row(i).to_vec();
        Some(
            picks
                .into_iter()
                .map(|j| PairRecord {
                    anchor: i,
                    neighbor: j,
                    x: x.clone(),
                    t: ta,
                    y: self.anchors.y[i],
                    x_prime: self.candidates.x.row(j).to_vec(),
                    t_prime: self.candidates.t[j],
                    y_prime: self.candidates.y[j],
                    distance: dist[j],
                    target: rule.target(),
                })
                .collect(),
        )
    }

    pub fn sample(&self, seed: u64) -> Result<PairDataset> {
        let per_anchor: Vec<Option<Vec<PairRecord>>> =
            (0..self.anchors.len()).into_par_iter().map(|i| self.anchor_pairs(i, seed)).collect();
        let mut skipped = Vec::new();
        let mut records = Vec::new();
        for (i, r) in per_anchor.into_iter().enumerate() {
            match r {
                Some(r) if !r.is_empty() => records.extend(r),
                _ => skipped.push(i),
            }
        }
        if records.is_empty() {
            return Err(Error::EmptyPairDataset);
        }
        let pre_trim = records.len();
        let keep = ((1.0 - self.config.delta_pair) * pre_trim as f64).round() as usize;
        let mut order: Vec<usize> = (0..pre_trim).collect();
        order.sort_by(|&a, &b| records[a].distance.total_cmp(&records[b].distance).then(a.cmp(&b)));
        let mut kept: Vec<usize> = order[..keep].to_vec();
        kept.sort_unstable();
        let mut slots: Vec<Option<PairRecord>> = records.into_iter().map(Some).collect();
        let records = kept.into_iter().map(|k| slots[k].take().expect("each record kept once")).collect();
        Ok(PairDataset {
            records,
            mode: self.anchors.mode,
            provenance: Provenance {
                anchor_id: self.anchors.id.clone(),
                candidate_id: self.candidates.id.clone(),
                config: self.config,
                seed,
            },
            skipped,
            pre_trim,
        })
    }
}

/// Samples neighbors for every anchor and trims the farthest `delta_pair` fraction.
/// When `anchors` and `candidates` are the same object, an anchor never pairs with itself.
pub fn create_pair_ds(
    anchors: &Dataset,
    candidates: &Dataset,
    config: &PairingConfig,
    provider: &EmbeddingProvider,
    rng_seed: u64,
) -> Result<PairDataset> {
    let self_index = std::ptr::eq(anchors, candidates).then(|| (0..anchors.len()).collect());
    PairSampler::new(anchors, candidates, *config, provider, self_index)?.sample(rng_seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborDiagnostics {
    pub mean_distance: f64,
    pub mean_sq_distance: f64,
    /// Largest per-anchor mean neighbor distance.
    pub delta_hat: f64,
    /// Largest per-anchor mean squared neighbor distance.
    pub delta_hat_sq: f64,
    /// Retained pairs by anchor treatment (binary) or treatment bin (continuous).
    pub counts: Vec<usize>,
}

pub fn neighbor_diagnostics(pairs: &PairDataset) -> Result<NeighborDiagnostics> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairDataset);
    }
    let n = pairs.len() as f64;
    let mut per_anchor: std::collections::BTreeMap<usize, (f64, f64, usize)> = Default::default();
    let mut counts = vec![0; pairs.mode.num_heads()];
    for r in &pairs.records {
        let e = per_anchor.entry(r.anchor).or_default();
        e.0 += r.distance;
        e.1 += r.distance * r.distance;
        e.2 += 1;
        counts[pairs.mode.route(r.t)?.0] += 1;
    }
    let (delta_hat, delta_hat_sq) = per_anchor
        .values()
        .fold((0.0f64, 0.0f64), |(a, b), &(s, s2, c)| (a.max(s / c as f64), b.max(s2 / c as f64)));
    Ok(NeighborDiagnostics {
        mean_distance: pairs.records.iter().map(|r| r.distance).sum::<f64>() / n,
        mean_sq_distance: pairs.records.iter().map(|r| r.distance * r.distance).sum::<f64>() / n,
        delta_hat,
        delta_hat_sq,
        counts,
    })
}
