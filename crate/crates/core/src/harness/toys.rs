use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{gen_gp_toy, GpToyConfig};
use crate::data::gen_gaussian_confounded;
use crate::error::{invalid, Result};
use crate::metrics::{median_pairwise_distance, mmd_rbf, pearson_corr, Bandwidth};
use crate::pairing::{create_pair_ds, EmbeddingProvider, PairingConfig};
use crate::seed;

use super::train::pair_sides;

/// At most `max` rows of `x`, chosen without replacement and kept in original order.
pub(crate) fn subsample_rows<R: Rng + ?Sized>(x: &Array2<f64>, max: usize, rng: &mut R) -> Array2<f64> {
    if x.nrows() <= max {
        return x.clone();
    }
    let mut idx = rand::seq::index::sample(rng, x.nrows(), max).into_vec();
    idx.sort_unstable();
    x.select(Axis(0), &idx)
}

pub(crate) fn median_bandwidth(x: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
    median_pairwise_distance(x, y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyCorrResult {
    pub corr_factual: f64,
    pub corr_alpha0: f64,
    pub corr_pair: f64,
    pub factual_losses: Vec<f64>,
    pub alpha0_losses: Vec<f64>,
    pub pair_losses: Vec<f64>,
    pub ite_risks: Vec<f64>,
    pub num_pairs: usize,
}

/// Scores every candidate estimate of a GP toy by factual loss, pair loss with and
/// without the cross term, and true effect risk, and correlates each loss with the risk.
pub fn toy_corr(config: &GpToyConfig, pairing: &PairingConfig) -> Result<ToyCorrResult> {
    let toy = gen_gp_toy(config)?;
    let d = &toy.dataset;
    let provider = EmbeddingProvider::identity(1);
    let pairs = create_pair_ds(d, d, pairing, &provider, seed::derive(config.seed, &[1]))?;
    let n = d.len() as f64;
    let np = pairs.len() as f64;
    let mut out = ToyCorrResult {
        corr_factual: 0.0,
        corr_alpha0: 0.0,
        corr_pair: 0.0,
        factual_losses: Vec::new(),
        alpha0_losses: Vec::new(),
        pair_losses: Vec::new(),
        ite_risks: Vec::new(),
        num_pairs: pairs.len(),
    };
    for (m0, tau) in &toy.candidates {
        let e: Vec<f64> = (0..d.len())
            .map(|i| {
                let x = d.x[[i, 0]];
                d.y[i] - (m0.eval(x) + d.t[i] * tau.eval(x))
            })
            .collect();
        out.factual_losses.push(e.iter().map(|v| v * v).sum::<f64>() / n);
        let (mut a0, mut a2) = (0.0, 0.0);
        for r in &pairs.records {
            let (ea, eb) = (e[r.anchor], e[r.neighbor]);
            a0 += ea * ea + eb * eb;
            a2 += (ea - eb).powi(2);
        }
        out.alpha0_losses.push(a0 / np);
        out.pair_losses.push(a2 / np);
        out.ite_risks.push(toy.ite_risk(tau));
    }
    out.corr_factual = pearson_corr(&out.factual_losses, &out.ite_risks)?;
    out.corr_alpha0 = pearson_corr(&out.alpha0_losses, &out.ite_risks)?;
    out.corr_pair = pearson_corr(&out.pair_losses, &out.ite_risks)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyMmdConfig {
    /// Location of the control covariates.
    pub shift: f64,
    /// Offset of the treated covariates from the control ones.
    pub separation: f64,
    pub n_per_group: usize,
    pub pairing: PairingConfig,
    /// Per-side cap on points entering each MMD estimate.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for ToyMmdConfig {
    fn default() -> Self {
        Self {
            shift: -1.0,
            separation: 2.0,
            n_per_group: 2000,
            pairing: PairingConfig { temperature: 5.0, ..PairingConfig::default() },
            max_points: 3000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyMmdResult {
    pub mmd_p0_p1: f64,
    pub mmd_p_q: f64,
    pub ratio: f64,
    pub bandwidth: f64,
    pub num_pairs: usize,
}

/// MMD between the treatment groups and between anchors and their sampled neighbors,
/// weighted by group share, with one median-heuristic bandwidth for both.
pub fn toy_mmd(config: &ToyMmdConfig) -> Result<ToyMmdResult> {
    if config.max_points == 0 {
        return Err(invalid("max_points must be positive"));
    }
    let n = config.n_per_group;
    let mut rng = seed::rng_at(config.seed, &[0]);
    let d = gen_gaussian_confounded(config.shift, config.separation, n, n, &mut rng)?;
    let pairs = create_pair_ds(&d, &d, &config.pairing, &EmbeddingProvider::identity(1), seed::derive(config.seed, &[1]))?;
    let mut rng = seed::rng_at(config.seed, &[2]);
    let x0 = subsample_rows(&d.x.select(Axis(0), &d.group(0.0)), config.max_points, &mut rng);
    let x1 = subsample_rows(&d.x.select(Axis(0), &d.group(1.0)), config.max_points, &mut rng);
    let sigma = median_bandwidth(x0.view(), x1.view());
    let mmd_p0_p1 = mmd_rbf(x0.view(), x1.view(), Bandwidth::Fixed(sigma))?;
    let mut mmd_p_q = 0.0;
    for t in [0.0, 1.0] {
        let (a, b) = pair_sides(&pairs, t);
        if a.nrows() == 0 {
            continue;
        }
        let u = d.group(t).len() as f64 / d.len() as f64;
        let a = subsample_rows(&a, config.max_points, &mut rng);
        let b = subsample_rows(&b, config.max_points, &mut rng);
        mmd_p_q += u * mmd_rbf(a.view(), b.view(), Bandwidth::Fixed(sigma))?;
    }
    Ok(ToyMmdResult { mmd_p0_p1, mmd_p_q, ratio: mmd_p0_p1 / mmd_p_q, bandwidth: sigma, num_pairs: pairs.len() })
}
