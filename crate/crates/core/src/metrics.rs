//! Effect-estimation error, distribution distances and correlation.

use std::collections::BTreeMap;

use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{invalid, Result};

/// Root mean squared error between true and predicted effects.
pub fn pehe(tau_true: &[f64], tau_pred: &[f64]) -> Result<f64> {
    if tau_true.len() != tau_pred.len() || tau_true.is_empty() {
        return Err(invalid(format!("pehe needs equal non-zero lengths, got {} and {}", tau_true.len(), tau_pred.len())));
    }
    let mse = tau_true.iter().zip(tau_pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / tau_true.len() as f64;
    Ok(mse.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    MedianHeuristic,
}

/// Points used by the median heuristic; larger samples are thinned by a fixed stride.
const MEDIAN_SAMPLE: usize = 2000;

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Median pairwise Euclidean distance of the pooled rows of `x` and `y`.
pub fn median_pairwise_distance(x: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
    let pooled: Vec<ArrayView1<f64>> = x.axis_iter(Axis(0)).chain(y.axis_iter(Axis(0))).collect();
    let stride = pooled.len().div_ceil(MEDIAN_SAMPLE).max(1);
    let pts: Vec<_> = pooled.into_iter().step_by(stride).collect();
    let mut d = Vec::with_capacity(pts.len() * pts.len().saturating_sub(1) / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d.push(sq_dist(pts[i], pts[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if d.len() % 2 == 1 {
        upper
    } else {
        let lower = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

fn mean_kernel(a: ArrayView2<f64>, b: ArrayView2<f64>, gamma: f64) -> f64 {
    let mut s = 0.0;
    for ra in a.axis_iter(Axis(0)) {
        for rb in b.axis_iter(Axis(0)) {
            s += (-gamma * sq_dist(ra, rb)).exp();
        }
    }
    s / (a.nrows() * b.nrows()) as f64
}

/// Biased (V-statistic) MMD with a Gaussian kernel `exp(−‖a−b‖²/(2σ²))`.
pub fn mmd_rbf(x: ArrayView2<f64>, y: ArrayView2<f64>, bandwidth: Bandwidth) -> Result<f64> {
    if x.nrows() == 0 || y.nrows() == 0 || x.ncols() != y.ncols() {
        return Err(invalid("mmd needs non-empty samples of equal dimension"));
    }
    let sigma = match bandwidth {
        Bandwidth::Fixed(s) => s,
        Bandwidth::MedianHeuristic => median_pairwise_distance(x, y),
    };
    if !(sigma > 0.0) {
        return Ok(0.0);
    }
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let v = mean_kernel(x, x, gamma) + mean_kernel(y, y, gamma) - 2.0 * mean_kernel(x, y, gamma);
    Ok(v.max(0.0).sqrt())
}

/// Wasserstein-1 between two weighted point sets on the line (weights normalized internally).
pub fn wasserstein1_weighted(xa: &[f64], wa: &[f64], xb: &[f64], wb: &[f64]) -> Result<f64> {
    if xa.len() != wa.len() || xb.len() != wb.len() || xa.is_empty() || xb.is_empty() {
        return Err(invalid("weighted W1 needs matching, non-empty point and weight lists"));
    }
    let (sa, sb): (f64, f64) = (wa.iter().sum(), wb.iter().sum());
    if !(sa > 0.0 && sb > 0.0) || wa.iter().chain(wb).any(|w| *w < 0.0) {
        return Err(invalid("weights must be non-negative with positive total"));
    }
    let mut ev: Vec<(f64, f64)> = xa.iter().zip(wa).map(|(&x, &w)| (x, w / sa)).collect();
    ev.extend(xb.iter().zip(wb).map(|(&x, &w)| (x, -w / sb)));
    ev.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cdf_diff = 0.0;
    let mut total = 0.0;
    for k in 0..ev.len() {
        cdf_diff += ev[k].1;
        if k + 1 < ev.len() {
            total += cdf_diff.abs() * (ev[k + 1].0 - ev[k].0);
        }
    }
    Ok(total)
}

/// Empirical Wasserstein-1 on the line.
pub fn wasserstein1_1d(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(invalid("W1 needs non-empty samples"));
    }
    if x.len() == y.len() {
        let mut a = x.to_vec();
        let mut b = y.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        return Ok(a.iter().zip(&b).map(|(u, v)| (u - v).abs()).sum::<f64>() / a.len() as f64);
    }
    wasserstein1_weighted(x, &vec![1.0; x.len()], y, &vec![1.0; y.len()])
}

pub fn pearson_corr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(invalid("pearson needs two equal-length samples of size >= 2"));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(invalid("pearson correlation undefined for zero variance"));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(deserialize_with = "nan_from_null")]
    pub pehe_in: f64,
    /// NaN when there is no held-out set.
    #[serde(deserialize_with = "nan_from_null")]
    pub pehe_out: f64,
    #[serde(deserialize_with = "nan_map_from_null")]
    pub diagnostics: BTreeMap<String, f64>,
    pub seed: u64,
    pub config_hash: String,
}

// JSON has no NaN: it is written as null and read back here.
fn nan_from_null<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn nan_map_from_null<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<String, f64>, D::Error> {
    let m = BTreeMap::<String, Option<f64>>::deserialize(d)?;
    Ok(m.into_iter().map(|(k, v)| (k, v.unwrap_or(f64::NAN))).collect())
}
