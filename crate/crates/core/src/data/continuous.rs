use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, GroundTruth, Oracle};
use crate::error::{invalid, Result};
use crate::models::{sigmoid, TreatmentMode};

const DEGENERATE: f64 = 1e-8;
const MAX_REDRAWS: usize = 1000;

// Zero-based column sets of the 25-column IHDP layout.
const IHDP_DIS1: [usize; 10] = [3, 6, 7, 8, 9, 10, 11, 12, 13, 14];
const IHDP_DIS2: [usize; 10] = [15, 16, 17, 18, 19, 20, 21, 22, 23, 24];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuousFamily {
    IhdpCont,
    News,
    Tcga0,
    Tcga1,
    Tcga2,
}

/// Noiseless dose-response surface of one family, with the random directions it was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousOracle {
    pub family: ContinuousFamily,
    pub v: Vec<Vec<f64>>,
    pub c1: f64,
    pub c2: f64,
}

fn dot(v: &[f64], x: ArrayView1<f64>) -> f64 {
    v.iter().zip(x.iter()).map(|(a, b)| a * b).sum()
}

fn group_mean(x: ArrayView1<f64>, cols: &[usize]) -> f64 {
    cols.iter().map(|&c| x[c]).sum::<f64>() / cols.len() as f64
}

impl ContinuousOracle {
    fn proj(&self, x: ArrayView1<f64>) -> [f64; 3] {
        [dot(&self.v[0], x), dot(&self.v[1], x), dot(&self.v[2], x)]
    }

    pub fn mu(&self, x: ArrayView1<f64>, t: f64) -> f64 {
        match self.family {
            ContinuousFamily::IhdpCont => {
                let a = (3.0 * PI * t).sin() / (1.2 - t) * (5.0 * (group_mean(x, &IHDP_DIS1) - self.c1)).tanh();
                let m = x[1].min(x[2]).min(x[4]);
                a + (0.2 * (x[0] - x[5])).exp() / (0.5 + 5.0 * m)
            }
            ContinuousFamily::News => {
                let [p1, p2, p3] = self.proj(x);
                let yp = (p2 / p3 - 0.3).exp().clamp(-2.0, 2.0);
                2.0 * (yp + 20.0 * p1) * (4.0 * (t - 0.5).powi(2) + (PI * t / 2.0).sin())
            }
            ContinuousFamily::Tcga0 => {
                let [p1, _, p3] = self.proj(x);
                10.0 * (p1 + 12.0 * t * p3 - 12.0 * t * t * p3)
            }
            ContinuousFamily::Tcga1 => {
                let [p1, p2, p3] = self.proj(x);
                10.0 * (p1 + (PI * (p2 / p3) * t).sin())
            }
            ContinuousFamily::Tcga2 => {
                let [p1, p2, p3] = self.proj(x);
                10.0 * (p1 + 12.0 * t * (t - 0.75 * p2 / p3).powi(2))
            }
        }
    }

    /// Dosage that maximizes the TCGA response; `None` for the other families.
    pub fn optimal_dosage(&self, x: ArrayView1<f64>) -> Option<f64> {
        let [_, p2, p3] = self.proj(x);
        match self.family {
            ContinuousFamily::Tcga0 => Some(p2 / (2.0 * p3)),
            ContinuousFamily::Tcga1 => Some(p3 / (2.0 * p2)),
            ContinuousFamily::Tcga2 => {
                let r = p2 / p3;
                Some(if r >= 1.0 { 0.25 * r } else { 1.0 })
            }
            _ => None,
        }
    }

    fn noise_sd(&self) -> f64 {
        match self.family {
            ContinuousFamily::IhdpCont => 0.25,
            ContinuousFamily::News => 0.5,
            _ => 0.2,
        }
    }
}

fn unit_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    v.into_iter().map(|a| a / norm).collect()
}

fn beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    let dist = Beta::new(a, b).map_err(|e| invalid(format!("Beta({a}, {b}): {e}")))?;
    Ok(dist.sample(rng).clamp(0.0, 1.0))
}

/// Continuous treatments and outcomes for the given covariates. Returns the dataset and
/// the number of times the random directions were redrawn because a projection
/// denominator vanished on some row.
pub fn gen_continuous_response<R: Rng + ?Sized>(
    covariates: &Array2<f64>,
    family: ContinuousFamily,
    dosage_bias: f64,
    noise_scale: f64,
    rng: &mut R,
) -> Result<(Dataset, usize)> {
    let (n, d) = covariates.dim();
    if n == 0 {
        return Err(invalid("no covariate rows"));
    }
    if !(noise_scale >= 0.0) {
        return Err(invalid("noise_scale must be non-negative"));
    }
    let mut redraws = 0;
    let oracle = match family {
        ContinuousFamily::IhdpCont => {
            if d != 25 {
                return Err(invalid(format!("IHDP-continuous needs 25 columns, got {d}")));
            }
            let c1 = covariates.axis_iter(Axis(0)).map(|r| group_mean(r, &IHDP_DIS1)).sum::<f64>() / n as f64;
            let c2 = covariates.axis_iter(Axis(0)).map(|r| group_mean(r, &IHDP_DIS2)).sum::<f64>() / n as f64;
            for (i, r) in covariates.axis_iter(Axis(0)).enumerate() {
                let dens = [1.0 + r[1], 0.2 + r[2].min(r[4]).min(r[5]), 0.5 + 5.0 * r[1].min(r[2]).min(r[4])];
                if dens.iter().any(|v| v.abs() < DEGENERATE) {
                    return Err(invalid(format!("row {i}: vanishing IHDP denominator")));
                }
            }
            ContinuousOracle { family, v: Vec::new(), c1, c2 }
        }
        _ => {
            if d < 3 {
                return Err(invalid(format!("{family:?} needs at least 3 columns, got {d}")));
            }
            loop {
                let v: Vec<Vec<f64>> = (0..3).map(|_| unit_direction(d, rng)).collect();
                let ok = covariates.axis_iter(Axis(0)).all(|r| dot(&v[1], r).abs() >= DEGENERATE && dot(&v[2], r).abs() >= DEGENERATE);
                if ok {
                    break ContinuousOracle { family, v, c1: 0.0, c2: 0.0 };
                }
                redraws += 1;
                if redraws >= MAX_REDRAWS {
                    return Err(invalid("projection denominators vanish for every random direction draw"));
                }
            }
        }
    };
    if family != ContinuousFamily::IhdpCont && !(dosage_bias >= 1.0) {
        return Err(invalid("dosage bias must be >= 1"));
    }

    let assign_noise = Normal::new(0.0, 0.25).expect("valid sd");
    let outcome_noise = Normal::new(0.0, oracle.noise_sd() * noise_scale).map_err(|e| invalid(e.to_string()))?;
    let mut t = vec![0.0; n];
    let mut y = vec![0.0; n];
    for (i, r) in covariates.axis_iter(Axis(0)).enumerate() {
        t[i] = match family {
            ContinuousFamily::IhdpCont => {
                let mx = r[2].max(r[4]).max(r[5]);
                let mn = r[2].min(r[4]).min(r[5]);
                let inner = 5.0 * (group_mean(r, &IHDP_DIS2) - oracle.c2) - 4.0 + assign_noise.sample(rng);
                sigmoid(2.0 * r[0] / (1.0 + r[1]) + 2.0 * mx / (0.2 + mn) + 2.0 * inner.tanh())
            }
            ContinuousFamily::News => {
                let [_, p2, p3] = oracle.proj(r);
                beta(2.0, (p3 / (2.0 * p2)).abs(), rng)?
            }
            _ => {
                let ds = oracle.optimal_dosage(r).expect("dosage family");
                let b = if ds > 0.001 && ds < 1.0 { (dosage_bias - 1.0) / ds + 2.0 - dosage_bias } else { 1.0 };
                beta(dosage_bias, b, rng)?
            }
        };
        let e = if noise_scale > 0.0 { outcome_noise.sample(rng) } else { 0.0 };
        y[i] = oracle.mu(r, t[i]) + e;
    }
    let id = format!("{family:?}").to_lowercase();
    let ds = Dataset::new(covariates.clone(), t, y, TreatmentMode::Continuous5Bin)?
        .with_truth(GroundTruth::Oracle(Arc::new(Oracle::Continuous(oracle))))?
        .with_id(id);
    Ok((ds, redraws))
}
