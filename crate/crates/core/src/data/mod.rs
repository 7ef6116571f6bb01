//! Datasets with optional ground truth, synthetic generators and CSV input/output.

mod continuous;
mod gp;
mod io;
mod poly;

pub use continuous::{gen_continuous_response, ContinuousFamily, ContinuousOracle};
pub use gp::{gen_gp_toy, sample_gp, GpSampler, GpToy, GpToyConfig, GridFunction};
pub use io::{load_csv, write_csv, CsvSchema};
pub use poly::{gen_polynomial_synth, MultiPoly, PolyOracle, PolySynthConfig};

use std::sync::Arc;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::TreatmentMode;

/// Noiseless potential-outcome function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Oracle {
    Polynomial(PolyOracle),
    Grid { mu0: GridFunction, tau: GridFunction },
    Continuous(ContinuousOracle),
}

impl Oracle {
    pub fn mu(&self, x: ArrayView1<f64>, t: f64) -> f64 {
        match self {
            Oracle::Polynomial(p) => p.mu(x, t),
            Oracle::Grid { mu0, tau } => mu0.eval(x[0]) + t * tau.eval(x[0]),
            Oracle::Continuous(c) => c.mu(x, t),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GroundTruth {
    /// Potential outcomes under control and treatment, one entry per row.
    Table { mu0: Vec<f64>, mu1: Vec<f64> },
    Oracle(Arc<Oracle>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub mode: TreatmentMode,
    pub truth: Option<GroundTruth>,
    pub id: String,
}

impl Dataset {
    pub fn new(x: Array2<f64>, t: Vec<f64>, y: Vec<f64>, mode: TreatmentMode) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(invalid("dataset needs at least one row"));
        }
        if t.len() != n || y.len() != n {
            return Err(invalid(format!("{n} covariate rows, {} treatments, {} outcomes", t.len(), y.len())));
        }
        for &ti in &t {
            mode.check(ti)?;
        }
        Ok(Self { x, t, y, mode, truth: None, id: String::new() })
    }

    pub fn with_truth(mut self, truth: GroundTruth) -> Result<Self> {
        if let GroundTruth::Table { mu0, mu1 } = &truth {
            if mu0.len() != self.len() || mu1.len() != self.len() {
                return Err(invalid("ground-truth table length differs from dataset"));
            }
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let truth = self.truth.as_ref().map(|g| match g {
            GroundTruth::Table { mu0, mu1 } => GroundTruth::Table {
                mu0: idx.iter().map(|&i| mu0[i]).collect(),
                mu1: idx.iter().map(|&i| mu1[i]).collect(),
            },
            GroundTruth::Oracle(o) => GroundTruth::Oracle(Arc::clone(o)),
        });
        Self {
            x: self.x.select(Axis(0), idx),
            t: idx.iter().map(|&i| self.t[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            mode: self.mode,
            truth,
            id: self.id.clone(),
        }
    }

    /// Noiseless outcome of row `i` under treatment `t`.
    pub fn potential(&self, i: usize, t: f64) -> Result<f64> {
        self.mode.check(t)?;
        match &self.truth {
            None => Err(Error::MissingGroundTruth),
            Some(GroundTruth::Table { mu0, mu1 }) => {
                if t == 0.0 {
                    Ok(mu0[i])
                } else if t == 1.0 {
                    Ok(mu1[i])
                } else {
                    Err(Error::Unsupported("table ground truth only covers t in {0,1}".into()))
                }
            }
            Some(GroundTruth::Oracle(o)) => Ok(o.mu(self.x.row(i), t)),
        }
    }

    pub fn true_ite(&self, i: usize, t: f64, t_prime: f64) -> Result<f64> {
        Ok(self.potential(i, t)? - self.potential(i, t_prime)?)
    }

    pub fn group(&self, t: f64) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.t[i] == t).collect()
    }
}

/// Index form of [`split_stratified`]; both index lists are sorted.
pub fn split_indices<R: Rng + ?Sized>(d: &Dataset, val_fraction: f64, rng: &mut R) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(invalid(format!("val_fraction {val_fraction} not in (0,1)")));
    }
    let groups: Vec<Vec<usize>> = match d.mode {
        TreatmentMode::Binary => vec![d.group(0.0), d.group(1.0)],
        TreatmentMode::Continuous5Bin => vec![(0..d.len()).collect()],
    };
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (g, mut idx) in groups.into_iter().enumerate() {
        if idx.len() < 2 {
            return Err(invalid(format!("treatment group {g} has {} member(s); need at least 2 to split", idx.len())));
        }
        let k = ((val_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        idx.shuffle(rng);
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Binary data: proportional split within each treatment group. Continuous data:
/// uniform random split.
pub fn split_stratified<R: Rng + ?Sized>(d: &Dataset, val_fraction: f64, rng: &mut R) -> Result<(Dataset, Dataset)> {
    let (train, val) = split_indices(d, val_fraction, rng)?;
    Ok((d.subset(&train), d.subset(&val)))
}

/// One-dimensional covariates, control group from N(u, 1) and treated from N(u + s, 1).
/// Outcomes are zero.
pub fn gen_gaussian_confounded<R: Rng + ?Sized>(u: f64, s: f64, n0: usize, n1: usize, rng: &mut R) -> Result<Dataset> {
    if n0 == 0 || n1 == 0 {
        return Err(invalid("both groups need at least one sample"));
    }
    let n = n0 + n1;
    let mut x = Array2::zeros((n, 1));
    let mut t = vec![0.0; n];
    for i in 0..n {
        let z: f64 = StandardNormal.sample(rng);
        let shift = if i < n0 { 0.0 } else { s };
        x[[i, 0]] = u + shift + z;
        if i >= n0 {
            t[i] = 1.0;
        }
    }
    Ok(Dataset::new(x, t, vec![0.0; n], TreatmentMode::Binary)?.with_id("gaussian_confounded"))
}
