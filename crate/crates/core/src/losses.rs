//! Training objectives over network outputs. All batch losses are means over the batch.

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::models::{sigmoid, three_way_logits};
use crate::nn::{Network, Objective, QueryBatch};
use crate::pairing::PairRecord;

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossConfig {
    Factual,
    Pair,
    PairAlpha { alpha: f64 },
    Matching,
    PairBinary,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::Pair
    }
}

impl LossConfig {
    pub fn alpha(&self) -> f64 {
        match self {
            LossConfig::PairAlpha { alpha } => *alpha,
            _ => 2.0,
        }
    }

    pub fn uses_pairs(&self) -> bool {
        !matches!(self, LossConfig::Factual)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossConfig::PairAlpha { alpha } if !(0.0..=2.0).contains(alpha) => {
                Err(invalid(format!("alpha {alpha} outside [0, 2]")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            LossConfig::Factual => "factual".into(),
            LossConfig::Pair => "pair".into(),
            LossConfig::PairAlpha { alpha } => format!("pair_alpha{alpha}"),
            LossConfig::Matching => "matching".into(),
            LossConfig::PairBinary => "pair_binary".into(),
        }
    }
}

fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Result<Array2<f64>> {
    let flat: Vec<f64> = rows.flat_map(|r| r.iter().copied()).collect();
    let n = flat.len() / dim.max(1);
    Array2::from_shape_vec((n, dim), flat).map_err(|e| invalid(e.to_string()))
}

fn check_pairs(pairs: &[&PairRecord]) -> Result<usize> {
    let first = pairs.first().ok_or_else(|| invalid("empty pair batch"))?;
    let d = first.x.len();
    if pairs.iter().any(|p| p.x.len() != d || p.x_prime.len() != d) {
        return Err(invalid("pair records have inconsistent covariate widths"));
    }
    Ok(d)
}

/// `Σ (output − target)² / denom`.
#[derive(Clone, Debug)]
pub struct SquaredError {
    queries: QueryBatch,
    targets: Array1<f64>,
    denom: f64,
}

impl SquaredError {
    pub fn factual(x: ArrayView2<f64>, t: &[f64], y: &[f64]) -> Result<Self> {
        if x.nrows() == 0 || y.len() != x.nrows() {
            return Err(invalid("factual batch must be non-empty with one outcome per row"));
        }
        Ok(Self { queries: QueryBatch::new(x.to_owned(), t.to_vec())?, targets: Array1::from(y.to_vec()), denom: y.len() as f64 })
    }

    pub fn factual_rows(d: &Dataset, rows: &[usize]) -> Result<Self> {
        let sub = d.x.select(ndarray::Axis(0), rows);
        let t: Vec<f64> = rows.iter().map(|&i| d.t[i]).collect();
        let y: Vec<f64> = rows.iter().map(|&i| d.y[i]).collect();
        Self::factual(sub.view(), &t, &y)
    }

    /// Neighbor outcome as a label for the anchor under the neighbor's treatment.
    /// With `with_factual`, each pair also contributes the anchor's own squared error.
    pub fn matching(pairs: &[&PairRecord], with_factual: bool) -> Result<Self> {
        let d = check_pairs(pairs)?;
        let mut xs: Vec<&[f64]> = pairs.iter().map(|p| p.x.as_slice()).collect();
        let mut t: Vec<f64> = pairs.iter().map(|p| p.t_prime).collect();
        let mut y: Vec<f64> = pairs.iter().map(|p| p.y_prime).collect();
        if with_factual {
            xs.extend(pairs.iter().map(|p| p.x.as_slice()));
            t.extend(pairs.iter().map(|p| p.t));
            y.extend(pairs.iter().map(|p| p.y));
        }
        let x = stack(xs.into_iter(), d)?;
        Ok(Self { queries: QueryBatch::new(x, t)?, targets: Array1::from(y), denom: pairs.len() as f64 })
    }
}

impl Objective for SquaredError {
    fn queries(&self) -> &QueryBatch {
        &self.queries
    }

    fn evaluate(&self, out: ArrayView1<f64>) -> Result<(f64, Array1<f64>)> {
        let r = &out - &self.targets;
        let value = r.dot(&r) / self.denom;
        Ok((value, r * (2.0 / self.denom)))
    }
}

/// Mean over pairs of `e² + e'² − α e e'` with `e = y − ŷ`, `e' = y' − ŷ'`.
#[derive(Clone, Debug)]
pub struct PairObjective {
    queries: QueryBatch,
    y: Array1<f64>,
    alpha: f64,
}

impl PairObjective {
    pub fn new(pairs: &[&PairRecord], alpha: f64) -> Result<Self> {
        if !(0.0..=2.0).contains(&alpha) {
            return Err(invalid(format!("alpha {alpha} outside [0, 2]")));
        }
        let d = check_pairs(pairs)?;
        let x = stack(pairs.iter().map(|p| p.x.as_slice()).chain(pairs.iter().map(|p| p.x_prime.as_slice())), d)?;
        let t = pairs.iter().map(|p| p.t).chain(pairs.iter().map(|p| p.t_prime)).collect();
        let y = pairs.iter().map(|p| p.y).chain(pairs.iter().map(|p| p.y_prime)).collect();
        Ok(Self { queries: QueryBatch::new(x, t)?, y, alpha })
    }
}

impl Objective for PairObjective {
    fn queries(&self) -> &QueryBatch {
        &self.queries
    }

    fn evaluate(&self, out: ArrayView1<f64>) -> Result<(f64, Array1<f64>)> {
        let n = self.y.len() / 2;
        let mut grad = Array1::zeros(2 * n);
        let mut total = 0.0;
        for i in 0..n {
            let e = self.y[i] - out[i];
            let f = self.y[n + i] - out[n + i];
            total += e * e + f * f - self.alpha * e * f;
            grad[i] = -(2.0 * e - self.alpha * f) / n as f64;
            grad[n + i] = -(2.0 * f - self.alpha * e) / n as f64;
        }
        Ok((total / n as f64, grad))
    }
}

/// Cross-entropy of the outcome-difference label under the three-way distribution,
/// with network outputs read as logits of `P(y = 0)`.
#[derive(Debug)]
pub struct PairBinaryObjective {
    queries: QueryBatch,
    t: Vec<f64>,
    label: Vec<usize>,
    clamped: AtomicUsize,
}

impl PairBinaryObjective {
    pub fn new(pairs: &[&PairRecord]) -> Result<Self> {
        let d = check_pairs(pairs)?;
        let mut label = Vec::with_capacity(pairs.len());
        for p in pairs {
            let binary = |v: f64| v == 0.0 || v == 1.0;
            if !binary(p.y) || !binary(p.y_prime) || !binary(p.t) || p.t_prime != 1.0 - p.t {
                return Err(invalid("binary pair loss needs 0/1 outcomes and opposite 0/1 treatments"));
            }
            label.push((p.y - p.y_prime + 1.0) as usize);
        }
        let n = pairs.len();
        let rows = pairs
            .iter()
            .flat_map(|p| [p.x.as_slice(), p.x.as_slice(), p.x_prime.as_slice(), p.x_prime.as_slice()]);
        let x = stack(rows, d)?;
        let t = (0..n).flat_map(|_| [0.0, 1.0, 0.0, 1.0]).collect();
        Ok(Self { queries: QueryBatch::new(x, t)?, t: pairs.iter().map(|p| p.t).collect(), label, clamped: AtomicUsize::new(0) })
    }

    /// Number of evaluations where the target probability fell below the floor.
    pub fn clamped(&self) -> usize {
        self.clamped.load(Ordering::Relaxed)
    }
}

/// Partial derivatives of the three-way distribution w.r.t. (p0, p1, p0', p1').
fn three_way_jacobian(p: [f64; 4], t: f64) -> [[f64; 4]; 3] {
    let [p0, p1, q0, q1] = p;
    let c = 1.0 - t;
    [
        [(1.0 - q1) * c, (1.0 - q0) * t, -p1 * t, -p0 * c],
        [(2.0 * q1 - 1.0) * c, (2.0 * q0 - 1.0) * t, (2.0 * p1 - 1.0) * t, (2.0 * p0 - 1.0) * c],
        [-q1 * c, -q0 * t, (1.0 - p1) * t, (1.0 - p0) * c],
    ]
}

impl Objective for PairBinaryObjective {
    fn queries(&self) -> &QueryBatch {
        &self.queries
    }

    fn evaluate(&self, out: ArrayView1<f64>) -> Result<(f64, Array1<f64>)> {
        let n = self.label.len();
        let mut grad = Array1::zeros(4 * n);
        let mut total = 0.0;
        for i in 0..n {
            let p = [0, 1, 2, 3].map(|k| sigmoid(out[4 * i + k]));
            let probs = three_way_logits(p[0], p[1], p[2], p[3], self.t[i])?;
            let target = probs[self.label[i]];
            if target < PROB_FLOOR {
                self.clamped.fetch_add(1, Ordering::Relaxed);
                total -= PROB_FLOOR.ln();
                continue;
            }
            total -= target.ln();
            let jac = three_way_jacobian(p, self.t[i]);
            for k in 0..4 {
                grad[4 * i + k] = -jac[self.label[i]][k] * p[k] * (1.0 - p[k]) / (target * n as f64);
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFinite { block: "pair_binary".into() });
        }
        Ok((total / n as f64, grad))
    }
}

fn eval<N: Network, O: Objective>(model: &N, obj: &O) -> Result<f64> {
    Ok(obj.evaluate(model.predict_queries(obj.queries())?.view())?.0)
}

fn refs(pairs: &[PairRecord]) -> Vec<&PairRecord> {
    pairs.iter().collect()
}

/// Mean squared error on observed outcomes.
pub fn factual_loss<N: Network>(model: &N, d: &Dataset) -> Result<f64> {
    eval(model, &SquaredError::factual(d.x.view(), &d.t, &d.y)?)
}

pub fn pair_loss<N: Network>(model: &N, pairs: &[PairRecord], alpha: f64) -> Result<f64> {
    eval(model, &PairObjective::new(&refs(pairs), alpha)?)
}

/// Mean of `(ŷ(x, t') − y')²`.
pub fn matching_loss<N: Network>(model: &N, pairs: &[PairRecord]) -> Result<f64> {
    eval(model, &SquaredError::matching(&refs(pairs), false)?)
}

/// Loss value and how many pairs hit the probability floor.
pub fn pair_loss_binary<N: Network>(model: &N, pairs: &[PairRecord]) -> Result<(f64, usize)> {
    let obj = PairBinaryObjective::new(&refs(pairs))?;
    let v = eval(model, &obj)?;
    Ok((v, obj.clamped()))
}

pub fn pair_residual_loss(e: f64, e_prime: f64, alpha: f64) -> f64 {
    e * e + e_prime * e_prime - alpha * e * e_prime
}

/// The two squared residuals and the alignment term `−2 e e'`.
pub fn pair_loss_decomposition(y: f64, y_prime: f64, y_hat: f64, y_hat_prime: f64) -> (f64, f64, f64) {
    let e = y - y_hat;
    let f = y_prime - y_hat_prime;
    (e * e, f * f, -2.0 * e * f)
}
