use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, GroundTruth, Oracle};
use crate::error::{invalid, Result};
use crate::models::{sigmoid, TreatmentMode};

/// Sum of `coef * Π x_i^e_i` over the leading covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiPoly {
    pub terms: Vec<(f64, Vec<u8>)>,
}

fn exponents(dims: usize, max_degree: u8) -> Vec<Vec<u8>> {
    fn rec(prefix: &mut Vec<u8>, dims: usize, left: u8, out: &mut Vec<Vec<u8>>) {
        if prefix.len() == dims {
            out.push(prefix.clone());
            return;
        }
        for e in 0..=left {
            prefix.push(e);
            rec(prefix, dims, left - e, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), dims, max_degree, &mut out);
    out
}

/// `(k − 1)!!`, the even moment `E[z^k]` of a standard normal for even `k`.
fn double_factorial(k: u32) -> f64 {
    (1..k).step_by(2).map(|v| v as f64).product()
}

impl MultiPoly {
    /// All monomials of total degree ≤ `degree` in `dims` variables with standard normal coefficients.
    pub fn random<R: Rng + ?Sized>(dims: usize, degree: u8, rng: &mut R) -> Self {
        let terms = exponents(dims, degree).into_iter().map(|e| (StandardNormal.sample(rng), e)).collect();
        Self { terms }
    }

    /// `E[p(x)²]` for `x ~ N(0, I)` averaged over standard normal coefficients, i.e. the
    /// sum of the monomials' second moments.
    pub fn expected_square(&self) -> f64 {
        self.terms.iter().map(|(_, e)| e.iter().map(|&p| double_factorial(2 * p as u32)).product::<f64>()).sum()
    }

    /// Rescales the coefficients so that [`Self::expected_square`] of the draw is 1.
    pub fn unit_scaled(mut self) -> Self {
        let s = self.expected_square().sqrt();
        self.terms.iter_mut().for_each(|(c, _)| *c /= s);
        self
    }

    pub fn eval(&self, x: ArrayView1<f64>) -> f64 {
        self.terms
            .iter()
            .map(|(c, e)| c * e.iter().enumerate().map(|(i, &p)| x[i].powi(p as i32)).product::<f64>())
            .sum()
    }

    pub fn degree(&self) -> u8 {
        self.terms.iter().map(|(_, e)| e.iter().sum::<u8>()).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyOracle {
    pub mu0: MultiPoly,
    pub tau: MultiPoly,
    pub propensity_direction: Vec<f64>,
    pub propensity_strength: f64,
    pub total_dims: usize,
}

impl PolyOracle {
    pub fn mu(&self, x: ArrayView1<f64>, t: f64) -> f64 {
        self.mu0.eval(x) + t * self.tau.eval(x)
    }

    pub fn propensity(&self, x: ArrayView1<f64>) -> f64 {
        let z: f64 = self.propensity_direction.iter().enumerate().map(|(i, w)| w * x[i]).sum();
        sigmoid(self.propensity_strength * z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolySynthConfig {
    pub relevant_dims: usize,
    pub total_dims: usize,
    pub propensity_strength: f64,
    pub noise_sd: f64,
    /// Rescale both polynomials to unit expected square.
    pub unit_scale: bool,
}

impl Default for PolySynthConfig {
    fn default() -> Self {
        Self { relevant_dims: 5, total_dims: 10, propensity_strength: 1.0, noise_sd: 0.1, unit_scale: true }
    }
}

impl PolySynthConfig {
    /// Random cubic baseline, quadratic effect and logistic propensity on the leading covariates.
    pub fn draw_oracle<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PolyOracle> {
        if self.relevant_dims == 0 || self.relevant_dims > self.total_dims {
            return Err(invalid("need 1 <= relevant_dims <= total_dims"));
        }
        let mut mu0 = MultiPoly::random(self.relevant_dims, 3, rng);
        let mut tau = MultiPoly::random(self.relevant_dims, 2, rng);
        if self.unit_scale {
            mu0 = mu0.unit_scaled();
            tau = tau.unit_scaled();
        }
        let mut w: Vec<f64> = (0..self.relevant_dims).map(|_| StandardNormal.sample(rng)).collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        w.iter_mut().for_each(|v| *v /= norm);
        Ok(PolyOracle {
            mu0,
            tau,
            propensity_direction: w,
            propensity_strength: self.propensity_strength,
            total_dims: self.total_dims,
        })
    }

    /// `n` rows with standard normal covariates drawn under `oracle`.
    pub fn sample<R: Rng + ?Sized>(&self, oracle: &Arc<Oracle>, n: usize, rng: &mut R) -> Result<Dataset> {
        let Oracle::Polynomial(p) = oracle.as_ref() else {
            return Err(invalid("polynomial sampling needs a polynomial oracle"));
        };
        if n == 0 {
            return Err(invalid("n must be at least 1"));
        }
        let d = p.total_dims;
        let x = Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(rng));
        let mut t = vec![0.0; n];
        let mut y = vec![0.0; n];
        for i in 0..n {
            let row = x.row(i);
            let coin = Bernoulli::new(p.propensity(row)).map_err(|e| invalid(e.to_string()))?;
            t[i] = if coin.sample(rng) { 1.0 } else { 0.0 };
            let e: f64 = StandardNormal.sample(rng);
            y[i] = p.mu(row, t[i]) + self.noise_sd * e;
        }
        Dataset::new(x, t, y, TreatmentMode::Binary)?.with_truth(GroundTruth::Oracle(Arc::clone(oracle)))
    }
}

pub fn gen_polynomial_synth<R: Rng + ?Sized>(n: usize, config: &PolySynthConfig, rng: &mut R) -> Result<Dataset> {
    let oracle = Arc::new(Oracle::Polynomial(config.draw_oracle(rng)?));
    Ok(config.sample(&oracle, n, rng)?.with_id("polynomial"))
}
