use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, GroundTruth, Oracle};
use crate::error::{invalid, Error, Result};
use crate::models::TreatmentMode;
use crate::seed;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-2;

/// Piecewise-linear function on a uniform grid, constant beyond the ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub lo: f64,
    pub hi: f64,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![lo];
        }
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.values.len();
        if n == 1 || x <= self.lo {
            return self.values[0];
        }
        if x >= self.hi {
            return self.values[n - 1];
        }
        let pos = (x - self.lo) / (self.hi - self.lo) * (n - 1) as f64;
        let i = (pos.floor() as usize).min(n - 2);
        let w = pos - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    pub fn zeros_like(&self) -> Self {
        Self { lo: self.lo, hi: self.hi, values: vec![0.0; self.values.len()] }
    }
}

/// Cholesky factor of an RBF Gram matrix, reusable across draws.
#[derive(Clone, Debug)]
pub struct GpSampler {
    factor: DMatrix<f64>,
    pub jitter: f64,
}

impl GpSampler {
    pub fn new(xs: &[f64], width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(invalid(format!("kernel width {width} must be positive")));
        }
        if xs.is_empty() || xs.iter().any(|v| !v.is_finite()) {
            return Err(invalid("GP inputs must be finite and non-empty"));
        }
        let n = xs.len();
        let k = DMatrix::from_fn(n, n, |i, j| (-(xs[i] - xs[j]).powi(2) / (2.0 * width * width)).exp());
        let mut jitter = JITTER_START;
        while jitter <= JITTER_MAX {
            let mut kj = k.clone();
            for i in 0..n {
                kj[(i, i)] += jitter;
            }
            if let Some(c) = kj.cholesky() {
                return Ok(Self { factor: c.l(), jitter });
            }
            jitter *= 10.0;
        }
        Err(Error::Factorization { jitter: JITTER_MAX })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.factor.nrows();
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        (&self.factor * z).iter().copied().collect()
    }
}

/// One zero-mean draw from a GP with an RBF kernel of the given width at `xs`.
pub fn sample_gp<R: Rng + ?Sized>(xs: &[f64], width: f64, rng: &mut R) -> Result<Vec<f64>> {
    Ok(GpSampler::new(xs, width)?.draw(rng))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpToyConfig {
    /// Kernel width of the true control outcome.
    pub gamma: f64,
    /// Kernel width of the true effect.
    pub eta: f64,
    pub gamma_prime: f64,
    pub eta_prime: f64,
    /// Mean shift of the treated covariates.
    pub shift: f64,
    pub base_mean: f64,
    pub n0: usize,
    pub n1: usize,
    pub noise: f64,
    pub grid_points: usize,
    pub num_candidates: usize,
    pub zero_effect: bool,
    pub seed: u64,
}

impl Default for GpToyConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            eta: 2.0,
            gamma_prime: 1.0,
            eta_prime: 2.0,
            shift: 1.0,
            base_mean: 0.0,
            n0: 150,
            n1: 50,
            noise: 0.1,
            grid_points: 512,
            num_candidates: 200,
            zero_effect: false,
            seed: 0,
        }
    }
}

impl GpToyConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [self.gamma, self.eta, self.gamma_prime, self.eta_prime];
        if widths.iter().any(|w| !(*w > 0.0)) {
            return Err(invalid("kernel widths must be positive"));
        }
        if self.n0 == 0 || self.n1 == 0 || self.grid_points < 2 {
            return Err(invalid("group counts must be >= 1 and the grid needs >= 2 points"));
        }
        if !(self.noise >= 0.0) {
            return Err(invalid("noise must be non-negative"));
        }
        Ok(())
    }
}

/// A GP-generated dataset together with its true functions and candidate estimates.
#[derive(Clone, Debug)]
pub struct GpToy {
    pub dataset: Dataset,
    pub mu0: GridFunction,
    pub tau: GridFunction,
    pub candidates: Vec<(GridFunction, GridFunction)>,
    /// Quadrature weights of the covariate mixture on the grid, summing to 1.
    pub density: Vec<f64>,
}

impl GpToy {
    pub fn mu(&self, x: f64, t: f64) -> f64 {
        self.mu0.eval(x) + t * self.tau.eval(x)
    }

    /// Mean squared effect error of `tau_hat` under the covariate mixture.
    pub fn ite_risk(&self, tau_hat: &GridFunction) -> f64 {
        self.tau
            .values
            .iter()
            .zip(&tau_hat.values)
            .zip(&self.density)
            .map(|((a, b), w)| w * (a - b).powi(2))
            .sum()
    }
}

fn normal_pdf(x: f64, mean: f64) -> f64 {
    (-(x - mean).powi(2) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn gen_gp_toy(config: &GpToyConfig) -> Result<GpToy> {
    config.validate()?;
    let c = config;
    let mut rng = seed::rng(c.seed);
    let (m0, m1) = (c.base_mean, c.base_mean + c.shift);
    let lo = m0.min(m1) - 4.0;
    let hi = m0.max(m1) + 4.0;
    let grid = GridFunction::points(lo, hi, c.grid_points);
    let func = |values| GridFunction { lo, hi, values };

    let sampler_gamma = GpSampler::new(&grid, c.gamma)?;
    let sampler_eta = GpSampler::new(&grid, c.eta)?;
    let mu0 = func(sampler_gamma.draw(&mut rng));
    let tau_draw = sampler_eta.draw(&mut rng);
    let tau = if c.zero_effect { func(vec![0.0; grid.len()]) } else { func(tau_draw) };

    let n = c.n0 + c.n1;
    let mut x = Array2::zeros((n, 1));
    let mut t = vec![0.0; n];
    let mut y = vec![0.0; n];
    for i in 0..n {
        let treated = i >= c.n0;
        let z: f64 = StandardNormal.sample(&mut rng);
        let xi = if treated { m1 } else { m0 } + z;
        let ti = if treated { 1.0 } else { 0.0 };
        let e: f64 = StandardNormal.sample(&mut rng);
        x[[i, 0]] = xi;
        t[i] = ti;
        y[i] = mu0.eval(xi) + ti * tau.eval(xi) + c.noise * e;
    }

    let sampler_gp = if c.gamma_prime == c.gamma { sampler_gamma } else { GpSampler::new(&grid, c.gamma_prime)? };
    let sampler_ep = if c.eta_prime == c.eta { sampler_eta } else { GpSampler::new(&grid, c.eta_prime)? };
    let candidates = (0..c.num_candidates)
        .map(|_| (func(sampler_gp.draw(&mut rng)), func(sampler_ep.draw(&mut rng))))
        .collect();

    let (w0, w1) = (c.n0 as f64 / n as f64, c.n1 as f64 / n as f64);
    let step = (hi - lo) / (grid.len() - 1) as f64;
    let mut density: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let trap = if i == 0 || i == grid.len() - 1 { 0.5 } else { 1.0 };
            trap * step * (w0 * normal_pdf(g, m0) + w1 * normal_pdf(g, m1))
        })
        .collect();
    let total: f64 = density.iter().sum();
    density.iter_mut().for_each(|d| *d /= total);

    let oracle = Oracle::Grid { mu0: mu0.clone(), tau: tau.clone() };
    let dataset = Dataset::new(x, t, y, TreatmentMode::Binary)?
        .with_truth(GroundTruth::Oracle(Arc::new(oracle)))?
        .with_id(format!("gp_toy_seed{}", c.seed));
    Ok(GpToy { dataset, mu0, tau, candidates, density })
}
