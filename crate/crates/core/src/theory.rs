//! Residual-risk functionals on finite one-dimensional supports: the exact identity
//! linking effect risk to pair risk, the Lipschitz/IPM upper bound, and the
//! shrinking-neighborhood sweep.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::metrics::wasserstein1_weighted;
use crate::models::{sigmoid, TreatmentMode};
use crate::pairing::{create_pair_ds, neighbor_diagnostics, EmbeddingProvider, PairingConfig, Replacement};
use crate::seed;

const MASS_TOL: f64 = 1e-9;
const LIP_GRID: usize = 4001;

/// Polynomial with ascending coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self) -> Self {
        Self { coeffs: self.coeffs.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect() }
    }

    pub fn square(&self) -> Self {
        let n = self.coeffs.len();
        if n == 0 {
            return Self { coeffs: Vec::new() };
        }
        let mut out = vec![0.0; 2 * n - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in self.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self { coeffs: out }
    }

    /// Upper bound on `max |p|` over `[lo, hi]`: grid maximum plus half a grid step
    /// times a coefficient bound on `|p'|`.
    pub fn max_abs_on(&self, lo: f64, hi: f64) -> f64 {
        if self.coeffs.iter().all(|&c| c == 0.0) {
            return 0.0;
        }
        if hi <= lo {
            return self.eval(lo).abs();
        }
        let step = (hi - lo) / (LIP_GRID - 1) as f64;
        let grid_max = (0..LIP_GRID).map(|i| self.eval(lo + step * i as f64).abs()).fold(0.0, f64::max);
        let m = lo.abs().max(hi.abs());
        let slope_bound: f64 = self
            .derivative()
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c.abs() * m.powi(k as i32))
            .sum();
        grid_max + 0.5 * step * slope_bound
    }

    /// Upper bound on the Lipschitz constant over `[lo, hi]`.
    pub fn lipschitz_on(&self, lo: f64, hi: f64) -> f64 {
        self.derivative().max_abs_on(lo, hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborKernel {
    /// `q_t(x'|x) ∝ exp(−λ|x − x'|) p_{1−t}(x')`.
    MassWeighted { lambda: f64 },
    /// `q_t(x'|x) ∝ exp(−λ|x − x'|)` over points with `p_{1−t}(x') > 0`.
    Unweighted { lambda: f64 },
    /// All mass on the nearest point with `p_{1−t}(x') > 0` (lowest index on ties).
    Nearest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteScene {
    pub points: Vec<f64>,
    pub p: [Vec<f64>; 2],
    pub u: [f64; 2],
    pub r: [Polynomial; 2],
    pub kernel: NeighborKernel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFunctionals {
    pub eps_ite: f64,
    pub eps_pair: f64,
    pub eps_f: [f64; 2],
    pub g01: Vec<f64>,
    pub g10: Vec<f64>,
    /// Neighbor marginals `Σ_x q_t(x'|x) p_t(x)` on the support.
    pub q_marginal: [Vec<f64>; 2],
    /// Row-stochastic neighbor kernels, `q[t][(x, x')]`.
    #[serde(skip)]
    pub q: [Array2<f64>; 2],
}

impl FiniteScene {
    pub fn validate(&self) -> Result<()> {
        let m = self.points.len();
        if m == 0 || self.points.iter().any(|v| !v.is_finite()) {
            return Err(invalid("scene needs finite support points"));
        }
        for t in 0..2 {
            if self.p[t].len() != m || self.p[t].iter().any(|&v| !(v >= 0.0)) {
                return Err(invalid(format!("p_{t} must be {m} non-negative masses")));
            }
            if (self.p[t].iter().sum::<f64>() - 1.0).abs() > MASS_TOL {
                return Err(invalid(format!("p_{t} is not normalized")));
            }
        }
        if self.u.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (self.u[0] + self.u[1] - 1.0).abs() > MASS_TOL {
            return Err(invalid("treatment marginals must be non-negative and sum to 1"));
        }
        match self.kernel {
            NeighborKernel::MassWeighted { lambda } | NeighborKernel::Unweighted { lambda } if !(lambda >= 0.0) => {
                Err(invalid("kernel temperature must be non-negative"))
            }
            _ => Ok(()),
        }
    }

    pub fn residuals(&self, t: usize) -> Vec<f64> {
        self.points.iter().map(|&x| self.r[t].eval(x)).collect()
    }

    pub fn hull(&self) -> (f64, f64) {
        let lo = self.points.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.points.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Row-stochastic kernel of neighbors for anchors of treatment `t`.
    pub fn kernel_matrix(&self, t: usize) -> Array2<f64> {
        let m = self.points.len();
        let other = &self.p[1 - t];
        let mut q = Array2::zeros((m, m));
        for i in 0..m {
            let xi = self.points[i];
            let allowed: Vec<usize> = (0..m).filter(|&j| other[j] > 0.0).collect();
            if allowed.is_empty() {
                continue;
            }
            let dmin = allowed.iter().map(|&j| (xi - self.points[j]).abs()).fold(f64::INFINITY, f64::min);
            match self.kernel {
                NeighborKernel::Nearest => {
                    let j = *allowed.iter().find(|&&j| (xi - self.points[j]).abs() == dmin).expect("non-empty");
                    q[[i, j]] = 1.0;
                }
                NeighborKernel::MassWeighted { lambda } | NeighborKernel::Unweighted { lambda } => {
                    let weighted = matches!(self.kernel, NeighborKernel::MassWeighted { .. });
                    for &j in &allowed {
                        let w = (-lambda * ((xi - self.points[j]).abs() - dmin)).exp();
                        q[[i, j]] = if weighted { w * other[j] } else { w };
                    }
                    let s: f64 = q.row(i).sum();
                    q.row_mut(i).mapv_inplace(|v| v / s);
                }
            }
        }
        q
    }
}

pub fn scene_functionals(scene: &FiniteScene) -> Result<SceneFunctionals> {
    scene.validate()?;
    let m = scene.points.len();
    let r = [scene.residuals(0), scene.residuals(1)];
    let q = [scene.kernel_matrix(0), scene.kernel_matrix(1)];
    let p = &scene.p;
    let u = scene.u;

    let eps_ite = (0..m).map(|x| (u[0] * p[0][x] + u[1] * p[1][x]) * (r[1][x] - r[0][x]).powi(2)).sum();
    let eps_f = [0, 1].map(|t| (0..m).map(|x| p[t][x] * r[t][x].powi(2)).sum::<f64>());
    let mut eps_pair = 0.0;
    for t in 0..2 {
        let mut s = 0.0;
        for x in 0..m {
            if p[t][x] == 0.0 {
                continue;
            }
            let inner: f64 = (0..m).map(|xp| q[t][[x, xp]] * (r[t][x] - r[1 - t][xp]).powi(2)).sum();
            s += p[t][x] * inner;
        }
        eps_pair += u[t] * s;
    }
    // g01 drifts r0 under the treated-anchor kernel; g10 drifts r1 under the control-anchor kernel.
    let drift = |res: &Vec<f64>, k: &Array2<f64>| -> Vec<f64> {
        (0..m).map(|x| (0..m).map(|xp| (res[xp] - res[x]) * k[[x, xp]]).sum()).collect()
    };
    let g01 = drift(&r[0], &q[1]);
    let g10 = drift(&r[1], &q[0]);
    let q_marginal = [0, 1].map(|t| (0..m).map(|xp| (0..m).map(|x| q[t][[x, xp]] * p[t][x]).sum()).collect());
    Ok(SceneFunctionals { eps_ite, eps_pair, eps_f, g01, g10, q_marginal, q })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    /// Right-hand side with the marginal and residual indices of the two sides swapped
    /// in the first sum; not an identity in general, kept for comparison.
    pub rhs_swapped: f64,
}

/// `ε_ITE − ε_pair` against
/// `Σ_t u_t Σ_x r_{1−t}²(p_t − q_t) + Σ_t 2u_t Σ_x r_t g_{(1−t)t} p_t`.
pub fn verify_lemma_identity(scene: &FiniteScene) -> Result<LemmaCheck> {
    let f = scene_functionals(scene)?;
    let m = scene.points.len();
    let r = [scene.residuals(0), scene.residuals(1)];
    let (p, u) = (&scene.p, scene.u);
    let mass_term = |t: usize, rt: usize| -> f64 { (0..m).map(|x| r[rt][x].powi(2) * (p[t][x] - f.q_marginal[t][x])).sum() };
    let g = [&f.g10, &f.g01];
    let cross: f64 = (0..2).map(|t| 2.0 * u[t] * (0..m).map(|x| r[t][x] * g[t][x] * p[t][x]).sum::<f64>()).sum();
    let rhs = u[0] * mass_term(0, 1) + u[1] * mass_term(1, 0) + cross;
    let rhs_swapped = u[1] * mass_term(0, 0) + u[0] * mass_term(1, 1) + cross;
    let lhs = f.eps_ite - f.eps_pair;
    Ok(LemmaCheck { lhs, rhs, gap: (lhs - rhs).abs(), rhs_swapped })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ipm {
    Wasserstein1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub eps_ite: f64,
    pub eps_pair: f64,
    pub bound: f64,
    pub margin: f64,
    pub holds: bool,
    /// `Σ_t u_t W1(p_t, q_t)`.
    pub pair_ipm: f64,
    /// `W1(p_1, p_0)`.
    pub factual_ipm: f64,
    pub factual_bound: f64,
    pub b: f64,
    pub k: [f64; 2],
    pub delta: f64,
    pub delta_sq: f64,
}

pub fn verify_ite_bound(scene: &FiniteScene, ipm: Ipm) -> Result<BoundCheck> {
    let Ipm::Wasserstein1 = ipm;
    let f = scene_functionals(scene)?;
    let m = scene.points.len();
    let (lo, hi) = scene.hull();
    let k = [0, 1].map(|t| scene.r[t].lipschitz_on(lo, hi));
    let b = scene.r[0].square().lipschitz_on(lo, hi).max(scene.r[1].square().lipschitz_on(lo, hi));
    let (mut delta, mut delta_sq) = (0.0f64, 0.0f64);
    for t in 0..2 {
        for x in 0..m {
            if scene.p[t][x] == 0.0 {
                continue;
            }
            let row = f.q[t].row(x);
            let d: f64 = (0..m).map(|xp| row[xp] * (scene.points[x] - scene.points[xp]).abs()).sum();
            let d2: f64 = (0..m).map(|xp| row[xp] * (scene.points[x] - scene.points[xp]).powi(2)).sum();
            delta = delta.max(d);
            delta_sq = delta_sq.max(d2);
        }
    }
    let w1 = |a: &[f64], c: &[f64]| wasserstein1_weighted(&scene.points, a, &scene.points, c);
    let mut bound = f.eps_pair;
    let mut pair_ipm = 0.0;
    for t in 0..2 {
        let w = w1(&scene.p[t], &f.q_marginal[t])?;
        pair_ipm += scene.u[t] * w;
        bound += scene.u[t] * (b * w + 2.0 * k[1 - t] * delta * f.eps_f[t].sqrt());
    }
    let factual_ipm = w1(&scene.p[1], &scene.p[0])?;
    let factual_bound = 2.0 * (f.eps_f[0] + f.eps_f[1] + b * factual_ipm);
    Ok(BoundCheck {
        eps_ite: f.eps_ite,
        eps_pair: f.eps_pair,
        bound,
        margin: bound - f.eps_ite,
        holds: f.eps_ite <= bound + 1e-12,
        pair_ipm,
        factual_ipm,
        factual_bound,
        b,
        k,
        delta,
        delta_sq,
    })
}

fn random_masses<R: Rng + ?Sized>(m: usize, rng: &mut R, tilt: f64, points: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = (0..m)
        .map(|i| {
            let e: f64 = rng.random::<f64>().max(1e-12);
            -e.ln() * (tilt * points[i]).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Random scene: `m` sorted points in `[−2, 2]`, Dirichlet(1) masses, residuals of the
/// given degree with standard normal coefficients.
pub fn random_scene<R: Rng + ?Sized>(m: usize, degree: usize, kernel: NeighborKernel, rng: &mut R) -> FiniteScene {
    let mut points: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    points.sort_by(f64::total_cmp);
    let p = [random_masses(m, rng, 0.0, &points), random_masses(m, rng, 0.0, &points)];
    let u0 = rng.random_range(0.2..0.8);
    let r = [0, 1].map(|_| Polynomial::new((0..=degree).map(|_| StandardNormal.sample(rng)).collect()));
    FiniteScene { points, p, u: [u0, 1.0 - u0], r, kernel }
}

/// Scene whose control mass sits mostly on the left and treated mass on the right.
pub fn confounded_scene<R: Rng + ?Sized>(m: usize, tilt: f64, kernel: NeighborKernel, rng: &mut R) -> FiniteScene {
    let mut scene = random_scene(m, 1, kernel, rng);
    scene.p = [random_masses(m, rng, -tilt, &scene.points), random_masses(m, rng, tilt, &scene.points)];
    scene
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SweepGenerator {
    /// Uniform covariates on `[0,1]^d`, propensity clipped to `[c, 1 − c]`.
    StrictOverlap { c: f64 },
    /// Control on `[0,1]`, treated on `[1 + gap, 2 + gap]` in the first coordinate.
    DisjointSupports { gap: f64 },
    /// Every covariate row identical.
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub generator: SweepGenerator,
    pub sizes: Vec<usize>,
    pub dim: usize,
    pub pairing: PairingConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            generator: SweepGenerator::StrictOverlap { c: 0.1 },
            sizes: vec![100, 400, 1600, 6400],
            dim: 1,
            pairing: PairingConfig {
                delta_pair: 0.0,
                num_neighbors: 1,
                temperature: 1e6,
                continuous_halfwidth: 0.05,
                replacement: Replacement::Auto,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub delta_hat: f64,
    pub delta_hat_sq: f64,
    /// W1 between anchor and neighbor first coordinates, per anchor treatment.
    pub w1: [f64; 2],
}

/// Binary dataset from a sweep generator; outcomes are `sin(2π x_0) + t x_0`.
pub fn sweep_dataset<R: Rng + ?Sized>(generator: SweepGenerator, n: usize, dim: usize, rng: &mut R) -> Result<Dataset> {
    if n < 2 || dim == 0 {
        return Err(invalid("sweep needs n >= 2 and dim >= 1"));
    }
    let mut x = Array2::zeros((n, dim));
    let mut t = vec![0.0; n];
    for i in 0..n {
        match generator {
            SweepGenerator::StrictOverlap { c } => {
                if !(c > 0.0 && c < 0.5) {
                    return Err(invalid("overlap constant must be in (0, 0.5)"));
                }
                for j in 0..dim {
                    x[[i, j]] = rng.random::<f64>();
                }
                let e = sigmoid(4.0 * (x[[i, 0]] - 0.5)).clamp(c, 1.0 - c);
                t[i] = if Bernoulli::new(e).expect("probability").sample(rng) { 1.0 } else { 0.0 };
            }
            SweepGenerator::DisjointSupports { gap } => {
                t[i] = if i % 2 == 0 { 0.0 } else { 1.0 };
                for j in 0..dim {
                    x[[i, j]] = rng.random::<f64>();
                }
                x[[i, 0]] += t[i] * (1.0 + gap);
            }
            SweepGenerator::Degenerate => {
                x.row_mut(i).fill(0.5);
                t[i] = (i % 2) as f64;
            }
        }
    }
    if t.iter().all(|&v| v == t[0]) {
        t[0] = 1.0 - t[0];
    }
    let y = (0..n).map(|i| (2.0 * std::f64::consts::PI * x[[i, 0]]).sin() + t[i] * x[[i, 0]]).collect();
    Dataset::new(x, t, y, TreatmentMode::Binary)
}

/// Neighbor distance diagnostics as the sample size grows.
pub fn consistency_sweep(config: &SweepConfig, rng_seed: u64) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(config.sizes.len());
    for (k, &n) in config.sizes.iter().enumerate() {
        let mut rng = seed::rng_at(rng_seed, &[k as u64, n as u64]);
        let d = sweep_dataset(config.generator, n, config.dim, &mut rng)?;
        let provider = EmbeddingProvider::identity(config.dim);
        let pairs = create_pair_ds(&d, &d, &config.pairing, &provider, seed::derive(rng_seed, &[k as u64, 1]))?;
        let diag = neighbor_diagnostics(&pairs)?;
        let mut w1 = [0.0; 2];
        for (t, slot) in w1.iter_mut().enumerate() {
            let (a, b): (Vec<f64>, Vec<f64>) =
                pairs.records.iter().filter(|r| r.t == t as f64).map(|r| (r.x[0], r.x_prime[0])).unzip();
            if !a.is_empty() {
                *slot = crate::metrics::wasserstein1_1d(&a, &b)?;
            }
        }
        rows.push(SweepRow { n, delta_hat: diag.delta_hat, delta_hat_sq: diag.delta_hat_sq, w1 });
    }
    Ok(rows)
}
