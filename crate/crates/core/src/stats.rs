//! Student-t distribution and t-tests.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const CF_EPS: f64 = 1e-12;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 10_000;

/// Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)` by modified Lentz continued fractions.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return Err(invalid(format!("incomplete beta undefined for a={a}, b={b}, x={x}")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    Ok(if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    })
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) {
        return Err(invalid(format!("degrees of freedom {df} must be positive")));
    }
    if t.is_nan() {
        return Err(invalid("t is NaN"));
    }
    if t.is_infinite() {
        return Ok(if t > 0.0 { 1.0 } else { 0.0 });
    }
    let tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))?;
    Ok(if t > 0.0 { 1.0 - tail } else { tail })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestReport {
    pub t: f64,
    pub p: f64,
    pub n: usize,
    pub mean_reference: f64,
    pub mean_other: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// Paired test of `H1: mean(reference) < mean(other)` on `d = other − reference`.
/// All-zero differences give `t = 0, p = 0.5`.
pub fn paired_t_test_one_sided(reference: &[f64], other: &[f64]) -> Result<TTestReport> {
    let n = reference.len();
    if n != other.len() {
        return Err(invalid(format!("paired samples differ in length: {n} vs {}", other.len())));
    }
    if n < 2 {
        return Err(invalid("paired t-test needs at least 2 pairs"));
    }
    let d: Vec<f64> = other.iter().zip(reference).map(|(o, r)| o - r).collect();
    let (mean_reference, mean_other) = (mean(reference), mean(other));
    if d.iter().all(|&v| v == 0.0) {
        return Ok(TTestReport { t: 0.0, p: 0.5, n, mean_reference, mean_other });
    }
    let sd = sample_var(&d).sqrt();
    let md = mean(&d);
    let t = if sd == 0.0 { md.signum() * f64::INFINITY } else { md / (sd / (n as f64).sqrt()) };
    let p = 1.0 - student_t_cdf(t, (n - 1) as f64)?;
    Ok(TTestReport { t, p, n, mean_reference, mean_other })
}

/// Pooled-variance two-sample t statistic and two-sided p-value.
pub fn two_sample_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let (na, nb) = (a.len(), b.len());
    if na < 2 || nb < 2 {
        return Err(invalid("each sample needs at least 2 values"));
    }
    let df = (na + nb - 2) as f64;
    let pooled = ((na - 1) as f64 * sample_var(a) + (nb - 1) as f64 * sample_var(b)) / df;
    let se = (pooled * (1.0 / na as f64 + 1.0 / nb as f64)).sqrt();
    if se == 0.0 {
        return Err(invalid("both samples are constant"));
    }
    let t = (mean(a) - mean(b)) / se;
    let p = 2.0 * (1.0 - student_t_cdf(t.abs(), df)?);
    Ok((t, p))
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `values` and Uniform[0,1].
pub fn ks_uniform_statistic(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max)
}
