//! Dense networks with batched backpropagation, Adam, L2 penalties and a
//! finite-difference gradient oracle.

mod adam;
pub mod chain;
mod mlp;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use chain::{elu, forward_vec as forward};
pub use mlp::Mlp;
pub use params::{init_chain, validate_chain, Activation, Dense, DenseSnapshot, LayerSpec, ParamStore, Snapshot};

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const PHI_BLOCK: &str = "phi";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegConfig {
    pub l2_phi_weight: f64,
    pub l2_head_weight: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self { l2_phi_weight: 1.0, l2_head_weight: 1e-4 }
    }
}

impl RegConfig {
    pub const NONE: RegConfig = RegConfig { l2_phi_weight: 0.0, l2_head_weight: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if self.l2_phi_weight >= 0.0 && self.l2_head_weight >= 0.0 {
            Ok(())
        } else {
            Err(invalid("L2 weights must be non-negative"))
        }
    }

    fn weight_for(&self, block: &str) -> f64 {
        if block == PHI_BLOCK {
            self.l2_phi_weight
        } else {
            self.l2_head_weight
        }
    }
}

/// Penalty on weight matrices; biases are not penalized.
pub fn l2_penalty(params: &ParamStore, reg: &RegConfig) -> f64 {
    params
        .blocks()
        .map(|(name, layers)| {
            let w = reg.weight_for(name);
            if w == 0.0 {
                return 0.0;
            }
            w * layers.iter().map(|d| d.weight.iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
        })
        .sum()
}

pub fn add_l2_gradient(params: &ParamStore, reg: &RegConfig, grads: &mut ParamStore) {
    for ((name, p), (_, g)) in params.blocks().zip(grads.blocks_mut()) {
        let w = reg.weight_for(name);
        if w == 0.0 {
            continue;
        }
        for (pd, gd) in p.iter().zip(g.iter_mut()) {
            gd.weight.scaled_add(2.0 * w, &pd.weight);
        }
    }
}

/// Rows of (covariates, treatment) at which a network is evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryBatch {
    pub x: Array2<f64>,
    pub t: Vec<f64>,
}

impl QueryBatch {
    pub fn new(x: Array2<f64>, t: Vec<f64>) -> Result<Self> {
        if x.nrows() != t.len() {
            return Err(invalid(format!("{} covariate rows but {} treatments", x.nrows(), t.len())));
        }
        Ok(Self { x, t })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// A differentiable map from parameters to one scalar output per query row.
pub trait Network {
    type Trace;

    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn forward_queries(&self, queries: &QueryBatch) -> Result<(Array1<f64>, Self::Trace)>;
    fn backward_queries(&self, trace: &Self::Trace, d_out: ArrayView1<f64>) -> Result<ParamStore>;

    fn predict_queries(&self, queries: &QueryBatch) -> Result<Array1<f64>> {
        Ok(self.forward_queries(queries)?.0)
    }
}

/// A scalar loss over network outputs at a fixed set of queries.
pub trait Objective {
    fn queries(&self) -> &QueryBatch;
    /// Loss value and its gradient w.r.t. each query output.
    fn evaluate(&self, outputs: ArrayView1<f64>) -> Result<(f64, Array1<f64>)>;
}

fn data_term<N: Network, O: Objective + ?Sized>(net: &N, obj: &O) -> Result<f64> {
    if obj.queries().is_empty() {
        return Ok(0.0);
    }
    let out = net.predict_queries(obj.queries())?;
    Ok(obj.evaluate(out.view())?.0)
}

/// Objective value plus L2 penalty.
pub fn loss_value<N: Network, O: Objective + ?Sized>(net: &N, obj: &O, reg: &RegConfig) -> Result<f64> {
    Ok(data_term(net, obj)? + l2_penalty(net.params(), reg))
}

/// Value and gradient of objective plus L2 penalty.
pub fn gradient<N: Network, O: Objective + ?Sized>(net: &N, obj: &O, reg: &RegConfig) -> Result<(f64, ParamStore)> {
    let (value, mut grads) = if obj.queries().is_empty() {
        (0.0, net.params().zeros_like())
    } else {
        let (out, trace) = net.forward_queries(obj.queries())?;
        let (value, d_out) = obj.evaluate(out.view())?;
        if !value.is_finite() {
            return Err(Error::NonFinite { block: "objective".into() });
        }
        (value, net.backward_queries(&trace, d_out.view())?)
    };
    add_l2_gradient(net.params(), reg, &mut grads);
    grads.check_finite()?;
    Ok((value + l2_penalty(net.params(), reg), grads))
}

/// Largest `|analytic − numeric| / max(1, |numeric|)` over all coordinates, using central
/// differences.
pub fn finite_diff_check<N: Network + Clone, O: Objective + ?Sized>(
    net: &N,
    obj: &O,
    reg: &RegConfig,
    epsilon: f64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(invalid(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let (_, analytic) = gradient(net, obj, reg)?;
    let analytic = analytic.to_flat();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let original = *probe.params_mut().coord_mut(i).expect("coordinate in range");
        *probe.params_mut().coord_mut(i).expect("coordinate in range") = original + epsilon;
        let up = loss_value(&probe, obj, reg)?;
        *probe.params_mut().coord_mut(i).expect("coordinate in range") = original - epsilon;
        let down = loss_value(&probe, obj, reg)?;
        *probe.params_mut().coord_mut(i).expect("coordinate in range") = original;
        let numeric = (up - down) / (2.0 * epsilon);
        worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
    }
    Ok(worst)
}
