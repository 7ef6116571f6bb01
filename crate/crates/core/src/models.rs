//! Two-headed treatment-effect networks, binned continuous-treatment heads, and the
//! three-way outcome-difference distribution for binary outcomes.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::chain::{self, ChainTrace};
use crate::nn::{init_chain, Activation, Dense, LayerSpec, Network, ParamStore, QueryBatch, Snapshot, PHI_BLOCK};
use crate::seed;

pub const NUM_BINS: usize = 5;
const PHI_WIDTH: usize = 200;
const HEAD_WIDTH: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Deep,
    Shallow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentMode {
    Binary,
    #[serde(alias = "continuous")]
    Continuous5Bin,
}

impl TreatmentMode {
    pub fn num_heads(self) -> usize {
        match self {
            TreatmentMode::Binary => 2,
            TreatmentMode::Continuous5Bin => NUM_BINS,
        }
    }

    pub fn check(self, t: f64) -> Result<()> {
        let ok = match self {
            TreatmentMode::Binary => t == 0.0 || t == 1.0,
            TreatmentMode::Continuous5Bin => (0.0..=1.0).contains(&t),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::TreatmentDomain { value: t, mode: self.label() })
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TreatmentMode::Binary => "binary {0,1}",
            TreatmentMode::Continuous5Bin => "continuous [0,1]",
        }
    }

    /// Head index and the value fed to that head alongside the representation.
    /// Interior bin edges belong to the upper bin; t = 1 falls in the last bin.
    pub fn route(self, t: f64) -> Result<(usize, f64)> {
        self.check(t)?;
        Ok(match self {
            TreatmentMode::Binary => (t as usize, 0.0),
            TreatmentMode::Continuous5Bin => {
                let k = ((NUM_BINS as f64 * t).floor() as usize).min(NUM_BINS - 1);
                (k, t - k as f64 / NUM_BINS as f64)
            }
        })
    }
}

pub fn head_name(k: usize) -> String {
    format!("head_{k}")
}

fn phi_layers(arch: Architecture, input_dim: usize, width: usize) -> Vec<LayerSpec> {
    let depth = match arch {
        Architecture::Deep => 3,
        Architecture::Shallow => 1,
    };
    (0..depth)
        .map(|i| LayerSpec::new(if i == 0 { input_dim } else { width }, width, Activation::Elu))
        .collect()
}

fn head_layers(arch: Architecture, mode: TreatmentMode, widths: Widths) -> Vec<LayerSpec> {
    let hidden = match arch {
        Architecture::Deep => 2,
        Architecture::Shallow => 1,
    };
    let extra = usize::from(mode == TreatmentMode::Continuous5Bin);
    let mut layers: Vec<LayerSpec> = (0..hidden)
        .map(|i| LayerSpec::new(if i == 0 { widths.phi } else { widths.head } + extra, widths.head, Activation::Elu))
        .collect();
    layers.push(LayerSpec::new(widths.head + extra, 1, Activation::Identity));
    layers
}

/// Frozen representation network, used as a pairing embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenPhi {
    pub layers: Vec<LayerSpec>,
    pub params: Vec<Dense>,
}

impl FrozenPhi {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input_width)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output_width)
    }

    pub fn embed_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(chain::forward(PHI_BLOCK, &self.params, &self.layers, x, None)?.0)
    }
}

/// Hidden widths of the representation and head layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    pub phi: usize,
    pub head: usize,
}

impl Default for Widths {
    fn default() -> Self {
        Self { phi: PHI_WIDTH, head: HEAD_WIDTH }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchHeader {
    pub arch: Architecture,
    pub mode: TreatmentMode,
    pub input_dim: usize,
    #[serde(default)]
    pub widths: Widths,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub header: ArchHeader,
    pub params: Snapshot,
}

/// Shared representation `phi` feeding one head per treatment (or treatment bin).
#[derive(Clone, Debug)]
pub struct TwoHeadedNetwork {
    arch: Architecture,
    mode: TreatmentMode,
    input_dim: usize,
    widths: Widths,
    phi_layers: Vec<LayerSpec>,
    head_layers: Vec<LayerSpec>,
    params: ParamStore,
}

pub struct Trace {
    phi: ChainTrace,
    heads: Vec<(usize, Vec<usize>, ChainTrace)>,
    rows: usize,
}

impl TwoHeadedNetwork {
    pub fn build(arch: Architecture, mode: TreatmentMode, input_dim: usize, rng_seed: u64) -> Result<Self> {
        Self::build_with_widths(arch, mode, input_dim, Widths::default(), rng_seed)
    }

    pub fn build_with_widths(
        arch: Architecture,
        mode: TreatmentMode,
        input_dim: usize,
        widths: Widths,
        rng_seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || widths.phi == 0 || widths.head == 0 {
            return Err(invalid("input_dim and layer widths must be at least 1"));
        }
        let phi_layers = phi_layers(arch, input_dim, widths.phi);
        let head_layers = head_layers(arch, mode, widths);
        let mut rng = seed::rng(rng_seed);
        let mut params = ParamStore::new();
        params.insert(PHI_BLOCK, init_chain(&phi_layers, &mut rng));
        for k in 0..mode.num_heads() {
            params.insert(head_name(k), init_chain(&head_layers, &mut rng));
        }
        Ok(Self { arch, mode, input_dim, widths, phi_layers, head_layers, params })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn mode(&self) -> TreatmentMode {
        self.mode
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn phi_layers(&self) -> &[LayerSpec] {
        &self.phi_layers
    }

    pub fn head_layers(&self) -> &[LayerSpec] {
        &self.head_layers
    }

    pub fn num_heads(&self) -> usize {
        self.mode.num_heads()
    }

    pub fn frozen_phi(&self) -> FrozenPhi {
        FrozenPhi {
            layers: self.phi_layers.clone(),
            params: self.params.block(PHI_BLOCK).expect("phi block").to_vec(),
        }
    }

    fn check_x(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::ShapeMismatch {
                block: PHI_BLOCK.into(),
                layer: 0,
                expected: format!("input width {}", self.input_dim),
                got: x.ncols().to_string(),
            });
        }
        Ok(())
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>, t: &[f64]) -> Result<Array1<f64>> {
        self.predict_queries(&QueryBatch::new(x.to_owned(), t.to_vec())?)
    }

    pub fn predict_outcome(&self, x: &[f64], t: f64) -> Result<f64> {
        let x = ArrayView2::from_shape((1, x.len()), x).map_err(|e| invalid(e.to_string()))?;
        Ok(self.predict_batch(x, &[t])?[0])
    }

    pub fn predict_ite(&self, x: &[f64], t: f64, t_prime: f64) -> Result<f64> {
        Ok(self.predict_outcome(x, t)? - self.predict_outcome(x, t_prime)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: ArchHeader { arch: self.arch, mode: self.mode, input_dim: self.input_dim, widths: self.widths },
            params: self.params.to_snapshot(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let mut net = Self::build_with_widths(c.header.arch, c.header.mode, c.header.input_dim, c.header.widths, 0)?;
        let params = ParamStore::from_snapshot(&c.params)?;
        net.params.check_same_shape(&params)?;
        net.params = params;
        Ok(net)
    }
}

pub fn build_model(arch: Architecture, mode: TreatmentMode, input_dim: usize, rng_seed: u64) -> Result<TwoHeadedNetwork> {
    TwoHeadedNetwork::build(arch, mode, input_dim, rng_seed)
}

impl Network for TwoHeadedNetwork {
    type Trace = Trace;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward_queries(&self, q: &QueryBatch) -> Result<(Array1<f64>, Trace)> {
        self.check_x(q.x.view())?;
        let n = q.len();
        let mut groups: Vec<(Vec<usize>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); self.num_heads()];
        for (i, &t) in q.t.iter().enumerate() {
            let (k, tn) = self.mode.route(t)?;
            groups[k].0.push(i);
            groups[k].1.push(tn);
        }
        let (rep, phi_trace) = chain::forward(PHI_BLOCK, self.params.get(PHI_BLOCK)?, &self.phi_layers, q.x.view(), None)?;
        let mut out = Array1::zeros(n);
        let mut heads = Vec::new();
        for (k, (idx, tn)) in groups.into_iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            let name = head_name(k);
            let sub = rep.select(Axis(0), &idx);
            let tn = Array1::from(tn);
            let extra = (self.mode == TreatmentMode::Continuous5Bin).then(|| tn.view());
            let (y, trace) = chain::forward(&name, self.params.get(&name)?, &self.head_layers, sub.view(), extra)?;
            for (r, &i) in idx.iter().enumerate() {
                out[i] = y[[r, 0]];
            }
            heads.push((k, idx, trace));
        }
        Ok((out, Trace { phi: phi_trace, heads, rows: n }))
    }

    fn backward_queries(&self, trace: &Trace, d_out: ArrayView1<f64>) -> Result<ParamStore> {
        if d_out.len() != trace.rows {
            return Err(invalid("output gradient length does not match the forward batch"));
        }
        let mut grads = self.params.zeros_like();
        let mut d_rep = Array2::zeros((trace.rows, self.widths.phi));
        for (k, idx, head_trace) in &trace.heads {
            let name = head_name(*k);
            let d = Array1::from_iter(idx.iter().map(|&i| d_out[i])).insert_axis(Axis(1));
            let g = grads.block_mut(&name).expect("head block");
            let d_sub = chain::backward(self.params.get(&name)?, &self.head_layers, head_trace, d, g);
            for (r, &i) in idx.iter().enumerate() {
                d_rep.row_mut(i).assign(&d_sub.row(r));
            }
        }
        let g = grads.block_mut(PHI_BLOCK).expect("phi block");
        chain::backward(self.params.get(PHI_BLOCK)?, &self.phi_layers, &trace.phi, d_rep, g);
        Ok(grads)
    }
}

pub fn predict_outcome(model: &TwoHeadedNetwork, x: &[f64], t: f64) -> Result<f64> {
    model.predict_outcome(x, t)
}

pub fn predict_ite(model: &TwoHeadedNetwork, x: &[f64], t: f64, t_prime: f64) -> Result<f64> {
    model.predict_ite(x, t, t_prime)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Distribution of `y − y'` over labels (−1, 0, +1) for a pair with opposite
/// treatments. Inputs are probabilities of a zero outcome: `p0`, `p1` for the anchor
/// under control and treatment, `q0`, `q1` for the partner.
pub fn three_way_logits(p0: f64, p1: f64, q0: f64, q1: f64, t: f64) -> Result<[f64; 3]> {
    for (name, v) in [("p0", p0), ("p1", p1), ("p0'", q0), ("p1'", q1)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(invalid(format!("{name} = {v} is not a probability")));
        }
    }
    if t != 0.0 && t != 1.0 {
        return Err(Error::TreatmentDomain { value: t, mode: TreatmentMode::Binary.label() });
    }
    let c = 1.0 - t;
    let minus = p0 * (1.0 - q1) * c + p1 * (1.0 - q0) * t;
    let zero = p0 * q1 * c + p1 * q0 * t + (1.0 - p0) * (1.0 - q1) * c + (1.0 - p1) * (1.0 - q0) * t;
    let plus = (1.0 - p0) * q1 * c + (1.0 - p1) * q0 * t;
    Ok([minus, zero, plus])
}
