use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Elu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_width: usize,
    pub output_width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_width: usize, output_width: usize, activation: Activation) -> Self {
        Self { input_width, output_width, activation }
    }
}

/// Affine layer parameters; `weight` is `output_width × input_width`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(spec: &LayerSpec) -> Self {
        Self {
            weight: Array2::zeros((spec.output_width, spec.input_width)),
            bias: Array1::zeros(spec.output_width),
        }
    }

    /// Uniform fan-in initialization with unit-variance preactivations for unit-variance inputs.
    pub fn init<R: Rng + ?Sized>(spec: &LayerSpec, rng: &mut R) -> Self {
        let limit = (3.0 / spec.input_width as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let weight = Array2::from_shape_simple_fn((spec.output_width, spec.input_width), || dist.sample(rng));
        Self { weight, bias: Array1::zeros(spec.output_width) }
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

pub fn init_chain<R: Rng + ?Sized>(layers: &[LayerSpec], rng: &mut R) -> Vec<Dense> {
    layers.iter().map(|l| Dense::init(l, rng)).collect()
}

pub fn validate_chain(block: &str, layers: &[LayerSpec]) -> Result<()> {
    for (i, l) in layers.iter().enumerate() {
        if l.input_width == 0 || l.output_width == 0 {
            return Err(Error::ShapeMismatch {
                block: block.into(),
                layer: i,
                expected: "positive widths".into(),
                got: format!("{}x{}", l.output_width, l.input_width),
            });
        }
    }
    Ok(())
}

/// Named parameter blocks. Block `"phi"` is the shared representation, every other
/// block is regularized as a head.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    blocks: BTreeMap<String, Vec<Dense>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, layers: Vec<Dense>) {
        self.blocks.insert(name.into(), layers);
    }

    pub fn block(&self, name: &str) -> Option<&[Dense]> {
        self.blocks.get(name).map(|v| v.as_slice())
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut Vec<Dense>> {
        self.blocks.get_mut(name)
    }

    pub fn get(&self, name: &str) -> Result<&[Dense]> {
        self.block(name).ok_or_else(|| invalid(format!("missing parameter block {name}")))
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&str, &[Dense])> {
        self.blocks.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = (&str, &mut Vec<Dense>)> {
        self.blocks.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.blocks.keys().cloned().collect()
    }

    pub fn zeros_like(&self) -> Self {
        let blocks = self
            .blocks
            .iter()
            .map(|(k, v)| {
                let z = v
                    .iter()
                    .map(|d| Dense { weight: Array2::zeros(d.weight.raw_dim()), bias: Array1::zeros(d.bias.len()) })
                    .collect();
                (k.clone(), z)
            })
            .collect();
        Self { blocks }
    }

    pub fn num_params(&self) -> usize {
        self.blocks.values().flatten().map(Dense::len).sum()
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.blocks.len() != other.blocks.len() {
            return Err(invalid("parameter stores have different block sets"));
        }
        for ((ka, a), (kb, b)) in self.blocks.iter().zip(&other.blocks) {
            if ka != kb || a.len() != b.len() {
                return Err(invalid(format!("block {ka} does not match {kb}")));
            }
            for (i, (da, db)) in a.iter().zip(b).enumerate() {
                if da.weight.dim() != db.weight.dim() || da.bias.len() != db.bias.len() {
                    return Err(Error::ShapeMismatch {
                        block: ka.clone(),
                        layer: i,
                        expected: format!("{:?}", da.weight.dim()),
                        got: format!("{:?}", db.weight.dim()),
                    });
                }
            }
        }
        Ok(())
    }

    /// Flattened view: blocks by name, layers in order, weights row-major then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for d in self.blocks.values().flatten() {
            out.extend(d.weight.iter().copied());
            out.extend(d.bias.iter().copied());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(invalid(format!("flat length {} != {}", flat.len(), self.num_params())));
        }
        let mut it = flat.iter().copied();
        for d in self.blocks.values_mut().flatten() {
            d.weight.iter_mut().chain(d.bias.iter_mut()).for_each(|v| *v = it.next().unwrap_or(0.0));
        }
        Ok(())
    }

    /// Mutable access to one flat coordinate (same order as [`ParamStore::to_flat`]).
    pub fn coord_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for d in self.blocks.values_mut().flatten() {
            let nw = d.weight.len();
            if index < nw {
                let cols = d.weight.ncols();
                return d.weight.get_mut((index / cols, index % cols));
            }
            index -= nw;
            if index < d.bias.len() {
                return d.bias.get_mut(index);
            }
            index -= d.bias.len();
        }
        None
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.blocks.values_mut().flatten().zip(other.blocks.values().flatten()) {
            a.weight.scaled_add(scale, &b.weight);
            a.bias.scaled_add(scale, &b.bias);
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, layers) in &self.blocks {
            let finite = layers.iter().all(|d| d.weight.iter().chain(d.bias.iter()).all(|v| v.is_finite()));
            if !finite {
                return Err(Error::NonFinite { block: name.clone() });
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .values()
            .flatten()
            .flat_map(|d| d.weight.iter().chain(d.bias.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn zip_mut4(
        &mut self,
        a: &Self,
        b: &mut Self,
        c: &mut Self,
        mut f: impl FnMut(&mut f64, f64, &mut f64, &mut f64),
    ) {
        let it = self
            .blocks
            .values_mut()
            .flatten()
            .zip(a.blocks.values().flatten())
            .zip(b.blocks.values_mut().flatten())
            .zip(c.blocks.values_mut().flatten());
        for (((p, g), m), v) in it {
            Zip::from(&mut p.weight).and(&g.weight).and(&mut m.weight).and(&mut v.weight).for_each(|p, &g, m, v| f(p, g, m, v));
            Zip::from(&mut p.bias).and(&g.bias).and(&mut m.bias).and(&mut v.bias).for_each(|p, &g, m, v| f(p, g, m, v));
        }
    }

    pub fn to_snapshot(&self) -> Snapshot {
        let blocks = self
            .blocks
            .iter()
            .map(|(k, v)| {
                let layers = v
                    .iter()
                    .map(|d| DenseSnapshot {
                        weight: d.weight.rows().into_iter().map(|r| r.to_vec()).collect(),
                        bias: d.bias.to_vec(),
                    })
                    .collect();
                (k.clone(), layers)
            })
            .collect();
        Snapshot { blocks }
    }

    pub fn from_snapshot(s: &Snapshot) -> Result<Self> {
        let mut store = Self::new();
        for (name, layers) in &s.blocks {
            let mut dense = Vec::with_capacity(layers.len());
            for (i, l) in layers.iter().enumerate() {
                let rows = l.weight.len();
                let cols = l.weight.first().map_or(0, |r| r.len());
                if l.weight.iter().any(|r| r.len() != cols) || l.bias.len() != rows {
                    return Err(Error::ShapeMismatch {
                        block: name.clone(),
                        layer: i,
                        expected: format!("{rows} rows of width {cols} and {rows} biases"),
                        got: format!("ragged matrix or {} biases", l.bias.len()),
                    });
                }
                let flat: Vec<f64> = l.weight.iter().flatten().copied().collect();
                let weight = Array2::from_shape_vec((rows, cols), flat).map_err(|e| invalid(e.to_string()))?;
                dense.push(Dense { weight, bias: Array1::from(l.bias.clone()) });
            }
            store.insert(name.clone(), dense);
        }
        Ok(store)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseSnapshot {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// JSON-friendly parameter dump: block name to row-major matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub blocks: BTreeMap<String, Vec<DenseSnapshot>>,
}
