use ndarray::{Array1, ArrayView1, Axis};
use rand::Rng;

use super::chain::{self, ChainTrace};
use super::params::{init_chain, validate_chain, LayerSpec, ParamStore};
use super::{Network, QueryBatch};
use crate::error::{invalid, Result};

/// Single-output dense chain stored under one named block; ignores treatments.
#[derive(Clone, Debug)]
pub struct Mlp {
    block: String,
    layers: Vec<LayerSpec>,
    params: ParamStore,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(block: &str, layers: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        validate_chain(block, &layers)?;
        if layers.last().map(|l| l.output_width) != Some(1) {
            return Err(invalid("Mlp needs a single output unit"));
        }
        let mut params = ParamStore::new();
        params.insert(block, init_chain(&layers, rng));
        Ok(Self { block: block.into(), layers, params })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }
}

impl Network for Mlp {
    type Trace = ChainTrace;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward_queries(&self, q: &QueryBatch) -> Result<(Array1<f64>, ChainTrace)> {
        let (out, trace) = chain::forward(&self.block, self.params.get(&self.block)?, &self.layers, q.x.view(), None)?;
        Ok((out.column(0).to_owned(), trace))
    }

    fn backward_queries(&self, trace: &ChainTrace, d_out: ArrayView1<f64>) -> Result<ParamStore> {
        let mut grads = self.params.zeros_like();
        let g = grads.block_mut(&self.block).expect("block exists");
        chain::backward(
            self.params.get(&self.block)?,
            &self.layers,
            trace,
            d_out.to_owned().insert_axis(Axis(1)),
            g,
        );
        Ok(grads)
    }
}
