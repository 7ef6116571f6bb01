use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::{Activation, Dense, LayerSpec};
use crate::error::{Error, Result};

#[inline]
pub fn elu(z: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

#[inline]
fn elu_slope(z: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        z.exp()
    }
}

/// Intermediate values kept for backpropagation.
#[derive(Clone, Debug)]
pub struct ChainTrace {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    with_extra: bool,
}

pub fn check_shapes(block: &str, params: &[Dense], layers: &[LayerSpec]) -> Result<()> {
    if params.len() != layers.len() {
        return Err(Error::ShapeMismatch {
            block: block.into(),
            layer: params.len().min(layers.len()),
            expected: format!("{} layers", layers.len()),
            got: format!("{} layers", params.len()),
        });
    }
    for (i, (p, l)) in params.iter().zip(layers).enumerate() {
        let want = (l.output_width, l.input_width);
        if p.weight.dim() != want || p.bias.len() != l.output_width {
            return Err(Error::ShapeMismatch {
                block: block.into(),
                layer: i,
                expected: format!("{}x{}", want.0, want.1),
                got: format!("{}x{} (bias {})", p.weight.nrows(), p.weight.ncols(), p.bias.len()),
            });
        }
    }
    Ok(())
}

fn with_column(x: ArrayView2<f64>, extra: Option<ArrayView1<f64>>) -> Array2<f64> {
    match extra {
        Some(e) => concatenate![Axis(1), x, e.insert_axis(Axis(1))],
        None => x.to_owned(),
    }
}

/// Batched forward pass, rows are samples. With `extra`, that column is appended to the
/// input of every layer.
pub fn forward(
    block: &str,
    params: &[Dense],
    layers: &[LayerSpec],
    x: ArrayView2<f64>,
    extra: Option<ArrayView1<f64>>,
) -> Result<(Array2<f64>, ChainTrace)> {
    check_shapes(block, params, layers)?;
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut act = x.to_owned();
    for (i, (p, l)) in params.iter().zip(layers).enumerate() {
        let input = with_column(act.view(), extra);
        if input.ncols() != l.input_width {
            return Err(Error::ShapeMismatch {
                block: block.into(),
                layer: i,
                expected: format!("input width {}", l.input_width),
                got: input.ncols().to_string(),
            });
        }
        let z = input.dot(&p.weight.t()) + &p.bias;
        act = match l.activation {
            Activation::Elu => z.mapv(elu),
            Activation::Identity => z.clone(),
        };
        inputs.push(input);
        pre.push(z);
    }
    if act.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { block: block.into() });
    }
    Ok((act, ChainTrace { inputs, pre, with_extra: extra.is_some() }))
}

/// Accumulates parameter gradients into `grads` and returns the gradient w.r.t. the
/// chain input (excluding any extra column).
pub fn backward(
    params: &[Dense],
    layers: &[LayerSpec],
    trace: &ChainTrace,
    d_out: Array2<f64>,
    grads: &mut [Dense],
) -> Array2<f64> {
    let mut d_act = d_out;
    for i in (0..layers.len()).rev() {
        let dz = match layers[i].activation {
            Activation::Elu => {
                let mut dz = d_act;
                dz.zip_mut_with(&trace.pre[i], |d, &z| *d *= elu_slope(z));
                dz
            }
            Activation::Identity => d_act,
        };
        grads[i].weight += &dz.t().dot(&trace.inputs[i]);
        grads[i].bias += &dz.sum_axis(Axis(0));
        let d_in = dz.dot(&params[i].weight);
        d_act = if trace.with_extra {
            let w = d_in.ncols() - 1;
            d_in.slice(s![.., ..w]).to_owned()
        } else {
            d_in
        };
    }
    d_act
}

/// Single-vector convenience wrapper around [`forward`].
pub fn forward_vec(block: &str, params: &[Dense], layers: &[LayerSpec], input: &[f64]) -> Result<Vec<f64>> {
    let first = layers.first().map_or(0, |l| l.input_width);
    if input.len() != first {
        return Err(Error::ShapeMismatch {
            block: block.into(),
            layer: 0,
            expected: format!("input length {first}"),
            got: input.len().to_string(),
        });
    }
    let x = Array1::from(input.to_vec()).insert_axis(Axis(0));
    let (out, _) = forward(block, params, layers, x.view(), None)?;
    Ok(out.row(0).to_vec())
}
