//! Fully connected networks shared by the classifier and the diffusion noise
//! predictor. The untaped `forward` and the taped `forward_taped` perform the
//! same floating-point operations in the same order, so their outputs agree
//! bit-for-bit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::optim::Param;
use crate::rng::{self, Rng};
use crate::tensor::{gemm_acc, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(v),
            Activation::Relu => {
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// `[in, h1, ..., out]`.
    dims: Vec<usize>,
    activation: Activation,
    /// Alternating `layerN.weight` (`[in, out]`) and `layerN.bias` (`[out]`).
    pub params: Vec<Param>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. With `zero_last` the output layer
    /// starts at exactly zero.
    pub fn new(dims: &[usize], activation: Activation, rng: &mut Rng, zero_last: bool) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(crate::error::invalid(format!("invalid layer dims {dims:?}")));
        }
        let layers = dims.len() - 1;
        let mut params = Vec::with_capacity(2 * layers);
        for l in 0..layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            let w: Vec<f64> = if zero_last && l + 1 == layers {
                vec![0.0; fan_in * fan_out]
            } else {
                (0..fan_in * fan_out)
                    .map(|_| (2.0 * rng::uniform(rng) - 1.0) * limit)
                    .collect()
            };
            params.push(Param::new(format!("layer{l}.weight"), Tensor::matrix(fan_in, fan_out, w)?));
            params.push(Param::new(format!("layer{l}.bias"), Tensor::zeros(&[fan_out])));
        }
        Ok(Self {
            dims: dims.to_vec(),
            activation,
            params,
        })
    }

    /// Rebuild from stored parameters (checkpoint loading).
    pub fn from_params(dims: &[usize], activation: Activation, params: Vec<Param>) -> Result<Self> {
        if params.len() != 2 * (dims.len() - 1) {
            return Err(crate::error::invalid("parameter count does not match layer dims"));
        }
        for l in 0..dims.len() - 1 {
            let w = &params[2 * l].value;
            let b = &params[2 * l + 1].value;
            if w.shape() != [dims[l], dims[l + 1]] || b.shape() != [dims[l + 1]] {
                return Err(Error::ShapeMismatch {
                    op: "mlp_from_params",
                    lhs: w.shape().to_vec(),
                    rhs: vec![dims[l], dims[l + 1]],
                });
            }
        }
        Ok(Self {
            dims: dims.to_vec(),
            activation,
            params,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.dims[1..self.dims.len() - 1]
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Run all layers on `x` (`[n, in]`). `masks[l]` multiplies the activation
    /// of hidden layer `l`. Returns `(last hidden activation, output)`; the
    /// hidden activation is the post-mask value.
    pub fn forward_full(&self, x: &Tensor, masks: Option<&[Vec<f64>]>) -> Result<(Tensor, Tensor)> {
        let (n, d) = x.dims2()?;
        if d != self.dims[0] {
            return Err(Error::ShapeMismatch {
                op: "mlp_forward",
                lhs: x.shape().to_vec(),
                rhs: vec![self.dims[0]],
            });
        }
        let mut h = x.data().to_vec();
        let mut hidden = Vec::new();
        for l in 0..self.layers() {
            let (fi, fo) = (self.dims[l], self.dims[l + 1]);
            let mut out = vec![0.0; n * fo];
            gemm_acc(n, fi, fo, &h, self.params[2 * l].value.data(), &mut out);
            let bias = self.params[2 * l + 1].value.data();
            for row in out.chunks_mut(fo) {
                for (o, b) in row.iter_mut().zip(bias) {
                    *o += b;
                }
            }
            if l + 1 < self.layers() {
                for o in out.iter_mut() {
                    *o = self.activation.apply(*o);
                }
                if let Some(ms) = masks {
                    for (o, m) in out.iter_mut().zip(&ms[l]) {
                        *o *= m;
                    }
                }
                if l + 2 == self.layers() {
                    hidden = out.clone();
                }
            }
            h = out;
        }
        let last_hidden = self.dims[self.dims.len() - 2];
        let hidden = if self.layers() == 1 { x.data().to_vec() } else { hidden };
        Ok((
            Tensor::matrix(n, last_hidden, hidden)?,
            Tensor::matrix(n, self.output_dim(), h)?,
        ))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_full(x, None)?.1)
    }

    /// Put the parameters on `tape`, differentiable iff `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone().with_grad(trainable)))
            .collect()
    }

    pub fn forward_taped(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        masks: Option<&[Vec<f64>]>,
    ) -> Result<Var> {
        let mut h = x;
        for l in 0..self.layers() {
            let z = tape.matmul(h, params[2 * l])?;
            h = tape.add_bias(z, params[2 * l + 1])?;
            if l + 1 < self.layers() {
                h = match self.activation {
                    Activation::Tanh => tape.tanh(h)?,
                    Activation::Relu => tape.relu(h)?,
                };
                if let Some(ms) = masks {
                    h = tape.dropout_mask_apply(h, ms[l].clone())?;
                }
            }
        }
        Ok(h)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Inverted-dropout masks for every hidden layer of `mlp` on a batch of `rows`:
/// each entry is `0` with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_masks(mlp: &Mlp, rows: usize, rate: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    let keep = 1.0 / (1.0 - rate);
    mlp.hidden_widths()
        .iter()
        .map(|&w| {
            (0..rows * w)
                .map(|_| if rng::uniform(rng) < rate { 0.0 } else { keep })
                .collect()
        })
        .collect()
}
