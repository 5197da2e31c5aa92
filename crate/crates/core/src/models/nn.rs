//! Minimal layer toolkit on top of candle tensors.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;
const NORM_EPS: f64 = 1e-5;

enum Source<'a> {
    Init(&'a mut dyn rand::RngCore),
    Load(&'a BTreeMap<String, Var>),
}

/// Creates (or looks up) named parameters while a network is assembled.
///
/// In `Init` mode weights are drawn from `N(0, 0.02)` and biases start at
/// zero, in creation order. In `Load` mode every requested name must be
/// present with the expected shape.
pub struct ParamBuilder<'a> {
    source: Source<'a>,
    device: Device,
    dtype: DType,
    prefix: Vec<String>,
    created: BTreeMap<String, Var>,
}

impl<'a> ParamBuilder<'a> {
    pub fn init(rng: &'a mut dyn rand::RngCore, device: &Device, dtype: DType) -> Self {
        Self {
            source: Source::Init(rng),
            device: device.clone(),
            dtype,
            prefix: Vec::new(),
            created: BTreeMap::new(),
        }
    }

    pub fn load(vars: &'a BTreeMap<String, Var>) -> Result<Self> {
        let first = vars
            .values()
            .next()
            .ok_or_else(|| Error::Checkpoint("empty parameter set".into()))?;
        Ok(Self {
            device: first.device().clone(),
            dtype: first.dtype(),
            source: Source::Load(vars),
            prefix: Vec::new(),
            created: BTreeMap::new(),
        })
    }

    pub fn push(&mut self, name: &str) {
        self.prefix.push(name.to_string());
    }

    pub fn pop(&mut self) {
        self.prefix.pop();
    }

    fn full_name(&self, leaf: &str) -> String {
        let mut parts = self.prefix.clone();
        parts.push(leaf.to_string());
        parts.join(".")
    }

    fn var(&mut self, leaf: &str, shape: &[usize], gaussian: bool) -> Result<Var> {
        let name = self.full_name(leaf);
        let var = match &mut self.source {
            Source::Init(rng) => {
                let n: usize = shape.iter().product();
                let values: Vec<f64> = if gaussian {
                    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
                    (0..n).map(|_| normal.sample(&mut **rng)).collect()
                } else {
                    vec![0.0; n]
                };
                let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
                Var::from_tensor(&t)?
            }
            Source::Load(vars) => {
                let v = vars
                    .get(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
                if v.dims() != shape {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        v.dims()
                    )));
                }
                v.clone()
            }
        };
        if self.created.insert(name.clone(), var.clone()).is_some() {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        Ok(var)
    }

    /// All parameters created so far. In load mode, fails if the source holds
    /// names that were never requested.
    pub fn finish(self) -> Result<BTreeMap<String, Var>> {
        if let Source::Load(vars) = &self.source {
            if let Some(extra) = vars.keys().find(|k| !self.created.contains_key(*k)) {
                return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
            }
        }
        Ok(self.created)
    }

    pub fn conv2d(
        &mut self,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Conv2d> {
        self.push(name);
        let weight = self.var("weight", &[out_c, in_c, kernel, kernel], true);
        let bias = self.var("bias", &[out_c], false);
        self.pop();
        Ok(Conv2d {
            weight: weight?,
            bias: bias?,
            stride,
            padding,
        })
    }

    /// Transposed convolution that exactly doubles the spatial size
    /// (`kernel 3, stride 2, padding 1, output_padding 1`).
    pub fn upsample2x(&mut self, name: &str, in_c: usize, out_c: usize) -> Result<ConvTranspose2d> {
        self.push(name);
        let weight = self.var("weight", &[in_c, out_c, 3, 3], true);
        let bias = self.var("bias", &[out_c], false);
        self.pop();
        Ok(ConvTranspose2d {
            weight: weight?,
            bias: bias?,
        })
    }
}

fn add_bias(x: Tensor, bias: &Var) -> Result<Tensor> {
    let b = bias.as_tensor().reshape((1, bias.dim(0)?, 1, 1))?;
    Ok(x.broadcast_add(&b)?)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        add_bias(y, &self.bias)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Var,
    bias: Var,
}

impl ConvTranspose2d {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(self.weight.as_tensor(), 1, 1, 2, 1)?;
        add_bias(y, &self.bias)
    }
}

/// Per-sample, per-channel normalization over the spatial dims, no affine
/// parameters. With `detach_stats` the mean and variance are treated as
/// constants by backpropagation.
pub fn instance_norm(x: &Tensor, detach_stats: bool) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let flat = x.reshape((n, c, h * w))?;
    let mut mean = flat.mean_keepdim(D::Minus1)?;
    let centered_for_var = flat.broadcast_sub(&mean)?;
    let mut var = centered_for_var.sqr()?.mean_keepdim(D::Minus1)?;
    if detach_stats {
        mean = mean.detach();
        var = var.detach();
    }
    let normed = flat
        .broadcast_sub(&mean)?
        .broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
    Ok(normed.reshape((n, c, h, w))?)
}

/// 2x2 max pooling with stride 2 as a reshape and two max reductions, so
/// the gradient of each window goes to its maximum in full.
pub fn max_pool2x2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("max pool needs even spatial dims, got {h}x{w}")));
    }
    Ok(x.reshape((n, c, h / 2, 2, w / 2, 2))?.max(5)?.max(3)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Uniform tensor in `[-1, 1]` for probes and tests.
pub fn uniform_tensor<R: Rng + ?Sized>(
    rng: &mut R,
    shape: (usize, usize, usize, usize),
    device: &Device,
    dtype: DType,
) -> Result<Tensor> {
    let n = shape.0 * shape.1 * shape.2 * shape.3;
    let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    Ok(Tensor::from_vec(values, shape, device)?.to_dtype(dtype)?)
}
