//! PatchGAN discriminator with a least-squares (linear) head.
//!
//! `n` stride-2 4x4 convolutions (filters `base * 2^i`, capped at `8 * base`),
//! one stride-1 4x4 convolution, then a stride-1 4x4 convolution to a single
//! channel. With `n = 3` every score sees a 70x70 input window. The first
//! layer is not normalized; activations are LeakyReLU(0.2).

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha8Rng;

use super::nn::{instance_norm, leaky_relu, Conv2d, ParamBuilder};
use super::{DiscriminatorSpec, NetSpec, NetworkParams, NormKind, Role};
use crate::error::{Error, Result};

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct Discriminator {
    params: NetworkParams,
    convs: Vec<Conv2d>,
    head: Conv2d,
}

impl Discriminator {
    pub fn build(spec: &DiscriminatorSpec, rng: &mut ChaCha8Rng, device: &Device, dtype: DType) -> Result<Self> {
        spec.validate()?;
        Self::assemble(spec, ParamBuilder::init(rng, device, dtype), None)
    }

    pub fn from_params(params: NetworkParams) -> Result<Self> {
        let spec = match &params.spec {
            NetSpec::Discriminator(s) => s.clone(),
            NetSpec::Generator(_) => {
                return Err(Error::Config(format!(
                    "parameters tagged {} describe a generator",
                    params.role.tag()
                )))
            }
        };
        spec.validate()?;
        Self::assemble(&spec, ParamBuilder::load(params.vars())?, Some(params.role))
    }

    fn assemble(spec: &DiscriminatorSpec, mut b: ParamBuilder<'_>, role: Option<Role>) -> Result<Self> {
        let cap = spec.base_filters * 8;
        let mut convs = Vec::new();
        let mut in_c = spec.in_channels;
        for i in 0..spec.num_downsampling_layers {
            let out_c = (spec.base_filters << i).min(cap);
            convs.push(b.conv2d(&format!("conv{i}"), in_c, out_c, 4, 2, 1)?);
            in_c = out_c;
        }
        let out_c = (spec.base_filters << spec.num_downsampling_layers).min(cap);
        convs.push(b.conv2d(&format!("conv{}", spec.num_downsampling_layers), in_c, out_c, 4, 1, 1)?);
        let head = b.conv2d("head", out_c, 1, 4, 1, 1)?;
        let role = role.unwrap_or(if spec.in_channels == 3 { Role::DX } else { Role::DY });
        let vars = b.finish()?;
        Ok(Self {
            params: NetworkParams::new(role, NetSpec::Discriminator(spec.clone()), vars),
            convs,
            head,
        })
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        match &self.params.spec {
            NetSpec::Discriminator(s) => s,
            NetSpec::Generator(_) => unreachable!("discriminator built from discriminator spec"),
        }
    }

    /// One unbounded score per input patch: `N x 1 x s x s`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x, false)
    }

    /// Forward pass whose normalization statistics are constants for
    /// backpropagation. The values equal [`Self::forward`]; gradients reflect
    /// only the convolutional footprint of each score.
    pub fn forward_frozen_stats(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x, true)
    }

    fn run(&self, x: &Tensor, detach_stats: bool) -> Result<Tensor> {
        let spec = self.spec();
        let c = x.dim(1)?;
        if c != spec.in_channels {
            return Err(Error::Shape(format!(
                "discriminator {} expects {} channels, got {c}",
                self.params.role.tag(),
                spec.in_channels
            )));
        }
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?;
            if i > 0 && spec.norm == NormKind::Instance {
                h = instance_norm(&h, detach_stats)?;
            }
            h = leaky_relu(&h, LEAKY_SLOPE)?;
        }
        self.head.forward(&h)
    }
}
