//! Fully convolutional dense-block encoder/decoder.
//!
//! Layout for `n` blocks per side:
//!
//! ```text
//! stem 3x3 conv
//! n x [dense block -> (skip) -> transition down]
//! bottleneck dense block
//! n x [transition up (new features only) -> concat skip -> dense block]
//! 1x1 conv -> tanh
//! ```
//!
//! Dense layers are `instance norm -> ReLU -> 3x3 conv(growth)`; each block
//! returns its input concatenated with all produced features. Transition
//! down is `norm -> ReLU -> 1x1 conv -> 2x2 max pool`, transition up a
//! stride-2 3x3 transposed convolution.

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha8Rng;

use super::nn::{instance_norm, max_pool2x2, Conv2d, ConvTranspose2d, ParamBuilder};
use super::{GeneratorSpec, NetSpec, NetworkParams, Role};
use crate::error::{Error, Result};

/// Output channels of a dense block with `in_channels` inputs.
pub fn dense_block_channels(in_channels: usize, layers: usize, growth: usize) -> usize {
    in_channels + layers * growth
}

#[derive(Debug, Clone)]
struct DenseBlock {
    layers: Vec<Conv2d>,
    in_channels: usize,
}

/// Output of a dense block: full concatenation and the newly grown part.
struct BlockOut {
    all: Tensor,
    new: Tensor,
}

impl DenseBlock {
    fn build(b: &mut ParamBuilder<'_>, name: &str, in_c: usize, layers: usize, growth: usize) -> Result<Self> {
        b.push(name);
        let convs = (0..layers)
            .map(|l| b.conv2d(&format!("layer{l}"), in_c + l * growth, growth, 3, 1, 1))
            .collect::<Result<Vec<_>>>();
        b.pop();
        Ok(Self {
            layers: convs?,
            in_channels: in_c,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<BlockOut> {
        let mut stack = x.clone();
        let mut grown = Vec::with_capacity(self.layers.len());
        for conv in &self.layers {
            let h = conv.forward(&instance_norm(&stack, false)?.relu()?)?;
            stack = Tensor::cat(&[&stack, &h], 1)?;
            grown.push(h);
        }
        let new = Tensor::cat(&grown, 1)?;
        let expected = dense_block_channels(self.in_channels, self.layers.len(), new.dim(1)? / self.layers.len());
        if stack.dim(1)? != expected {
            return Err(Error::Shape(format!(
                "dense block produced {} channels, expected {expected}",
                stack.dim(1)?
            )));
        }
        Ok(BlockOut { all: stack, new })
    }
}

#[derive(Debug, Clone)]
struct TransitionDown {
    conv: Conv2d,
}

impl TransitionDown {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv.forward(&instance_norm(x, false)?.relu()?)?;
        max_pool2x2(&h)
    }
}

/// Dense-block autoencoder generator (`G: 3 -> 4` or `F: 4 -> 3`).
#[derive(Debug, Clone)]
pub struct Generator {
    params: NetworkParams,
    stem: Conv2d,
    down_blocks: Vec<DenseBlock>,
    downs: Vec<TransitionDown>,
    bottleneck: DenseBlock,
    ups: Vec<ConvTranspose2d>,
    up_blocks: Vec<DenseBlock>,
    head: Conv2d,
}

impl Generator {
    /// Randomly initialized generator; identical seeds give identical weights.
    pub fn build(spec: &GeneratorSpec, rng: &mut ChaCha8Rng, device: &Device, dtype: DType) -> Result<Self> {
        spec.validate()?;
        Self::assemble(spec, ParamBuilder::init(rng, device, dtype), None)
    }

    /// Rebuild around existing parameters (e.g. from a checkpoint).
    pub fn from_params(params: NetworkParams) -> Result<Self> {
        let spec = match &params.spec {
            NetSpec::Generator(s) => s.clone(),
            NetSpec::Discriminator(_) => {
                return Err(Error::Config(format!(
                    "parameters tagged {} describe a discriminator",
                    params.role.tag()
                )))
            }
        };
        spec.validate()?;
        Self::assemble(&spec, ParamBuilder::load(params.vars())?, Some(params.role))
    }

    fn assemble(spec: &GeneratorSpec, mut b: ParamBuilder<'_>, role: Option<Role>) -> Result<Self> {
        let (l, g) = (spec.layers_per_block, spec.growth);
        let stem = b.conv2d("stem", spec.in_channels, spec.stem_filters, 3, 1, 1)?;

        let mut channels = spec.stem_filters;
        let mut skips = Vec::with_capacity(spec.num_blocks_per_side);
        let mut down_blocks = Vec::new();
        let mut downs = Vec::new();
        for i in 0..spec.num_blocks_per_side {
            down_blocks.push(DenseBlock::build(&mut b, &format!("down{i}.block"), channels, l, g)?);
            channels = dense_block_channels(channels, l, g);
            skips.push(channels);
            let conv = b.conv2d(&format!("down{i}.transition"), channels, channels, 1, 1, 0)?;
            downs.push(TransitionDown { conv });
        }

        let bottleneck = DenseBlock::build(&mut b, "bottleneck", channels, l, g)?;
        let new_features = l * g;

        let mut ups = Vec::new();
        let mut up_blocks = Vec::new();
        for (i, skip) in skips.iter().enumerate().rev() {
            ups.push(b.upsample2x(&format!("up{i}.transition"), new_features, new_features)?);
            let block_in = new_features + skip;
            up_blocks.push(DenseBlock::build(&mut b, &format!("up{i}.block"), block_in, l, g)?);
            channels = dense_block_channels(block_in, l, g);
        }
        let head = b.conv2d("head", channels, spec.out_channels, 1, 1, 0)?;

        let role = role.unwrap_or(if spec.in_channels == 3 { Role::G } else { Role::F });
        let vars = b.finish()?;
        Ok(Self {
            params: NetworkParams::new(role, NetSpec::Generator(spec.clone()), vars),
            stem,
            down_blocks,
            downs,
            bottleneck,
            ups,
            up_blocks,
            head,
        })
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn spec(&self) -> &GeneratorSpec {
        match &self.params.spec {
            NetSpec::Generator(s) => s,
            NetSpec::Discriminator(_) => unreachable!("generator built from generator spec"),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let spec = self.spec();
        let (_, c, h, w) = x.dims4()?;
        if c != spec.in_channels {
            return Err(Error::Shape(format!(
                "generator expects {} input channels, got {c}",
                spec.in_channels
            )));
        }
        let div = spec.divisor();
        if h % div != 0 || w % div != 0 {
            return Err(Error::Shape(format!(
                "spatial dims {h}x{w} must be divisible by {div} (2^{} down-samplings)",
                spec.num_blocks_per_side
            )));
        }

        let mut h = self.stem.forward(x)?;
        let mut skips = Vec::with_capacity(self.down_blocks.len());
        for (block, down) in self.down_blocks.iter().zip(&self.downs) {
            let out = block.forward(&h)?;
            h = down.forward(&out.all)?;
            skips.push(out.all);
        }
        let mut new = self.bottleneck.forward(&h)?.new;
        let mut last_all = None;
        for ((up, block), skip) in self.ups.iter().zip(&self.up_blocks).zip(skips.iter().rev()) {
            let upsampled = up.forward(&new)?;
            let out = block.forward(&Tensor::cat(&[&upsampled, skip], 1)?)?;
            new = out.new;
            last_all = Some(out.all);
        }
        let top = last_all.expect("at least one decoder block");
        Ok(self.head.forward(&top)?.tanh()?)
    }
}
