//! Generators (dense-block autoencoders), patch discriminators and the
//! backbone registry.

mod discriminator;
mod generator;
pub mod nn;

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use candle_core::{DType, Device, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use discriminator::Discriminator;
pub use generator::{dense_block_channels, Generator};

use crate::error::{Error, Result};

/// Which of the four networks a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    /// Underwater -> above-water RGB-D.
    G,
    /// Above-water RGB-D -> underwater.
    F,
    /// Judges underwater images (3 channels).
    #[serde(rename = "D_X")]
    DX,
    /// Judges above-water RGB-D (4 channels).
    #[serde(rename = "D_Y")]
    DY,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::G, Role::F, Role::DX, Role::DY];

    pub fn tag(&self) -> &'static str {
        match self {
            Role::G => "G",
            Role::F => "F",
            Role::DX => "D_X",
            Role::DY => "D_Y",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    Instance,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub num_blocks_per_side: usize,
    pub layers_per_block: usize,
    pub growth: usize,
    /// Filters of the initial 3x3 convolution.
    pub stem_filters: usize,
    pub backbone_id: String,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            in_channels: 3,
            out_channels: 4,
            num_blocks_per_side: 5,
            layers_per_block: 5,
            growth: 16,
            stem_filters: 48,
            backbone_id: "densenet".into(),
        }
    }
}

impl GeneratorSpec {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.in_channels, 3 | 4) || !matches!(self.out_channels, 3 | 4) {
            return Err(Error::Config(format!(
                "generator channels must be 3 or 4, got {}->{}",
                self.in_channels, self.out_channels
            )));
        }
        if self.num_blocks_per_side == 0 || self.layers_per_block == 0 {
            return Err(Error::Config("generator needs >= 1 block and >= 1 layer per block".into()));
        }
        if self.growth == 0 || self.stem_filters == 0 {
            return Err(Error::Config("generator growth and stem filters must be >= 1".into()));
        }
        Ok(())
    }

    /// Spatial dims must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.num_blocks_per_side
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub in_channels: usize,
    pub base_filters: usize,
    pub num_downsampling_layers: usize,
    pub norm: NormKind,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            in_channels: 3,
            base_filters: 64,
            num_downsampling_layers: 3,
            norm: NormKind::Instance,
        }
    }
}

impl DiscriminatorSpec {
    pub fn new(in_channels: usize) -> Self {
        Self {
            in_channels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.in_channels, 3 | 4) {
            return Err(Error::Config(format!(
                "discriminator input must be 3 or 4 channels, got {}",
                self.in_channels
            )));
        }
        if self.base_filters == 0 || self.num_downsampling_layers == 0 {
            return Err(Error::Config("discriminator needs filters and >= 1 downsampling layer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetSpec {
    Generator(GeneratorSpec),
    Discriminator(DiscriminatorSpec),
}

/// Named parameter tensors of one network.
///
/// `Var`s are shared handles: cloning a `NetworkParams` aliases the same
/// storage, which is how optimizer updates reach the built network.
#[derive(Debug, Clone)]
pub struct NetworkParams {
    pub role: Role,
    pub spec: NetSpec,
    vars: BTreeMap<String, Var>,
}

impl NetworkParams {
    pub fn new(role: Role, spec: NetSpec, vars: BTreeMap<String, Var>) -> Self {
        Self { role, spec, vars }
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn all_finite(&self) -> Result<bool> {
        for v in self.vars.values() {
            let vals: Vec<f64> = v.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
            if vals.iter().any(|x| !x.is_finite()) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Hash over names and exact value bits; changes iff any parameter changes.
    pub fn fingerprint(&self) -> Result<u64> {
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        for (name, v) in &self.vars {
            name.hash(&mut hasher);
            let vals: Vec<f64> = v.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
            for x in vals {
                x.to_bits().hash(&mut hasher);
            }
        }
        Ok(hasher.finish())
    }

    /// Deep copy with fresh storage.
    pub fn detached_copy(&self) -> Result<Self> {
        let vars = self
            .vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), Var::from_tensor(&v.as_tensor().copy()?)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self::new(self.role, self.spec.clone(), vars))
    }
}

/// Builder signature shared by every registered generator backbone.
pub type BackboneBuilder = fn(&GeneratorSpec, &mut ChaCha8Rng, &Device, DType) -> Result<Generator>;

/// Backbone ids known to the registry. Only `densenet` is implemented.
pub const REGISTERED_BACKBONES: &[&str] = &["densenet", "unet", "resnet"];

fn build_densenet(
    spec: &GeneratorSpec,
    rng: &mut ChaCha8Rng,
    device: &Device,
    dtype: DType,
) -> Result<Generator> {
    Generator::build(spec, rng, device, dtype)
}

pub fn registry_get_backbone(backbone_id: &str) -> Result<BackboneBuilder> {
    match backbone_id {
        "densenet" => Ok(build_densenet),
        "unet" | "resnet" => Err(Error::NotImplemented(format!(
            "backbone '{backbone_id}' is registered but not implemented; use 'densenet'"
        ))),
        other => Err(Error::Config(format!(
            "unknown backbone '{other}'; registered: {}",
            REGISTERED_BACKBONES.join(", ")
        ))),
    }
}

/// Build a generator through the registry entry named in `spec.backbone_id`.
pub fn build_generator(
    spec: &GeneratorSpec,
    rng: &mut ChaCha8Rng,
    device: &Device,
    dtype: DType,
) -> Result<Generator> {
    let builder = registry_get_backbone(&spec.backbone_id)?;
    builder(spec, rng, device, dtype)
}
