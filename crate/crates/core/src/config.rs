//! TOML run configuration. Every section is optional and falls back to the
//! defaults of the corresponding module.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{HazeParams, PrepConfig};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::models::{DiscriminatorSpec, GeneratorSpec, NormKind};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Meters per raw depth-PNG unit.
    pub depth_scale: f64,
    /// Depth mapped to +1 in the network's fourth channel.
    pub d_max: f64,
    pub patch_size: usize,
    pub image_size: usize,
    pub bilateral_sigma_spatial: f64,
    /// Range sigma as a fraction of each depth map's value range.
    pub bilateral_sigma_range_frac: f64,
    /// Processed samples kept in memory per corpus.
    pub cache_entries: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            depth_scale: 1e-3,
            d_max: 10.0,
            patch_size: 128,
            image_size: 256,
            bilateral_sigma_spatial: 5.0,
            bilateral_sigma_range_frac: 0.1,
            cache_entries: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HazeSection {
    pub beta: f64,
    pub airlight: [f64; 3],
}

impl Default for HazeSection {
    fn default() -> Self {
        Self {
            beta: 1.0,
            airlight: [1.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub pool_size: usize,
    /// Checkpoint interval in optimizer steps; the final step is always saved.
    pub ckpt_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 400,
            lr: 1e-4,
            batch_size: 1,
            seed: 0,
            pool_size: 50,
            ckpt_every: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub backbone: String,
    pub blocks_per_side: usize,
    pub layers_per_block: usize,
    pub growth: usize,
    pub stem_filters: usize,
    pub disc_base_filters: usize,
    pub disc_downsampling: usize,
    pub disc_norm: NormKind,
}

impl Default for ModelSection {
    fn default() -> Self {
        let g = GeneratorSpec::default();
        let d = DiscriminatorSpec::default();
        Self {
            backbone: g.backbone_id,
            blocks_per_side: g.num_blocks_per_side,
            layers_per_block: g.layers_per_block,
            growth: g.growth,
            stem_filters: g.stem_filters,
            disc_base_filters: d.base_filters,
            disc_downsampling: d.num_downsampling_layers,
            disc_norm: d.norm,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataSection,
    pub haze: HazeSection,
    pub train: TrainSection,
    pub loss: LossWeights,
    pub model: ModelSection,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.prep().validate()?;
        self.haze_params()?;
        self.train_config().validate()?;
        self.generator_spec(3, 4).validate()?;
        self.discriminator_spec(4).validate()?;
        Ok(())
    }

    pub fn prep(&self) -> PrepConfig {
        PrepConfig {
            image_size: self.data.image_size,
            depth_scale: self.data.depth_scale,
            d_max: self.data.d_max,
            bilateral_sigma_spatial: self.data.bilateral_sigma_spatial,
            bilateral_sigma_range_frac: self.data.bilateral_sigma_range_frac,
            cache_entries: self.data.cache_entries,
        }
    }

    pub fn haze_params(&self) -> Result<HazeParams> {
        HazeParams::new(self.haze.beta, self.haze.airlight)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            learning_rate: self.train.lr,
            batch_size: self.train.batch_size,
            patch_size: self.data.patch_size,
            weights: self.loss,
            seed: self.train.seed,
            pool_size: self.train.pool_size,
            checkpoint_interval: self.train.ckpt_every,
        }
    }

    pub fn generator_spec(&self, in_channels: usize, out_channels: usize) -> GeneratorSpec {
        GeneratorSpec {
            in_channels,
            out_channels,
            num_blocks_per_side: self.model.blocks_per_side,
            layers_per_block: self.model.layers_per_block,
            growth: self.model.growth,
            stem_filters: self.model.stem_filters,
            backbone_id: self.model.backbone.clone(),
        }
    }

    pub fn discriminator_spec(&self, in_channels: usize) -> DiscriminatorSpec {
        DiscriminatorSpec {
            in_channels,
            base_filters: self.model.disc_base_filters,
            num_downsampling_layers: self.model.disc_downsampling,
            norm: self.model.disc_norm,
        }
    }
}
