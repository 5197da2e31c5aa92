//! Unsupervised monocular depth estimation for underwater images.
//!
//! Underwater photographs are translated into hazy RGB-D images by a
//! generator trained without paired data: two generators (`G: RGB -> RGB-D`,
//! `F: RGB-D -> RGB`) and two patch discriminators are optimized with
//! adversarial, cycle-consistency, SSIM and depth-gradient losses. The depth
//! channel of `G`'s output is the estimate.

pub mod baseline;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod fixtures;
pub mod losses;
pub mod models;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
