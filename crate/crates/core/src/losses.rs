//! Generator and discriminator objectives.
//!
//! All inputs are `NCHW` candle tensors in the network range `[-1, 1]`;
//! every term is reduced by its mean so the weights are resolution
//! independent.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights of the composite generator objective. The cycle term has weight 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub gamma_gan: f64,
    pub gamma_ssim: f64,
    pub gamma_grad: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma_gan: 5.0,
            gamma_ssim: 1.0,
            gamma_grad: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(gamma_gan: f64, gamma_ssim: f64, gamma_grad: f64) -> Result<Self> {
        let w = Self {
            gamma_gan,
            gamma_ssim,
            gamma_grad,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma_gan", self.gamma_gan),
            ("gamma_ssim", self.gamma_ssim),
            ("gamma_grad", self.gamma_grad),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss.{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// `cyc + gamma_gan gan + gamma_ssim ssim + gamma_grad grad`.
    pub fn combine(&self, cyc: f64, gan: f64, ssim: f64, grad: f64) -> f64 {
        cyc + self.gamma_gan * gan + self.gamma_ssim * ssim + self.gamma_grad * grad
    }
}

/// The six tensors of one training step's two cycles.
#[derive(Debug, Clone)]
pub struct CycleBundle {
    pub x: Tensor,
    pub g_x: Tensor,
    pub f_g_x: Tensor,
    pub y: Tensor,
    pub f_y: Tensor,
    pub g_f_y: Tensor,
}

impl CycleBundle {
    /// Channel counts 3/4/3 and 4/3/4, and a common `N x H x W` per cycle.
    pub fn validate(&self) -> Result<()> {
        let cycles = [
            [("x", &self.x, 3), ("G(x)", &self.g_x, 4), ("F(G(x))", &self.f_g_x, 3)],
            [("y", &self.y, 4), ("F(y)", &self.f_y, 3), ("G(F(y))", &self.g_f_y, 4)],
        ];
        for cycle in cycles {
            let (n, _, h, w) = cycle[0].1.dims4()?;
            for (name, t, c) in cycle {
                let (tn, tc, th, tw) = t.dims4()?;
                if tc != c {
                    return Err(Error::Shape(format!("{name} must have {c} channels, got {tc}")));
                }
                if (tn, th, tw) != (n, h, w) {
                    return Err(Error::Shape(format!(
                        "{name} is {tn}x{th}x{tw}, cycle start is {n}x{h}x{w}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn rgb(t: &Tensor) -> Result<Tensor> {
    Ok(t.narrow(1, 0, 3)?)
}

/// Extract the depth (fourth) channel of an RGB-D tensor.
pub fn depth_channel(t: &Tensor) -> Result<Tensor> {
    if t.dim(1)? != 4 {
        return Err(Error::Shape(format!("expected 4 channels, got {}", t.dim(1)?)));
    }
    Ok(t.narrow(1, 3, 1)?)
}

fn mean_abs_diff(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.abs()?.mean_all()?)
}

/// L1 cycle loss over both cycles; the `y` term includes depth.
pub fn cycle_loss(bundle: &CycleBundle) -> Result<Tensor> {
    same_shape(&bundle.x, &bundle.f_g_x, "x vs F(G(x))")?;
    same_shape(&bundle.y, &bundle.g_f_y, "y vs G(F(y))")?;
    let a = mean_abs_diff(&bundle.x, &bundle.f_g_x)?;
    let b = mean_abs_diff(&bundle.y, &bundle.g_f_y)?;
    Ok((a + b)?)
}

/// `mean((d_real - 1)^2) + mean(d_fake^2)`.
pub fn lsgan_d_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    let real = (d_real - 1.0)?.sqr()?.mean_all()?;
    let fake = d_fake.sqr()?.mean_all()?;
    Ok((real + fake)?)
}

/// `mean((d_fake - 1)^2)`.
pub fn lsgan_g_loss(d_fake: &Tensor) -> Result<Tensor> {
    Ok((d_fake - 1.0)?.sqr()?.mean_all()?)
}

/// Gaussian SSIM window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimWindow {
    pub size: usize,
    pub sigma: f64,
}

impl Default for SsimWindow {
    fn default() -> Self {
        Self { size: 11, sigma: 1.5 }
    }
}

impl SsimWindow {
    /// Normalized 1-D Gaussian taps.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.size as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.size)
            .map(|i| (-(i as f64 - c).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }
}

/// SSIM stabilizers for a dynamic range of 1.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Valid (unpadded) separable Gaussian filtering of every channel.
fn gaussian_filter(t: &Tensor, taps: &Tensor, k: usize) -> Result<Tensor> {
    let (n, c, h, w) = t.dims4()?;
    let flat = t.reshape((n * c, 1, h, w))?;
    let horiz = taps.reshape((1, 1, 1, k))?;
    let vert = taps.reshape((1, 1, k, 1))?;
    let out = flat.conv2d(&horiz, 0, 1, 1, 1)?.conv2d(&vert, 0, 1, 1, 1)?;
    let (_, _, oh, ow) = out.dims4()?;
    Ok(out.reshape((n, c, oh, ow))?)
}

/// Per-pixel SSIM index of two same-shaped `[-1, 1]` tensors.
///
/// Inputs are mapped to `[0, 1]` first; the map covers the valid window
/// positions only, so it is `(h - size + 1) x (w - size + 1)` per channel.
pub fn ssim_map(a: &Tensor, b: &Tensor, window: SsimWindow) -> Result<Tensor> {
    same_shape(a, b, "ssim inputs")?;
    let (_, _, h, w) = a.dims4()?;
    if window.size == 0 || window.size > h || window.size > w {
        return Err(Error::Argument(format!(
            "SSIM window {} larger than image {h}x{w}",
            window.size
        )));
    }
    let taps = Tensor::new(window.taps(), a.device())?.to_dtype(a.dtype())?;
    let k = window.size;
    let a = ((a + 1.0)? * 0.5)?;
    let b = ((b + 1.0)? * 0.5)?;

    let mu_a = gaussian_filter(&a, &taps, k)?;
    let mu_b = gaussian_filter(&b, &taps, k)?;
    let mu_aa = mu_a.sqr()?;
    let mu_bb = mu_b.sqr()?;
    let mu_ab = (&mu_a * &mu_b)?;
    let var_a = (gaussian_filter(&a.sqr()?, &taps, k)? - &mu_aa)?;
    let var_b = (gaussian_filter(&b.sqr()?, &taps, k)? - &mu_bb)?;
    let cov = (gaussian_filter(&(&a * &b)?, &taps, k)? - &mu_ab)?;

    let num = ((mu_ab * 2.0)? + SSIM_C1)?.mul(&((cov * 2.0)? + SSIM_C2)?)?;
    let den = ((mu_aa + mu_bb)? + SSIM_C1)?.mul(&((var_a + var_b)? + SSIM_C2)?)?;
    Ok(num.div(&den)?)
}

/// Mean SSIM as a scalar tensor.
pub fn ssim(a: &Tensor, b: &Tensor, window: SsimWindow) -> Result<Tensor> {
    Ok(ssim_map(a, b, window)?.mean_all()?)
}

/// Sum of `1 - SSIM` over `(x, G(x))`, `(y, F(y))`, `(G(x), F(G(x)))` and
/// `(F(y), G(F(y)))`, using only the color channels of 4-channel tensors.
pub fn ssim_loss(bundle: &CycleBundle, window: SsimWindow) -> Result<Tensor> {
    let pairs = [
        (bundle.x.clone(), rgb(&bundle.g_x)?),
        (rgb(&bundle.y)?, bundle.f_y.clone()),
        (rgb(&bundle.g_x)?, bundle.f_g_x.clone()),
        (bundle.f_y.clone(), rgb(&bundle.g_f_y)?),
    ];
    let mut total: Option<Tensor> = None;
    for (a, b) in &pairs {
        let term = ssim(a, b, window)?.affine(-1.0, 1.0)?;
        total = Some(match total {
            None => term,
            Some(t) => (t + term)?,
        });
    }
    Ok(total.expect("four pairs"))
}

/// Per-pixel `|d(i, j+1) - d(i, j)| + |d(i+1, j) - d(i, j)|` with replicate
/// boundary (differences past the last row/column are zero).
pub fn grad_sparsity_map(depth: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = depth.dims4()?;
    if c != 1 {
        return Err(Error::Shape(format!("gradient sparsity expects 1 channel, got {c}")));
    }
    let dtype = depth.dtype();
    let dev = depth.device();
    let dx = if w > 1 {
        let d = (depth.narrow(3, 1, w - 1)? - depth.narrow(3, 0, w - 1)?)?.abs()?;
        Tensor::cat(&[&d, &Tensor::zeros((n, 1, h, 1), dtype, dev)?], 3)?
    } else {
        Tensor::zeros((n, 1, h, w), dtype, dev)?
    };
    let dy = if h > 1 {
        let d = (depth.narrow(2, 1, h - 1)? - depth.narrow(2, 0, h - 1)?)?.abs()?;
        Tensor::cat(&[&d, &Tensor::zeros((n, 1, 1, w), dtype, dev)?], 2)?
    } else {
        Tensor::zeros((n, 1, h, w), dtype, dev)?
    };
    Ok((dx + dy)?)
}

/// Mean over pixels (and batch) of [`grad_sparsity_map`].
pub fn grad_sparsity_loss(depth: &Tensor) -> Result<Tensor> {
    Ok(grad_sparsity_map(depth)?.mean_all()?)
}

/// Discriminator scores on generated samples used by the generator objective.
#[derive(Debug, Clone)]
pub struct FakeScores {
    /// `D_Y(G(x))`.
    pub d_y_of_g_x: Tensor,
    /// `D_X(F(y))`.
    pub d_x_of_f_y: Tensor,
}

/// Scalar values of each term, for logging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cyc: f64,
    pub gan: f64,
    pub ssim: f64,
    pub grad: f64,
    pub total: f64,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Composite generator objective and its per-term breakdown.
///
/// The adversarial term covers both directions:
/// `lsgan_g(D_Y(G(x))) + lsgan_g(D_X(F(y)))`.
pub fn total_generator_loss(
    bundle: &CycleBundle,
    scores: &FakeScores,
    weights: &LossWeights,
) -> Result<(Tensor, LossBreakdown)> {
    bundle.validate()?;
    let cyc = cycle_loss(bundle)?;
    let gan = (lsgan_g_loss(&scores.d_y_of_g_x)? + lsgan_g_loss(&scores.d_x_of_f_y)?)?;
    let ssim = ssim_loss(bundle, SsimWindow::default())?;
    let grad = grad_sparsity_loss(&depth_channel(&bundle.g_x)?)?;
    let total = (((&cyc + (&gan * weights.gamma_gan)?)? + (&ssim * weights.gamma_ssim)?)?
        + (&grad * weights.gamma_grad)?)?;
    let breakdown = LossBreakdown {
        cyc: scalar(&cyc)?,
        gan: scalar(&gan)?,
        ssim: scalar(&ssim)?,
        grad: scalar(&grad)?,
        total: scalar(&total)?,
    };
    Ok((total, breakdown))
}
