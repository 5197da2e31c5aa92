#![allow(dead_code)]

use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uwdepth::models::{DiscriminatorSpec, GeneratorSpec};
use uwdepth::tensor::{ImageTensor, ValueRange};
use uwdepth::training::CycleSpecs;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(shape: (usize, usize, usize, usize), seed: u64) -> ImageTensor {
    let mut r = rng(seed);
    let data = Array4::from_shape_fn(shape, |_| r.random_range(-1.0..=1.0));
    ImageTensor::new(data, ValueRange::NETWORK).unwrap()
}

pub fn random_nchw(shape: (usize, usize, usize, usize), seed: u64, dtype: DType) -> Tensor {
    let (n, c, h, w) = shape;
    random_image((n, h, w, c), seed).to_nchw(&Device::Cpu, dtype).unwrap()
}

pub fn random_map(h: usize, w: usize, lo: f64, hi: f64, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((h, w), |_| r.random_range(lo..hi))
}

pub fn values(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar().unwrap()
}

pub fn generator(in_c: usize, out_c: usize, blocks: usize, layers: usize, growth: usize, stem: usize) -> GeneratorSpec {
    GeneratorSpec {
        num_blocks_per_side: blocks,
        layers_per_block: layers,
        growth,
        stem_filters: stem,
        ..GeneratorSpec::new(in_c, out_c)
    }
}

pub fn discriminator(in_c: usize, base: usize) -> DiscriminatorSpec {
    DiscriminatorSpec {
        base_filters: base,
        ..DiscriminatorSpec::new(in_c)
    }
}

/// Miniature networks for gradient checks and fast step tests.
pub fn tiny_specs() -> CycleSpecs {
    CycleSpecs {
        g: generator(3, 4, 1, 2, 2, 4),
        f: generator(4, 3, 1, 2, 2, 4),
        d_x: discriminator(3, 4),
        d_y: discriminator(4, 4),
    }
}

/// Reduced networks for smoke training on a single CPU core.
pub fn smoke_specs() -> CycleSpecs {
    CycleSpecs {
        g: generator(3, 4, 2, 2, 4, 8),
        f: generator(4, 3, 2, 2, 4, 8),
        d_x: discriminator(3, 8),
        d_y: discriminator(4, 8),
    }
}

/// Median of a slice (mean of the middle pair for even lengths).
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Pearson correlation straight from the covariance definition.
pub fn pearson_oracle(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let mp = p.iter().sum::<f64>() / n;
    let mg = g.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vp = 0.0;
    let mut vg = 0.0;
    for i in 0..p.len() {
        cov += (p[i] - mp) * (g[i] - mg);
        vp += (p[i] - mp).powi(2);
        vg += (g[i] - mg).powi(2);
    }
    cov / (vp * vg).sqrt()
}

/// `(1/n) sum e^2 - (1/n^2) (sum e)^2` with `e = ln p - ln g`.
pub fn si_mse_oracle(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for i in 0..p.len() {
        let e = p[i].ln() - g[i].ln();
        s1 += e;
        s2 += e * e;
    }
    s2 / n - s1 * s1 / (n * n)
}
