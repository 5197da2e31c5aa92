//! Procedural scenes and on-disk corpora for tests and smoke runs.

use std::path::Path;

use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{synthesize_haze, write_depth_png, write_rgb_png, HazeParams, RgbdSample};
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, ValueRange};

/// Depth-scale used for fixture depth PNGs (millimeters).
pub const FIXTURE_DEPTH_SCALE: f64 = 1e-3;

/// Tilted ground plane with one nearer rectangular object, textured with
/// smooth sinusoids.
pub fn synthetic_scene<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Result<RgbdSample> {
    let near = rng.random_range(0.8..2.5);
    let tilt = rng.random_range(1.0..5.0);
    let (oy, ox) = (rng.random_range(0..size / 2), rng.random_range(0..size / 2));
    let (oh, ow) = (size / 4 + rng.random_range(0..size / 4), size / 4 + rng.random_range(0..size / 4));
    let obj_depth = near * rng.random_range(0.4..0.9);
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.8));
    let obj: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
    let freq: [f64; 2] = std::array::from_fn(|_| rng.random_range(0.05..0.4));
    let phase: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));

    let in_obj = |y: usize, x: usize| (oy..oy + oh).contains(&y) && (ox..ox + ow).contains(&x);
    let depth = Array4::from_shape_fn((1, size, size, 1), |(_, y, x, _)| {
        if in_obj(y, x) {
            obj_depth
        } else {
            near + tilt * (1.0 - y as f64 / size as f64)
        }
    });
    let color = Array4::from_shape_fn((1, size, size, 3), |(_, y, x, c)| {
        let tex = 0.15 * (freq[0] * x as f64 + freq[1] * y as f64 + phase[c]).sin();
        let v = if in_obj(y, x) { obj[c] } else { base[c] } + tex;
        v.clamp(0.0, 1.0)
    });
    RgbdSample::new(
        ImageTensor::new(color, ValueRange::UNIT)?,
        ImageTensor::new(depth, ValueRange::METERS)?,
        Array2::from_elem((size, size), true),
    )
}

/// Underwater-looking rendition of a scene: red attenuated, blue-green veil.
pub fn underwater_render<R: Rng + ?Sized>(scene: &RgbdSample, rng: &mut R) -> Result<ImageTensor> {
    let beta = rng.random_range(0.15..0.35);
    let veil = [0.05, rng.random_range(0.35..0.5), rng.random_range(0.45..0.6)];
    let atten = [0.35, 0.85, 0.95];
    let color = scene.color.data();
    let depth = scene.depth.data();
    let data = Array4::from_shape_fn(color.dim(), |(b, y, x, c)| {
        let t = (-beta * depth[[b, y, x, 0]]).exp();
        (color[[b, y, x, c]] * atten[c] * t + veil[c] * (1.0 - t)).clamp(0.0, 1.0)
    });
    ImageTensor::new(data, ValueRange::UNIT)
}

fn create(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write `sample` as `<dir>/color/<stem>.png` and `<dir>/depth/<stem>.png`.
pub fn write_rgbd(dir: &Path, stem: &str, sample: &RgbdSample, depth_scale: f64) -> Result<()> {
    let (cdir, ddir) = (dir.join("color"), dir.join("depth"));
    create(&cdir)?;
    create(&ddir)?;
    write_rgb_png(&cdir.join(format!("{stem}.png")), &sample.color, 0)?;
    let depth = sample.depth.data().slice(ndarray::s![0, .., .., 0]).to_owned();
    let depth = ndarray::Zip::from(&depth)
        .and(&sample.depth_valid_mask)
        .map_collect(|&d, &m| if m { d } else { 0.0 });
    write_depth_png(&ddir.join(format!("{stem}.png")), &depth, depth_scale)
}

/// Clean RGB-D corpus `<dir>/{color,depth}` of `n` scenes.
pub fn write_clean_rgbd_corpus(dir: &Path, n: usize, size: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let scene = synthetic_scene(size, &mut rng)?;
        write_rgbd(dir, &format!("scene{i:04}"), &scene, FIXTURE_DEPTH_SCALE)?;
    }
    Ok(())
}

/// Training layout under `root`: `underwater/*.png` and hazy
/// `aerial/{color,depth}`.
pub fn write_training_corpus(
    root: &Path,
    n_underwater: usize,
    n_aerial: usize,
    size: usize,
    haze: &HazeParams,
    seed: u64,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uw_dir = root.join("underwater");
    create(&uw_dir)?;
    for i in 0..n_underwater {
        let scene = synthetic_scene(size, &mut rng)?;
        let img = underwater_render(&scene, &mut rng)?;
        write_rgb_png(&uw_dir.join(format!("uw{i:04}.png")), &img, 0)?;
    }
    let aerial = root.join("aerial");
    for i in 0..n_aerial {
        let scene = synthetic_scene(size, &mut rng)?;
        write_rgbd(&aerial, &format!("rgbd{i:04}"), &synthesize_haze(&scene, haze)?, FIXTURE_DEPTH_SCALE)?;
    }
    Ok(())
}

/// Evaluation layout `<dir>/{color,depth}`: underwater renders with their
/// scene depth as ground truth.
pub fn write_eval_corpus(dir: &Path, n: usize, size: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let scene = synthetic_scene(size, &mut rng)?;
        let img = underwater_render(&scene, &mut rng)?;
        let sample = RgbdSample::new(img, scene.depth.clone(), scene.depth_valid_mask.clone())?;
        write_rgbd(dir, &format!("eval{i:04}"), &sample, FIXTURE_DEPTH_SCALE)?;
    }
    Ok(())
}
