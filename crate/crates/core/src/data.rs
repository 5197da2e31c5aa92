//! Corpus loading, depth pre-filtering, haze synthesis and patch sampling.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use ndarray::{Array2, Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, ValueRange};

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

/// Medium parameters of the ambient scattering model `I = J t + A (1 - t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazeParams {
    beta: f64,
    airlight: [f64; 3],
}

impl HazeParams {
    /// `beta = 0` is accepted and yields the haze-free ablation arm.
    pub fn new(beta: f64, airlight: [f64; 3]) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!(
                "haze beta must be finite and >= 0, got {beta}"
            )));
        }
        if airlight.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Config(format!(
                "airlight channels must lie in [0, 1], got {airlight:?}"
            )));
        }
        Ok(Self { beta, airlight })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn airlight(&self) -> [f64; 3] {
        self.airlight
    }

    /// `t = exp(-beta d)`, in `(0, 1]` for finite non-negative depth.
    pub fn transmission(&self, depth_m: f64) -> f64 {
        (-self.beta * depth_m).exp()
    }
}

impl Default for HazeParams {
    fn default() -> Self {
        Self {
            beta: 1.0,
            airlight: [1.0; 3],
        }
    }
}

/// Above-water color + metric depth pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdSample {
    /// `1 x h x w x 3`.
    pub color: ImageTensor,
    /// `1 x h x w x 1`, meters.
    pub depth: ImageTensor,
    pub depth_valid_mask: Array2<bool>,
}

impl RgbdSample {
    pub fn new(color: ImageTensor, depth: ImageTensor, mask: Array2<bool>) -> Result<Self> {
        if color.channels() != 3 || depth.channels() != 1 {
            return Err(Error::Shape(format!(
                "rgbd sample needs 3+1 channels, got {}+{}",
                color.channels(),
                depth.channels()
            )));
        }
        if color.batch() != 1 || depth.batch() != 1 {
            return Err(Error::Shape("rgbd sample holds a single image".into()));
        }
        let hw = (color.height(), color.width());
        if (depth.height(), depth.width()) != hw || mask.dim() != hw {
            return Err(Error::Shape(format!(
                "color {hw:?}, depth {:?} and mask {:?} must share spatial dims",
                (depth.height(), depth.width()),
                mask.dim()
            )));
        }
        for ((y, x), valid) in mask.indexed_iter() {
            let d = depth.data()[[0, y, x, 0]];
            if *valid && d < 0.0 {
                return Err(Error::Data(format!("negative depth {d} at ({y},{x})")));
            }
        }
        Ok(Self {
            color,
            depth,
            depth_valid_mask: mask,
        })
    }

    pub fn height(&self) -> usize {
        self.color.height()
    }

    pub fn width(&self) -> usize {
        self.color.width()
    }
}

// ---------------------------------------------------------------------------
// Image IO
// ---------------------------------------------------------------------------

fn open_image(path: &Path) -> Result<DynamicImage> {
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })
}

fn check_target(target: (usize, usize)) -> Result<()> {
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::Argument(format!(
            "target size must be positive, got {target:?}"
        )));
    }
    Ok(())
}

/// Bilinear resize of an RGB float image.
fn resize_rgb(img: ImageBuffer<Rgb<f32>, Vec<f32>>, h: usize, w: usize) -> ImageBuffer<Rgb<f32>, Vec<f32>> {
    if img.height() as usize == h && img.width() as usize == w {
        return img;
    }
    image::imageops::resize(&img, w as u32, h as u32, FilterType::Triangle)
}

/// Bilinear resize of a single-channel float map.
pub fn resize_map(map: &Array2<f64>, h: usize, w: usize) -> Result<Array2<f64>> {
    check_target((h, w))?;
    let (sh, sw) = map.dim();
    if (sh, sw) == (h, w) {
        return Ok(map.clone());
    }
    let buf: ImageBuffer<Luma<f32>, Vec<f32>> = ImageBuffer::from_fn(sw as u32, sh as u32, |x, y| {
        Luma([map[[y as usize, x as usize]] as f32])
    });
    let out = image::imageops::resize(&buf, w as u32, h as u32, FilterType::Triangle);
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        out.get_pixel(x as u32, y as u32).0[0] as f64
    }))
}

/// Nearest-neighbour resize of a validity mask.
pub fn resize_mask(mask: &Array2<bool>, h: usize, w: usize) -> Array2<bool> {
    let (sh, sw) = mask.dim();
    if (sh, sw) == (h, w) {
        return mask.clone();
    }
    Array2::from_shape_fn((h, w), |(y, x)| {
        let sy = (((y as f64 + 0.5) * sh as f64 / h as f64) as usize).min(sh - 1);
        let sx = (((x as f64 + 0.5) * sw as f64 / w as f64) as usize).min(sw - 1);
        mask[[sy, sx]]
    })
}

/// Read a color image as a `[0, 1]` RGB array at native resolution.
pub fn read_rgb_unit(path: &Path) -> Result<ImageTensor> {
    let rgb = open_image(path)?.to_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    rgb_buffer_to_tensor(&rgb, h, w, ValueRange::UNIT)
}

fn rgb_buffer_to_tensor(
    rgb: &ImageBuffer<Rgb<f32>, Vec<f32>>,
    h: usize,
    w: usize,
    range: ValueRange,
) -> Result<ImageTensor> {
    let data = Array4::from_shape_fn((1, h, w, 3), |(_, y, x, c)| {
        (rgb.get_pixel(x as u32, y as u32).0[c] as f64).clamp(0.0, 1.0)
    });
    ImageTensor::new(data, range)
}

/// Decode, bilinearly resize to `target_size` and map linearly to `[-1, 1]`.
pub fn load_image(path: &Path, target_size: (usize, usize)) -> Result<ImageTensor> {
    check_target(target_size)?;
    let rgb = resize_rgb(open_image(path)?.to_rgb32f(), target_size.0, target_size.1);
    let unit = rgb_buffer_to_tensor(&rgb, target_size.0, target_size.1, ValueRange::UNIT)?;
    unit.remap(ValueRange::NETWORK)
}

/// Read a 16-bit (or 8-bit) depth PNG. Returns depth in meters and the
/// validity mask (`raw > 0`).
pub fn read_depth(path: &Path, depth_scale: f64) -> Result<(Array2<f64>, Array2<bool>)> {
    let gray = open_image(path)?.to_luma16();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let raw = Array2::from_shape_fn((h, w), |(y, x)| gray.get_pixel(x as u32, y as u32).0[0]);
    Ok((raw.mapv(|v| v as f64 * depth_scale), raw.mapv(|v| v > 0)))
}

/// Write meters as a 16-bit PNG (`raw = round(d / depth_scale)`, saturating).
pub fn write_depth_png(path: &Path, depth_m: &Array2<f64>, depth_scale: f64) -> Result<()> {
    let (h, w) = depth_m.dim();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let v = depth_m[[y as usize, x as usize]] / depth_scale;
        Luma([v.round().clamp(0.0, u16::MAX as f64) as u16])
    });
    img.save(path).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })
}

/// Write a `[0, 1]` RGB tensor item as 8-bit PNG.
pub fn write_rgb_png(path: &Path, color: &ImageTensor, index: usize) -> Result<()> {
    let item = color.item(index);
    let (h, w, _) = item.dim();
    let range = color.range();
    let img: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| {
            let v = (item[[y as usize, x as usize, c]] - range.lo) / (range.hi - range.lo);
            (v * 255.0).round().clamp(0.0, 255.0) as u8
        };
        Rgb([px(0), px(1), px(2)])
    });
    img.save(path).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })
}

/// Min-max normalized 8-bit visualization of a map; not for metric use.
pub fn write_visualization_png(path: &Path, map: &Array2<f64>) -> Result<()> {
    let (h, w) = map.dim();
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let img: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let v = (map[[y as usize, x as usize]] - lo) / span;
        Luma([(v * 255.0).round().clamp(0.0, 255.0) as u8])
    });
    img.save(path).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Depth pre-processing
// ---------------------------------------------------------------------------

/// Replace invalid pixels by the value of the nearest valid pixel
/// (4-connected breadth-first distance).
pub fn fill_invalid_nearest(depth: &Array2<f64>, mask: &Array2<bool>) -> Result<Array2<f64>> {
    let (h, w) = depth.dim();
    let mut out = depth.clone();
    let mut seen = mask.clone();
    let mut queue: VecDeque<(usize, usize)> = mask
        .indexed_iter()
        .filter(|(_, v)| **v)
        .map(|(idx, _)| idx)
        .collect();
    if queue.is_empty() {
        return Err(Error::Data("depth map has no valid pixels".into()));
    }
    while let Some((y, x)) = queue.pop_front() {
        let v = out[[y, x]];
        let neighbours = [
            (y.wrapping_sub(1), x),
            (y + 1, x),
            (y, x.wrapping_sub(1)),
            (y, x + 1),
        ];
        for (ny, nx) in neighbours {
            if ny < h && nx < w && !seen[[ny, nx]] {
                seen[[ny, nx]] = true;
                out[[ny, nx]] = v;
                queue.push_back((ny, nx));
            }
        }
    }
    Ok(out)
}

/// Edge-preserving bilateral smoothing of every item of a 1-channel tensor.
///
/// Spatial support is truncated at `ceil(2 sigma_spatial)` pixels and only
/// in-bounds neighbours contribute, so each output is a convex combination
/// of input values.
pub fn bilateral_filter_depth(
    depth: &ImageTensor,
    sigma_spatial: f64,
    sigma_range: f64,
) -> Result<ImageTensor> {
    if !(sigma_spatial > 0.0 && sigma_range > 0.0) {
        return Err(Error::Argument(format!(
            "bilateral sigmas must be positive, got spatial={sigma_spatial} range={sigma_range}"
        )));
    }
    if depth.channels() != 1 {
        return Err(Error::Shape(format!(
            "bilateral filter expects 1 channel, got {}",
            depth.channels()
        )));
    }
    let (b, h, w, _) = depth.dims();
    let radius = (2.0 * sigma_spatial).ceil() as isize;
    let side = (2 * radius + 1) as usize;
    let mut spatial = vec![0.0; side * side];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            spatial[((dy + radius) as usize) * side + (dx + radius) as usize] =
                (-((dy * dy + dx * dx) as f64) / (2.0 * sigma_spatial * sigma_spatial)).exp();
        }
    }
    let inv_range = -1.0 / (2.0 * sigma_range * sigma_range);
    let src = depth.data();
    let mut out = Array4::<f64>::zeros((b, h, w, 1));
    for n in 0..b {
        for y in 0..h {
            let y0 = (y as isize - radius).max(0) as usize;
            let y1 = ((y as isize + radius) as usize).min(h - 1);
            for x in 0..w {
                let x0 = (x as isize - radius).max(0) as usize;
                let x1 = ((x as isize + radius) as usize).min(w - 1);
                let center = src[[n, y, x, 0]];
                let (mut acc, mut norm) = (0.0, 0.0);
                for yy in y0..=y1 {
                    let row = (yy + radius as usize - y) * side;
                    for xx in x0..=x1 {
                        let v = src[[n, yy, xx, 0]];
                        let diff = v - center;
                        let wgt = spatial[row + xx + radius as usize - x] * (diff * diff * inv_range).exp();
                        acc += wgt * v;
                        norm += wgt;
                    }
                }
                out[[n, y, x, 0]] = acc / norm;
            }
        }
    }
    ImageTensor::new(out, depth.range())
}

/// Replace the color of `sample` by `J t + A (1 - t)`, `t = exp(-beta d)`.
///
/// Color must be in `[0, 1]` and depth in meters. Depth is returned unchanged.
pub fn synthesize_haze(sample: &RgbdSample, params: &HazeParams) -> Result<RgbdSample> {
    if sample.color.range() != ValueRange::UNIT {
        return Err(Error::Data("haze synthesis expects color in [0, 1]".into()));
    }
    let (_, h, w, _) = sample.color.dims();
    let depth = sample.depth.data();
    let color = sample.color.data();
    let airlight = params.airlight();
    let mut hazy = Array4::<f64>::zeros((1, h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let d = depth[[0, y, x, 0]];
            if sample.depth_valid_mask[[y, x]] && d < 0.0 {
                return Err(Error::Data(format!("negative depth {d} at ({y},{x})")));
            }
            let t = params.transmission(d.max(0.0));
            for c in 0..3 {
                let j = color[[0, y, x, c]];
                hazy[[0, y, x, c]] = j * t + airlight[c] * (1.0 - t);
            }
        }
    }
    RgbdSample::new(
        ImageTensor::new(hazy, ValueRange::UNIT)?,
        sample.depth.clone(),
        sample.depth_valid_mask.clone(),
    )
}

/// Wrap an `H x W` map of meters as a `1 x H x W x 1` tensor.
pub fn depth_to_tensor(depth_m: &Array2<f64>) -> Result<ImageTensor> {
    ImageTensor::new(
        depth_m.clone().insert_axis(Axis(0)).insert_axis(Axis(3)),
        ValueRange::METERS,
    )
}

/// Affine map of metric depth into the network range: `2 clamp(d / d_max) - 1`.
pub fn normalize_depth(depth_m: f64, d_max: f64) -> f64 {
    2.0 * (depth_m / d_max).clamp(0.0, 1.0) - 1.0
}

/// Inverse of [`normalize_depth`] on its image.
pub fn denormalize_depth(depth_norm: f64, d_max: f64) -> f64 {
    (depth_norm + 1.0) * 0.5 * d_max
}

// ---------------------------------------------------------------------------
// Patch sampling
// ---------------------------------------------------------------------------

/// Types that can be cropped to a random square patch.
pub trait Patchable: Sized {
    fn spatial_dims(&self) -> (usize, usize);
    fn crop_at(&self, top: usize, left: usize, size: usize) -> Result<Self>;
}

impl Patchable for ImageTensor {
    fn spatial_dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    fn crop_at(&self, top: usize, left: usize, size: usize) -> Result<Self> {
        self.crop(top, left, size, size)
    }
}

impl Patchable for RgbdSample {
    fn spatial_dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    fn crop_at(&self, top: usize, left: usize, size: usize) -> Result<Self> {
        let mask = self
            .depth_valid_mask
            .slice(ndarray::s![top..top + size, left..left + size])
            .to_owned();
        RgbdSample::new(
            self.color.crop(top, left, size, size)?,
            self.depth.crop(top, left, size, size)?,
            mask,
        )
    }
}

/// Draw a uniformly random `size x size` crop offset.
pub fn sample_patch_offset<R: Rng + ?Sized>(
    dims: (usize, usize),
    size: usize,
    rng: &mut R,
) -> Result<(usize, usize)> {
    if size == 0 || size > dims.0 || size > dims.1 {
        return Err(Error::Argument(format!(
            "patch size {size} does not fit image {}x{}",
            dims.0, dims.1
        )));
    }
    let top = rng.random_range(0..=dims.0 - size);
    let left = rng.random_range(0..=dims.1 - size);
    Ok((top, left))
}

/// Random contiguous `size x size` crop; color and depth share the offset.
pub fn sample_patch<T: Patchable, R: Rng + ?Sized>(sample: &T, size: usize, rng: &mut R) -> Result<T> {
    let (top, left) = sample_patch_offset(sample.spatial_dims(), size, rng)?;
    sample.crop_at(top, left, size)
}

// ---------------------------------------------------------------------------
// Corpora
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Underwater,
    AerialRgbd,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub image_path: PathBuf,
    pub depth_path: Option<PathBuf>,
}

impl CorpusEntry {
    /// File stem used to name derived outputs.
    pub fn id(&self) -> String {
        self.image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub root_path: PathBuf,
    pub entries: Vec<CorpusEntry>,
    pub domain_tag: Domain,
}

/// Sorted image files (png/jpg) directly inside `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false);
        if path.is_file() && is_image {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Find `<dir>/<stem>.png` (or jpg) for a given stem.
pub fn find_by_stem(dir: &Path, stem: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

impl CorpusIndex {
    /// Index `<dir>/*.png|jpg` as underwater images.
    pub fn scan_underwater(dir: &Path) -> Result<Self> {
        let entries = list_images(dir)?
            .into_iter()
            .map(|image_path| CorpusEntry {
                image_path,
                depth_path: None,
            })
            .collect();
        Ok(Self {
            root_path: dir.to_path_buf(),
            entries,
            domain_tag: Domain::Underwater,
        })
    }

    /// Index `<dir>/color/*` paired by file stem with `<dir>/depth/*`.
    pub fn scan_aerial(dir: &Path) -> Result<Self> {
        let color_dir = dir.join("color");
        let depth_dir = dir.join("depth");
        let mut entries = Vec::new();
        for image_path in list_images(&color_dir)? {
            let stem = image_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let depth_path = find_by_stem(&depth_dir, &stem).ok_or_else(|| {
                Error::Data(format!(
                    "no depth map for {} in {}",
                    image_path.display(),
                    depth_dir.display()
                ))
            })?;
            entries.push(CorpusEntry {
                image_path,
                depth_path: Some(depth_path),
            });
        }
        Ok(Self {
            root_path: dir.to_path_buf(),
            entries,
            domain_tag: Domain::AerialRgbd,
        })
    }

    /// Standard layout: `<root>/underwater` and `<root>/aerial/{color,depth}`.
    pub fn scan_root(root: &Path) -> Result<(Self, Self)> {
        Ok((
            Self::scan_underwater(&root.join("underwater"))?,
            Self::scan_aerial(&root.join("aerial"))?,
        ))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if !e.image_path.is_file() {
                return Err(Error::Data(format!("missing file {}", e.image_path.display())));
            }
            match (&e.depth_path, self.domain_tag) {
                (None, Domain::AerialRgbd) => {
                    return Err(Error::Data(format!(
                        "aerial entry {} lacks a depth map",
                        e.image_path.display()
                    )))
                }
                (Some(d), _) if !d.is_file() => {
                    return Err(Error::Data(format!("missing file {}", d.display())))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Resolution and depth conventions applied when a corpus entry is loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub image_size: usize,
    pub depth_scale: f64,
    pub d_max: f64,
    pub bilateral_sigma_spatial: f64,
    pub bilateral_sigma_range_frac: f64,
    pub cache_entries: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            depth_scale: 1e-3,
            d_max: 10.0,
            bilateral_sigma_spatial: 5.0,
            bilateral_sigma_range_frac: 0.1,
            cache_entries: 512,
        }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 {
            return Err(Error::Config("data.image_size must be positive".into()));
        }
        if !(self.depth_scale > 0.0 && self.d_max > 0.0) {
            return Err(Error::Config("data.depth_scale and data.d_max must be positive".into()));
        }
        if !(self.bilateral_sigma_spatial > 0.0 && self.bilateral_sigma_range_frac > 0.0) {
            return Err(Error::Config("bilateral sigmas must be positive".into()));
        }
        Ok(())
    }
}

/// Load an aerial RGB-D entry at `image_size`: color in `[0, 1]`, depth in
/// meters with invalid pixels filled by their nearest valid neighbour and
/// bilateral smoothing applied.
pub fn load_rgbd(entry: &CorpusEntry, prep: &PrepConfig) -> Result<RgbdSample> {
    let size = prep.image_size;
    let color = load_image(&entry.image_path, (size, size))?.remap(ValueRange::UNIT)?;
    let depth_path = entry
        .depth_path
        .as_ref()
        .ok_or_else(|| Error::Data(format!("{} has no depth map", entry.image_path.display())))?;
    let (depth, mask) = read_depth(depth_path, prep.depth_scale)?;
    let filled = fill_invalid_nearest(&depth, &mask)?;
    let resized = resize_map(&filled, size, size)?.mapv(|v| v.max(0.0));
    let mask = resize_mask(&mask, size, size);
    let lo = resized.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = resized.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let depth = depth_to_tensor(&resized)?;
    let depth = if hi > lo {
        bilateral_filter_depth(
            &depth,
            prep.bilateral_sigma_spatial,
            prep.bilateral_sigma_range_frac * (hi - lo),
        )?
    } else {
        depth
    };
    RgbdSample::new(color, depth, mask)
}

/// Four-channel network tensor `[rgb, depth]` in `[-1, 1]`.
pub fn rgbd_to_network(sample: &RgbdSample, d_max: f64) -> Result<ImageTensor> {
    let color = sample.color.remap(ValueRange::NETWORK)?;
    let depth = ImageTensor::new(
        sample.depth.data().mapv(|d| normalize_depth(d, d_max)),
        ValueRange::NETWORK,
    )?;
    ImageTensor::concat_channels(&[&color, &depth])
}

/// Draws unpaired `(x, y)` batches from an underwater and an aerial corpus.
///
/// Processed samples are cached up to `prep.cache_entries` per corpus.
pub struct UnpairedSampler {
    underwater: CorpusIndex,
    aerial: CorpusIndex,
    prep: PrepConfig,
    uw_cache: HashMap<usize, ImageTensor>,
    aerial_cache: HashMap<usize, ImageTensor>,
}

impl UnpairedSampler {
    pub fn new(underwater: CorpusIndex, aerial: CorpusIndex, prep: PrepConfig) -> Result<Self> {
        if underwater.is_empty() || aerial.is_empty() {
            return Err(Error::Config(format!(
                "both corpora must be non-empty (underwater: {}, aerial: {})",
                underwater.len(),
                aerial.len()
            )));
        }
        if underwater.domain_tag != Domain::Underwater || aerial.domain_tag != Domain::AerialRgbd {
            return Err(Error::Config("corpus domain tags are swapped".into()));
        }
        prep.validate()?;
        underwater.validate()?;
        aerial.validate()?;
        Ok(Self {
            underwater,
            aerial,
            prep,
            uw_cache: HashMap::new(),
            aerial_cache: HashMap::new(),
        })
    }

    /// `max(|underwater|, |aerial|)`, the number of samples in one epoch.
    pub fn epoch_len(&self) -> usize {
        self.underwater.len().max(self.aerial.len())
    }

    pub fn prep(&self) -> &PrepConfig {
        &self.prep
    }

    fn underwater_item(&mut self, index: usize) -> Result<ImageTensor> {
        if let Some(t) = self.uw_cache.get(&index) {
            return Ok(t.clone());
        }
        let size = self.prep.image_size;
        let t = load_image(&self.underwater.entries[index].image_path, (size, size))?;
        if self.uw_cache.len() < self.prep.cache_entries {
            self.uw_cache.insert(index, t.clone());
        }
        Ok(t)
    }

    fn aerial_item(&mut self, index: usize) -> Result<ImageTensor> {
        if let Some(t) = self.aerial_cache.get(&index) {
            return Ok(t.clone());
        }
        let sample = load_rgbd(&self.aerial.entries[index], &self.prep)?;
        let t = rgbd_to_network(&sample, self.prep.d_max)?;
        if self.aerial_cache.len() < self.prep.cache_entries {
            self.aerial_cache.insert(index, t.clone());
        }
        Ok(t)
    }

    /// `x`: `batch x patch x patch x 3` underwater; `y`: `batch x patch x patch x 4`
    /// hazy RGB-D. Entries and crop offsets are drawn independently per domain.
    pub fn make_unpaired_batch<R: Rng + ?Sized>(
        &mut self,
        batch_size: usize,
        patch_size: usize,
        rng: &mut R,
    ) -> Result<(ImageTensor, ImageTensor)> {
        if batch_size == 0 {
            return Err(Error::Argument("batch size must be positive".into()));
        }
        let mut xs = Vec::with_capacity(batch_size);
        let mut ys = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let i = rng.random_range(0..self.underwater.len());
            let x = self.underwater_item(i)?;
            xs.push(sample_patch(&x, patch_size, rng)?);
            let j = rng.random_range(0..self.aerial.len());
            let y = self.aerial_item(j)?;
            ys.push(sample_patch(&y, patch_size, rng)?);
        }
        Ok((ImageTensor::stack_batch(&xs)?, ImageTensor::stack_batch(&ys)?))
    }
}
