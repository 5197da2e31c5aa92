//! Depth inference and scale-invariant depth metrics.

use std::path::Path;

use candle_core::{DType, Device};
use ndarray::{s, Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{denormalize_depth, read_depth, read_rgb_unit, resize_map, CorpusIndex, Domain};
use crate::error::{Error, Result};
use crate::models::{Generator, Role};
use crate::tensor::{ImageTensor, ValueRange};
use crate::training::Checkpoint;

/// Shift applied to network depth in `[-1, 1]` before taking logs:
/// `d_pos = (d + 1) / 2 + DEPTH_SHIFT_EPS`.
pub const DEPTH_SHIFT_EPS: f64 = 1e-3;

/// Map network depth to strictly positive values.
pub fn shift_to_positive(depth_norm: f64, eps: f64) -> f64 {
    (depth_norm + 1.0) / 2.0 + eps
}

/// Depth channel of `G(x)`.
#[derive(Debug, Clone)]
pub struct DepthPrediction {
    /// `N x H x W x 1` in `[-1, 1]`.
    pub normalized: ImageTensor,
    /// Same values mapped to meters with `d_max`.
    pub meters: ImageTensor,
}

/// Load generator `G` from a checkpoint.
pub fn load_generator(path: &Path) -> Result<Generator> {
    let ck = Checkpoint::load(path)?;
    let g = Generator::from_params(ck.network(Role::G)?)?;
    let spec = g.spec();
    if spec.in_channels != 3 || spec.out_channels != 4 {
        return Err(Error::Config(format!(
            "checkpoint generator maps {} -> {} channels, expected 3 -> 4",
            spec.in_channels, spec.out_channels
        )));
    }
    Ok(g)
}

fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Pad bottom/right by reflection so both spatial dims become multiples of `div`.
fn reflect_pad(data: &Array4<f64>, div: usize) -> Array4<f64> {
    let (n, h, w, c) = data.dim();
    let ph = h.div_ceil(div) * div;
    let pw = w.div_ceil(div) * div;
    if (ph, pw) == (h, w) {
        return data.clone();
    }
    Array4::from_shape_fn((n, ph, pw, c), |(b, y, x, ch)| {
        data[[b, reflect_index(y as isize, h), reflect_index(x as isize, w), ch]]
    })
}

/// Run `G` on a `[-1, 1]` RGB batch and return its depth channel.
///
/// Inputs whose size is not a multiple of the generator's down-sampling
/// factor are reflect-padded and the output cropped back.
pub fn infer_depth(g: &Generator, image: &ImageTensor, d_max: f64) -> Result<DepthPrediction> {
    if image.channels() != 3 {
        return Err(Error::Shape(format!(
            "inference expects a 3-channel image, got {}",
            image.channels()
        )));
    }
    if image.range() != ValueRange::NETWORK {
        return Err(Error::Argument("inference input must be in [-1, 1]".into()));
    }
    let (_, h, w, _) = image.dims();
    let padded = ImageTensor::new(reflect_pad(image.data(), g.spec().divisor()), ValueRange::NETWORK)?;
    let dtype = g
        .params()
        .vars()
        .values()
        .next()
        .map(|v| v.dtype())
        .unwrap_or(DType::F32);
    let out = g.forward(&padded.to_nchw(&Device::Cpu, dtype)?)?;
    let full = ImageTensor::from_nchw(&out, ValueRange::NETWORK)?;
    let depth = full
        .data()
        .slice(s![.., ..h, ..w, 3..4])
        .to_owned();
    let normalized = ImageTensor::new(depth, ValueRange::NETWORK)?;
    let meters = ImageTensor::new(
        normalized.data().mapv(|d| denormalize_depth(d, d_max)),
        ValueRange::METERS,
    )?;
    Ok(DepthPrediction { normalized, meters })
}

fn masked_pairs<'a>(
    pred: &'a Array2<f64>,
    gt: &'a Array2<f64>,
    mask: &'a Array2<bool>,
) -> Result<impl Iterator<Item = (f64, f64)> + Clone + 'a> {
    if pred.dim() != gt.dim() || pred.dim() != mask.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?}, ground truth {:?} and mask {:?} differ in shape",
            pred.dim(),
            gt.dim(),
            mask.dim()
        )));
    }
    Ok(pred
        .iter()
        .zip(gt.iter())
        .zip(mask.iter())
        .filter(|(_, &m)| m)
        .map(|((&p, &g), _)| (p, g)))
}

/// Pearson correlation of `pred` and `gt` over masked pixels.
pub fn pearson(pred: &Array2<f64>, gt: &Array2<f64>, mask: &Array2<bool>) -> Result<f64> {
    let pairs = masked_pairs(pred, gt, mask)?;
    let n = pairs.clone().count();
    if n < 2 {
        return Err(Error::UndefinedMetric(format!("pearson needs >= 2 valid pixels, got {n}")));
    }
    let (sp, sg) = pairs.clone().fold((0.0, 0.0), |(a, b), (p, g)| (a + p, b + g));
    let (mp, mg) = (sp / n as f64, sg / n as f64);
    let (mut cov, mut vp, mut vg) = (0.0, 0.0, 0.0);
    for (p, g) in pairs {
        let (dp, dg) = (p - mp, g - mg);
        cov += dp * dg;
        vp += dp * dp;
        vg += dg * dg;
    }
    if vp == 0.0 || vg == 0.0 {
        return Err(Error::UndefinedMetric("zero variance in prediction or ground truth".into()));
    }
    Ok((cov / (vp.sqrt() * vg.sqrt())).clamp(-1.0, 1.0))
}

/// Scale-invariant MSE of log depths over masked pixels:
/// `mean(e^2) - mean(e)^2` with `e = ln pred - ln gt`.
pub fn si_mse(pred: &Array2<f64>, gt: &Array2<f64>, mask: &Array2<bool>) -> Result<f64> {
    let pairs = masked_pairs(pred, gt, mask)?;
    let mut errors = Vec::new();
    for (p, g) in pairs {
        if !(p > 0.0 && g > 0.0) {
            return Err(Error::Data(format!(
                "si-mse needs positive depths on valid pixels, got pred {p}, gt {g}"
            )));
        }
        errors.push(p.ln() - g.ln());
    }
    if errors.is_empty() {
        return Err(Error::UndefinedMetric("no valid pixels".into()));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    Ok(errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub image_id: String,
    pub rho: f64,
    pub si_mse: f64,
    pub valid_pixel_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedImage {
    pub image_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Which depth estimator was scored (`network`, `dcp`, `files`).
    pub method: String,
    pub per_image: Vec<ImageMetrics>,
    /// Unweighted average over scored images.
    pub mean_rho: f64,
    pub mean_si_mse: f64,
    /// Images whose metrics were undefined; not part of the means.
    pub excluded: Vec<ExcludedImage>,
    /// Affine positivity shift applied to predictions before logs.
    pub depth_shift: DepthShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthShift {
    pub scale: f64,
    pub offset: f64,
}

impl DepthShift {
    pub const NONE: DepthShift = DepthShift { scale: 1.0, offset: 0.0 };

    /// `(d + 1) / 2 + eps` for network outputs.
    pub fn network(eps: f64) -> Self {
        Self { scale: 0.5, offset: 0.5 + eps }
    }

    pub fn apply(&self, d: f64) -> f64 {
        self.scale * d + self.offset
    }
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Evaluation(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Evaluation(format!("report JSON: {e}")))
    }
}

/// Metrics of one already-positive prediction.
pub fn score_image(id: &str, pred: &Array2<f64>, gt: &Array2<f64>, mask: &Array2<bool>) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        image_id: id.to_string(),
        rho: pearson(pred, gt, mask)?,
        si_mse: si_mse(pred, gt, mask)?,
        valid_pixel_count: mask.iter().filter(|&&m| m).count(),
    })
}

/// Assemble a report; undefined-metric images are excluded with a warning,
/// any other error aborts.
pub fn summarize(
    method: &str,
    depth_shift: DepthShift,
    results: Vec<(String, Result<ImageMetrics>)>,
) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let mut per_image = Vec::new();
    let mut excluded = Vec::new();
    for (id, r) in results {
        match r {
            Ok(m) => per_image.push(m),
            Err(Error::UndefinedMetric(reason)) => {
                log::warn!("excluding {id} from means: {reason}");
                excluded.push(ExcludedImage { image_id: id, reason });
            }
            Err(e) => return Err(e),
        }
    }
    if per_image.is_empty() {
        return Err(Error::Evaluation(format!(
            "metrics undefined for all {} images",
            excluded.len()
        )));
    }
    let n = per_image.len() as f64;
    Ok(EvalReport {
        method: method.to_string(),
        mean_rho: per_image.iter().map(|m| m.rho).sum::<f64>() / n,
        mean_si_mse: per_image.iter().map(|m| m.si_mse).sum::<f64>() / n,
        per_image,
        excluded,
        depth_shift,
    })
}

/// One evaluation image with ground truth.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub id: String,
    /// `1 x H x W x 3` in `[0, 1]`, native resolution.
    pub image: ImageTensor,
    /// Ground-truth depth at native resolution.
    pub gt: Array2<f64>,
    /// `gt` pixels carrying a defined depth.
    pub mask: Array2<bool>,
}

/// Load `<dir>/color/*` with ground truth `<dir>/depth/<stem>.png`.
pub fn load_eval_set(dir: &Path, depth_scale: f64) -> Result<Vec<EvalItem>> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("evaluation directory {} does not exist", dir.display())));
    }
    let mut index = CorpusIndex::scan_aerial(dir)?;
    index.domain_tag = Domain::Underwater;
    if index.is_empty() {
        return Err(Error::Data(format!("no images under {}", dir.join("color").display())));
    }
    index
        .entries
        .iter()
        .map(|e| {
            let image = read_rgb_unit(&e.image_path)?;
            let depth_path = e.depth_path.as_ref().expect("paired by scan");
            let (gt, mask) = read_depth(depth_path, depth_scale)?;
            if gt.dim() != (image.height(), image.width()) {
                return Err(Error::Data(format!(
                    "{}: image is {}x{} but ground truth is {:?}",
                    e.id(),
                    image.height(),
                    image.width(),
                    gt.dim()
                )));
            }
            Ok(EvalItem {
                id: e.id(),
                image,
                gt,
                mask,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Square side the image is resized to before inference; `None` keeps
    /// native resolution.
    pub image_size: Option<usize>,
    pub shift_eps: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            image_size: Some(256),
            shift_eps: DEPTH_SHIFT_EPS,
        }
    }
}

/// Network depth for one evaluation item, in `[-1, 1]` at ground-truth resolution.
pub fn predict_item(g: &Generator, item: &EvalItem, options: &EvalOptions) -> Result<Array2<f64>> {
    let (h, w) = item.gt.dim();
    let input = match options.image_size {
        Some(size) => {
            let chans = (0..3)
                .map(|c| resize_map(&item.image.data().slice(s![0, .., .., c]).to_owned(), size, size))
                .collect::<Result<Vec<_>>>()?;
            let views: Vec<_> = chans.iter().map(|a| a.view().insert_axis(Axis(2))).collect();
            let stacked = ndarray::concatenate(Axis(2), &views)
                .map_err(|e| Error::Shape(e.to_string()))?
                .mapv(|v| v.clamp(0.0, 1.0))
                .insert_axis(Axis(0));
            ImageTensor::new(stacked, ValueRange::UNIT)?
        }
        None => item.image.clone(),
    };
    let pred = infer_depth(g, &input.remap(ValueRange::NETWORK)?, 1.0)?;
    let depth = pred.normalized.data().slice(s![0, .., .., 0]).to_owned();
    Ok(resize_map(&depth, h, w)?.mapv(|d| d.clamp(-1.0, 1.0)))
}

/// Score `G` over an evaluation set.
pub fn evaluate_corpus(g: &Generator, items: &[EvalItem], options: &EvalOptions) -> Result<EvalReport> {
    let shift = DepthShift::network(options.shift_eps);
    let results = items
        .iter()
        .map(|item| {
            let r = predict_item(g, item, options)
                .and_then(|d| score_image(&item.id, &d.mapv(|v| shift.apply(v)), &item.gt, &item.mask));
            (item.id.clone(), r)
        })
        .collect::<Vec<_>>();
    summarize("network", shift, results)
}

/// Score arbitrary per-item predictions (already positive after `shift`).
pub fn evaluate_predictions(
    method: &str,
    shift: DepthShift,
    items: &[EvalItem],
    mut predict: impl FnMut(&EvalItem) -> Result<Array2<f64>>,
) -> Result<EvalReport> {
    let results = items
        .iter()
        .map(|item| {
            let r = predict(item)
                .and_then(|d| score_image(&item.id, &d.mapv(|v| shift.apply(v)), &item.gt, &item.mask));
            (item.id.clone(), r)
        })
        .collect::<Vec<_>>();
    summarize(method, shift, results)
}
