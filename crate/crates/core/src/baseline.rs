//! Dark-channel-prior depth baseline.

use ndarray::{Array2, ArrayView3, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcpConfig {
    pub omega: f64,
    /// Side of the square min-filter window; odd.
    pub patch: usize,
    pub t_min: f64,
    /// Fraction of brightest dark-channel pixels averaged into the airlight.
    pub airlight_fraction: f64,
}

impl Default for DcpConfig {
    fn default() -> Self {
        Self {
            omega: 0.95,
            patch: 15,
            t_min: 0.05,
            airlight_fraction: 1e-3,
        }
    }
}

impl DcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch % 2 == 0 {
            return Err(Error::Argument(format!("patch size must be odd, got {}", self.patch)));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::Argument(format!("omega must be in [0, 1], got {}", self.omega)));
        }
        if !(self.t_min > 0.0 && self.t_min <= 1.0) {
            return Err(Error::Argument(format!("t_min must be in (0, 1], got {}", self.t_min)));
        }
        if !(self.airlight_fraction > 0.0 && self.airlight_fraction <= 1.0) {
            return Err(Error::Argument("airlight fraction must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Transmission values in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMap {
    t: Array2<f64>,
}

impl TransmissionMap {
    pub fn new(t: Array2<f64>) -> Result<Self> {
        if let Some(bad) = t.iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::Data(format!("transmission must be in (0, 1], found {bad}")));
        }
        Ok(Self { t })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.t
    }

    pub fn to_depth(&self) -> Array2<f64> {
        self.t.mapv(|t| -t.ln())
    }
}

fn min_filter_1d(line: &[f64], radius: usize, out: &mut [f64]) {
    let n = line.len();
    for (i, o) in out.iter_mut().enumerate() {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius + 1).min(n);
        *o = line[lo..hi].iter().copied().fold(f64::INFINITY, f64::min);
    }
}

/// Per-pixel minimum over channels followed by a `patch x patch` minimum
/// filter (window clipped at the borders). `image` is `H x W x C`.
pub fn dark_channel(image: ArrayView3<'_, f64>, patch: usize) -> Result<Array2<f64>> {
    if patch % 2 == 0 {
        return Err(Error::Argument(format!("patch size must be odd, got {patch}")));
    }
    let radius = patch / 2;
    let chan_min = image.map_axis(Axis(2), |px| px.iter().copied().fold(f64::INFINITY, f64::min));
    let (h, w) = chan_min.dim();
    let mut rows = Array2::zeros((h, w));
    let mut buf = vec![0.0; w.max(h)];
    for y in 0..h {
        let line: Vec<f64> = chan_min.row(y).to_vec();
        min_filter_1d(&line, radius, &mut buf[..w]);
        rows.row_mut(y).iter_mut().zip(&buf[..w]).for_each(|(o, &v)| *o = v);
    }
    let mut out = Array2::zeros((h, w));
    for x in 0..w {
        let line: Vec<f64> = rows.column(x).to_vec();
        min_filter_1d(&line, radius, &mut buf[..h]);
        out.column_mut(x).iter_mut().zip(&buf[..h]).for_each(|(o, &v)| *o = v);
    }
    Ok(out)
}

/// Mean color of the brightest `fraction` of dark-channel pixels (at least one).
pub fn estimate_airlight(image: ArrayView3<'_, f64>, dark: &Array2<f64>, fraction: f64) -> Result<[f64; 3]> {
    let (h, w, c) = image.dim();
    if c != 3 || dark.dim() != (h, w) {
        return Err(Error::Shape(format!(
            "airlight needs an H x W x 3 image and matching dark channel, got {:?} and {:?}",
            image.dim(),
            dark.dim()
        )));
    }
    let mut order: Vec<usize> = (0..h * w).collect();
    let flat: Vec<f64> = dark.iter().copied().collect();
    order.sort_by(|&a, &b| flat[b].total_cmp(&flat[a]).then(a.cmp(&b)));
    let k = ((h * w) as f64 * fraction).ceil().max(1.0) as usize;
    let mut a = [0.0; 3];
    for &i in &order[..k] {
        for (ch, acc) in a.iter_mut().enumerate() {
            *acc += image[[i / w, i % w, ch]];
        }
    }
    Ok(a.map(|v| v / k as f64))
}

/// `t = clamp(1 - omega * dark(I / A), t_min, 1)`. Returns the map and the
/// airlight used (estimated unless given).
pub fn estimate_transmission_dcp(
    image: ArrayView3<'_, f64>,
    config: &DcpConfig,
    airlight: Option<[f64; 3]>,
) -> Result<(TransmissionMap, [f64; 3])> {
    config.validate()?;
    if image.dim().2 != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {}", image.dim().2)));
    }
    if image.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Data("image values must lie in [0, 1]".into()));
    }
    let a = match airlight {
        Some(a) => a,
        None => {
            let dark = dark_channel(image, config.patch)?;
            estimate_airlight(image, &dark, config.airlight_fraction)?
        }
    };
    let a_safe = a.map(|v| v.max(1e-6));
    let mut scaled = image.to_owned();
    for (ch, mut plane) in scaled.axis_iter_mut(Axis(2)).enumerate() {
        plane.mapv_inplace(|v| v / a_safe[ch]);
    }
    let dark = dark_channel(scaled.view(), config.patch)?;
    let t = dark.mapv(|d| (1.0 - config.omega * d).clamp(config.t_min, 1.0));
    Ok((TransmissionMap::new(t)?, a))
}

/// `d = -ln t`, depth up to the unknown scattering coefficient.
pub fn transmission_to_depth(t: &Array2<f64>) -> Result<Array2<f64>> {
    if let Some(bad) = t.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Data(format!("transmission must be positive, found {bad}")));
    }
    Ok(t.mapv(|v| -v.ln()))
}

/// Full baseline: estimate transmission with an estimated airlight and
/// convert it to depth.
pub fn dcp_depth(image: ArrayView3<'_, f64>, config: &DcpConfig) -> Result<Array2<f64>> {
    let (t, _) = estimate_transmission_dcp(image, config, None)?;
    transmission_to_depth(t.values())
}
