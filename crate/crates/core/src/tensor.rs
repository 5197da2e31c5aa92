//! Batched NHWC image container shared by the data, model and evaluation code.

use candle_core::{DType, Device, Tensor};
use ndarray::{s, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed value interval that every element of an [`ImageTensor`] must lie in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
}

impl ValueRange {
    /// Range of every network-facing tensor (tanh-bounded).
    pub const NETWORK: ValueRange = ValueRange { lo: -1.0, hi: 1.0 };
    /// Working range for color during haze synthesis and dark-channel estimation.
    pub const UNIT: ValueRange = ValueRange { lo: 0.0, hi: 1.0 };
    /// Metric depth before normalization.
    pub const METERS: ValueRange = ValueRange {
        lo: 0.0,
        hi: f64::INFINITY,
    };

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

impl Default for ValueRange {
    fn default() -> Self {
        Self::NETWORK
    }
}

/// 4-D `[batch, height, width, channels]` array with a declared value range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array4<f64>,
    range: ValueRange,
}

impl ImageTensor {
    pub fn new(data: Array4<f64>, range: ValueRange) -> Result<Self> {
        let (b, h, w, c) = data.dim();
        if b == 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "image tensor dims must be positive, got {b}x{h}x{w}x{c}"
            )));
        }
        if !matches!(c, 1 | 3 | 4) {
            return Err(Error::Shape(format!(
                "image tensor must have 1, 3 or 4 channels, got {c}"
            )));
        }
        if let Some(v) = data.iter().find(|v| !range.contains(**v)) {
            return Err(Error::Data(format!(
                "value {v} outside declared range [{}, {}]",
                range.lo, range.hi
            )));
        }
        Ok(Self { data, range })
    }

    /// Constant-valued tensor, mostly useful in tests and fixtures.
    pub fn filled(
        shape: (usize, usize, usize, usize),
        value: f64,
        range: ValueRange,
    ) -> Result<Self> {
        Self::new(Array4::from_elem(shape, value), range)
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f64> {
        self.data
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn channels(&self) -> usize {
        self.data.dim().3
    }

    pub fn item(&self, index: usize) -> ArrayView3<'_, f64> {
        self.data.index_axis(Axis(0), index)
    }

    /// Copy of the channel slice `start..start + len`.
    pub fn select_channels(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.channels() {
            return Err(Error::Shape(format!(
                "channel slice {start}..{} out of {} channels",
                start + len,
                self.channels()
            )));
        }
        Self::new(
            self.data.slice(s![.., .., .., start..start + len]).to_owned(),
            self.range,
        )
    }

    /// Axis-aligned spatial crop applied to every batch item.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height() || left + width > self.width() {
            return Err(Error::Argument(format!(
                "crop {height}x{width}@({top},{left}) exceeds {}x{}",
                self.height(),
                self.width()
            )));
        }
        Self::new(
            self.data
                .slice(s![.., top..top + height, left..left + width, ..])
                .to_owned(),
            self.range,
        )
    }

    /// Concatenate along the channel axis. Ranges must agree.
    pub fn concat_channels(parts: &[&ImageTensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("nothing to concatenate".into()))?;
        if parts.iter().any(|p| p.range != first.range) {
            return Err(Error::Data("cannot concatenate tensors with different ranges".into()));
        }
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        let data = ndarray::concatenate(Axis(3), &views)
            .map_err(|e| Error::Shape(format!("channel concatenation: {e}")))?;
        Self::new(data, first.range)
    }

    /// Stack single items along the batch axis.
    pub fn stack_batch(items: &[ImageTensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Argument("cannot stack an empty batch".into()))?;
        let views: Vec<_> = items.iter().map(|p| p.data.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::Shape(format!("batch stacking: {e}")))?;
        Self::new(data, first.range)
    }

    /// Convert to an `NCHW` candle tensor.
    pub fn to_nchw(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        let (b, h, w, c) = self.dims();
        let contiguous = self.data.as_standard_layout();
        let flat: Vec<f64> = contiguous.iter().copied().collect();
        let t = Tensor::from_vec(flat, (b, h, w, c), device)?
            .permute((0, 3, 1, 2))?
            .contiguous()?
            .to_dtype(dtype)?;
        Ok(t)
    }

    /// Build from an `NCHW` candle tensor, validating against `range`.
    pub fn from_nchw(t: &Tensor, range: ValueRange) -> Result<Self> {
        let (b, c, h, w) = t.dims4()?;
        let flat: Vec<f64> = t
            .permute((0, 2, 3, 1))?
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1()?;
        let data = Array4::from_shape_vec((b, h, w, c), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(data, range)
    }

    /// Elementwise affine remap into a new range, e.g. `[0,1] -> [-1,1]`.
    pub fn remap(&self, to: ValueRange) -> Result<Self> {
        let from = self.range;
        if !(from.lo.is_finite() && from.hi.is_finite() && to.lo.is_finite() && to.hi.is_finite())
        {
            return Err(Error::Argument("remap needs finite ranges".into()));
        }
        let scale = (to.hi - to.lo) / (from.hi - from.lo);
        let data = self
            .data
            .mapv(|v| ((v - from.lo) * scale + to.lo).clamp(to.lo, to.hi));
        Self::new(data, to)
    }
}
