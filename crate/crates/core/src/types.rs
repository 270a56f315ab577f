//! Shared data model: score tensors, ground-truth label masks and
//! multi-labeled masks.
//!
//! All tensors are stored flat in C order with shape `(K, H, W)` (class
//! planes first), matching the on-disk NPY layout. Label masks are `(H, W)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label value marking a void pixel, excluded from every loss and metric.
///
/// On disk the sentinel is the maximum value of the stored integer type
/// (255 for one-byte masks); readers map it onto this value.
pub const IGNORE: u16 = u16::MAX;

/// Tolerance on `|Σ_k p_k − 1|` when validating softmax pixels.
pub const SOFTMAX_TOLERANCE: f64 = 1e-4;

/// Class count and spatial extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub k: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(k: usize, h: usize, w: usize) -> Result<Self> {
        if k < 2 || h == 0 || w == 0 {
            return Err(Error::InvalidDims { k, h, w });
        }
        Ok(Dims { k, h, w })
    }

    /// Number of pixels `H·W`.
    #[inline]
    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    /// Number of tensor entries `K·H·W`.
    #[inline]
    pub fn len(&self) -> usize {
        self.k * self.h * self.w
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.h + i) * self.w + j
    }

    pub(crate) fn ensure_same(&self, other: &Dims) -> Result<()> {
        if self != other {
            return Err(Error::DimensionMismatch {
                expected: self.to_string(),
                found: other.to_string(),
            });
        }
        Ok(())
    }

    pub(crate) fn ensure_spatial(&self, other: &Dims) -> Result<()> {
        if (self.h, self.w) != (other.h, other.w) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.h, self.w),
                found: format!("{}x{}", other.h, other.w),
            });
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.k, self.h, self.w)
    }
}

/// Per-pixel softmax scores of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTensor {
    dims: Dims,
    values: Vec<f32>,
}

impl ScoreTensor {
    /// Builds a tensor and checks that every entry lies in `[0, 1]` and every
    /// pixel sums to one within [`SOFTMAX_TOLERANCE`].
    pub fn new(dims: Dims, values: Vec<f32>) -> Result<Self> {
        let tensor = Self::new_unvalidated(dims, values)?;
        tensor.validate()?;
        Ok(tensor)
    }

    /// Builds a tensor checking only the buffer length. Used for quantized
    /// dumps whose rounding error exceeds the softmax tolerance.
    pub fn new_unvalidated(dims: Dims, values: Vec<f32>) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(Error::LengthMismatch {
                expected: dims.len(),
                found: values.len(),
            });
        }
        Ok(ScoreTensor { dims, values })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((index, &value)) = self
            .values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::ScoreOutOfRange { index, value });
        }
        let Dims { k, h, w } = self.dims;
        let hw = h * w;
        for p in 0..hw {
            let sum: f64 = (0..k).map(|c| f64::from(self.values[c * hw + p])).sum();
            if (sum - 1.0).abs() > SOFTMAX_TOLERANCE {
                return Err(Error::SoftmaxValidation {
                    row: p / w,
                    col: p % w,
                    sum,
                });
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f32 {
        self.values[self.dims.index(k, i, j)]
    }

    /// Index of the highest-scoring class at flat pixel `p`; ties go to the
    /// smallest class index.
    #[inline]
    pub fn argmax_at(&self, p: usize) -> usize {
        let hw = self.dims.pixels();
        let mut best = 0;
        let mut best_score = self.values[p];
        for c in 1..self.dims.k {
            let s = self.values[c * hw + p];
            if s > best_score {
                best = c;
                best_score = s;
            }
        }
        best
    }
}

/// Ground-truth class labels of one image, `(H, W)`, with [`IGNORE`] for
/// void pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMask {
    dims: Dims,
    labels: Vec<u16>,
}

impl GroundTruthMask {
    /// `dims.k` is used only to range-check the labels.
    pub fn new(dims: Dims, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != dims.pixels() {
            return Err(Error::LengthMismatch {
                expected: dims.pixels(),
                found: labels.len(),
            });
        }
        if let Some(&label) = labels
            .iter()
            .find(|&&l| l != IGNORE && usize::from(l) >= dims.k)
        {
            return Err(Error::LabelOutOfRange { label, k: dims.k });
        }
        Ok(GroundTruthMask { dims, labels })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    #[inline]
    pub fn is_valid(&self, p: usize) -> bool {
        self.labels[p] != IGNORE
    }

    pub fn valid_pixel_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != IGNORE).count()
    }

    /// Per-pixel validity map, `true` where the label is not [`IGNORE`].
    pub fn valid_map(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l != IGNORE).collect()
    }

    pub fn one_hot(&self) -> MultiMask {
        one_hot(self)
    }
}

/// Per-pixel label subsets: a binary `(K, H, W)` tensor.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiMask {
    dims: Dims,
    bits: Vec<u8>,
}

impl MultiMask {
    /// Every entry of `bits` must be 0 or 1.
    pub fn new(dims: Dims, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != dims.len() {
            return Err(Error::LengthMismatch {
                expected: dims.len(),
                found: bits.len(),
            });
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::InvalidParameter(format!(
                "multi-labeled mask entries must be 0 or 1, found {b}"
            )));
        }
        Ok(MultiMask { dims, bits })
    }

    pub(crate) fn from_bits_unchecked(dims: Dims, bits: Vec<u8>) -> Self {
        debug_assert_eq!(bits.len(), dims.len());
        MultiMask { dims, bits }
    }

    pub fn zeros(dims: Dims) -> Self {
        MultiMask {
            dims,
            bits: vec![0; dims.len()],
        }
    }

    pub fn ones(dims: Dims) -> Self {
        MultiMask {
            dims,
            bits: vec![1; dims.len()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<u8> {
        self.bits
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> bool {
        self.bits[self.dims.index(k, i, j)] != 0
    }

    pub fn set(&mut self, k: usize, i: usize, j: usize, on: bool) {
        let idx = self.dims.index(k, i, j);
        self.bits[idx] = u8::from(on);
    }

    /// Total number of active entries.
    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|&b| usize::from(b)).sum()
    }

    /// `self ≥ other` elementwise.
    pub fn contains(&self, other: &MultiMask) -> Result<bool> {
        mask_contains(self, other)
    }
}

/// One-hot encoding of a label mask; void pixels get an all-zero column.
pub fn one_hot(mask: &GroundTruthMask) -> MultiMask {
    let dims = mask.dims;
    let hw = dims.pixels();
    let mut bits = vec![0u8; dims.len()];
    for (p, &label) in mask.labels.iter().enumerate() {
        if label != IGNORE {
            bits[usize::from(label) * hw + p] = 1;
        }
    }
    MultiMask { dims, bits }
}

/// True iff `a ≥ b` elementwise.
pub fn mask_contains(a: &MultiMask, b: &MultiMask) -> Result<bool> {
    a.dims.ensure_same(&b.dims)?;
    Ok(a.bits.iter().zip(&b.bits).all(|(&x, &y)| x >= y))
}
