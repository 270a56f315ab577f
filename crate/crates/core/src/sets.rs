//! LAC thresholding: turn softmax scores and a coverage parameter λ into a
//! multi-labeled mask. A class enters a pixel's set when its score is at
//! least `1 − λ`, so sets grow monotonically with λ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{MultiMask, ScoreTensor};

/// Coverage parameter λ ∈ [0, 1]. Larger values give larger sets.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct CoverageParameter(f64);

impl CoverageParameter {
    pub const ZERO: CoverageParameter = CoverageParameter(0.0);
    pub const ONE: CoverageParameter = CoverageParameter(1.0);

    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidParameter(format!(
                "coverage parameter must lie in [0, 1], got {lambda}"
            )));
        }
        Ok(CoverageParameter(lambda))
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    /// Score threshold `1 − λ`.
    #[inline]
    pub fn threshold(self) -> f64 {
        1.0 - self.0
    }
}

impl TryFrom<f64> for CoverageParameter {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        CoverageParameter::new(value)
    }
}

impl From<CoverageParameter> for f64 {
    fn from(value: CoverageParameter) -> f64 {
        value.0
    }
}

/// `T_λ(p)`: 1 iff `p ≥ 1 − λ` (inclusive, no slack).
#[inline]
pub fn threshold_indicator(p: f64, lambda: CoverageParameter) -> bool {
    p >= lambda.threshold()
}

/// Applies `T_λ` to every score. With `top1_fallback` the argmax class of
/// each pixel is always included, so no pixel ends up with an empty set.
pub fn lac_set(scores: &ScoreTensor, lambda: CoverageParameter, top1_fallback: bool) -> MultiMask {
    let dims = scores.dims();
    let threshold = lambda.threshold();
    let mut bits: Vec<u8> = scores
        .values()
        .iter()
        .map(|&p| u8::from(f64::from(p) >= threshold))
        .collect();
    if top1_fallback {
        let hw = dims.pixels();
        for p in 0..hw {
            bits[scores.argmax_at(p) * hw + p] = 1;
        }
    }
    MultiMask::from_bits_unchecked(dims, bits)
}

/// Per-pixel prediction-set size, row-major `(H, W)`.
pub fn set_size_map(z: &MultiMask) -> Vec<u32> {
    let dims = z.dims();
    let hw = dims.pixels();
    let mut sizes = vec![0u32; hw];
    for plane in z.bits().chunks_exact(hw) {
        for (s, &b) in sizes.iter_mut().zip(plane) {
            *s += u32::from(b);
        }
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Dims;
    use proptest::prelude::*;

    fn lam(x: f64) -> CoverageParameter {
        CoverageParameter::new(x).unwrap()
    }

    fn pixel(scores: &[f32]) -> ScoreTensor {
        ScoreTensor::new(Dims::new(scores.len(), 1, 1).unwrap(), scores.to_vec()).unwrap()
    }

    #[test]
    fn coverage_parameter_range() {
        assert!(CoverageParameter::new(-0.01).is_err());
        assert!(CoverageParameter::new(1.01).is_err());
        assert!(CoverageParameter::new(f64::NAN).is_err());
        assert_eq!(lam(0.25).get(), 0.25);
    }

    #[test]
    fn indicator_boundaries() {
        assert!(threshold_indicator(0.8, lam(0.3)));
        assert!(!threshold_indicator(0.999, lam(0.0)));
        assert!(threshold_indicator(1.0, lam(0.0)));
        for p in [0.0, 0.1, 0.5, 1.0] {
            assert!(threshold_indicator(p, lam(1.0)));
        }
    }

    #[test]
    fn lac_single_pixel() {
        let z = lac_set(&pixel(&[0.7, 0.2, 0.1]), lam(0.5), false);
        assert_eq!(z.bits(), &[1, 0, 0]);

        let s = pixel(&[0.5, 0.3, 0.2]);
        assert_eq!(lac_set(&s, lam(0.1), false).bits(), &[0, 0, 0]);
        assert_eq!(lac_set(&s, lam(0.1), true).bits(), &[1, 0, 0]);
    }

    #[test]
    fn lac_lambda_one_is_everything() {
        let d = Dims::new(3, 2, 1).unwrap();
        let s = ScoreTensor::new(d, vec![1.0, 0.0, 0.0, 0.5, 0.0, 0.5]).unwrap();
        assert_eq!(lac_set(&s, CoverageParameter::ONE, false), MultiMask::ones(d));
    }

    #[test]
    fn set_sizes() {
        let d = Dims::new(19, 2, 3).unwrap();
        assert!(set_size_map(&MultiMask::ones(d)).iter().all(|&c| c == 19));

        let d = Dims::new(3, 1, 2).unwrap();
        // pixel 0 holds {0, 2}, pixel 1 holds {1}
        let z = MultiMask::new(d, vec![1, 0, 0, 1, 1, 0]).unwrap();
        assert_eq!(set_size_map(&z), vec![2, 1]);
    }

    fn tensor_strategy() -> impl Strategy<Value = ScoreTensor> {
        (2usize..6, 1usize..5, 1usize..5).prop_flat_map(|(k, h, w)| {
            proptest::collection::vec(0.01f64..1.0, k * h * w).prop_map(move |raw| {
                let d = Dims::new(k, h, w).unwrap();
                let hw = h * w;
                let mut values = vec![0f32; raw.len()];
                for p in 0..hw {
                    let total: f64 = (0..k).map(|c| raw[c * hw + p]).sum();
                    for c in 0..k {
                        values[c * hw + p] = (raw[c * hw + p] / total) as f32;
                    }
                }
                ScoreTensor::new(d, values).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn nested_in_lambda(s in tensor_strategy(), a in 0.0f64..=1.0, b in 0.0f64..=1.0, fb: bool) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = lac_set(&s, lam(lo), fb);
            let large = lac_set(&s, lam(hi), fb);
            prop_assert!(large.contains(&small).unwrap());
        }

        #[test]
        fn fallback_never_empty(s in tensor_strategy(), l in 0.0f64..=1.0) {
            let z = lac_set(&s, lam(l), true);
            prop_assert!(set_size_map(&z).iter().all(|&c| c >= 1));
            for p in 0..s.dims().pixels() {
                prop_assert_eq!(z.bits()[s.argmax_at(p) * s.dims().pixels() + p], 1);
            }
        }

        #[test]
        fn deterministic(s in tensor_strategy(), l in 0.0f64..=1.0) {
            prop_assert_eq!(lac_set(&s, lam(l), true), lac_set(&s.clone(), lam(l), true));
        }
    }
}
