//! Conformalization losses `ℓ(Z, Y)` comparing a multi-labeled mask `Z` with
//! a one-hot ground truth `Y`.
//!
//! Every loss here maps into `[0, 1]` and is non-increasing in `Z`: adding
//! classes to a pixel's set can only lower the loss. Together with the
//! nestedness of LAC sets this makes `λ ↦ ℓ(C_λ(X), Y)` a non-increasing,
//! right-continuous step function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{mask_contains, MultiMask};

/// Upper bound `B` shared by every shipped loss.
pub const LOSS_BOUND: f64 = 1.0;

/// Choice of conformalization loss and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    /// 1 unless every valid pixel is covered.
    Binary,
    /// 1 when the covered fraction of valid pixels is below `tau`.
    BinaryThreshold { tau: f64 },
    /// Fraction of valid pixels whose true class is missing from the set.
    Miscoverage,
    /// One minus the weighted mean of per-class coverage. Classes absent
    /// from the ground truth are skipped and the weights renormalized.
    WeightedMiscoverage { weights: Vec<f64> },
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossSpec::Binary | LossSpec::Miscoverage => Ok(()),
            LossSpec::BinaryThreshold { tau } => {
                if *tau > 0.0 && *tau <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "tau must lie in (0, 1], got {tau}"
                    )))
                }
            }
            LossSpec::WeightedMiscoverage { weights } => {
                if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(Error::InvalidParameter(
                        "class weights must be finite and non-negative".into(),
                    ));
                }
                if weights.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::InvalidParameter(
                        "class weights must have a positive sum".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Checks parameters that depend on the class count.
    pub fn validate_for_classes(&self, k: usize) -> Result<()> {
        self.validate()?;
        if let LossSpec::WeightedMiscoverage { weights } = self {
            if weights.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: format!("{k} class weights"),
                    found: format!("{} class weights", weights.len()),
                });
            }
        }
        Ok(())
    }

    /// Upper bound `B` of the loss.
    pub fn bound(&self) -> f64 {
        LOSS_BOUND
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Binary => "binary",
            LossSpec::BinaryThreshold { .. } => "binary-threshold",
            LossSpec::Miscoverage => "miscoverage",
            LossSpec::WeightedMiscoverage { .. } => "weighted-miscoverage",
        }
    }

    /// Loss of one image, without the zero-valid-pixel convention.
    pub fn try_evaluate(&self, z: &MultiMask, y: &MultiMask) -> Result<f64> {
        match self {
            LossSpec::Binary => loss_binary(z, y),
            LossSpec::BinaryThreshold { tau } => loss_binary_threshold(z, y, *tau),
            LossSpec::Miscoverage => loss_miscoverage(z, y),
            LossSpec::WeightedMiscoverage { weights } => loss_weighted_miscoverage(z, y, weights),
        }
    }

    /// Loss of one image. An image without evidence (no valid pixel, or no
    /// positively weighted class present) scores 0 and is logged.
    pub fn evaluate(&self, z: &MultiMask, y: &MultiMask) -> Result<f64> {
        match self.try_evaluate(z, y) {
            Err(Error::ZeroValidPixels) => {
                log::warn!("image has no valid pixels for the {} loss; scoring 0", self.name());
                Ok(0.0)
            }
            other => other,
        }
    }
}

impl std::fmt::Display for LossSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossSpec::BinaryThreshold { tau } => write!(f, "binary-threshold(tau={tau})"),
            other => f.write_str(other.name()),
        }
    }
}

fn covered_and_total(z: &MultiMask, y: &MultiMask) -> Result<(usize, usize)> {
    z.dims().ensure_same(&y.dims())?;
    let (covered, total) = z
        .bits()
        .iter()
        .zip(y.bits())
        .fold((0usize, 0usize), |(c, t), (&zb, &yb)| {
            (c + usize::from(zb & yb), t + usize::from(yb))
        });
    if total == 0 {
        return Err(Error::ZeroValidPixels);
    }
    Ok((covered, total))
}

/// `Σ Z·Y / Σ Y`: fraction of valid pixels whose true class is in the set.
pub fn coverage_ratio(z: &MultiMask, y: &MultiMask) -> Result<f64> {
    let (covered, total) = covered_and_total(z, y)?;
    Ok(covered as f64 / total as f64)
}

pub fn loss_binary(z: &MultiMask, y: &MultiMask) -> Result<f64> {
    covered_and_total(z, y)?;
    Ok(if mask_contains(z, y)? { 0.0 } else { 1.0 })
}

/// 1 iff the coverage ratio is strictly below `tau`.
pub fn loss_binary_threshold(z: &MultiMask, y: &MultiMask, tau: f64) -> Result<f64> {
    Ok(if coverage_ratio(z, y)? < tau { 1.0 } else { 0.0 })
}

pub fn loss_miscoverage(z: &MultiMask, y: &MultiMask) -> Result<f64> {
    Ok(1.0 - coverage_ratio(z, y)?)
}

pub fn loss_weighted_miscoverage(z: &MultiMask, y: &MultiMask, weights: &[f64]) -> Result<f64> {
    let dims = z.dims();
    dims.ensure_same(&y.dims())?;
    if weights.len() != dims.k {
        return Err(Error::DimensionMismatch {
            expected: format!("{} class weights", dims.k),
            found: format!("{} class weights", weights.len()),
        });
    }
    let hw = dims.pixels();
    let mut weighted = 0.0;
    let mut norm = 0.0;
    for ((zp, yp), &w) in z
        .bits()
        .chunks_exact(hw)
        .zip(y.bits().chunks_exact(hw))
        .zip(weights)
    {
        let total: usize = yp.iter().map(|&b| usize::from(b)).sum();
        if total == 0 {
            continue;
        }
        let covered: usize = zp.iter().zip(yp).map(|(&a, &b)| usize::from(a & b)).sum();
        weighted += w * (covered as f64 / total as f64);
        norm += w;
    }
    if norm <= 0.0 {
        return Err(Error::ZeroValidPixels);
    }
    Ok((1.0 - weighted / norm).clamp(0.0, 1.0))
}
