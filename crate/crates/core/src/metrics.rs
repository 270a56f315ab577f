//! Test-set diagnostics: empirical risk at the calibrated λ and the
//! activation ratio (mean prediction-set size over labeled pixels).

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{empirical_risk, prepare, CalibrationArtifact};
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::sets::{lac_set, set_size_map};
use crate::types::{GroundTruthMask, MultiMask, ScoreTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub index: usize,
    pub loss: f64,
    /// `None` for images without labeled pixels.
    pub activation_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Number of evaluation runs folded into this report.
    pub runs: usize,
    pub n_test: usize,
    pub lambda_hat: f64,
    pub alpha: f64,
    pub loss: LossSpec,
    pub empirical_risk: f64,
    /// Sample standard deviation across runs; 0 for a single run.
    pub risk_std: f64,
    pub activation_ratio: f64,
    pub activation_ratio_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_image: Option<Vec<ImageMetrics>>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One CSV row per image: `index,loss,activation_ratio`.
    pub fn write_per_image_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        for row in self.per_image.iter().flatten() {
            writer.serialize(row)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Mean set size over pixels marked valid.
pub fn activation_ratio(z: &MultiMask, valid: &[bool]) -> Result<f64> {
    let dims = z.dims();
    if valid.len() != dims.pixels() {
        return Err(Error::LengthMismatch {
            expected: dims.pixels(),
            found: valid.len(),
        });
    }
    let n_valid = valid.iter().filter(|&&v| v).count();
    if n_valid == 0 {
        return Err(Error::ZeroValidPixels);
    }
    let active: u64 = set_size_map(z)
        .iter()
        .zip(valid)
        .filter(|(_, &v)| v)
        .map(|(&c, _)| u64::from(c))
        .sum();
    Ok(active as f64 / n_valid as f64)
}

/// Thresholds every test image at the artifact's λ̂ and reports mean loss
/// and mean activation ratio.
pub fn evaluate(
    test_set: &[(ScoreTensor, GroundTruthMask)],
    artifact: &CalibrationArtifact,
) -> Result<EvaluationReport> {
    if test_set.is_empty() {
        return Err(Error::InvalidParameter("test set is empty".into()));
    }
    let lambda = artifact.lambda()?;
    let examples = prepare(test_set)?;
    artifact
        .loss
        .validate_for_classes(examples[0].scores.dims().k)?;

    let per_image: Vec<ImageMetrics> = examples
        .par_iter()
        .zip(test_set.par_iter())
        .enumerate()
        .map(|(index, (ex, (_, mask)))| {
            let z = lac_set(&ex.scores, lambda, artifact.top1_fallback);
            let loss = artifact.loss.evaluate(&z, &ex.truth)?;
            let ar = match activation_ratio(&z, &mask.valid_map()) {
                Ok(v) => Some(v),
                Err(Error::ZeroValidPixels) => None,
                Err(e) => return Err(e),
            };
            Ok(ImageMetrics {
                index,
                loss,
                activation_ratio: ar,
            })
        })
        .collect::<Result<_>>()?;

    let losses: Vec<f64> = per_image.iter().map(|m| m.loss).collect();
    let ars: Vec<f64> = per_image.iter().filter_map(|m| m.activation_ratio).collect();
    let mean_ar = if ars.is_empty() {
        log::warn!("no test image has labeled pixels; activation ratio undefined");
        f64::NAN
    } else {
        ars.iter().sum::<f64>() / ars.len() as f64
    };

    Ok(EvaluationReport {
        runs: 1,
        n_test: test_set.len(),
        lambda_hat: artifact.lambda_hat,
        alpha: artifact.alpha,
        loss: artifact.loss.clone(),
        empirical_risk: empirical_risk(&losses)?,
        risk_std: 0.0,
        activation_ratio: mean_ar,
        activation_ratio_std: 0.0,
        per_image: Some(per_image),
    })
}

/// Sample (n − 1) standard deviation; 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Averages single-run reports that share α and loss. `lambda_hat` becomes
/// the mean λ̂ and `n_test` the total number of test images.
pub fn aggregate_runs(reports: &[EvaluationReport]) -> Result<EvaluationReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::ConfigMismatch("no reports to aggregate".into()))?;
    if reports.len() == 1 {
        let mut only = first.clone();
        only.risk_std = 0.0;
        only.activation_ratio_std = 0.0;
        return Ok(only);
    }
    for r in &reports[1..] {
        if r.alpha != first.alpha {
            return Err(Error::ConfigMismatch(format!(
                "alpha {} differs from {}",
                r.alpha, first.alpha
            )));
        }
        if r.loss != first.loss {
            return Err(Error::ConfigMismatch(format!(
                "loss {} differs from {}",
                r.loss, first.loss
            )));
        }
    }
    let risks: Vec<f64> = reports.iter().map(|r| r.empirical_risk).collect();
    let ars: Vec<f64> = reports.iter().map(|r| r.activation_ratio).collect();
    let lambdas: Vec<f64> = reports.iter().map(|r| r.lambda_hat).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(EvaluationReport {
        runs: reports.iter().map(|r| r.runs).sum(),
        n_test: reports.iter().map(|r| r.n_test).sum(),
        lambda_hat: mean(&lambdas),
        alpha: first.alpha,
        loss: first.loss.clone(),
        empirical_risk: mean(&risks),
        risk_std: sample_std(&risks),
        activation_ratio: mean(&ars),
        activation_ratio_std: sample_std(&ars),
        per_image: None,
    })
}
