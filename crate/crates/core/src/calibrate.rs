//! Conformal risk control calibration.
//!
//! Given `n` calibration images and a bounded monotone loss, finds the
//! smallest coverage parameter λ whose inflated empirical risk
//! `(n·R̂_n(λ) + B) / (n + 1)` stays at or below the target level α. Test
//! images thresholded at that λ then satisfy `E[loss] ≤ α` marginally.
//!
//! The search is a bisection on `[0, 1]` that always returns the upper
//! endpoint of the final bracket. Because the empirical risk is
//! non-increasing in λ, the returned value satisfies the inequality and
//! lies within `epsilon` above the exact infimum.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::sets::{lac_set, CoverageParameter};
use crate::types::{GroundTruthMask, MultiMask, ScoreTensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Target risk level, in `(0, 1)`.
    pub alpha: f64,
    /// Width of the final bisection bracket on λ.
    pub epsilon: f64,
    pub loss: LossSpec,
    pub top1_fallback: bool,
    /// Seed for any shuffling done by callers; calibration itself is
    /// deterministic.
    pub seed: u64,
}

impl CalibrationConfig {
    pub fn new(alpha: f64, loss: LossSpec) -> Self {
        CalibrationConfig {
            alpha,
            epsilon: DEFAULT_EPSILON,
            loss,
            top1_fallback: true,
            seed: 0,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_top1_fallback(mut self, on: bool) -> Self {
        self.top1_fallback = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-2) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in (0, 0.01], got {}",
                self.epsilon
            )));
        }
        self.loss.validate()
    }
}

/// One probe of the empirical risk curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSample {
    pub lambda: f64,
    pub risk: f64,
}

/// Deployable result of calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub lambda_hat: f64,
    pub alpha: f64,
    pub n: usize,
    pub bound_b: f64,
    pub epsilon: f64,
    pub loss: LossSpec,
    pub top1_fallback: bool,
    /// Empirical risk at every probed λ, sorted by λ.
    pub risk_curve: Vec<RiskSample>,
    pub created_at: String,
    pub tool_version: String,
}

impl CalibrationArtifact {
    pub fn lambda(&self) -> Result<CoverageParameter> {
        CoverageParameter::new(self.lambda_hat)
    }

    /// Re-checks the stored curve: non-increasing in λ, and the CRC
    /// inequality holds at `lambda_hat`.
    pub fn check_invariants(&self) -> Result<()> {
        self.lambda()?;
        self.loss.validate()?;
        for pair in self.risk_curve.windows(2) {
            if pair[1].lambda < pair[0].lambda || pair[1].risk > pair[0].risk {
                return Err(Error::InvalidParameter(format!(
                    "risk curve is not non-increasing between λ={} and λ={}",
                    pair[0].lambda, pair[1].lambda
                )));
            }
        }
        let at_hat = self
            .risk_curve
            .iter()
            .find(|s| s.lambda == self.lambda_hat)
            .ok_or_else(|| {
                Error::InvalidParameter("risk curve has no sample at lambda_hat".into())
            })?;
        if !crc_condition(at_hat.risk, self.n, self.bound_b, self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "risk {} at lambda_hat violates the bound for alpha {}",
                at_hat.risk, self.alpha
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let artifact: CalibrationArtifact = serde_json::from_str(text)?;
        artifact.check_invariants()?;
        Ok(artifact)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Arithmetic mean of per-image losses.
pub fn empirical_risk(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// `n/(n+1)·R̂ + B/(n+1) ≤ α`.
pub fn crc_condition(r_hat: f64, n: usize, b: f64, alpha: f64) -> bool {
    let n = n as f64;
    (n * r_hat + b) / (n + 1.0) <= alpha
}

/// Smallest α the inequality can meet with `n` examples and endpoint risk
/// `r_at_one`.
pub fn min_feasible_alpha(n: usize, b: f64, r_at_one: f64) -> f64 {
    let n = n as f64;
    (n * r_at_one + b) / (n + 1.0)
}

/// Smallest calibration size for which a zero-risk endpoint meets α.
pub fn min_calibration_size(alpha: f64, b: f64) -> usize {
    // start near the closed form, then settle the rounding exactly
    let guess = (b / alpha - 1.0).floor();
    let mut n = if guess.is_finite() && guess >= 1.0 {
        guess.min(usize::MAX as f64 / 2.0) as usize
    } else {
        1
    };
    while !crc_condition(0.0, n, b, alpha) {
        n += 1;
    }
    while n > 1 && crc_condition(0.0, n - 1, b, alpha) {
        n -= 1;
    }
    n
}

fn infeasible(alpha: f64, n: usize, b: f64, r_at_one: f64) -> Error {
    Error::InfeasibleAlpha {
        alpha,
        n,
        min_alpha: min_feasible_alpha(n, b, r_at_one),
        min_n: min_calibration_size(alpha, b),
    }
}

/// Checks that α is attainable with `n` examples. Every shipped loss is 0
/// at λ = 1 (all classes included), so this reduces to `α ≥ B/(n+1)`.
pub fn feasibility_check(config: &CalibrationConfig, n: usize) -> Result<()> {
    let b = config.loss.bound();
    if n == 0 {
        return Err(Error::EmptyCalibrationSet);
    }
    if crc_condition(0.0, n, b, config.alpha) {
        Ok(())
    } else {
        Err(infeasible(config.alpha, n, b, 0.0))
    }
}

/// Calibration image with its one-hot ground truth precomputed.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub scores: ScoreTensor,
    pub truth: MultiMask,
}

impl PreparedExample {
    pub fn new(scores: ScoreTensor, mask: &GroundTruthMask) -> Result<Self> {
        let dims = scores.dims();
        if mask.dims().k != dims.k {
            return Err(Error::DimensionMismatch {
                expected: format!("{} classes", dims.k),
                found: format!("{} classes", mask.dims().k),
            });
        }
        dims.ensure_spatial(&mask.dims())?;
        Ok(PreparedExample {
            scores,
            truth: mask.one_hot(),
        })
    }
}

pub fn prepare(set: &[(ScoreTensor, GroundTruthMask)]) -> Result<Vec<PreparedExample>> {
    let prepared: Vec<PreparedExample> = set
        .iter()
        .map(|(s, m)| PreparedExample::new(s.clone(), m))
        .collect::<Result<_>>()?;
    if let Some(first) = prepared.first() {
        let k = first.scores.dims().k;
        if let Some(bad) = prepared.iter().find(|e| e.scores.dims().k != k) {
            return Err(Error::DimensionMismatch {
                expected: format!("{k} classes"),
                found: format!("{} classes", bad.scores.dims().k),
            });
        }
    }
    Ok(prepared)
}

/// Per-image losses at `lambda`, in input order.
pub fn losses_at(
    examples: &[PreparedExample],
    lambda: CoverageParameter,
    loss: &LossSpec,
    top1_fallback: bool,
) -> Result<Vec<f64>> {
    examples
        .par_iter()
        .map(|e| loss.evaluate(&lac_set(&e.scores, lambda, top1_fallback), &e.truth))
        .collect()
}

/// `R̂_n(λ)`. Reduction runs sequentially in input order, so the value does
/// not depend on the number of worker threads.
pub fn risk_at(
    examples: &[PreparedExample],
    lambda: CoverageParameter,
    loss: &LossSpec,
    top1_fallback: bool,
) -> Result<f64> {
    empirical_risk(&losses_at(examples, lambda, loss, top1_fallback)?)
}

pub fn calibrate(
    cal_set: &[(ScoreTensor, GroundTruthMask)],
    config: &CalibrationConfig,
) -> Result<CalibrationArtifact> {
    config.validate()?;
    if cal_set.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    let examples = prepare(cal_set)?;
    calibrate_prepared(&examples, config)
}

pub fn calibrate_prepared(
    examples: &[PreparedExample],
    config: &CalibrationConfig,
) -> Result<CalibrationArtifact> {
    config.validate()?;
    let n = examples.len();
    feasibility_check(config, n)?;
    config.loss.validate_for_classes(examples[0].scores.dims().k)?;

    let b = config.loss.bound();
    let mut curve: Vec<RiskSample> = Vec::new();
    let mut probe = |lambda: f64| -> Result<f64> {
        let risk = risk_at(
            examples,
            CoverageParameter::new(lambda)?,
            &config.loss,
            config.top1_fallback,
        )?;
        curve.push(RiskSample { lambda, risk });
        Ok(risk)
    };
    let holds = |risk: f64| crc_condition(risk, n, b, config.alpha);

    let r1 = probe(1.0)?;
    if !holds(r1) {
        return Err(infeasible(config.alpha, n, b, r1));
    }

    let lambda_hat = if holds(probe(0.0)?) {
        0.0
    } else {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > config.epsilon {
            let mid = 0.5 * (lo + hi);
            if holds(probe(mid)?) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };

    curve.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    Ok(CalibrationArtifact {
        lambda_hat,
        alpha: config.alpha,
        n,
        bound_b: b,
        epsilon: config.epsilon,
        loss: config.loss.clone(),
        top1_fallback: config.top1_fallback,
        risk_curve: curve,
        created_at: provenance_timestamp(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

/// RFC 3339 timestamp; honours `SOURCE_DATE_EPOCH` for reproducible output.
fn provenance_timestamp() -> String {
    let fixed = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0));
    fixed
        .unwrap_or_else(chrono::Utc::now)
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Dims, IGNORE};

    fn config(alpha: f64, loss: LossSpec) -> CalibrationConfig {
        CalibrationConfig::new(alpha, loss)
    }

    #[test]
    fn empirical_risk_examples() {
        assert_eq!(empirical_risk(&[0.0, 1.0, 0.0, 1.0]).unwrap(), 0.5);
        assert_eq!(empirical_risk(&[0.25]).unwrap(), 0.25);
        assert!(matches!(empirical_risk(&[]), Err(Error::EmptyCalibrationSet)));
    }

    #[test]
    fn empirical_risk_matches_compensated_sum() {
        // deterministic pseudo-random values in [0, 1]
        let mut x = 0x2545F4914F6CDD1Du64;
        let values: Vec<f64> = (0..100)
            .map(|_| {
                x ^= x << 13;
                x ^= x >> 7;
                x ^= x << 17;
                (x >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for &v in &values {
            let t = sum + v;
            comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
            sum = t;
        }
        let oracle = (sum + comp) / 100.0;
        assert!((empirical_risk(&values).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn crc_condition_examples() {
        assert!(crc_condition(0.0, 4, 1.0, 0.5));
        assert!(!crc_condition(0.0, 4, 1.0, 0.1));
        for n in [1, 10, 1000] {
            assert!(!crc_condition(0.3, n, 1.0, 0.3));
        }
    }

    #[test]
    fn feasibility_examples() {
        let c = config(0.1, LossSpec::Miscoverage);
        match feasibility_check(&c, 4) {
            Err(Error::InfeasibleAlpha {
                min_alpha, min_n, ..
            }) => {
                assert!((min_alpha - 0.2).abs() < 1e-15);
                assert_eq!(min_n, 9);
            }
            other => panic!("expected InfeasibleAlpha, got {other:?}"),
        }
        assert!(feasibility_check(&config(0.01, LossSpec::Miscoverage), 99).is_ok());
        assert!(feasibility_check(&config(0.01, LossSpec::Miscoverage), 98).is_err());
        assert!(feasibility_check(&config(1e-6, LossSpec::Binary), 10_000_000).is_ok());
        assert_eq!(min_calibration_size(0.001, 1.0), 999);
        assert_eq!(min_calibration_size(0.01, 1.0), 99);
        assert_eq!(min_calibration_size(0.6, 1.0), 1);
    }

    #[test]
    fn config_validation() {
        assert!(config(0.0, LossSpec::Miscoverage).validate().is_err());
        assert!(config(1.0, LossSpec::Miscoverage).validate().is_err());
        assert!(config(0.1, LossSpec::Miscoverage).with_epsilon(0.1).validate().is_err());
        assert!(config(0.1, LossSpec::Miscoverage).with_epsilon(0.0).validate().is_err());
        assert!(config(0.1, LossSpec::BinaryThreshold { tau: 0.0 }).validate().is_err());
    }

    fn perfect_set(n: usize) -> Vec<(ScoreTensor, GroundTruthMask)> {
        let d = Dims::new(3, 2, 2).unwrap();
        (0..n)
            .map(|i| {
                let labels: Vec<u16> = (0..4).map(|p| ((i + p) % 3) as u16).collect();
                let mask = GroundTruthMask::new(d, labels).unwrap();
                let scores = mask.one_hot().bits().iter().map(|&b| b as f32).collect();
                (ScoreTensor::new(d, scores).unwrap(), mask)
            })
            .collect()
    }

    #[test]
    fn perfect_predictor_gives_zero() {
        let art = calibrate(&perfect_set(20), &config(0.1, LossSpec::Binary)).unwrap();
        assert_eq!(art.lambda_hat, 0.0);
        art.check_invariants().unwrap();
    }

    /// Four one-pixel images whose binary loss drops to 0 once
    /// λ ≥ 1 − p_true, with p_true ∈ {0.8, 0.6, 0.4, 0.2}.
    fn step_set() -> Vec<(ScoreTensor, GroundTruthMask)> {
        let d = Dims::new(3, 1, 1).unwrap();
        [0.8f32, 0.6, 0.4, 0.2]
            .iter()
            .map(|&p| {
                let rest = (1.0 - p) / 2.0;
                (
                    ScoreTensor::new(d, vec![p, rest, rest]).unwrap(),
                    GroundTruthMask::new(d, vec![0]).unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn step_functions_against_grid_scan() {
        let set = step_set();
        let eps = 1e-5;
        let cfg = config(0.5, LossSpec::Binary)
            .with_top1_fallback(false)
            .with_epsilon(eps);
        let art = calibrate(&set, &cfg).unwrap();

        // brute-force scan at step 1e-4 straight from the definition
        let grid_hat = (0..=10_000)
            .map(|i| i as f64 / 10_000.0)
            .find(|&lam| {
                let losses: Vec<f64> = set
                    .iter()
                    .map(|(s, _)| if f64::from(s.values()[0]) >= 1.0 - lam { 0.0 } else { 1.0 })
                    .collect();
                let r = losses.iter().sum::<f64>() / 4.0;
                r <= 0.375
            })
            .unwrap();
        assert!((grid_hat - 0.6).abs() < 1e-9);

        let infimum = 1.0 - f64::from(0.4f32);
        assert!(art.lambda_hat >= infimum, "{} < {infimum}", art.lambda_hat);
        assert!(art.lambda_hat <= infimum + eps);
        assert!((art.lambda_hat - grid_hat).abs() <= 1e-4);
        art.check_invariants().unwrap();
    }

    #[test]
    fn artifact_json_round_trip_and_invariants() {
        let art = calibrate(&step_set(), &config(0.5, LossSpec::Binary).with_top1_fallback(false))
            .unwrap();
        let back = CalibrationArtifact::from_json(&art.to_json().unwrap()).unwrap();
        assert_eq!(back, art);

        let mut bad = art.clone();
        bad.lambda_hat = 0.1;
        assert!(bad.check_invariants().is_err());
        let mut bad = art;
        bad.risk_curve.reverse();
        assert!(bad.check_invariants().is_err());
    }

    #[test]
    fn rejects_infeasible_and_empty() {
        let r = calibrate(&perfect_set(4), &config(0.1, LossSpec::Miscoverage));
        assert!(matches!(r, Err(Error::InfeasibleAlpha { n: 4, .. })));
        let r = calibrate(&[], &config(0.1, LossSpec::Miscoverage));
        assert!(matches!(r, Err(Error::EmptyCalibrationSet)));
    }

    #[test]
    fn rejects_mismatched_pairs() {
        let mut set = perfect_set(10);
        let d = Dims::new(3, 1, 4).unwrap();
        set[3].1 = GroundTruthMask::new(d, vec![0, 1, 2, IGNORE]).unwrap();
        let r = calibrate(&set, &config(0.2, LossSpec::Miscoverage));
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn monotone_in_alpha() {
        let set = step_set();
        let cfg = |a| config(a, LossSpec::Binary).with_top1_fallback(false);
        let mut prev = f64::INFINITY;
        for alpha in [0.25, 0.4, 0.5, 0.6, 0.8, 0.9] {
            let art = calibrate(&set, &cfg(alpha)).unwrap();
            assert!(art.lambda_hat <= prev);
            prev = art.lambda_hat;
        }
    }
}
