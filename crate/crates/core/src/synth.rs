//! Synthetic segmentation tasks and a Monte-Carlo check of the risk
//! guarantee.
//!
//! Ground truth is a Voronoi partition: `blob_count` sites are placed
//! uniformly in the image and each gets a uniform class; a pixel takes the
//! class of the nearest site (pixel centers, ties to the lower site index).
//! Each pixel then "favors" its true class, or with probability
//! `corruption` a uniformly chosen wrong class. Logits are
//! `signal · onehot(favored) + N(0, 1)` per class, divided by `temperature`
//! and softmaxed.

use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{
    calibrate_prepared, feasibility_check, prepare, CalibrationConfig, PreparedExample,
};
use crate::error::{Error, Result};
use crate::io::manifest::{Manifest, ManifestEntry};
use crate::io::npy;
use crate::io::split::{derive_seed, seeded_rng, uniform_below, uniform_f64, SeededRng};
use crate::losses::LossSpec;
use crate::metrics::{activation_ratio, sample_std};
use crate::sets::lac_set;
use crate::types::{Dims, GroundTruthMask, ScoreTensor};

pub const DEFAULT_SIGNAL: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dims: Dims,
    pub n_images: usize,
    /// Number of Voronoi sites per image.
    pub blob_count: usize,
    pub temperature: f64,
    pub corruption: f64,
    /// Logit margin given to the favored class before noise.
    pub signal: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dims: Dims { k: 5, h: 64, w: 64 },
            n_images: 10,
            blob_count: 12,
            temperature: 1.0,
            corruption: 0.3,
            signal: DEFAULT_SIGNAL,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        Dims::new(self.dims.k, self.dims.h, self.dims.w)?;
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n_images < 2 {
            return bad(format!("n_images must be at least 2, got {}", self.n_images));
        }
        if self.blob_count == 0 {
            return bad("blob_count must be positive".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.corruption) {
            return bad(format!("corruption must lie in [0, 1], got {}", self.corruption));
        }
        if !(self.signal >= 0.0 && self.signal.is_finite()) {
            return bad(format!("signal must be non-negative, got {}", self.signal));
        }
        Ok(())
    }
}

/// Draws `n_images` independent examples. Image `i` uses its own stream
/// derived from `(seed, i)`, so output does not depend on thread count.
pub fn generate(config: &SynthConfig) -> Result<Vec<(ScoreTensor, GroundTruthMask)>> {
    config.validate()?;
    (0..config.n_images)
        .into_par_iter()
        .map(|i| generate_one(config, derive_seed(config.seed, i as u64)))
        .collect()
}

fn generate_one(config: &SynthConfig, seed: u64) -> Result<(ScoreTensor, GroundTruthMask)> {
    let Dims { k, h, w } = config.dims;
    let mut rng = seeded_rng(seed);
    let labels = voronoi_labels(config, &mut rng);

    let pixels = h * w;
    let mut values = vec![0f32; k * pixels];
    let mut logits = vec![0f64; k];
    for (p, &truth) in labels.iter().enumerate() {
        let truth = truth as usize;
        let favored = if uniform_f64(&mut rng) < config.corruption {
            let other = uniform_below(&mut rng, k as u64 - 1) as usize;
            if other >= truth {
                other + 1
            } else {
                other
            }
        } else {
            truth
        };
        for (c, l) in logits.iter_mut().enumerate() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let signal = if c == favored { config.signal } else { 0.0 };
            *l = (signal + noise) / config.temperature;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        for (c, l) in logits.iter().enumerate() {
            values[c * pixels + p] = ((l - max).exp() / total) as f32;
        }
    }
    let scores = ScoreTensor::new(config.dims, values)?;
    let mask = GroundTruthMask::new(config.dims, labels)?;
    Ok((scores, mask))
}

fn voronoi_labels(config: &SynthConfig, rng: &mut SeededRng) -> Vec<u16> {
    let Dims { k, h, w } = config.dims;
    let sites: Vec<(f64, f64, u16)> = (0..config.blob_count)
        .map(|_| {
            let y = uniform_f64(rng) * h as f64;
            let x = uniform_f64(rng) * w as f64;
            (y, x, uniform_below(rng, k as u64) as u16)
        })
        .collect();
    let mut labels = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let (cy, cx) = (i as f64 + 0.5, j as f64 + 0.5);
            let mut best = (f64::INFINITY, 0u16);
            for &(y, x, class) in &sites {
                let d = (y - cy).powi(2) + (x - cx).powi(2);
                if d < best.0 {
                    best = (d, class);
                }
            }
            labels.push(best.1);
        }
    }
    labels
}

/// Writes `scores/<id>.npy`, `masks/<id>.npy` and `manifest.jsonl` under
/// `dir`, returning the manifest path.
pub fn write_dataset(dir: impl AsRef<Path>, data: &[(ScoreTensor, GroundTruthMask)]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    for sub in ["scores", "masks"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let width = data.len().saturating_sub(1).to_string().len().max(4);
    let entries = data
        .iter()
        .enumerate()
        .map(|(i, (scores, mask))| {
            let id = format!("img_{i:0width$}");
            let scores_path = dir.join("scores").join(format!("{id}.npy"));
            let mask_path = dir.join("masks").join(format!("{id}.npy"));
            npy::write_scores(&scores_path, scores)?;
            npy::write_mask(&mask_path, mask)?;
            Ok(ManifestEntry {
                id,
                scores_path,
                mask_path,
                image_path: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let path = dir.join("manifest.jsonl");
    Manifest::new(entries)?.write(&path)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeConfig {
    /// Data model; `n_images` is ignored in favor of `n_cal + n_test`.
    pub synth: SynthConfig,
    pub n_cal: usize,
    pub n_test: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub alpha: f64,
    pub loss: LossSpec,
    pub mean_test_risk: f64,
    pub std_test_risk: f64,
    pub standard_error: f64,
    /// `mean_test_risk <= alpha + 3 · standard_error`.
    pub pass: bool,
    pub mean_lambda_hat: f64,
    pub mean_activation_ratio: f64,
    pub test_risks: Vec<f64>,
}

impl TrialSummary {
    fn from_trials(cal: &CalibrationConfig, outcomes: &[(f64, f64, f64)]) -> Self {
        let trials = outcomes.len();
        let mean = |f: fn(&(f64, f64, f64)) -> f64| outcomes.iter().map(f).sum::<f64>() / trials as f64;
        let test_risks: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
        let mean_test_risk = mean(|o| o.0);
        let std_test_risk = sample_std(&test_risks);
        let standard_error = std_test_risk / (trials as f64).sqrt();
        TrialSummary {
            trials,
            alpha: cal.alpha,
            loss: cal.loss.clone(),
            mean_test_risk,
            std_test_risk,
            standard_error,
            pass: mean_test_risk <= cal.alpha + 3.0 * standard_error,
            mean_lambda_hat: mean(|o| o.1),
            mean_activation_ratio: mean(|o| o.2),
            test_risks,
        }
    }
}

/// Repeats draw / calibrate / test `trials` times for one calibration
/// setting.
pub fn validate_guarantee(config: &GuaranteeConfig, cal: &CalibrationConfig) -> Result<TrialSummary> {
    Ok(validate_guarantee_many(config, std::slice::from_ref(cal))?.remove(0))
}

/// Like [`validate_guarantee`] for several calibration settings at once.
/// Each trial's data is drawn once and shared by all settings.
pub fn validate_guarantee_many(
    config: &GuaranteeConfig,
    cals: &[CalibrationConfig],
) -> Result<Vec<TrialSummary>> {
    if config.trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    if config.n_cal == 0 || config.n_test == 0 {
        return Err(Error::InvalidParameter("n_cal and n_test must be positive".into()));
    }
    for cal in cals {
        cal.validate()?;
        cal.loss.validate_for_classes(config.synth.dims.k)?;
        feasibility_check(cal, config.n_cal)?;
    }
    let mut synth = config.synth.clone();
    synth.n_images = config.n_cal + config.n_test;
    synth.validate()?;

    // outcomes[trial][setting] = (test risk, lambda_hat, activation ratio)
    let outcomes: Vec<Vec<(f64, f64, f64)>> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let trial = SynthConfig {
                seed: derive_seed(config.synth.seed, t as u64),
                ..synth.clone()
            };
            let data = prepare(&generate(&trial)?)?;
            let (cal_set, test_set) = data.split_at(config.n_cal);
            cals.iter().map(|c| run_trial(cal_set, test_set, c)).collect()
        })
        .collect::<Result<_>>()?;

    Ok(cals
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let column: Vec<(f64, f64, f64)> = outcomes.iter().map(|row| row[i]).collect();
            TrialSummary::from_trials(c, &column)
        })
        .collect())
}

fn run_trial(
    cal_set: &[PreparedExample],
    test_set: &[PreparedExample],
    cal: &CalibrationConfig,
) -> Result<(f64, f64, f64)> {
    let artifact = calibrate_prepared(cal_set, cal)?;
    let lambda = artifact.lambda()?;
    let mut risk = 0.0;
    let mut ar = 0.0;
    for ex in test_set {
        let z = lac_set(&ex.scores, lambda, cal.top1_fallback);
        risk += cal.loss.evaluate(&z, &ex.truth)?;
        let valid = vec![true; z.dims().pixels()];
        ar += activation_ratio(&z, &valid)?;
    }
    let n = test_set.len() as f64;
    Ok((risk / n, artifact.lambda_hat, ar / n))
}
