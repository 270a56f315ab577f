//! Brute-force reference for λ̂ that never builds a prediction set.
//!
//! A pixel's true class is in the LAC set at λ exactly when its true-class
//! score `p` satisfies `p >= 1 - λ`, or when the top-1 fallback fires on a
//! pixel whose argmax is the true class. With fallback on, a pixel whose
//! argmax is the truth is therefore always covered, and every other pixel is
//! covered iff `p >= 1 - λ`. Sorting the `p` values once per image turns the
//! covered count at any λ into a binary search.

#![allow(dead_code)]

use crcseg::types::{GroundTruthMask, ScoreTensor, IGNORE};

pub struct OracleImage {
    /// True-class scores of valid pixels not rescued by the fallback,
    /// sorted ascending.
    scores: Vec<f64>,
    /// Valid pixels covered at every λ.
    always: usize,
    valid: usize,
}

pub fn oracle_image(scores: &ScoreTensor, mask: &GroundTruthMask, fallback: bool) -> OracleImage {
    let d = scores.dims();
    let hw = d.h * d.w;
    let v = scores.values();
    let mut out = OracleImage { scores: Vec::new(), always: 0, valid: 0 };
    for (p, &y) in mask.labels().iter().enumerate() {
        if y == IGNORE {
            continue;
        }
        out.valid += 1;
        let y = y as usize;
        // argmax with ties to the smallest index
        let mut best = 0;
        for k in 1..d.k {
            if v[k * hw + p] > v[best * hw + p] {
                best = k;
            }
        }
        if fallback && best == y {
            out.always += 1;
        } else {
            out.scores.push(f64::from(v[y * hw + p]));
        }
    }
    out.scores.sort_by(f64::total_cmp);
    out
}

impl OracleImage {
    pub fn covered(&self, lambda: f64) -> usize {
        let t = 1.0 - lambda;
        let below = self.scores.partition_point(|&p| p < t);
        self.always + self.scores.len() - below
    }

    pub fn coverage(&self, lambda: f64) -> Option<f64> {
        (self.valid > 0).then(|| self.covered(lambda) as f64 / self.valid as f64)
    }
}

#[derive(Clone, Copy, Debug)]
pub enum OracleLoss {
    Binary,
    Threshold(f64),
    Miscoverage,
}

pub fn oracle_loss(img: &OracleImage, lambda: f64, loss: OracleLoss) -> f64 {
    let Some(c) = img.coverage(lambda) else { return 0.0 };
    match loss {
        OracleLoss::Binary => f64::from(u8::from(img.covered(lambda) < img.valid)),
        OracleLoss::Threshold(tau) => f64::from(u8::from(c < tau)),
        OracleLoss::Miscoverage => 1.0 - c,
    }
}

pub fn oracle_risk(images: &[OracleImage], lambda: f64, loss: OracleLoss) -> f64 {
    images.iter().map(|i| oracle_loss(i, lambda, loss)).sum::<f64>() / images.len() as f64
}

/// Smallest grid point `i·step` meeting `(n·R + 1)/(n + 1) <= alpha`.
pub fn grid_lambda(images: &[OracleImage], alpha: f64, step: f64, loss: OracleLoss) -> Option<f64> {
    let n = images.len() as f64;
    let steps = (1.0 / step).round() as usize;
    (0..=steps)
        .map(|i| (i as f64 * step).min(1.0))
        .find(|&lambda| (n * oracle_risk(images, lambda, loss) + 1.0) / (n + 1.0) <= alpha)
}
