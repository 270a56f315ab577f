//! Seeded, reproducible calibration/test splits.
//!
//! The generator is xoshiro256** whose 256-bit state is filled by four
//! successive SplitMix64 outputs started at the 64-bit seed. Entries are
//! sorted by id, then shuffled with a descending Fisher–Yates pass:
//!
//! ```text
//! for i in (1..n).rev():
//!     j = uniform_below(i + 1)      // rejection sampling, see below
//!     swap(items[i], items[j])
//! ```
//!
//! `uniform_below(b)` draws `x = next_u64()` until `x >= (2^64 − b) mod b`
//! and returns `x mod b`. The first `ceil(cal_fraction · n)` shuffled
//! entries form the calibration partition. Any implementation following
//! these steps reproduces the same partition.

use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256StarStar};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::manifest::{Manifest, ManifestEntry};

/// Generator used for every seeded operation in the crate.
pub type SeededRng = Xoshiro256StarStar;

pub fn seeded_rng(seed: u64) -> SeededRng {
    Xoshiro256StarStar::seed_from_u64(seed)
}

/// Independent sub-seed for stream `index` of a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut sm = SplitMix64::seed_from_u64(master ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    sm.next_u64()
}

/// Unbiased integer in `[0, bound)`.
pub fn uniform_below<R: Rng + ?Sized>(rng: &mut R, bound: u64) -> u64 {
    assert!(bound > 0, "uniform_below needs a positive bound");
    let reject_below = bound.wrapping_neg() % bound;
    loop {
        let x = rng.next_u64();
        if x >= reject_below {
            return x % bound;
        }
    }
}

/// Uniform double in `[0, 1)` from the top 53 bits.
pub fn uniform_f64<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn fisher_yates<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = uniform_below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub cal_fraction: f64,
}

impl SplitSpec {
    /// `ceil(cal_fraction · n)`, with products within 1e-9 of an integer
    /// snapped to it so that e.g. `0.7 · 10` gives 7, not 8.
    pub fn calibration_size(&self, n: usize) -> Result<usize> {
        let f = self.cal_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "cal_fraction must lie in (0, 1), got {f}"
            )));
        }
        let x = f * n as f64;
        let nearest = x.round();
        let size = if (x - nearest).abs() < 1e-9 { nearest } else { x.ceil() } as usize;
        if size == 0 || size >= n {
            return Err(Error::DegenerateSplit {
                n,
                cal_fraction: f,
            });
        }
        Ok(size)
    }
}

/// Partitions a manifest into (calibration, test). Depends only on the seed
/// and the set of ids, not on the order of entries in the file.
pub fn split(manifest: &Manifest, spec: &SplitSpec) -> Result<(Manifest, Manifest)> {
    let n = manifest.len();
    let n_cal = spec.calibration_size(n)?;
    let mut entries: Vec<ManifestEntry> = manifest.entries.clone();
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    fisher_yates(&mut entries, &mut seeded_rng(spec.seed));
    let test = entries.split_off(n_cal);
    Ok((Manifest { entries }, Manifest { entries: test }))
}
