//! File formats and dataset plumbing.

pub mod manifest;
pub mod npy;
pub mod split;

pub use manifest::{Manifest, ManifestEntry};
pub use split::{split, SplitSpec};
