//! Conformal risk control for multiclass semantic segmentation.
//!
//! Softmax score tensors are thresholded into per-pixel prediction sets
//! whose single parameter λ is calibrated so that the expected loss on a new
//! image stays below a user-chosen level α.

pub mod calibrate;
pub mod error;
pub mod heatmap;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod raster;
pub mod sets;
pub mod synth;
pub mod types;

pub use calibrate::{calibrate, CalibrationArtifact, CalibrationConfig, RiskSample};
pub use error::{Error, ErrorClass, Result};
pub use heatmap::{heatmap, Colormap, HeatmapOptions, Normalization};
pub use losses::LossSpec;
pub use metrics::{evaluate, EvaluationReport};
pub use raster::RgbImage;
pub use sets::{lac_set, CoverageParameter};
pub use synth::{generate, validate_guarantee, GuaranteeConfig, SynthConfig, TrialSummary};
pub use types::{Dims, GroundTruthMask, MultiMask, ScoreTensor, IGNORE};
