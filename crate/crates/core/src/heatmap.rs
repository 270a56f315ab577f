//! Varisco heatmaps: per-pixel prediction-set size mapped onto a color ramp.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RgbImage;
use crate::sets::set_size_map;
use crate::types::MultiMask;

/// How set sizes are scaled into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `count / K`.
    #[default]
    ByK,
    /// `count / max count in the mask`; useful with many classes.
    ByObservedMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Colormap {
    /// Blue to red diverging ramp, piecewise linear over five anchors.
    #[default]
    Thermal,
}

/// Anchor colors of [`Colormap::Thermal`] at positions 0, .25, .5, .75, 1.
pub const THERMAL_ANCHORS: [[u8; 3]; 5] = [
    [49, 54, 149],
    [69, 117, 180],
    [254, 224, 144],
    [244, 109, 67],
    [165, 0, 38],
];

impl Colormap {
    pub fn anchors(self) -> &'static [[u8; 3]] {
        match self {
            Colormap::Thermal => &THERMAL_ANCHORS,
        }
    }

    /// Linear interpolation between evenly spaced anchors, rounded half up.
    /// Values outside `[0, 1]` are clamped and NaN maps to 0.
    pub fn color(self, t: f64) -> [u8; 3] {
        let anchors = self.anchors();
        let segments = anchors.len() - 1;
        let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
        let pos = t * segments as f64;
        let seg = (pos.floor() as usize).min(segments - 1);
        let u = pos - seg as f64;
        let (a, b) = (anchors[seg], anchors[seg + 1]);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let (x, y) = (f64::from(a[c]), f64::from(b[c]));
            out[c] = (x + (y - x) * u + 0.5).floor().clamp(0.0, 255.0) as u8;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HeatmapOptions {
    pub normalization: Normalization,
    pub colormap: Colormap,
    /// Weight of the heatmap when blended over a photograph.
    pub overlay_blend: Option<f64>,
    /// Paint void pixels black.
    pub blackout_void: bool,
}

impl HeatmapOptions {
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.overlay_blend {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::InvalidParameter(format!(
                    "blend must lie in [0, 1], got {b}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-pixel set size scaled into `[0, 1]`, row-major `(H, W)`.
pub fn intensity_map(z: &MultiMask, opts: &HeatmapOptions) -> Vec<f64> {
    let sizes = set_size_map(z);
    let denom = match opts.normalization {
        Normalization::ByK => z.dims().k as f64,
        Normalization::ByObservedMax => f64::from(sizes.iter().copied().max().unwrap_or(0)),
    };
    if denom <= 0.0 {
        return vec![0.0; sizes.len()];
    }
    sizes.iter().map(|&c| f64::from(c) / denom).collect()
}

pub fn render(intensity: &[f64], height: usize, width: usize, opts: &HeatmapOptions) -> Result<RgbImage> {
    if intensity.len() != height * width {
        return Err(Error::LengthMismatch {
            expected: height * width,
            found: intensity.len(),
        });
    }
    let data = intensity
        .iter()
        .flat_map(|&t| opts.colormap.color(t))
        .collect();
    RgbImage::new(width, height, data)
}

/// Paints pixels whose `valid` flag is false black.
pub fn blackout(image: &mut RgbImage, valid: &[bool]) -> Result<()> {
    let (w, h) = (image.width(), image.height());
    if valid.len() != w * h {
        return Err(Error::LengthMismatch {
            expected: w * h,
            found: valid.len(),
        });
    }
    for (p, _) in valid.iter().enumerate().filter(|(_, &v)| !v) {
        image.put_pixel(p / w, p % w, [0, 0, 0]);
    }
    Ok(())
}

/// Per channel `round(blend·heat + (1 − blend)·photo)`, halves rounded up.
pub fn overlay(heat: &RgbImage, photo: &RgbImage, blend: f64) -> Result<RgbImage> {
    if (heat.width(), heat.height()) != (photo.width(), photo.height()) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", heat.height(), heat.width()),
            found: format!("{}x{}", photo.height(), photo.width()),
        });
    }
    if !(0.0..=1.0).contains(&blend) {
        return Err(Error::InvalidParameter(format!(
            "blend must lie in [0, 1], got {blend}"
        )));
    }
    let data = heat
        .data()
        .iter()
        .zip(photo.data())
        .map(|(&h, &p)| {
            let v = blend * f64::from(h) + (1.0 - blend) * f64::from(p);
            (v + 0.5).floor().clamp(0.0, 255.0) as u8
        })
        .collect();
    RgbImage::new(heat.width(), heat.height(), data)
}

/// Full pipeline: intensity, color, optional blackout and overlay.
pub fn heatmap(
    z: &MultiMask,
    opts: &HeatmapOptions,
    valid: Option<&[bool]>,
    photo: Option<&RgbImage>,
) -> Result<RgbImage> {
    opts.validate()?;
    let dims = z.dims();
    let mut img = render(&intensity_map(z, opts), dims.h, dims.w, opts)?;
    if opts.blackout_void {
        let valid = valid.ok_or_else(|| {
            Error::InvalidParameter("blacking out void pixels needs a ground-truth mask".into())
        })?;
        blackout(&mut img, valid)?;
    }
    if let Some(photo) = photo {
        img = overlay(&img, photo, opts.overlay_blend.unwrap_or(0.5))?;
    }
    Ok(img)
}
