//! Saliency maps to binary masks: brain gating, validated thresholds and the
//! slice-level detection readout.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::arrays::write_array;
use crate::error::{Error, Result};
use crate::eval::overlap;
use crate::maps::FusedMap;
use crate::method::Method;

/// Smallest foreground, in pixels, read as a positive detection.
pub const DEFAULT_MIN_PIXELS: usize = 10;

/// Fixed cut applied to U-Net probabilities.
pub const UNET_THRESHOLD: f64 = 0.5;

/// Zeroes saliency outside the brain and re-normalizes to a maximum of 1.
pub fn gate_by_brain(map: &FusedMap, brain_mask: &Array2<u8>) -> Result<FusedMap> {
    if map.values.dim() != brain_mask.dim() {
        return Err(Error::Input(format!(
            "map {:?} and brain mask {:?} differ in shape",
            map.values.dim(),
            brain_mask.dim()
        )));
    }
    let mut values = map.values.clone();
    values.zip_mut_with(brain_mask, |v, &m| {
        if m == 0 {
            *v = 0.0;
        }
    });
    let mut gated = FusedMap::normalized(values, map.method, map.layers_used.clone(), map.source.clone());
    gated.normalization_max *= map.normalization_max;
    Ok(gated)
}

/// Evenly spaced candidate thresholds `start, start + step, ..., stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self {
            start: 0.05,
            stop: 0.95,
            step: 0.05,
        }
    }
}

impl ThresholdGrid {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.start && self.start < self.stop && self.stop <= 1.0) || !(self.step > 0.0) {
            return Err(Error::Config(format!(
                "threshold grid needs 0 <= start < stop <= 1 and step > 0, got {:?}",
                self
            )));
        }
        Ok(())
    }

    /// Grid points, generated by index and rounded to 1e-9 so that decimal steps stay exact.
    pub fn values(&self) -> Vec<f64> {
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=count)
            .map(|i| ((self.start + i as f64 * self.step) * 1e9).round() / 1e9)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegMask {
    pub mask: Array2<u8>,
    pub threshold_used: f64,
    pub method: Method,
    pub foreground_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegMaskMetadata {
    pub threshold_used: f64,
    pub method: Method,
    pub foreground_pixels: usize,
    pub min_pixels: usize,
}

impl SegMask {
    pub fn new(mask: Array2<u8>, threshold_used: f64, method: Method) -> Self {
        let foreground_pixels = mask.iter().filter(|&&v| v != 0).count();
        Self {
            mask,
            threshold_used,
            method,
            foreground_pixels,
        }
    }

    /// Writes `<stem>.arr` (uint8 mask) and `<stem>.json`.
    pub fn export(&self, dir: &Path, stem: &str, min_pixels: usize) -> Result<()> {
        write_array(&dir.join(format!("{stem}.arr")), &self.mask)?;
        let meta = SegMaskMetadata {
            threshold_used: self.threshold_used,
            method: self.method,
            foreground_pixels: self.foreground_pixels,
            min_pixels,
        };
        let path = dir.join(format!("{stem}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
    }

    pub fn import(dir: &Path, stem: &str) -> Result<(Self, SegMaskMetadata)> {
        let path = dir.join(format!("{stem}.json"));
        if !path.exists() {
            return Err(Error::Dependency { path });
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: SegMaskMetadata = serde_json::from_str(&text)?;
        let mask = crate::arrays::read_mask(&dir.join(format!("{stem}.arr")))?;
        Ok((Self::new(mask, meta.threshold_used, meta.method), meta))
    }
}

/// `mask = values >= t`.
pub fn binarize_values(values: &Array2<f64>, t: f64, method: Method) -> SegMask {
    SegMask::new(values.mapv(|v| u8::from(v >= t)), t, method)
}

pub fn binarize(map: &FusedMap, t: f64, method: Method) -> SegMask {
    binarize_values(&map.values, t, method)
}

/// Positive when at least `min_pixels` pixels are foreground.
pub fn detect_from_mask(mask: &SegMask, min_pixels: usize) -> bool {
    mask.foreground_pixels >= min_pixels
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub mean_dice: f64,
}

/// Mean Dice of `values >= t` against each ground truth.
pub fn mean_dice_at(pairs: &[(&Array2<f64>, &Array2<u8>)], t: f64) -> Result<f64> {
    let mut sum = 0.0;
    for (map, gt) in pairs {
        let predicted = map.mapv(|v| u8::from(v >= t));
        sum += overlap(&predicted, gt)?.dice();
    }
    Ok(sum / pairs.len() as f64)
}

/// Exhaustive scan of `grid` for the highest mean Dice; ties go to the smallest threshold.
pub fn grid_search_threshold(pairs: &[(&Array2<f64>, &Array2<u8>)], grid: &ThresholdGrid) -> Result<ThresholdChoice> {
    if pairs.is_empty() {
        return Err(Error::Usage("threshold search needs at least one validation pair".into()));
    }
    grid.validate()?;
    let mut best: Option<ThresholdChoice> = None;
    for t in grid.values() {
        let mean_dice = mean_dice_at(pairs, t)?;
        if best.is_none_or(|b| mean_dice > b.mean_dice) {
            best = Some(ThresholdChoice { threshold: t, mean_dice });
        }
    }
    Ok(best.expect("grid is non-empty"))
}
