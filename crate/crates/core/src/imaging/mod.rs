//! CT slice ingestion and preprocessing.
//!
//! Slices arrive as calibrated Hounsfield-unit grids. They are turned into
//! three-channel model inputs by stacking intensity windows (brain, subdural,
//! bone), resampling to a square side length and min-max scaling. A simple
//! threshold-and-morphology brain mask is computed from the same grid.

mod brain_mask;
mod catalog;
mod synth;
mod window;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use brain_mask::{compute_brain_mask, BrainMaskParams};
pub use catalog::{load_catalog, write_dataset, Catalog, CatalogEntry, LabelFormat};
pub use synth::{synth_generate, SynthConfig};
pub use window::{apply_hu_window, area_resample, resize_normalize, stack_windows, WindowSpec};

/// Hemorrhage subtypes in the fixed column order used by label tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subtype {
    Ivh,
    Iph,
    Sah,
    Edh,
    Sdh,
}

impl Subtype {
    pub const ALL: [Subtype; 5] = [
        Subtype::Ivh,
        Subtype::Iph,
        Subtype::Sah,
        Subtype::Edh,
        Subtype::Sdh,
    ];

    pub fn column(self) -> &'static str {
        match self {
            Subtype::Ivh => "ivh",
            Subtype::Iph => "iph",
            Subtype::Sah => "sah",
            Subtype::Edh => "edh",
            Subtype::Sdh => "sdh",
        }
    }

    /// Accepts the short column names and the long names used by RSNA-style tables.
    pub fn parse(name: &str) -> Option<Subtype> {
        match name.trim().to_ascii_lowercase().as_str() {
            "ivh" | "intraventricular" => Some(Subtype::Ivh),
            "iph" | "intraparenchymal" => Some(Subtype::Iph),
            "sah" | "subarachnoid" => Some(Subtype::Sah),
            "edh" | "epidural" => Some(Subtype::Edh),
            "sdh" | "subdural" => Some(Subtype::Sdh),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoricalLabel {
    pub any_ich: bool,
    /// `None` when only the binary label is known.
    pub subtypes: Option<[bool; 5]>,
}

impl CategoricalLabel {
    pub fn binary(any_ich: bool) -> Self {
        Self {
            any_ich,
            subtypes: None,
        }
    }

    pub fn with_subtypes(subtypes: [bool; 5]) -> Self {
        Self {
            any_ich: subtypes.iter().any(|&s| s),
            subtypes: Some(subtypes),
        }
    }

    pub fn is_consistent(&self) -> bool {
        match self.subtypes {
            Some(flags) => self.any_ich == flags.iter().any(|&s| s),
            None => true,
        }
    }

    /// Six-way target vector: `any` followed by the five subtypes.
    pub fn multi_label_target(&self) -> [f32; 6] {
        let mut out = [0.0; 6];
        out[0] = f32::from(u8::from(self.any_ich));
        if let Some(flags) = self.subtypes {
            for (slot, flag) in out[1..].iter_mut().zip(flags) {
                *slot = f32::from(u8::from(flag));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceRef {
    pub study_id: String,
    pub slice_index: i64,
}

impl SourceRef {
    /// Slice identifier used for file names: `<study_id>_<slice_index>`.
    pub fn id(&self) -> String {
        format!("{}_{}", self.study_id, self.slice_index)
    }

    /// Splits an identifier at its last underscore; study ids may contain underscores.
    pub fn parse(id: &str) -> Option<SourceRef> {
        let (study, index) = id.rsplit_once('_')?;
        if study.is_empty() {
            return None;
        }
        Some(SourceRef {
            study_id: study.to_string(),
            slice_index: index.parse().ok()?,
        })
    }
}

/// One axial slice in Hounsfield units.
#[derive(Debug, Clone, PartialEq)]
pub struct CtSlice {
    pub source: SourceRef,
    pub hu: Array2<f32>,
    /// Millimetres per pixel as (row, column).
    pub pixel_spacing: (f32, f32),
    pub labels: CategoricalLabel,
    pub gt_mask: Option<Array2<u8>>,
}

impl CtSlice {
    pub fn new(
        source: SourceRef,
        hu: Array2<f32>,
        labels: CategoricalLabel,
        gt_mask: Option<Array2<u8>>,
    ) -> Result<Self> {
        if hu.is_empty() {
            return Err(Error::Input(format!("slice {} has an empty grid", source.id())));
        }
        if let Some(mask) = &gt_mask {
            if mask.dim() != hu.dim() {
                return Err(Error::Data(format!(
                    "slice {}: mask shape {:?} differs from slice shape {:?}",
                    source.id(),
                    mask.dim(),
                    hu.dim()
                )));
            }
            if mask.iter().any(|&v| v > 1) {
                return Err(Error::Data(format!(
                    "slice {}: mask values must be 0 or 1",
                    source.id()
                )));
            }
        }
        Ok(Self {
            source,
            hu,
            pixel_spacing: (1.0, 1.0),
            labels,
            gt_mask,
        })
    }

    pub fn id(&self) -> String {
        self.source.id()
    }
}

/// Preprocessing settings shared by every model that consumes a [`ModelInput`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Brain, subdural and bone windows, in that channel order.
    pub windows: [WindowSpec; 3],
    pub side: usize,
    pub brain_mask: BrainMaskParams,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            windows: WindowSpec::DEFAULT_STACK,
            side: 384,
            brain_mask: BrainMaskParams::default(),
        }
    }
}

/// A windowed, resampled and normalized three-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    /// Channel-first `(3, side, side)`, every value in `[0, 1]`.
    pub pixels: Array3<f32>,
    pub brain_mask: Array2<u8>,
    pub source: SourceRef,
}

impl ModelInput {
    pub fn side(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn from_slice(slice: &CtSlice, config: &PreprocessConfig) -> Result<Self> {
        let channels = stack_windows(slice, &config.windows)?;
        let pixels = resize_normalize(&channels, config.side)?;
        let mask = compute_brain_mask(slice, &config.brain_mask);
        Ok(Self {
            pixels,
            brain_mask: resample_mask(&mask, config.side),
            source: slice.source.clone(),
        })
    }
}

/// Area-resamples a binary mask and keeps pixels that are at least half covered.
pub fn resample_mask(mask: &Array2<u8>, side: usize) -> Array2<u8> {
    if mask.dim() == (side, side) {
        return mask.clone();
    }
    let resampled = area_resample(&mask.mapv(f32::from), side, side);
    resampled.mapv(|v| u8::from(v >= 0.5))
}
