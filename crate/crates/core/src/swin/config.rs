use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output head layout; decides which logit is the positive-class score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// One logistic output.
    BinaryOneLogit,
    /// Two softmax outputs; index 1 is the positive class.
    BinaryTwoLogit,
    /// Six logistic outputs: `any` followed by the five subtypes.
    MultiLabel,
}

impl HeadKind {
    pub fn num_classes(self) -> usize {
        match self {
            HeadKind::BinaryOneLogit => 1,
            HeadKind::BinaryTwoLogit => 2,
            HeadKind::MultiLabel => 6,
        }
    }

    /// Index of the logit used as the positive-class score.
    pub fn positive_index(self) -> usize {
        match self {
            HeadKind::BinaryTwoLogit => 1,
            HeadKind::BinaryOneLogit | HeadKind::MultiLabel => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwinConfig {
    pub patch_size: usize,
    pub window_size: usize,
    pub embed_dim: usize,
    pub depths: Vec<usize>,
    pub heads: Vec<usize>,
    pub head: HeadKind,
    pub input_side: usize,
    pub in_channels: usize,
    pub mlp_ratio: usize,
    pub layer_norm_eps: f64,
}

/// Resolved geometry of one hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeometry {
    pub layer: usize,
    /// Token grid side length.
    pub grid: usize,
    /// Effective window side (the whole grid when the grid is not larger than the window).
    pub window: usize,
    /// Cyclic shift used by the odd (SW-MSA) blocks; 0 when a single window covers the grid.
    pub shift: usize,
    pub dim: usize,
    pub heads: usize,
    pub depth: usize,
}

impl LayerGeometry {
    pub fn tokens_per_window(&self) -> usize {
        self.window * self.window
    }

    pub fn windows_per_side(&self) -> usize {
        self.grid / self.window
    }

    pub fn num_windows(&self) -> usize {
        self.windows_per_side().pow(2)
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

impl Default for SwinConfig {
    fn default() -> Self {
        Self::swin_base_384(HeadKind::BinaryTwoLogit)
    }
}

impl SwinConfig {
    /// Swin-Base geometry at 384x384 (patch 4, window 12).
    pub fn swin_base_384(head: HeadKind) -> Self {
        Self {
            patch_size: 4,
            window_size: 12,
            embed_dim: 128,
            depths: vec![2, 2, 18, 2],
            heads: vec![4, 8, 16, 32],
            head,
            input_side: 384,
            in_channels: 3,
            mlp_ratio: 4,
            layer_norm_eps: 1e-5,
        }
    }

    /// Desk-scale model used for the synthetic experiments (side 96, window 6).
    pub fn desk(head: HeadKind) -> Self {
        Self {
            patch_size: 4,
            window_size: 6,
            embed_dim: 16,
            depths: vec![2, 2, 2, 2],
            heads: vec![2, 2, 4, 4],
            head,
            input_side: 96,
            in_channels: 3,
            mlp_ratio: 2,
            layer_norm_eps: 1e-5,
        }
    }

    /// Smallest configuration for gradient checks (embed 8, window 4, side 32).
    pub fn tiny(head: HeadKind) -> Self {
        Self {
            patch_size: 4,
            window_size: 4,
            embed_dim: 8,
            depths: vec![2, 2, 2, 2],
            heads: vec![2, 2, 4, 4],
            head,
            input_side: 32,
            in_channels: 3,
            mlp_ratio: 2,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn num_layers(&self) -> usize {
        self.depths.len()
    }

    pub fn total_blocks(&self) -> usize {
        self.depths.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if self.patch_size == 0 || self.window_size == 0 || self.embed_dim == 0 {
            return err("patch_size, window_size and embed_dim must be positive".into());
        }
        if self.depths.is_empty() || self.depths.len() != self.heads.len() {
            return err(format!(
                "depths ({}) and heads ({}) must be non-empty and equally long",
                self.depths.len(),
                self.heads.len()
            ));
        }
        if let Some(d) = self.depths.iter().find(|&&d| d == 0 || d % 2 != 0) {
            return err(format!("every depth must be a positive even number, got {d}"));
        }
        if !self.input_side.is_multiple_of(self.patch_size) {
            return err(format!(
                "input side {} is not divisible by patch size {}",
                self.input_side, self.patch_size
            ));
        }
        let mut grid = self.input_side / self.patch_size;
        for layer in 0..self.num_layers() {
            if layer > 0 {
                if !grid.is_multiple_of(2) {
                    return err(format!("layer {layer} needs an even token grid, got {grid}"));
                }
                grid /= 2;
            }
            let dim = self.embed_dim << layer;
            let heads = self.heads[layer];
            if heads == 0 || !dim.is_multiple_of(heads) {
                return err(format!(
                    "layer {layer}: dim {dim} is not divisible by {heads} heads"
                ));
            }
            if grid > self.window_size && !grid.is_multiple_of(self.window_size) {
                return err(format!(
                    "layer {layer}: token grid {grid} is not divisible by window {}",
                    self.window_size
                ));
            }
        }
        if self.in_channels == 0 || self.mlp_ratio == 0 {
            return err("in_channels and mlp_ratio must be positive".into());
        }
        Ok(())
    }

    pub fn layer(&self, layer: usize) -> LayerGeometry {
        let grid = (self.input_side / self.patch_size) >> layer;
        let (window, shift) = if grid <= self.window_size {
            (grid, 0)
        } else {
            (self.window_size, self.window_size / 2)
        };
        LayerGeometry {
            layer,
            grid,
            window,
            shift,
            dim: self.embed_dim << layer,
            heads: self.heads[layer],
            depth: self.depths[layer],
        }
    }

    pub fn layers(&self) -> Vec<LayerGeometry> {
        (0..self.num_layers()).map(|l| self.layer(l)).collect()
    }

    pub fn final_dim(&self) -> usize {
        self.embed_dim << (self.num_layers() - 1)
    }
}
