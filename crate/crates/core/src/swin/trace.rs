use ndarray::{Array3, Array4, Axis};

use crate::error::{Error, Result};

/// Attention weights (and optionally their gradients) recorded for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace {
    /// Position of the block in the whole network.
    pub block_index: usize,
    pub layer_index: usize,
    /// Position inside its layer; odd positions are the SW-MSA slots.
    pub index_in_layer: usize,
    pub shifted: bool,
    /// Cyclic offset actually applied (0 when one window covers the grid).
    pub shift: usize,
    pub window: usize,
    pub grid: usize,
    /// Softmax output `[num_windows, heads, N, N]`.
    pub weights: Array4<f64>,
    /// d(positive-class score)/d(weights), same shape as `weights`.
    pub grads: Option<Array4<f64>>,
}

impl BlockTrace {
    pub fn num_windows(&self) -> usize {
        self.weights.dim().0
    }

    pub fn heads(&self) -> usize {
        self.weights.dim().1
    }

    pub fn tokens_per_window(&self) -> usize {
        self.weights.dim().2
    }

    pub fn grads(&self) -> Result<&Array4<f64>> {
        self.grads.as_ref().ok_or_else(|| {
            Error::State(format!(
                "block {} has no gradients; run the positive-class backward pass first",
                self.block_index
            ))
        })
    }

    /// Largest deviation of any attention row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        self.weights
            .sum_axis(Axis(3))
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionTrace {
    pub blocks: Vec<BlockTrace>,
}

impl AttentionTrace {
    pub fn layer_blocks(&self, layer: usize) -> Vec<&BlockTrace> {
        self.blocks.iter().filter(|b| b.layer_index == layer).collect()
    }

    pub fn num_layers(&self) -> usize {
        self.blocks.iter().map(|b| b.layer_index + 1).max().unwrap_or(0)
    }

    pub fn has_grads(&self) -> bool {
        !self.blocks.is_empty() && self.blocks.iter().all(|b| b.grads.is_some())
    }
}

/// Output tokens of the last transformer block, `[grid, grid, channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrace {
    pub features: Array3<f64>,
    pub grads: Option<Array3<f64>>,
}
