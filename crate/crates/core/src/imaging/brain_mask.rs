use std::collections::VecDeque;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::CtSlice;

/// Thresholds for the soft-tissue brain mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrainMaskParams {
    pub hu_min: f32,
    pub hu_max: f32,
    /// Half-width of the square structuring element used for closing.
    pub close_radius: usize,
    /// Pixels at or below this value are air and never part of the mask.
    pub air_hu: f32,
}

impl Default for BrainMaskParams {
    fn default() -> Self {
        Self {
            hu_min: 0.0,
            hu_max: 100.0,
            close_radius: 1,
            air_hu: -500.0,
        }
    }
}

/// Soft-tissue mask: HU threshold, closing, largest component, hole filling.
///
/// An empty mask is a valid result (e.g. an all-air slice).
pub fn compute_brain_mask(slice: &CtSlice, params: &BrainMaskParams) -> Array2<u8> {
    let hu = &slice.hu;
    let tissue = hu.mapv(|v| v >= params.hu_min && v <= params.hu_max);
    let closed = close(&tissue, params.close_radius);
    let largest = largest_component(&closed);
    let filled = fill_holes(&largest);
    ndarray::Zip::from(&filled)
        .and(hu)
        .map_collect(|&inside, &v| u8::from(inside && v > params.air_hu))
}

/// Binary closing with a `(2r+1)^2` square; pixels beyond the border count as
/// background for dilation and are ignored for erosion, so closing never
/// shrinks the input.
fn close(mask: &Array2<bool>, radius: usize) -> Array2<bool> {
    if radius == 0 {
        return mask.clone();
    }
    let dilated = sweep(mask, radius, false);
    sweep(&dilated, radius, true)
}

/// Separable min/max filter over a square window clipped to the grid.
fn sweep(mask: &Array2<bool>, radius: usize, erode: bool) -> Array2<bool> {
    let (rows, cols) = mask.dim();
    let pass = |src: &Array2<bool>, along_rows: bool| {
        Array2::from_shape_fn((rows, cols), |(r, c)| {
            let (pos, len) = if along_rows { (c, cols) } else { (r, rows) };
            let lo = pos.saturating_sub(radius);
            let hi = (pos + radius).min(len - 1);
            let mut values = (lo..=hi).map(|p| {
                if along_rows {
                    src[[r, p]]
                } else {
                    src[[p, c]]
                }
            });
            if erode {
                values.all(|v| v)
            } else {
                values.any(|v| v)
            }
        })
    };
    let horizontal = pass(mask, true);
    pass(&horizontal, false)
}

const NEIGHBOURS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

fn flood(
    mask: &Array2<bool>,
    labels: &mut Array2<u32>,
    start: (usize, usize),
    label: u32,
    target: bool,
) -> usize {
    let (rows, cols) = mask.dim();
    let mut queue = VecDeque::from([start]);
    labels[start] = label;
    let mut size = 0;
    while let Some((r, c)) = queue.pop_front() {
        size += 1;
        for (dr, dc) in NEIGHBOURS {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            if nr < 0 || nc < 0 || nr >= rows as isize || nc >= cols as isize {
                continue;
            }
            let next = (nr as usize, nc as usize);
            if mask[next] == target && labels[next] == 0 {
                labels[next] = label;
                queue.push_back(next);
            }
        }
    }
    size
}

/// Keeps the largest 4-connected foreground component; ties go to the first in raster order.
fn largest_component(mask: &Array2<bool>) -> Array2<bool> {
    let mut labels = Array2::<u32>::zeros(mask.dim());
    let mut best = (0usize, 0u32);
    let mut next_label = 1u32;
    for ((r, c), &on) in mask.indexed_iter() {
        if on && labels[[r, c]] == 0 {
            let size = flood(mask, &mut labels, (r, c), next_label, true);
            if size > best.0 {
                best = (size, next_label);
            }
            next_label += 1;
        }
    }
    labels.mapv(|l| best.0 > 0 && l == best.1)
}

/// Sets every background pixel not 4-connected to the border.
fn fill_holes(mask: &Array2<bool>) -> Array2<bool> {
    let (rows, cols) = mask.dim();
    let mut outside = Array2::<u32>::zeros(mask.dim());
    for r in 0..rows {
        for c in 0..cols {
            let on_border = r == 0 || c == 0 || r + 1 == rows || c + 1 == cols;
            if on_border && !mask[[r, c]] && outside[[r, c]] == 0 {
                flood(mask, &mut outside, (r, c), 1, false);
            }
        }
    }
    outside.mapv(|l| l == 0)
}
