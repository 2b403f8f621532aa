use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::CtSlice;
use crate::error::{Error, Result};

/// Side lengths accepted by [`resize_normalize`] must be a multiple of this.
pub const SIDE_MULTIPLE: usize = 96;

/// Linear intensity window `[center - width/2, center + width/2] -> [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub center: f32,
    pub width: f32,
}

impl WindowSpec {
    pub const BRAIN: WindowSpec = WindowSpec {
        center: 40.0,
        width: 80.0,
    };
    pub const SUBDURAL: WindowSpec = WindowSpec {
        center: 80.0,
        width: 200.0,
    };
    pub const BONE: WindowSpec = WindowSpec {
        center: 600.0,
        width: 2800.0,
    };
    pub const DEFAULT_STACK: [WindowSpec; 3] = [Self::BRAIN, Self::SUBDURAL, Self::BONE];

    pub fn new(center: f32, width: f32) -> Result<Self> {
        let spec = Self { center, width };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.width > 0.0 && self.width.is_finite() {
            Ok(())
        } else {
            Err(Error::Param(format!(
                "window width must be positive, got {}",
                self.width
            )))
        }
    }

    #[inline]
    fn map(&self, hu: f32) -> f32 {
        let low = self.center - self.width / 2.0;
        ((hu - low) / self.width).clamp(0.0, 1.0)
    }
}

pub fn apply_hu_window(hu: &Array2<f32>, spec: WindowSpec) -> Result<Array2<f32>> {
    spec.validate()?;
    Ok(hu.mapv(|v| spec.map(v)))
}

/// Channel `k` is `hu` under `specs[k]`; the order is (brain, subdural, bone).
pub fn stack_windows(slice: &CtSlice, specs: &[WindowSpec; 3]) -> Result<Array3<f32>> {
    let (rows, cols) = slice.hu.dim();
    let mut out = Array3::zeros((3, rows, cols));
    for (k, spec) in specs.iter().enumerate() {
        out.index_axis_mut(Axis(0), k)
            .assign(&apply_hu_window(&slice.hu, *spec)?);
    }
    Ok(out)
}

/// Overlap weights for resampling `n_in` cells onto `n_out` cells; each row sums to 1.
fn area_weights(n_in: usize, n_out: usize) -> Array2<f32> {
    let mut weights = Array2::zeros((n_out, n_in));
    if n_in == n_out {
        weights.diag_mut().fill(1.0);
        return weights;
    }
    let scale = n_in as f64 / n_out as f64;
    for o in 0..n_out {
        let lo = o as f64 * scale;
        let hi = lo + scale;
        let first = lo.floor() as usize;
        let last = (hi.ceil() as usize).min(n_in);
        for i in first..last {
            let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
            weights[[o, i]] = (overlap / scale) as f32;
        }
    }
    weights
}

/// Resamples a grid by exact area averaging (box filter with fractional overlap).
pub fn area_resample(grid: &Array2<f32>, rows: usize, cols: usize) -> Array2<f32> {
    let (in_rows, in_cols) = grid.dim();
    if (in_rows, in_cols) == (rows, cols) {
        return grid.clone();
    }
    let row_w = area_weights(in_rows, rows);
    let col_w = area_weights(in_cols, cols);
    row_w.dot(grid).dot(&col_w.t())
}

/// Resamples every channel to `side x side` and min-max scales the whole image to `[0, 1]`.
///
/// A constant image maps to all zeros.
pub fn resize_normalize(channels: &Array3<f32>, side: usize) -> Result<Array3<f32>> {
    if side == 0 || !side.is_multiple_of(SIDE_MULTIPLE) {
        return Err(Error::Param(format!(
            "side {side} is not a positive multiple of {SIDE_MULTIPLE}"
        )));
    }
    let n_channels = channels.dim().0;
    let mut out = Array3::zeros((n_channels, side, side));
    for (k, channel) in channels.axis_iter(Axis(0)).enumerate() {
        let resampled = area_resample(&channel.to_owned(), side, side);
        out.index_axis_mut(Axis(0), k).assign(&resampled);
    }
    let (min, max) = out
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if max > min {
        let range = max - min;
        out.mapv_inplace(|v| ((v - min) / range).clamp(0.0, 1.0));
    } else {
        out.fill(0.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{CategoricalLabel, SourceRef};
    use ndarray::{array, Array};
    use proptest::prelude::*;

    fn slice_from(hu: Array2<f32>) -> CtSlice {
        CtSlice::new(
            SourceRef {
                study_id: "s".into(),
                slice_index: 0,
            },
            hu,
            CategoricalLabel::default(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn window_examples() {
        let hu = array![[40.0f32, 0.0, 200.0]];
        let out = apply_hu_window(&hu, WindowSpec::BRAIN).unwrap();
        assert_eq!(out, array![[0.5f32, 0.0, 1.0]]);
    }

    #[test]
    fn non_positive_width_is_rejected() {
        let hu = array![[0.0f32]];
        for width in [0.0, -10.0] {
            let err = apply_hu_window(&hu, WindowSpec { center: 40.0, width }).unwrap_err();
            assert!(matches!(err, Error::Param(_)));
        }
        assert!(WindowSpec::new(40.0, 0.0).is_err());
    }

    #[test]
    fn constant_slice_gives_constant_channels() {
        let slice = slice_from(Array2::from_elem((5, 7), 65.0));
        let stacked = stack_windows(&slice, &WindowSpec::DEFAULT_STACK).unwrap();
        for channel in stacked.axis_iter(Axis(0)) {
            let first = channel[[0, 0]];
            assert!(channel.iter().all(|&v| v == first));
        }
    }

    #[test]
    fn identical_specs_give_identical_channels() {
        let hu = Array::from_shape_fn((6, 6), |(r, c)| (r * 37 + c * 11) as f32 - 50.0);
        let stacked = stack_windows(&slice_from(hu), &[WindowSpec::SUBDURAL; 3]).unwrap();
        assert_eq!(stacked.index_axis(Axis(0), 0), stacked.index_axis(Axis(0), 1));
        assert_eq!(stacked.index_axis(Axis(0), 1), stacked.index_axis(Axis(0), 2));
    }

    #[test]
    fn brain_channel_of_hu_ramp_is_linear() {
        // 0..=80 HU across 81 columns under (40, 80) maps column c to c/80.
        let hu = Array::from_shape_fn((2, 81), |(_, c)| c as f32);
        let stacked = stack_windows(&slice_from(hu), &WindowSpec::DEFAULT_STACK).unwrap();
        for c in 0..81 {
            assert!((stacked[[0, 1, c]] - c as f32 / 80.0).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_rejects_bad_side() {
        let x = Array3::zeros((3, 96, 96));
        assert!(matches!(resize_normalize(&x, 100), Err(Error::Param(_))));
        assert!(matches!(resize_normalize(&x, 0), Err(Error::Param(_))));
    }

    #[test]
    fn resize_same_side_unit_range_is_identity() {
        let x = Array::from_shape_fn((3, 96, 96), |(k, r, c)| ((k + r * 3 + c * 7) % 11) as f32 / 10.0);
        let out = resize_normalize(&x, 96).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let out = resize_normalize(&Array3::from_elem((3, 192, 192), 0.3), 96).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkerboard_area_average_is_uniform_half() {
        let board = Array::from_shape_fn((768, 768), |(r, c)| ((r + c) % 2) as f32);
        let down = area_resample(&board, 384, 384);
        assert!(down.iter().all(|&v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn fractional_area_weights_sum_to_one() {
        let w = area_weights(7, 3);
        for row in w.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn window_is_monotone(mut values in prop::collection::vec(-2000.0f32..4000.0, 2..64),
                              center in -500.0f32..1000.0, width in 1.0f32..3000.0) {
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = values.len();
            let hu = Array2::from_shape_vec((1, n), values).unwrap();
            let out = apply_hu_window(&hu, WindowSpec { center, width }).unwrap();
            for pair in out.row(0).to_vec().windows(2) {
                prop_assert!(pair[0] <= pair[1]);
            }
            prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
