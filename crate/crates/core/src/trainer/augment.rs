use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Probability of a left-right flip.
    pub flip_prob: f64,
    /// Rotation angle drawn uniformly from `[-rotation_deg, rotation_deg]`.
    pub rotation_deg: f64,
    /// Gaussian noise in normalized intensity units.
    pub noise_sigma: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            rotation_deg: 15.0,
            noise_sigma: 0.01,
        }
    }
}

impl AugmentParams {
    pub fn none() -> Self {
        Self {
            flip_prob: 0.0,
            rotation_deg: 0.0,
            noise_sigma: 0.0,
        }
    }
}

/// Reverses the column order.
pub fn flip_horizontal<T: Clone>(grid: &Array2<T>) -> Array2<T> {
    let mut out = grid.clone();
    out.invert_axis(Axis(1));
    out
}

fn source_position(r: usize, c: usize, center: f64, cos: f64, sin: f64) -> (f64, f64) {
    let (y, x) = (r as f64 - center, c as f64 - center);
    (cos * y - sin * x + center, sin * y + cos * x + center)
}

/// Rotation about the grid centre with bilinear sampling; outside samples are 0.
pub fn rotate_bilinear(grid: &Array2<f32>, degrees: f64) -> Array2<f32> {
    let (rows, cols) = grid.dim();
    let center = (rows as f64 - 1.0) / 2.0;
    let (sin, cos) = degrees.to_radians().sin_cos();
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
            0.0
        } else {
            f64::from(grid[[r as usize, c as usize]])
        }
    };
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let (sy, sx) = source_position(r, c, center, cos, sin);
        let (y0, x0) = (sy.floor(), sx.floor());
        let (fy, fx) = (sy - y0, sx - x0);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
        let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
        (top * (1.0 - fy) + bottom * fy) as f32
    })
}

/// Rotation about the grid centre with nearest-neighbour sampling; outside samples are 0.
pub fn rotate_nearest(grid: &Array2<u8>, degrees: f64) -> Array2<u8> {
    let (rows, cols) = grid.dim();
    let center = (rows as f64 - 1.0) / 2.0;
    let (sin, cos) = degrees.to_radians().sin_cos();
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let (sy, sx) = source_position(r, c, center, cos, sin);
        let (y, x) = (sy.round(), sx.round());
        if y < 0.0 || x < 0.0 || y >= rows as f64 || x >= cols as f64 {
            0
        } else {
            grid[[y as usize, x as usize]]
        }
    })
}

fn map_channels(pixels: &Array3<f32>, f: impl Fn(&Array2<f32>) -> Array2<f32>) -> Array3<f32> {
    let mut out = pixels.clone();
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(pixels.axis_iter(Axis(0))) {
        dst.assign(&f(&src.to_owned()));
    }
    out
}

/// Random flip, rotation and noise; geometric changes hit image and masks alike.
pub fn augment_with_rng(sample: &Sample, params: &AugmentParams, rng: &mut impl Rng) -> Sample {
    let mut out = sample.clone();
    if params.flip_prob > 0.0 && rng.gen::<f64>() < params.flip_prob {
        out.input.pixels.invert_axis(Axis(2));
        out.input.pixels = out.input.pixels.as_standard_layout().to_owned();
        out.input.brain_mask = flip_horizontal(&out.input.brain_mask);
        out.gt_mask = out.gt_mask.as_ref().map(flip_horizontal);
    }
    if params.rotation_deg > 0.0 {
        let angle = rng.gen_range(-params.rotation_deg..=params.rotation_deg);
        out.input.pixels = map_channels(&out.input.pixels, |g| rotate_bilinear(g, angle));
        out.input.brain_mask = rotate_nearest(&out.input.brain_mask, angle);
        out.gt_mask = out.gt_mask.as_ref().map(|m| rotate_nearest(m, angle));
    }
    if params.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, params.noise_sigma).expect("finite sigma");
        out.input
            .pixels
            .mapv_inplace(|v| (f64::from(v) + normal.sample(rng)).clamp(0.0, 1.0) as f32);
    }
    out
}

pub fn augment(sample: &Sample, params: &AugmentParams, seed: u64) -> Sample {
    augment_with_rng(sample, params, &mut ChaCha8Rng::seed_from_u64(seed))
}
