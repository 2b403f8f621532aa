//! Window partitioning and cyclic shifts on `[B, G, G, C]` token grids.
//!
//! Windows are ordered row-major over the grid and tokens row-major inside a
//! window; [`crate::maps`] relies on the same ordering when reassembling
//! per-window saliency.

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

fn grid_dims(tokens: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (b, h, w, c) = tokens.dims4()?;
    if h != w {
        return Err(Error::Input(format!("token grid must be square, got {h}x{w}")));
    }
    Ok((b, h, w, c))
}

/// `[B, G, G, C]` -> `[B * (G/w)^2, w*w, C]`.
pub fn window_partition(tokens: &Tensor, window: usize) -> Result<Tensor> {
    let (b, g, _, c) = grid_dims(tokens)?;
    if window == 0 || g % window != 0 {
        return Err(Error::Config(format!(
            "token grid {g} is not divisible by window {window}"
        )));
    }
    let n = g / window;
    Ok(tokens
        .reshape((b, n, window, n, window, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((b * n * n, window * window, c))?)
}

/// Inverse of [`window_partition`] for a `grid x grid` layout.
pub fn window_reverse(windows: &Tensor, window: usize, grid: usize) -> Result<Tensor> {
    let (bw, tokens, c) = windows.dims3()?;
    if window == 0 || !grid.is_multiple_of(window) || tokens != window * window {
        return Err(Error::Config(format!(
            "cannot reassemble windows of {tokens} tokens (window {window}) into grid {grid}"
        )));
    }
    let n = grid / window;
    if bw % (n * n) != 0 {
        return Err(Error::Input(format!(
            "{bw} windows do not form whole {grid}x{grid} grids"
        )));
    }
    let b = bw / (n * n);
    Ok(windows
        .reshape((b, n, n, window, window, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((b, grid, grid, c))?)
}

/// Rolls the grid so that token `(i + offset, j + offset)` moves to `(i, j)`.
pub fn cyclic_shift(tokens: &Tensor, offset: usize) -> Result<Tensor> {
    roll_grid(tokens, offset, -1)
}

/// Inverse of [`cyclic_shift`].
pub fn reverse_shift(tokens: &Tensor, offset: usize) -> Result<Tensor> {
    roll_grid(tokens, offset, 1)
}

fn roll_grid(tokens: &Tensor, offset: usize, direction: i32) -> Result<Tensor> {
    let (_, g, _, _) = grid_dims(tokens)?;
    let offset = offset % g.max(1);
    if offset == 0 {
        return Ok(tokens.clone());
    }
    let shift = direction * offset as i32;
    Ok(tokens.roll(shift, 1)?.roll(shift, 2)?)
}

/// Region labels of the shifted grid; tokens attend only within their region.
pub fn shift_region_ids(grid: usize, window: usize, shift: usize) -> Vec<u32> {
    let bounds = |i: usize| -> u32 {
        if i < grid - window {
            0
        } else if i < grid - shift {
            1
        } else {
            2
        }
    };
    let mut ids = vec![0u32; grid * grid];
    for r in 0..grid {
        for c in 0..grid {
            ids[r * grid + c] = bounds(r) * 3 + bounds(c);
        }
    }
    ids
}

/// Additive SW-MSA mask `[num_windows, N, N]`: 0 within a region, -100 across regions.
pub fn shifted_window_mask(
    grid: usize,
    window: usize,
    shift: usize,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let ids = shift_region_ids(grid, window, shift);
    let per_side = grid / window;
    let n = window * window;
    let mut mask = Vec::with_capacity(per_side * per_side * n * n);
    for wr in 0..per_side {
        for wc in 0..per_side {
            let window_ids: Vec<u32> = (0..n)
                .map(|t| ids[(wr * window + t / window) * grid + wc * window + t % window])
                .collect();
            for &qi in &window_ids {
                for &ki in &window_ids {
                    mask.push(if qi == ki { 0.0f64 } else { -100.0 });
                }
            }
        }
    }
    Ok(Tensor::from_vec(mask, (per_side * per_side, n, n), device)?.to_dtype(dtype)?)
}

/// Flattened `[N * N]` index into a `(2w-1)^2`-row relative bias table.
pub fn relative_position_index(window: usize) -> Vec<u32> {
    let n = window * window;
    let span = 2 * window - 1;
    let mut index = Vec::with_capacity(n * n);
    for q in 0..n {
        let (qr, qc) = (q / window, q % window);
        for k in 0..n {
            let (kr, kc) = (k / window, k % window);
            let dr = qr + window - 1 - kr;
            let dc = qc + window - 1 - kc;
            index.push((dr * span + dc) as u32);
        }
    }
    index
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(b: usize, g: usize, c: usize) -> Tensor {
        Tensor::arange(0f32, (b * g * g * c) as f32, &Device::Cpu)
            .unwrap()
            .reshape((b, g, g, c))
            .unwrap()
    }

    #[test]
    fn partition_counts() {
        let x = Tensor::zeros((1, 96, 96, 2), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(window_partition(&x, 12).unwrap().dims(), &[64, 144, 2]);
        let y = ramp(2, 4, 3);
        let single = window_partition(&y, 4).unwrap();
        assert_eq!(single.dims(), &[2, 16, 3]);
        assert_eq!(
            single.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            y.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
    }

    #[test]
    fn partition_orders_windows_row_major() {
        let x = ramp(1, 4, 1);
        let w = window_partition(&x, 2).unwrap().squeeze(2).unwrap();
        let rows = w.to_vec2::<f32>().unwrap();
        assert_eq!(rows[0], vec![0.0, 1.0, 4.0, 5.0]);
        assert_eq!(rows[1], vec![2.0, 3.0, 6.0, 7.0]);
        assert_eq!(rows[2], vec![8.0, 9.0, 12.0, 13.0]);
    }

    #[test]
    fn indivisible_grid_is_config_error() {
        let x = ramp(1, 6, 1);
        assert!(matches!(window_partition(&x, 4), Err(Error::Config(_))));
    }

    #[test]
    fn shift_moves_token_to_origin() {
        let x = ramp(1, 4, 1);
        let s = cyclic_shift(&x, 1).unwrap();
        let v = s.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v[0], 5.0);
        let back = reverse_shift(&s, 1).unwrap();
        assert_eq!(
            back.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            x.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
        let id = cyclic_shift(&x, 0).unwrap();
        assert_eq!(
            id.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            x.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
    }

    #[test]
    fn mask_blocks_cross_region_pairs() {
        let mask = shifted_window_mask(4, 2, 1, DType::F32, &Device::Cpu).unwrap();
        let m = mask.to_vec3::<f32>().unwrap();
        // Window 0 lies entirely in region 0.
        assert!(m[0].iter().flatten().all(|&v| v == 0.0));
        // The last window mixes all four corner regions: only the diagonal survives.
        for (q, row) in m[3].iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                assert_eq!(v == 0.0, q == k, "q={q} k={k}");
            }
        }
    }

    #[test]
    fn relative_index_covers_table() {
        let index = relative_position_index(3);
        assert_eq!(index.len(), 81);
        assert_eq!(*index.iter().max().unwrap(), 24);
        assert_eq!(index[0], 12); // zero offset sits at the table centre
    }
}
