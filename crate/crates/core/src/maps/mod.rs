//! Saliency maps from recorded attention.
//!
//! For every W-MSA/SW-MSA block pair of a layer the head-combined attention
//! weights are averaged over queries, reassembled from windows into the token
//! grid, the shifted block's grid is rolled back, and the two grids are
//! multiplied. Pair maps of a layer are averaged, bilinearly upsampled to the
//! image and multiplied across the selected layers.
//!
//! Head combination is either a plain mean (SAM) or a mean in which each head
//! is scaled by the Frobenius norm of the positive-class gradient with respect
//! to its attention weights (HGI-SAM).

mod grad_cam;

use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::arrays::write_array;
use crate::error::{Error, Result};
use crate::imaging::{ModelInput, SourceRef};
use crate::swin::{AttentionTrace, BlockTrace, HeadKind, SwinClassifier};

pub use grad_cam::{grad_cam_from_features, grad_cam_map};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapMethod {
    HgiSam,
    Sam,
    GradCam,
}

impl MapMethod {
    pub fn tag(self) -> &'static str {
        match self {
            MapMethod::HgiSam => "HGI-SAM",
            MapMethod::Sam => "SAM",
            MapMethod::GradCam => "Grad-CAM",
        }
    }
}

/// How per-head gradient norms pool over windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormPooling {
    /// One norm per head over all windows of the block.
    #[default]
    Pooled,
    /// One norm per head and window.
    PerWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadWeighting {
    Mean,
    GradientNorm(NormPooling),
}

/// Token-resolution map of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMap {
    pub values: Array2<f64>,
    pub layer_index: usize,
    /// Index of the W-MSA/SW-MSA pair inside the layer; `None` for a layer average.
    pub block_pair_index: Option<usize>,
}

/// Image-resolution map of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMap {
    pub values: Array2<f64>,
    pub layer_index: usize,
}

/// Max-normalized saliency in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedMap {
    pub values: Array2<f64>,
    pub method: MapMethod,
    /// Zero-based layer indices that were multiplied (empty for Grad-CAM).
    pub layers_used: Vec<usize>,
    /// Maximum before normalization.
    pub normalization_max: f64,
    pub source: Option<SourceRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedMapMetadata {
    pub method: MapMethod,
    pub layers_used: Vec<usize>,
    pub normalization_max: f64,
    pub source: Option<SourceRef>,
    pub side: usize,
}

impl FusedMap {
    /// Divides by the maximum; an all-zero (or non-positive) map stays zero.
    pub fn normalized(
        mut values: Array2<f64>,
        method: MapMethod,
        layers_used: Vec<usize>,
        source: Option<SourceRef>,
    ) -> Self {
        let max = values.iter().copied().fold(0.0f64, f64::max);
        if max > 0.0 {
            values.mapv_inplace(|v| (v / max).clamp(0.0, 1.0));
        } else {
            values.fill(0.0);
        }
        Self {
            values,
            method,
            layers_used,
            normalization_max: max,
            source,
        }
    }

    pub fn side(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn metadata(&self) -> FusedMapMetadata {
        FusedMapMetadata {
            method: self.method,
            layers_used: self.layers_used.clone(),
            normalization_max: self.normalization_max,
            source: self.source.clone(),
            side: self.side(),
        }
    }

    /// Writes `<stem>.arr` (float32 grid) and `<stem>.json` (metadata).
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        write_array(&dir.join(format!("{stem}.arr")), &self.values.mapv(|v| v as f32))?;
        let meta = serde_json::to_string_pretty(&self.metadata())?;
        let path = dir.join(format!("{stem}.json"));
        std::fs::write(&path, meta).map_err(|e| Error::io(&path, e))
    }

    pub fn import(dir: &Path, stem: &str) -> Result<Self> {
        let meta_path = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: FusedMapMetadata = serde_json::from_str(&text)?;
        let values = crate::arrays::read_map_f32(&dir.join(format!("{stem}.arr")))?.mapv(f64::from);
        Ok(Self {
            values,
            method: meta.method,
            layers_used: meta.layers_used,
            normalization_max: meta.normalization_max,
            source: meta.source,
        })
    }
}

/// Frobenius norm of each head's gradient, all windows pooled.
pub fn head_gradient_norms(block: &BlockTrace) -> Result<Vec<f64>> {
    let grads = block.grads()?;
    Ok(grads
        .axis_iter(Axis(1))
        .map(|head| head.iter().map(|g| g * g).sum::<f64>().sqrt())
        .collect())
}

/// Per-window variant: `[num_windows, heads]`.
pub fn head_gradient_norms_per_window(block: &BlockTrace) -> Result<Array2<f64>> {
    let grads = block.grads()?;
    let (nw, heads, _, _) = grads.dim();
    Ok(Array2::from_shape_fn((nw, heads), |(w, h)| {
        grads
            .index_axis(Axis(0), w)
            .index_axis(Axis(0), h)
            .iter()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }))
}

/// `(1/H) * sum_h scale[w, h] * A[w, h]` for every window `w`.
pub fn weighted_head_mean(block: &BlockTrace, scale: &Array2<f64>) -> Result<Array3<f64>> {
    let (nw, heads, n, _) = block.weights.dim();
    if scale.dim() != (nw, heads) {
        return Err(Error::Input(format!(
            "head scale shape {:?} does not match ({nw}, {heads})",
            scale.dim()
        )));
    }
    let mut out = Array3::zeros((nw, n, n));
    for w in 0..nw {
        let mut acc = out.index_axis_mut(Axis(0), w);
        for h in 0..heads {
            let s = scale[[w, h]];
            acc.scaled_add(s, &block.weights.slice(ndarray::s![w, h, .., ..]));
        }
        acc.mapv_inplace(|v| v / heads as f64);
    }
    Ok(out)
}

/// HGI block weight: heads scaled by their gradient norms, then averaged.
pub fn hgi_block_weight(block: &BlockTrace, pooling: NormPooling) -> Result<Array3<f64>> {
    let scale = match pooling {
        NormPooling::Pooled => {
            let norms = head_gradient_norms(block)?;
            Array2::from_shape_fn((block.num_windows(), block.heads()), |(_, h)| norms[h])
        }
        NormPooling::PerWindow => head_gradient_norms_per_window(block)?,
    };
    weighted_head_mean(block, &scale)
}

/// Plain mean over heads.
pub fn sam_block_weight(block: &BlockTrace) -> Array3<f64> {
    block
        .weights
        .mean_axis(Axis(1))
        .expect("blocks have at least one head")
}

pub fn block_weight(block: &BlockTrace, weighting: HeadWeighting) -> Result<Array3<f64>> {
    match weighting {
        HeadWeighting::Mean => Ok(sam_block_weight(block)),
        HeadWeighting::GradientNorm(pooling) => hgi_block_weight(block, pooling),
    }
}

/// Column means: `out[w, k]` is the average attention key `k` receives in window `w`.
pub fn query_average(weights: &Array3<f64>) -> Array2<f64> {
    weights.mean_axis(Axis(1)).expect("windows have at least one query")
}

/// Reassembles per-window token saliency `[num_windows, window^2]` into a `grid x grid` map.
pub fn window_reverse_map(saliency: &Array2<f64>, window: usize, grid: usize) -> Result<Array2<f64>> {
    let (nw, n) = saliency.dim();
    let per_side = grid.checked_div(window).unwrap_or(0);
    if window == 0 || !grid.is_multiple_of(window) || n != window * window || nw != per_side * per_side {
        return Err(Error::Config(format!(
            "{nw} windows of {n} tokens do not tile a {grid}x{grid} grid with window {window}"
        )));
    }
    Ok(Array2::from_shape_fn((grid, grid), |(r, c)| {
        let w = (r / window) * per_side + c / window;
        let t = (r % window) * window + c % window;
        saliency[[w, t]]
    }))
}

/// Undoes a cyclic shift: entry `(i, j)` of the shifted grid returns to `(i + shift, j + shift)`.
pub fn reverse_shift_map(map: &Array2<f64>, shift: usize) -> Array2<f64> {
    let (rows, cols) = map.dim();
    if shift == 0 || rows == 0 {
        return map.clone();
    }
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        map[[(r + rows - shift % rows) % rows, (c + cols - shift % cols) % cols]]
    })
}

fn block_grid_map(block: &BlockTrace, weighting: HeadWeighting) -> Result<Array2<f64>> {
    let saliency = query_average(&block_weight(block, weighting)?);
    let grid = window_reverse_map(&saliency, block.window, block.grid)?;
    Ok(reverse_shift_map(&grid, block.shift))
}

/// Token-resolution map of one W-MSA/SW-MSA pair: the elementwise product of
/// the two window-reversed saliency grids, the shifted one rolled back.
pub fn layer_map(regular: &BlockTrace, shifted: &BlockTrace, weighting: HeadWeighting) -> Result<BlockMap> {
    if regular.layer_index != shifted.layer_index
        || !regular.index_in_layer.is_multiple_of(2)
        || shifted.index_in_layer != regular.index_in_layer + 1
        || regular.grid != shifted.grid
    {
        return Err(Error::Usage(format!(
            "blocks {} and {} are not a consecutive regular/shifted pair of one layer",
            regular.block_index, shifted.block_index
        )));
    }
    let values = block_grid_map(regular, weighting)? * block_grid_map(shifted, weighting)?;
    Ok(BlockMap {
        values,
        layer_index: regular.layer_index,
        block_pair_index: Some(regular.index_in_layer / 2),
    })
}

/// Mean of a layer's pair maps.
pub fn layer_aggregate(blocks: &[&BlockTrace], weighting: HeadWeighting) -> Result<BlockMap> {
    if blocks.is_empty() || !blocks.len().is_multiple_of(2) {
        return Err(Error::Config(format!(
            "a layer needs an even, non-zero number of blocks, got {}",
            blocks.len()
        )));
    }
    let pairs = blocks
        .chunks(2)
        .map(|pair| layer_map(pair[0], pair[1], weighting))
        .collect::<Result<Vec<_>>>()?;
    mean_block_maps(&pairs)
}

pub fn mean_block_maps(maps: &[BlockMap]) -> Result<BlockMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Usage("no pair maps to average".into()))?;
    let mut sum = Array2::<f64>::zeros(first.values.dim());
    for map in maps {
        if map.values.dim() != sum.dim() || map.layer_index != first.layer_index {
            return Err(Error::Usage("pair maps must come from the same layer".into()));
        }
        sum += &map.values;
    }
    Ok(BlockMap {
        values: sum / maps.len() as f64,
        layer_index: first.layer_index,
        block_pair_index: None,
    })
}

/// Bilinear resampling with aligned corners: output corners sample input corners exactly.
pub fn bilinear_resize(map: &Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    let (in_rows, in_cols) = map.dim();
    if (in_rows, in_cols) == (rows, cols) {
        return map.clone();
    }
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out <= 1 || n_in <= 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (pos.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let row_coords: Vec<_> = (0..rows).map(|r| coord(r, rows, in_rows)).collect();
    let col_coords: Vec<_> = (0..cols).map(|c| coord(c, cols, in_cols)).collect();
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let (r0, r1, fr) = row_coords[r];
        let (c0, c1, fc) = col_coords[c];
        let top = map[[r0, c0]] * (1.0 - fc) + map[[r0, c1]] * fc;
        let bottom = map[[r1, c0]] * (1.0 - fc) + map[[r1, c1]] * fc;
        top * (1.0 - fr) + bottom * fr
    })
}

pub fn layer_to_image(map: &BlockMap, side: usize) -> LayerMap {
    LayerMap {
        values: bilinear_resize(&map.values, side, side),
        layer_index: map.layer_index,
    }
}

/// Elementwise product of the selected layers, max-normalized.
pub fn fuse(maps: &[LayerMap], layers_used: &[usize], method: MapMethod) -> Result<FusedMap> {
    if layers_used.is_empty() {
        return Err(Error::Usage("at least one layer must be fused".into()));
    }
    let mut product: Option<Array2<f64>> = None;
    for &layer in layers_used {
        let map = maps
            .iter()
            .find(|m| m.layer_index == layer)
            .ok_or_else(|| Error::Usage(format!("no map for layer {layer}")))?;
        product = Some(match product {
            None => map.values.clone(),
            Some(acc) => {
                if acc.dim() != map.values.dim() {
                    return Err(Error::Input("layer maps must share the image size".into()));
                }
                acc * &map.values
            }
        });
    }
    Ok(FusedMap::normalized(
        product.expect("non-empty"),
        method,
        layers_used.to_vec(),
        None,
    ))
}

/// Layer maps at image resolution for every layer of a trace.
pub fn layer_maps(trace: &AttentionTrace, weighting: HeadWeighting, side: usize) -> Result<Vec<LayerMap>> {
    (0..trace.num_layers())
        .map(|layer| {
            let blocks = trace.layer_blocks(layer);
            Ok(layer_to_image(&layer_aggregate(&blocks, weighting)?, side))
        })
        .collect()
}

/// Settings for turning traces into fused maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    /// Zero-based layers multiplied for HGI-SAM (layers 1-3).
    pub hgi_layers: Vec<usize>,
    /// Zero-based layers multiplied for SAM (all four layers).
    pub sam_layers: Vec<usize>,
    pub pooling: NormPooling,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            hgi_layers: vec![0, 1, 2],
            sam_layers: vec![0, 1, 2, 3],
            pooling: NormPooling::Pooled,
        }
    }
}

pub fn hgi_sam_map(trace: &AttentionTrace, config: &MapConfig, side: usize) -> Result<FusedMap> {
    let maps = layer_maps(trace, HeadWeighting::GradientNorm(config.pooling), side)?;
    fuse(&maps, &config.hgi_layers, MapMethod::HgiSam)
}

pub fn sam_map(trace: &AttentionTrace, config: &MapConfig, side: usize) -> Result<FusedMap> {
    let maps = layer_maps(trace, HeadWeighting::Mean, side)?;
    fuse(&maps, &config.sam_layers, MapMethod::Sam)
}

/// HGI-SAM, SAM and Grad-CAM maps of one input from a single recorded pass.
///
/// HGI-SAM needs the two-logit head: the positive-class logit of a single
/// sigmoid output is not a class-contrastive score.
pub fn extract_maps(
    model: &SwinClassifier,
    input: &ModelInput,
    methods: &[MapMethod],
    config: &MapConfig,
) -> Result<Vec<FusedMap>> {
    if methods.contains(&MapMethod::HgiSam) && model.config().head != HeadKind::BinaryTwoLogit {
        return Err(Error::Usage(format!(
            "HGI-SAM requires a two-logit classifier, got {:?}",
            model.config().head
        )));
    }
    let needs_grads = methods.iter().any(|m| *m != MapMethod::Sam);
    let mut out = model.forward_classify(input, true)?;
    if needs_grads {
        model.backward_positive_class(&mut out)?;
    }
    let side = input.side();
    methods
        .iter()
        .map(|method| {
            let mut map = match method {
                MapMethod::HgiSam => hgi_sam_map(&out.trace, config, side)?,
                MapMethod::Sam => sam_map(&out.trace, config, side)?,
                MapMethod::GradCam => grad_cam_from_features(
                    out.final_features.as_ref().expect("recorded forward keeps features"),
                    side,
                )?,
            };
            map.source = Some(input.source.clone());
            Ok(map)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array4};

    fn block(weights: Array4<f64>, grads: Option<Array4<f64>>, layer: usize, index: usize, shift: usize, window: usize, grid: usize) -> BlockTrace {
        BlockTrace {
            block_index: layer * 10 + index,
            layer_index: layer,
            index_in_layer: index,
            shifted: index % 2 == 1,
            shift,
            window,
            grid,
            weights,
            grads,
        }
    }

    #[test]
    fn norms_of_unit_gradients() {
        let b = block(Array4::zeros((1, 3, 2, 2)), Some(Array4::ones((1, 3, 2, 2))), 0, 0, 0, 1, 1);
        assert_eq!(head_gradient_norms(&b).unwrap(), vec![2.0, 2.0, 2.0]);
        let z = block(Array4::zeros((1, 2, 2, 2)), Some(Array4::zeros((1, 2, 2, 2))), 0, 0, 0, 1, 1);
        assert_eq!(head_gradient_norms(&z).unwrap(), vec![0.0, 0.0]);
        let missing = block(Array4::zeros((1, 2, 2, 2)), None, 0, 0, 0, 1, 1);
        assert!(matches!(head_gradient_norms(&missing), Err(Error::State(_))));
    }

    #[test]
    fn hgi_hand_example() {
        // H = 2, scalar attention entries (1, 3), gradients whose norms are (2, 4).
        let weights = Array4::from_shape_vec((1, 2, 1, 1), vec![1.0, 3.0]).unwrap();
        let grads = Array4::from_shape_vec((1, 2, 1, 1), vec![-2.0, 4.0]).unwrap();
        let b = block(weights, Some(grads), 0, 0, 0, 1, 1);
        let w = hgi_block_weight(&b, NormPooling::Pooled).unwrap();
        assert_eq!(w[[0, 0, 0]], 7.0);
    }

    #[test]
    fn equal_norms_scale_the_plain_mean() {
        let weights = Array4::from_shape_fn((2, 3, 4, 4), |(w, h, q, k)| ((w + 2 * h + 3 * q + 5 * k) % 7) as f64 / 7.0);
        let b = block(weights, Some(Array4::from_elem((2, 3, 4, 4), 0.5)), 0, 0, 0, 2, 4);
        let g = head_gradient_norms(&b).unwrap()[0];
        let hgi = hgi_block_weight(&b, NormPooling::Pooled).unwrap();
        let sam = sam_block_weight(&b);
        for (x, y) in hgi.iter().zip(sam.iter()) {
            assert!((x - g * y).abs() < 1e-12);
        }
        let zero = block(b.weights.clone(), Some(Array4::zeros((2, 3, 4, 4))), 0, 0, 0, 2, 4);
        assert!(hgi_block_weight(&zero, NormPooling::Pooled).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sam_single_head_is_identity_and_two_heads_average() {
        let a = Array4::from_shape_fn((1, 1, 3, 3), |(_, _, q, k)| (q * 3 + k) as f64);
        let b = block(a.clone(), None, 0, 0, 0, 1, 1);
        assert_eq!(sam_block_weight(&b), a.index_axis(Axis(1), 0).to_owned());
        // Heads a and 2u - a average to the uniform u.
        let u = 1.0 / 3.0;
        let head0 = Array2::from_shape_fn((3, 3), |(q, k)| if q == k { 0.5 } else { 0.25 });
        let mut two = Array4::zeros((1, 2, 3, 3));
        two.slice_mut(ndarray::s![0, 0, .., ..]).assign(&head0);
        two.slice_mut(ndarray::s![0, 1, .., ..]).assign(&head0.mapv(|v| 2.0 * u - v));
        let mean = sam_block_weight(&block(two, None, 0, 0, 0, 1, 1));
        assert!(mean.iter().all(|&v| (v - u).abs() < 1e-15));
    }

    #[test]
    fn query_average_examples() {
        let w = Array3::from_shape_vec((1, 2, 2), vec![1.0, 0.0, 0.5, 0.5]).unwrap();
        assert_eq!(query_average(&w), array![[0.75, 0.25]]);
        let uniform = Array3::from_elem((2, 4, 4), 0.25);
        assert!(query_average(&uniform).iter().all(|&v| v == 0.25));
        let swapped = Array3::from_shape_vec((1, 2, 2), vec![0.0, 1.0, 0.5, 0.5]).unwrap();
        assert_eq!(query_average(&swapped), array![[0.25, 0.75]]);
    }

    #[test]
    fn shifted_ones_leave_regular_map() {
        let regular = block(
            Array4::from_shape_fn((4, 1, 4, 4), |(w, _, q, k)| ((w + q * k) % 5 + 1) as f64),
            None, 1, 0, 0, 2, 4,
        );
        // All-ones attention gives column means of one.
        let shifted = block(Array4::ones((4, 1, 4, 4)), None, 1, 1, 1, 2, 4);
        let pair = layer_map(&regular, &shifted, HeadWeighting::Mean).unwrap();
        let alone = window_reverse_map(&query_average(&sam_block_weight(&regular)), 2, 4).unwrap();
        assert_eq!(pair.values, alone);
    }

    #[test]
    fn mismatched_pair_is_usage_error() {
        let a = block(Array4::ones((1, 1, 1, 1)), None, 0, 0, 0, 1, 1);
        let b = block(Array4::ones((1, 1, 1, 1)), None, 1, 1, 0, 1, 1);
        assert!(matches!(layer_map(&a, &b, HeadWeighting::Mean), Err(Error::Usage(_))));
        assert!(matches!(layer_map(&b, &a, HeadWeighting::Mean), Err(Error::Usage(_))));
    }

    #[test]
    fn aggregate_needs_even_blocks() {
        let a = block(Array4::ones((1, 1, 1, 1)), None, 0, 0, 0, 1, 1);
        assert!(matches!(layer_aggregate(&[&a], HeadWeighting::Mean), Err(Error::Config(_))));
    }

    #[test]
    fn bilinear_examples() {
        let m = array![[0.0, 1.0], [0.0, 1.0]];
        let up = bilinear_resize(&m, 4, 4);
        for row in up.rows() {
            let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
            for (v, e) in row.iter().zip(expected) {
                assert!((v - e).abs() < 1e-15);
            }
        }
        let c = Array2::from_elem((3, 3), 0.7);
        assert!(bilinear_resize(&c, 9, 9).iter().all(|&v| (v - 0.7).abs() < 1e-15));
        assert_eq!(bilinear_resize(&m, 2, 2), m);
    }

    #[test]
    fn fuse_examples() {
        let a = LayerMap { values: array![[0.0, 2.0], [1.0, 4.0]], layer_index: 0 };
        let single = fuse(std::slice::from_ref(&a), &[0], MapMethod::Sam).unwrap();
        assert_eq!(single.values, array![[0.0, 0.5], [0.25, 1.0]]);
        assert_eq!(single.normalization_max, 4.0);
        let zero = LayerMap { values: Array2::zeros((2, 2)), layer_index: 1 };
        assert!(fuse(&[a.clone(), zero], &[0, 1], MapMethod::Sam).unwrap().is_zero());
        let c1 = LayerMap { values: Array2::from_elem((2, 2), 0.3), layer_index: 0 };
        let c2 = LayerMap { values: Array2::from_elem((2, 2), 5.0), layer_index: 1 };
        let f = fuse(&[c1, c2], &[0, 1], MapMethod::HgiSam).unwrap();
        assert!(f.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(matches!(fuse(&[a], &[], MapMethod::Sam), Err(Error::Usage(_))));
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let map = FusedMap::normalized(array![[0.0, 2.0], [1.0, 4.0]], MapMethod::HgiSam, vec![0, 1, 2], None);
        map.export(dir.path(), "m").unwrap();
        let back = FusedMap::import(dir.path(), "m").unwrap();
        assert_eq!(back, map);
    }
}
