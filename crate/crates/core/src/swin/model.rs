use std::collections::BTreeMap;

use candle_core::{DType, Device, IndexOp, Tensor, Var};
use ndarray::{Array3, Array4};

use super::config::{HeadKind, LayerGeometry, SwinConfig};
use super::trace::{AttentionTrace, BlockTrace, FeatureTrace};
use super::windowing::{
    cyclic_shift, relative_position_index, reverse_shift, shifted_window_mask, window_partition,
    window_reverse,
};
use crate::error::{Error, Result};
use crate::imaging::ModelInput;
use crate::nn::{softmax_last, to_f64_vec, Init, LayerNorm, Linear, ParamStore};

pub(crate) struct WindowAttention {
    pub(crate) qkv: Linear,
    pub(crate) proj: Linear,
    pub(crate) bias_table: Var,
    rel_index: Tensor,
    heads: usize,
    head_dim: usize,
    scale: f64,
}

impl WindowAttention {
    fn new(store: &mut ParamStore, name: &str, dim: usize, window: usize, heads: usize) -> Result<Self> {
        let span = 2 * window - 1;
        let index = relative_position_index(window);
        let n = index.len();
        Ok(Self {
            qkv: Linear::new(store, &format!("{name}.qkv"), dim, 3 * dim, true)?,
            proj: Linear::new(store, &format!("{name}.proj"), dim, dim, true)?,
            bias_table: store.create(
                &format!("{name}.relative_position_bias_table"),
                &[span * span, heads],
                Init::TruncNormal(0.02),
            )?,
            rel_index: Tensor::from_vec(index, n, store.device())?,
            heads,
            head_dim: dim / heads,
            scale: 1.0 / ((dim / heads) as f64).sqrt(),
        })
    }

    /// Relative position bias `[H, N, N]`.
    fn bias(&self, n: usize) -> Result<Tensor> {
        Ok(self
            .bias_table
            .as_tensor()
            .index_select(&self.rel_index, 0)?
            .reshape((n, n, self.heads))?
            .permute((2, 0, 1))?
            .contiguous()?)
    }

    /// `x`: `[B * nW, N, C]`. Returns the projected output and the attention weights.
    fn forward(&self, x: &Tensor, mask: Option<&Tensor>, extra: &[Tensor]) -> Result<(Tensor, Tensor)> {
        let (bw, n, c) = x.dims3()?;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape((bw, n, 3, self.heads, self.head_dim))?
            .permute((2, 0, 3, 1, 4))?
            .contiguous()?;
        let (out, weights) = scaled_attention(
            &qkv.i(0)?,
            &qkv.i(1)?,
            &qkv.i(2)?,
            self.scale,
            &self.bias(n)?,
            mask,
            extra,
        )?;
        let out = out.transpose(1, 2)?.contiguous()?.reshape((bw, n, c))?;
        Ok((self.proj.forward(&out)?, weights))
    }
}

/// `A = softmax(q k^T * scale + bias (+ mask))`, output `(A + extra) v`.
///
/// `q`, `k`, `v` are `[B * nW, H, N, d]`, `bias` is `[H, N, N]` and `mask`
/// `[nW, N, N]`. `extra` terms are added to `A` before it multiplies the
/// values; they carry gradient probes and finite-difference perturbations.
pub(crate) fn scaled_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    scale: f64,
    bias: &Tensor,
    mask: Option<&Tensor>,
    extra: &[Tensor],
) -> Result<(Tensor, Tensor)> {
    let (bw, heads, n, _) = q.dims4()?;
    let mut logits = (q * scale)?.matmul(&k.t()?.contiguous()?)?;
    logits = logits.broadcast_add(bias)?;
    if let Some(mask) = mask {
        let nw = mask.dim(0)?;
        logits = logits
            .reshape((bw / nw, nw, heads, n, n))?
            .broadcast_add(&mask.unsqueeze(1)?)?
            .reshape((bw, heads, n, n))?;
    }
    let weights = softmax_last(&logits)?;
    let mut mixed = weights.clone();
    for term in extra {
        mixed = (mixed + term)?;
    }
    Ok((mixed.matmul(&v.contiguous()?)?, weights))
}

struct SwinBlock {
    norm1: LayerNorm,
    attn: WindowAttention,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    geometry: LayerGeometry,
    index_in_layer: usize,
    shift: usize,
    mask: Option<Tensor>,
}

impl SwinBlock {
    fn shifted_slot(&self) -> bool {
        self.index_in_layer % 2 == 1
    }
}

struct PatchMerge {
    norm: LayerNorm,
    reduction: Linear,
}

impl PatchMerge {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, g, _, c) = x.dims4()?;
        if g % 2 != 0 {
            return Err(Error::Config(format!("cannot merge an odd token grid ({g})")));
        }
        let h = g / 2;
        // Channel blocks ordered (0,0), (1,0), (0,1), (1,1) by (row, col) offset.
        let merged = x
            .reshape((b, h, 2, h, 2, c))?
            .permute((0, 1, 3, 4, 2, 5))?
            .contiguous()?
            .reshape((b, h, h, 4 * c))?;
        self.reduction.forward(&self.norm.forward(&merged)?)
    }
}

struct Stage {
    merge: Option<PatchMerge>,
    blocks: Vec<SwinBlock>,
}

/// Hierarchical windowed-attention classifier.
pub struct SwinClassifier {
    config: SwinConfig,
    store: ParamStore,
    patch_proj: Linear,
    patch_norm: LayerNorm,
    stages: Vec<Stage>,
    final_norm: LayerNorm,
    head: Linear,
}

#[derive(Default)]
struct Recorder {
    record: bool,
    probes: Vec<Var>,
    weights: Vec<Tensor>,
    offsets: BTreeMap<usize, Tensor>,
    feature_probe: Option<Var>,
    features: Option<Tensor>,
}

/// Logits, positive-class score and (optionally) the recorded attention trace
/// for one input.
pub struct ClassifierOutput {
    pub logits: Vec<f64>,
    /// The positive-class logit.
    pub y1: f64,
    pub trace: AttentionTrace,
    pub final_features: Option<FeatureTrace>,
    graph: Option<RecordedGraph>,
}

struct RecordedGraph {
    y1: Tensor,
    probes: Vec<Var>,
    feature_probe: Var,
}

impl ClassifierOutput {
    pub fn has_recording(&self) -> bool {
        self.graph.is_some()
    }
}

impl SwinClassifier {
    pub fn new(config: SwinConfig, seed: u64) -> Result<Self> {
        Self::with_dtype(config, seed, DType::F32)
    }

    pub fn with_dtype(config: SwinConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed, dtype);
        let patch_in = config.in_channels * config.patch_size * config.patch_size;
        let eps = config.layer_norm_eps;
        let patch_proj = Linear::conv_default(&mut store, "patch_embed.proj", patch_in, config.embed_dim)?;
        let patch_norm = LayerNorm::new(&mut store, "patch_embed.norm", config.embed_dim, eps)?;
        let mut stages = Vec::new();
        for geometry in config.layers() {
            let l = geometry.layer;
            let merge = if l > 0 {
                let in_dim = geometry.dim / 2;
                Some(PatchMerge {
                    norm: LayerNorm::new(&mut store, &format!("layers.{l}.downsample.norm"), 4 * in_dim, eps)?,
                    reduction: Linear::new(
                        &mut store,
                        &format!("layers.{l}.downsample.reduction"),
                        4 * in_dim,
                        geometry.dim,
                        false,
                    )?,
                })
            } else {
                None
            };
            let mut blocks = Vec::new();
            for i in 0..geometry.depth {
                let name = format!("layers.{l}.blocks.{i}");
                let shift = if i % 2 == 1 { geometry.shift } else { 0 };
                let mask = if shift > 0 {
                    Some(shifted_window_mask(
                        geometry.grid,
                        geometry.window,
                        shift,
                        dtype,
                        store.device(),
                    )?)
                } else {
                    None
                };
                let hidden = geometry.dim * config.mlp_ratio;
                blocks.push(SwinBlock {
                    norm1: LayerNorm::new(&mut store, &format!("{name}.norm1"), geometry.dim, eps)?,
                    attn: WindowAttention::new(
                        &mut store,
                        &format!("{name}.attn"),
                        geometry.dim,
                        geometry.window,
                        geometry.heads,
                    )?,
                    norm2: LayerNorm::new(&mut store, &format!("{name}.norm2"), geometry.dim, eps)?,
                    fc1: Linear::new(&mut store, &format!("{name}.mlp.fc1"), geometry.dim, hidden, true)?,
                    fc2: Linear::new(&mut store, &format!("{name}.mlp.fc2"), hidden, geometry.dim, true)?,
                    geometry,
                    index_in_layer: i,
                    shift,
                    mask,
                });
            }
            stages.push(Stage { merge, blocks });
        }
        let final_dim = config.final_dim();
        let final_norm = LayerNorm::new(&mut store, "norm", final_dim, eps)?;
        let head = Linear::new(&mut store, "head", final_dim, config.num_classes(), true)?;
        Ok(Self {
            config,
            store,
            patch_proj,
            patch_norm,
            stages,
            final_norm,
            head,
        })
    }

    pub fn config(&self) -> &SwinConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    /// `[B, C, S, S]` -> `[B, G, G, embed_dim]`.
    pub fn patch_embed(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let p = self.config.patch_size;
        if h != w || h % p != 0 || c != self.config.in_channels {
            return Err(Error::Config(format!(
                "input [{b}, {c}, {h}, {w}] cannot be cut into {p}x{p} patches of {} channels",
                self.config.in_channels
            )));
        }
        let g = h / p;
        let patches = x
            .reshape((b, c, g, p, g, p))?
            .permute((0, 2, 4, 1, 3, 5))?
            .contiguous()?
            .reshape((b, g, g, c * p * p))?;
        self.patch_norm.forward(&self.patch_proj.forward(&patches)?)
    }

    fn block_forward(
        &self,
        block: &SwinBlock,
        block_index: usize,
        x: &Tensor,
        rec: &mut Recorder,
    ) -> Result<Tensor> {
        let geometry = block.geometry;
        let shortcut = x.clone();
        let mut h = block.norm1.forward(x)?;
        if block.shift > 0 {
            h = cyclic_shift(&h, block.shift)?;
        }
        let windows = window_partition(&h, geometry.window)?;
        let mut extra = Vec::new();
        if rec.record {
            let (bw, n) = (windows.dim(0)?, geometry.tokens_per_window());
            let probe = Var::zeros((bw, geometry.heads, n, n), self.dtype(), self.device())?;
            extra.push(probe.as_tensor().clone());
            rec.probes.push(probe);
        }
        if let Some(offset) = rec.offsets.get(&block_index) {
            extra.push(offset.clone());
        }
        let (out, weights) = block.attn.forward(&windows, block.mask.as_ref(), &extra)?;
        if rec.record {
            rec.weights.push(weights.detach());
        }
        let mut h = window_reverse(&out, geometry.window, geometry.grid)?;
        if block.shift > 0 {
            h = reverse_shift(&h, block.shift)?;
        }
        let x = (shortcut + h)?;
        let mlp = block
            .fc2
            .forward(&block.fc1.forward(&block.norm2.forward(&x)?)?.gelu_erf()?)?;
        Ok((x + mlp)?)
    }

    fn forward_inner(&self, x: &Tensor, rec: &mut Recorder) -> Result<Tensor> {
        let mut h = self.patch_embed(x)?;
        let mut block_index = 0;
        for stage in &self.stages {
            if let Some(merge) = &stage.merge {
                h = merge.forward(&h)?;
            }
            for block in &stage.blocks {
                h = self.block_forward(block, block_index, &h, rec)?;
                block_index += 1;
            }
        }
        if rec.record {
            let probe = Var::zeros(h.shape(), self.dtype(), self.device())?;
            rec.features = Some(h.detach());
            h = (h + probe.as_tensor())?;
            rec.feature_probe = Some(probe);
        }
        let pooled = self.final_norm.forward(&h)?.mean(1)?.mean(1)?;
        self.head.forward(&pooled)
    }

    /// Batched logits `[B, num_classes]` for `[B, C, S, S]` pixels.
    pub fn forward_batch(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_inner(x, &mut Recorder::default())
    }

    pub fn input_tensor(&self, inputs: &[&ModelInput]) -> Result<Tensor> {
        inputs_to_tensor(inputs, self.dtype(), self.device())
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        let (c, h, w) = input.pixels.dim();
        if c != self.config.in_channels || h != self.config.input_side || w != self.config.input_side {
            return Err(Error::Input(format!(
                "input shape ({c}, {h}, {w}) does not match model ({}, {s}, {s})",
                self.config.in_channels,
                s = self.config.input_side
            )));
        }
        Ok(())
    }

    /// Classifies one input; with `record` the attention trace is kept and
    /// [`Self::backward_positive_class`] can populate its gradients.
    pub fn forward_classify(&self, input: &ModelInput, record: bool) -> Result<ClassifierOutput> {
        self.check_input(input)?;
        let x = self.input_tensor(&[input])?;
        let mut rec = Recorder {
            record,
            ..Default::default()
        };
        let logits = self.forward_inner(&x, &mut rec)?;
        let positive = self.config.head.positive_index();
        let y1_tensor = logits.i((0, positive))?;
        let logits_vec = to_f64_vec(&logits)?;
        let y1 = logits_vec[positive];

        let mut trace = AttentionTrace::default();
        let mut final_features = None;
        let graph = if record {
            let mut block_index = 0;
            for stage in &self.stages {
                for block in &stage.blocks {
                    let weights = &rec.weights[block_index];
                    trace.blocks.push(BlockTrace {
                        block_index,
                        layer_index: block.geometry.layer,
                        index_in_layer: block.index_in_layer,
                        shifted: block.shifted_slot(),
                        shift: block.shift,
                        window: block.geometry.window,
                        grid: block.geometry.grid,
                        weights: tensor_to_array4(weights)?,
                        grads: None,
                    });
                    block_index += 1;
                }
            }
            let features = rec.features.take().expect("recorded");
            final_features = Some(FeatureTrace {
                features: tensor_to_array3(&features.squeeze(0)?)?,
                grads: None,
            });
            Some(RecordedGraph {
                y1: y1_tensor,
                probes: rec.probes,
                feature_probe: rec.feature_probe.expect("recorded"),
            })
        } else {
            None
        };
        Ok(ClassifierOutput {
            logits: logits_vec,
            y1,
            trace,
            final_features,
            graph,
        })
    }

    /// Fills `output.trace` gradients with dY1/dA for every block (and the
    /// final-block feature gradients). Parameters are left untouched.
    pub fn backward_positive_class(&self, output: &mut ClassifierOutput) -> Result<()> {
        let graph = output.graph.take().ok_or_else(|| {
            Error::State("backward requires a forward pass with recording enabled".into())
        })?;
        let grads = graph.y1.backward()?;
        for (block, probe) in output.trace.blocks.iter_mut().zip(&graph.probes) {
            let grad = match grads.get(probe.as_tensor()) {
                Some(g) => tensor_to_array4(g)?,
                None => Array4::zeros(block.weights.dim()),
            };
            block.grads = Some(grad);
        }
        if let Some(features) = output.final_features.as_mut() {
            features.grads = Some(match grads.get(graph.feature_probe.as_tensor()) {
                Some(g) => tensor_to_array3(&g.squeeze(0)?)?,
                None => Array3::zeros(features.features.dim()),
            });
        }
        Ok(())
    }

    /// Positive-class score with `offsets[block]` added to that block's
    /// attention weights; used for finite-difference checks.
    pub fn positive_score_with_offsets(
        &self,
        input: &ModelInput,
        offsets: &BTreeMap<usize, Array4<f64>>,
    ) -> Result<f64> {
        self.check_input(input)?;
        let mut rec = Recorder::default();
        for (&block, offset) in offsets {
            let shape: Vec<usize> = offset.shape().to_vec();
            let values: Vec<f64> = offset.iter().copied().collect();
            let t = Tensor::from_vec(values, shape, self.device())?.to_dtype(self.dtype())?;
            rec.offsets.insert(block, t);
        }
        let x = self.input_tensor(&[input])?;
        let logits = self.forward_inner(&x, &mut rec)?;
        Ok(to_f64_vec(&logits)?[self.config.head.positive_index()])
    }

    /// Logits for a list of inputs, evaluated in chunks.
    pub fn predict_logits(&self, inputs: &[&ModelInput], batch: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(batch.max(1)) {
            for input in chunk {
                self.check_input(input)?;
            }
            let logits = self.forward_batch(&self.input_tensor(chunk)?)?;
            let nc = self.config.num_classes();
            let flat = to_f64_vec(&logits)?;
            out.extend(flat.chunks(nc).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Positive-class probability from a logit vector.
    pub fn positive_probability(&self, logits: &[f64]) -> f64 {
        positive_probability(self.config.head, logits)
    }

    /// Copies every parameter except the classification head into a model with `head`.
    pub fn with_head(&self, head: HeadKind, seed: u64) -> Result<SwinClassifier> {
        let mut config = self.config.clone();
        config.head = head;
        let mut fresh = SwinClassifier::with_dtype(config, seed, self.dtype())?;
        for (name, var) in self.store.iter() {
            if name.starts_with("head.") {
                continue;
            }
            let target = fresh
                .store
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("backbone parameter '{name}' missing")))?;
            target.set(&var.as_tensor().copy()?)?;
        }
        fresh.store.reseed(seed ^ 0x5eed_4ead);
        fresh.store.reinitialize("head.weight", Init::TruncNormal(0.02))?;
        fresh.store.reinitialize("head.bias", Init::Zeros)?;
        Ok(fresh)
    }
}

pub fn positive_probability(head: HeadKind, logits: &[f64]) -> f64 {
    match head {
        HeadKind::BinaryOneLogit | HeadKind::MultiLabel => 1.0 / (1.0 + (-logits[0]).exp()),
        HeadKind::BinaryTwoLogit => {
            let m = logits[0].max(logits[1]);
            let e0 = (logits[0] - m).exp();
            let e1 = (logits[1] - m).exp();
            e1 / (e0 + e1)
        }
    }
}

pub fn inputs_to_tensor(inputs: &[&ModelInput], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Input("empty input batch".into()))?;
    let (c, h, w) = first.pixels.dim();
    let mut data = Vec::with_capacity(inputs.len() * c * h * w);
    for input in inputs {
        if input.pixels.dim() != (c, h, w) {
            return Err(Error::Input("inputs in a batch must share a shape".into()));
        }
        data.extend(input.pixels.iter().copied());
    }
    Ok(Tensor::from_vec(data, (inputs.len(), c, h, w), device)?.to_dtype(dtype)?)
}

fn tensor_to_array4(t: &Tensor) -> Result<Array4<f64>> {
    let (a, b, c, d) = t.dims4()?;
    Array4::from_shape_vec((a, b, c, d), to_f64_vec(t)?)
        .map_err(|e| Error::Input(e.to_string()))
}

fn tensor_to_array3(t: &Tensor) -> Result<Array3<f64>> {
    let (a, b, c) = t.dims3()?;
    Array3::from_shape_vec((a, b, c), to_f64_vec(t)?).map_err(|e| Error::Input(e.to_string()))
}
