//! Fully supervised encoder-decoder segmentation baseline.

use candle_core::{DType, Device, Tensor, Var};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ModelInput;
use crate::nn::{to_f64_vec, Init, ParamStore};
use crate::swin::inputs_to_tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Number of 2x downsamplings in the encoder.
    pub hierarchies: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub input_side: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            hierarchies: 4,
            base_channels: 16,
            in_channels: 3,
            out_channels: 1,
            input_side: 384,
        }
    }
}

impl UNetConfig {
    /// Small variant for 96-pixel synthetic slices.
    pub fn desk() -> Self {
        Self {
            base_channels: 4,
            input_side: 96,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let factor = 1usize << self.hierarchies;
        if self.hierarchies == 0 || self.base_channels == 0 || self.in_channels == 0 {
            return Err(Error::Config("U-Net needs at least one hierarchy and channel".into()));
        }
        if self.out_channels != 1 {
            return Err(Error::Config("U-Net produces a single foreground channel".into()));
        }
        if self.input_side == 0 || !self.input_side.is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "input side {} is not divisible by 2^{} = {factor}",
                self.input_side, self.hierarchies
            )));
        }
        Ok(())
    }

    /// Feature-grid side at each encoder level, finest first.
    pub fn encoder_sides(&self) -> Vec<usize> {
        (0..=self.hierarchies).map(|l| self.input_side >> l).collect()
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Clone)]
struct Conv {
    weight: Var,
    bias: Var,
    padding: usize,
}

impl Conv {
    fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<Self> {
        Ok(Self {
            weight: store.create(&format!("{name}.weight"), &[c_out, c_in, k, k], Init::KaimingNormal(c_in * k * k))?,
            bias: store.create(&format!("{name}.bias"), &[c_out], Init::Zeros)?,
            padding: k / 2,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, 1, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.as_tensor().reshape((1, (), 1, 1))?)?)
    }
}

/// Per-sample, per-channel standardization over the spatial grid with an affine map.
#[derive(Clone)]
struct InstanceNorm {
    gamma: Var,
    beta: Var,
}

impl InstanceNorm {
    const EPS: f64 = 1e-5;

    fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.create(&format!("{name}.weight"), &[channels], Init::Ones)?,
            beta: store.create(&format!("{name}.bias"), &[channels], Init::Zeros)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let centered = x.broadcast_sub(&x.mean_keepdim((2, 3))?)?;
        let var = centered.sqr()?.mean_keepdim((2, 3))?;
        let normed = centered.broadcast_div(&(var + Self::EPS)?.sqrt()?)?;
        let gamma = self.gamma.as_tensor().reshape((1, (), 1, 1))?;
        let beta = self.beta.as_tensor().reshape((1, (), 1, 1))?;
        Ok(normed.broadcast_mul(&gamma)?.broadcast_add(&beta)?)
    }
}

#[derive(Clone)]
struct DoubleConv {
    first: Conv,
    first_norm: InstanceNorm,
    second: Conv,
    second_norm: InstanceNorm,
}

impl DoubleConv {
    fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            first: Conv::new(store, &format!("{name}.conv1"), c_in, c_out, 3)?,
            first_norm: InstanceNorm::new(store, &format!("{name}.norm1"), c_out)?,
            second: Conv::new(store, &format!("{name}.conv2"), c_out, c_out, 3)?,
            second_norm: InstanceNorm::new(store, &format!("{name}.norm2"), c_out)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.first_norm.forward(&self.first.forward(x)?)?.relu()?;
        Ok(self.second_norm.forward(&self.second.forward(&h)?)?.relu()?)
    }
}

/// Stride-2 `2 x 2` transposed convolution.
#[derive(Clone)]
struct UpConv {
    weight: Var,
    bias: Var,
}

impl UpConv {
    fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            weight: store.create(&format!("{name}.weight"), &[c_in, c_out, 2, 2], Init::KaimingNormal(c_in))?,
            bias: store.create(&format!("{name}.bias"), &[c_out], Init::Zeros)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(self.weight.as_tensor(), 0, 0, 2, 1)?;
        Ok(y.broadcast_add(&self.bias.as_tensor().reshape((1, (), 1, 1))?)?)
    }
}

/// Encoder-decoder with instance-normalized double convolutions, concatenated
/// skip connections and a sigmoid output.
pub struct UNet {
    config: UNetConfig,
    store: ParamStore,
    encoders: Vec<DoubleConv>,
    ups: Vec<UpConv>,
    decoders: Vec<DoubleConv>,
    output: Conv,
}

impl UNet {
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        Self::with_dtype(config, seed, DType::F32)
    }

    pub fn with_dtype(config: UNetConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed, dtype);
        let mut encoders = Vec::new();
        let mut c_in = config.in_channels;
        for level in 0..=config.hierarchies {
            let c_out = config.channels(level);
            encoders.push(DoubleConv::new(&mut store, &format!("encoder.{level}"), c_in, c_out)?);
            c_in = c_out;
        }
        let mut ups = Vec::new();
        let mut decoders = Vec::new();
        for level in (0..config.hierarchies).rev() {
            let c = config.channels(level);
            ups.push(UpConv::new(&mut store, &format!("up.{level}"), 2 * c, c)?);
            decoders.push(DoubleConv::new(&mut store, &format!("decoder.{level}"), 2 * c, c)?);
        }
        let output = Conv::new(&mut store, "output", config.channels(0), config.out_channels, 1)?;
        Ok(Self {
            config,
            store,
            encoders,
            ups,
            decoders,
            output,
        })
    }

    pub fn config(&self) -> &UNetConfig {
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

    /// Pre-sigmoid scores `[B, 1, S, S]`.
    pub fn forward_logits(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.config.in_channels || h != w || h % (1 << self.config.hierarchies) != 0 {
            return Err(Error::Config(format!(
                "input [{c}, {h}, {w}] is incompatible with {} channels and {} hierarchies",
                self.config.in_channels, self.config.hierarchies
            )));
        }
        let mut skips = Vec::new();
        let mut h = x.clone();
        for (level, encoder) in self.encoders.iter().enumerate() {
            if level > 0 {
                h = h.max_pool2d(2)?;
            }
            h = encoder.forward(&h)?;
            skips.push(h.clone());
        }
        skips.pop();
        for (up, decoder) in self.ups.iter().zip(&self.decoders) {
            let skip = skips.pop().expect("one skip per decoder");
            h = up.forward(&h)?;
            h = decoder.forward(&Tensor::cat(&[&skip, &h], 1)?)?;
        }
        self.output.forward(&h)
    }

    /// Foreground probabilities `[B, 1, S, S]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::ops::sigmoid(&self.forward_logits(x)?)?)
    }

    /// Probability grid for one input.
    pub fn predict(&self, input: &ModelInput) -> Result<Array2<f64>> {
        Ok(self.predict_batch(&[input], 1)?.remove(0))
    }

    pub fn predict_batch(&self, inputs: &[&ModelInput], batch: usize) -> Result<Vec<Array2<f64>>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(batch.max(1)) {
            for input in chunk {
                let (c, h, w) = input.pixels.dim();
                if c != self.config.in_channels || h != self.config.input_side || w != self.config.input_side {
                    return Err(Error::Input(format!(
                        "input shape ({c}, {h}, {w}) does not match U-Net side {}",
                        self.config.input_side
                    )));
                }
            }
            let x = inputs_to_tensor(chunk, self.dtype(), self.device())?;
            let probs = to_f64_vec(&self.forward(&x)?)?;
            let side = self.config.input_side;
            for values in probs.chunks(side * side) {
                out.push(Array2::from_shape_vec((side, side), values.to_vec()).expect("square output"));
            }
        }
        Ok(out)
    }
}

/// `(1 - soft Dice) + binary cross-entropy` with Dice smoothing of 1.
///
/// `pred` holds probabilities and `gt` binary targets of the same shape; the
/// Dice term pools every element of the batch.
pub fn dice_ce_loss(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    if pred.dims() != gt.dims() {
        return Err(Error::Input(format!(
            "prediction shape {:?} does not match target {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let eps = 1.0;
    let intersection = (pred * gt)?.sum_all()?;
    let total = (pred.sum_all()? + gt.sum_all()?)?;
    let dice = ((intersection * 2.0)? + eps)?.div(&(total + eps)?)?;
    let clamped = pred.clamp(1e-7, 1.0 - 1e-7)?;
    let ones = gt.ones_like()?;
    let bce = ((gt * clamped.log()?)? + ((&ones - gt)? * (&ones - &clamped)?.log()?)?)?
        .mean_all()?
        .neg()?;
    Ok(((dice.neg()? + 1.0)? + bce)?)
}

/// Same loss from logits, computed stably for training.
pub fn dice_ce_loss_from_logits(logits: &Tensor, gt: &Tensor) -> Result<Tensor> {
    if logits.dims() != gt.dims() {
        return Err(Error::Input(format!(
            "prediction shape {:?} does not match target {:?}",
            logits.dims(),
            gt.dims()
        )));
    }
    let pred = candle_nn::ops::sigmoid(logits)?;
    let eps = 1.0;
    let intersection = (&pred * gt)?.sum_all()?;
    let total = (pred.sum_all()? + gt.sum_all()?)?;
    let dice = ((intersection * 2.0)? + eps)?.div(&(total + eps)?)?;
    // max(z, 0) - z*y + log(1 + exp(-|z|))
    let bce = ((logits.relu()? - (logits * gt)?)? + (logits.abs()?.neg()?.exp()? + 1.0)?.log()?)?.mean_all()?;
    Ok(((dice.neg()? + 1.0)? + bce)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cpu() -> Device {
        Device::Cpu
    }

    #[test]
    fn default_encoder_sides() {
        assert_eq!(UNetConfig::default().encoder_sides(), vec![384, 192, 96, 48, 24]);
    }

    #[test]
    fn indivisible_side_is_config_error() {
        let cfg = UNetConfig { input_side: 100, ..UNetConfig::desk() };
        assert!(matches!(UNet::new(cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn output_matches_input_side() {
        let cfg = UNetConfig { base_channels: 2, input_side: 32, ..UNetConfig::default() };
        let net = UNet::new(cfg, 1).unwrap();
        let x = Tensor::zeros((2, 3, 32, 32), DType::F32, &cpu()).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y.dims(), &[2, 1, 32, 32]);
        let v = to_f64_vec(&y).unwrap();
        assert!(v.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn zero_parameters_give_one_half() {
        let cfg = UNetConfig { base_channels: 2, input_side: 16, ..UNetConfig::default() };
        let net = UNet::new(cfg, 1).unwrap();
        net.params().zero_all().unwrap();
        let x = Tensor::rand(0f32, 1.0, (1, 3, 16, 16), &cpu()).unwrap();
        let v = to_f64_vec(&net.forward(&x).unwrap()).unwrap();
        assert!(v.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = UNetConfig { base_channels: 2, input_side: 16, ..UNetConfig::default() };
        let x = Tensor::rand(0f32, 1.0, (1, 3, 16, 16), &cpu()).unwrap();
        let a = to_f64_vec(&UNet::new(cfg.clone(), 3).unwrap().forward(&x).unwrap()).unwrap();
        let b = to_f64_vec(&UNet::new(cfg, 3).unwrap().forward(&x).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_of_half_on_empty_target() {
        let n = 16.0;
        let pred = Tensor::full(0.5f64, (4, 4), &cpu()).unwrap();
        let gt = Tensor::zeros((4, 4), DType::F64, &cpu()).unwrap();
        let loss = dice_ce_loss(&pred, &gt).unwrap().to_scalar::<f64>().unwrap();
        let expected = (1.0 - 1.0 / (0.5 * n + 1.0)) + std::f64::consts::LN_2;
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn loss_vanishes_for_perfect_prediction() {
        let gt = Tensor::new(&[[1.0f64, 0.0], [0.0, 1.0]], &cpu()).unwrap();
        let loss = dice_ce_loss(&gt, &gt).unwrap().to_scalar::<f64>().unwrap();
        assert!(loss.abs() < 1e-5);
    }

    #[test]
    fn logit_form_matches_probability_form() {
        let logits = Tensor::randn(0f64, 2.0, (8, 8), &cpu()).unwrap();
        let gt = Tensor::rand(0f64, 1.0, (8, 8), &cpu()).unwrap().ge(0.5).unwrap().to_dtype(DType::F64).unwrap();
        let a = dice_ce_loss(&candle_nn::ops::sigmoid(&logits).unwrap(), &gt).unwrap().to_scalar::<f64>().unwrap();
        let b = dice_ce_loss_from_logits(&logits, &gt).unwrap().to_scalar::<f64>().unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let gt = Tensor::rand(0f64, 1.0, (8, 8), &cpu()).unwrap().ge(0.6).unwrap().to_dtype(DType::F64).unwrap();
        let pred = Var::from_tensor(&Tensor::rand(0.05f64, 0.95, (8, 8), &cpu()).unwrap()).unwrap();
        let grads = dice_ce_loss(pred.as_tensor(), &gt).unwrap().backward().unwrap();
        let analytic = grads.get(pred.as_tensor()).unwrap().to_vec2::<f64>().unwrap();
        let base = pred.as_tensor().to_vec2::<f64>().unwrap();
        let h = 1e-6;
        for (r, c) in [(0, 0), (3, 5), (7, 7), (2, 1)] {
            let eval = |delta: f64| {
                let mut v = base.clone();
                v[r][c] += delta;
                let t = Tensor::new(v, &cpu()).unwrap();
                dice_ce_loss(&t, &gt).unwrap().to_scalar::<f64>().unwrap()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let rel = (numeric - analytic[r][c]).abs() / numeric.abs().max(1e-8);
            assert!(rel < 1e-3, "({r},{c}) numeric {numeric} analytic {}", analytic[r][c]);
        }
    }

    #[test]
    fn shape_mismatch_is_input_error() {
        let a = Tensor::zeros((2, 2), DType::F64, &cpu()).unwrap();
        let b = Tensor::zeros((2, 3), DType::F64, &cpu()).unwrap();
        assert!(matches!(dice_ce_loss(&a, &b), Err(Error::Input(_))));
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let cfg = UNetConfig { base_channels: 2, input_side: 8, hierarchies: 2, ..UNetConfig::default() };
        let net = UNet::with_dtype(cfg, 5, DType::F64).unwrap();
        let x = Tensor::rand(0f64, 1.0, (1, 3, 8, 8), &cpu()).unwrap();
        let gt = Tensor::rand(0f64, 1.0, (1, 1, 8, 8), &cpu()).unwrap().ge(0.7).unwrap().to_dtype(DType::F64).unwrap();
        let loss = |net: &UNet| dice_ce_loss_from_logits(&net.forward_logits(&x).unwrap(), &gt).unwrap();
        let grads = loss(&net).backward().unwrap();
        for name in ["up.0.weight", "encoder.2.conv1.weight", "decoder.1.conv2.bias", "output.weight"] {
            let var = net.params().get(name).unwrap().clone();
            let analytic = to_f64_vec(grads.get(var.as_tensor()).unwrap()).unwrap();
            let base = to_f64_vec(var.as_tensor()).unwrap();
            let shape = var.dims().to_vec();
            let (idx, _) = analytic
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .unwrap();
            let h = 1e-5;
            let eval = |delta: f64| {
                let mut v = base.clone();
                v[idx] += delta;
                var.set(&Tensor::from_vec(v, shape.clone(), &cpu()).unwrap()).unwrap();
                loss(&net).to_scalar::<f64>().unwrap()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            eval(0.0);
            let rel = (numeric - analytic[idx]).abs() / numeric.abs().max(1e-8);
            assert!(rel < 1e-4, "{name}: numeric {numeric} analytic {}", analytic[idx]);
        }
    }
}
