//! Parameter storage and the small set of layers shared by the models.
//!
//! Parameters are initialized from a seeded ChaCha stream so that a model is a
//! pure function of its configuration and seed.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal truncated at two standard deviations.
    TruncNormal(f64),
    /// He/Kaiming normal with the given fan-in.
    KaimingNormal(usize),
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
}

/// Named, ordered collection of trainable variables.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn sample(&mut self, count: usize, init: Init) -> Vec<f64> {
        match init {
            Init::Zeros => vec![0.0; count],
            Init::Ones => vec![1.0; count],
            Init::TruncNormal(std) => (0..count)
                .map(|_| loop {
                    let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(&mut self.rng);
                    if z.abs() <= 2.0 {
                        break z * std;
                    }
                })
                .collect(),
            Init::KaimingNormal(fan_in) => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                let normal = Normal::new(0.0, std).unwrap();
                (0..count).map(|_| normal.sample(&mut self.rng)).collect()
            }
            Init::Uniform(bound) => (0..count).map(|_| self.rng.gen_range(-bound..=bound)).collect(),
        }
    }

    pub fn create(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        if self.vars.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter '{name}'")));
        }
        let count = shape.iter().product();
        let values = self.sample(count, init);
        let tensor = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&tensor)?;
        self.vars.insert(name.to_string(), var.clone());
        Ok(var)
    }

    /// Replaces a parameter's values with freshly sampled ones.
    pub fn reinitialize(&mut self, name: &str, init: Init) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))?;
        let shape = var.dims().to_vec();
        let values = self.sample(shape.iter().product(), init);
        let tensor = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        var.set(&tensor)?;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(name, _)| name.starts_with(prefix))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Deep copy of every parameter value.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(name, var)| Ok((name.clone(), var.as_tensor().copy()?)))
            .collect()
    }

    pub fn restore(&self, snapshot: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let value = snapshot
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("snapshot lacks '{name}'")))?;
            if value.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "'{name}': shape {:?} does not match {:?}",
                    value.dims(),
                    var.dims()
                )));
            }
            var.set(&value.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&self) -> Result<()> {
        for var in self.vars.values() {
            var.set(&var.as_tensor().zeros_like()?)?;
        }
        Ok(())
    }

    pub fn random_u64(&mut self) -> u64 {
        self.rng.gen()
    }
}

/// Affine map with weight stored as `[in, out]`.
#[derive(Clone)]
pub struct Linear {
    pub weight: Var,
    pub bias: Option<Var>,
}

impl Linear {
    /// Truncated-normal weights (std 0.02) and zero bias.
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Result<Self> {
        let bias = bias.then_some(Init::Zeros);
        Self::with_init(store, name, fan_in, fan_out, Init::TruncNormal(0.02), bias)
    }

    /// Convolution-style defaults: weight and bias uniform in `±1/sqrt(fan_in)`.
    ///
    /// A nonzero bias keeps the absolute intensity of flat patches visible to
    /// the layer norm that follows.
    pub fn conv_default(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Self::with_init(store, name, fan_in, fan_out, Init::Uniform(bound), Some(Init::Uniform(bound)))
    }

    pub fn with_init(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        weight: Init,
        bias: Option<Init>,
    ) -> Result<Self> {
        let weight = store.create(&format!("{name}.weight"), &[fan_in, fan_out], weight)?;
        let bias = match bias {
            Some(init) => Some(store.create(&format!("{name}.bias"), &[fan_out], init)?),
            None => None,
        };
        Ok(Self { weight, bias })
    }

    /// Applies the map over the last dimension of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let fan_in = *dims.last().ok_or_else(|| Error::Input("scalar input to linear".into()))?;
        let rows = dims[..dims.len() - 1].iter().product::<usize>();
        let flat = x.reshape((rows, fan_in))?;
        let mut out = flat.matmul(self.weight.as_tensor())?;
        if let Some(bias) = &self.bias {
            out = out.broadcast_add(bias.as_tensor())?;
        }
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = out.dim(1)?;
        Ok(out.reshape(out_dims)?)
    }
}

#[derive(Clone)]
pub struct LayerNorm {
    pub gamma: Var,
    pub beta: Var,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            gamma: store.create(&format!("{name}.weight"), &[dim], Init::Ones)?,
            beta: store.create(&format!("{name}.bias"), &[dim], Init::Zeros)?,
            eps,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(self.gamma.as_tensor())?
            .broadcast_add(self.beta.as_tensor())?)
    }
}

/// Numerically stable softmax over the last dimension (differentiable).
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let exp = x.broadcast_sub(&max)?.exp()?;
    let sum = exp.sum_keepdim(D::Minus1)?;
    Ok(exp.broadcast_div(&sum)?)
}

/// Flattens a tensor to `Vec<f64>` whatever its floating dtype.
pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_parameters() {
        let make = || {
            let mut store = ParamStore::new(5, DType::F32);
            Linear::new(&mut store, "fc", 4, 3, true).unwrap();
            to_f64_vec(store.get("fc.weight").unwrap().as_tensor()).unwrap()
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn linear_over_leading_dims() {
        let mut store = ParamStore::new(0, DType::F64);
        let fc = Linear::new(&mut store, "fc", 2, 1, true).unwrap();
        fc.weight
            .set(&Tensor::new(&[[1.0f64], [2.0]], &Device::Cpu).unwrap())
            .unwrap();
        let x = Tensor::new(&[[[1.0f64, 1.0], [0.0, 3.0]]], &Device::Cpu).unwrap();
        let y = fc.forward(&x).unwrap();
        assert_eq!(y.dims(), &[1, 2, 1]);
        assert_eq!(to_f64_vec(&y).unwrap(), vec![3.0, 6.0]);
    }

    #[test]
    fn layer_norm_standardizes() {
        let mut store = ParamStore::new(0, DType::F64);
        let ln = LayerNorm::new(&mut store, "ln", 4, 0.0).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 4.0]], &Device::Cpu).unwrap();
        let y = to_f64_vec(&ln.forward(&x).unwrap()).unwrap();
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(&[[1000.0f64, 0.0, -3.0], [0.5, 0.5, 0.5]], &Device::Cpu).unwrap();
        let s = softmax_last(&x).unwrap().to_vec2::<f64>().unwrap();
        for row in s {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
