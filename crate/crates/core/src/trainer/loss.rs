use candle_core::{DType, Tensor, D};

use crate::error::{Error, Result};

/// Lower clamp on the target-class probability.
pub const PROB_FLOOR: f64 = 1e-7;

/// `-(1 - p_t)^gamma * ln(p_t)` for one probability.
pub fn focal_term(p_t: f64, gamma: f64) -> f64 {
    let p = p_t.clamp(PROB_FLOOR, 1.0);
    let modulation = if gamma == 0.0 { 1.0 } else { (1.0 - p_t).clamp(0.0, 1.0).powf(gamma) };
    -modulation * p.ln()
}

fn modulated(p_t: &Tensor, gamma: f64) -> Result<Tensor> {
    let log_p = p_t.clamp(PROB_FLOOR, 1.0)?.log()?;
    if gamma == 0.0 {
        return Ok(log_p.neg()?);
    }
    let weight = if gamma == 2.0 {
        (1.0 - p_t)?.clamp(0.0, 1.0)?.sqr()?
    } else {
        (1.0 - p_t)?.clamp(0.0, 1.0)?.powf(gamma)?
    };
    Ok((weight * log_p)?.neg()?)
}

/// Mean focal cross-entropy of softmax outputs; `targets` holds class indices.
pub fn focal_softmax_loss(logits: &Tensor, targets: &[u32], gamma: f64) -> Result<Tensor> {
    let (batch, classes) = logits.dims2()?;
    if targets.len() != batch || targets.iter().any(|&t| t as usize >= classes) {
        return Err(Error::Input(format!(
            "{} targets for {batch} rows of {classes} classes",
            targets.len()
        )));
    }
    let probs = crate::nn::softmax_last(logits)?;
    let index = Tensor::from_slice(targets, (batch, 1), logits.device())?;
    let p_t = probs.gather(&index, D::Minus1)?.squeeze(1)?;
    Ok(modulated(&p_t, gamma)?.mean_all()?)
}

/// Mean focal cross-entropy of independent logistic outputs; `targets` is 0/1, same shape.
pub fn focal_logistic_loss(logits: &Tensor, targets: &Tensor, gamma: f64) -> Result<Tensor> {
    if logits.dims() != targets.dims() {
        return Err(Error::Input(format!(
            "logits {:?} and targets {:?} differ in shape",
            logits.dims(),
            targets.dims()
        )));
    }
    let p = candle_nn::ops::sigmoid(logits)?;
    let targets = targets.to_dtype(logits.dtype())?;
    let p_t = ((&p * &targets)? + ((1.0 - &p)? * (1.0 - &targets)?)?)?;
    Ok(modulated(&p_t, gamma)?.mean_all()?)
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn half_probability_with_gamma_two() {
        assert!((focal_term(0.5, 2.0) - 0.25 * std::f64::consts::LN_2).abs() < 1e-15);
        let logits = Tensor::new(&[[0.0f64, 0.0]], &Device::Cpu).unwrap();
        let loss = scalar(&focal_softmax_loss(&logits, &[1], 2.0).unwrap()).unwrap();
        assert!((loss - 0.173_286_795_139_986_3).abs() < 1e-12);
    }

    #[test]
    fn confident_prediction_costs_nothing() {
        assert!(focal_term(1.0, 2.0).abs() < 1e-15);
        assert!(focal_term(1.0 - 1e-12, 0.0) < 1e-11);
    }

    #[test]
    fn zero_probability_is_clamped() {
        assert!((focal_term(0.0, 0.0) - (-PROB_FLOOR.ln())).abs() < 1e-12);
        let logits = Tensor::new(&[[-1e4f64]], &Device::Cpu).unwrap();
        let targets = Tensor::new(&[[1.0f64]], &Device::Cpu).unwrap();
        let loss = scalar(&focal_logistic_loss(&logits, &targets, 2.0).unwrap()).unwrap();
        assert!(loss.is_finite());
    }

    #[test]
    fn gamma_zero_is_cross_entropy() {
        let logits = Tensor::randn(0f64, 3.0, (16, 2), &Device::Cpu).unwrap();
        let targets: Vec<u32> = (0..16).map(|i| (i * 7 % 3 == 0) as u32).collect();
        let focal = scalar(&focal_softmax_loss(&logits, &targets, 0.0).unwrap()).unwrap();
        let rows = logits.to_vec2::<f64>().unwrap();
        let ce: f64 = rows
            .iter()
            .zip(&targets)
            .map(|(r, &t)| {
                let m = r[0].max(r[1]);
                let lse = m + ((r[0] - m).exp() + (r[1] - m).exp()).ln();
                lse - r[t as usize]
            })
            .sum::<f64>()
            / 16.0;
        assert!((focal - ce).abs() < 1e-9);

        let z = Tensor::randn(0f64, 3.0, (8, 6), &Device::Cpu).unwrap();
        let y = Tensor::rand(0f64, 1.0, (8, 6), &Device::Cpu).unwrap().ge(0.5).unwrap().to_dtype(DType::F64).unwrap();
        let focal = scalar(&focal_logistic_loss(&z, &y, 0.0).unwrap()).unwrap();
        let zs = z.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let ys = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let bce: f64 = zs
            .iter()
            .zip(&ys)
            .map(|(z, y)| z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln())
            .sum::<f64>()
            / 48.0;
        assert!((focal - bce).abs() < 1e-9);
    }

    #[test]
    fn bad_targets_are_input_errors() {
        let logits = Tensor::zeros((2, 2), DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(focal_softmax_loss(&logits, &[0], 2.0), Err(Error::Input(_))));
        assert!(matches!(focal_softmax_loss(&logits, &[0, 2], 2.0), Err(Error::Input(_))));
    }
}
