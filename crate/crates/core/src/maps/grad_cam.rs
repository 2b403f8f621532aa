use ndarray::{Array2, Axis};

use super::{bilinear_resize, FusedMap, MapMethod};
use crate::error::{Error, Result};
use crate::imaging::ModelInput;
use crate::swin::{FeatureTrace, SwinClassifier};

/// Gradient-weighted class activation of the last block's tokens, upsampled to
/// `side` and max-normalized.
pub fn grad_cam_from_features(trace: &FeatureTrace, side: usize) -> Result<FusedMap> {
    let grads = trace.grads.as_ref().ok_or_else(|| {
        Error::State("feature gradients are missing; run the positive-class backward pass first".into())
    })?;
    if grads.dim() != trace.features.dim() {
        return Err(Error::Input("feature and gradient shapes differ".into()));
    }
    let (g, _, _) = trace.features.dim();
    let alpha = grads
        .mean_axis(Axis(0))
        .and_then(|m| m.mean_axis(Axis(0)))
        .ok_or_else(|| Error::Input("empty feature grid".into()))?;
    let cam = Array2::from_shape_fn((g, g), |(r, c)| {
        let f = trace.features.slice(ndarray::s![r, c, ..]);
        f.dot(&alpha).max(0.0)
    });
    Ok(FusedMap::normalized(
        bilinear_resize(&cam, side, side),
        MapMethod::GradCam,
        Vec::new(),
        None,
    ))
}

/// Runs a recorded forward and backward pass and returns the Grad-CAM map.
pub fn grad_cam_map(model: &SwinClassifier, input: &ModelInput) -> Result<FusedMap> {
    let mut out = model.forward_classify(input, true)?;
    model.backward_positive_class(&mut out)?;
    let features = out.final_features.as_ref().expect("recorded forward keeps features");
    let mut map = grad_cam_from_features(features, input.side())?;
    map.source = Some(input.source.clone());
    Ok(map)
}
