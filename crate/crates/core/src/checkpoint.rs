//! Model checkpoints as safetensors files with a metadata header.
//!
//! The header carries a format version, a model-kind tag (`swin` or `unet`)
//! and the model configuration as JSON, so a checkpoint can be rebuilt without
//! any side files.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype as StDtype, SafeTensors, TensorView};
use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::swin::{SwinClassifier, SwinConfig};
use crate::unet::{UNet, UNetConfig};

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Swin,
    UNet,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Swin => "swin",
            ModelKind::UNet => "unet",
        }
    }

    fn parse(tag: &str) -> Result<Self> {
        match tag {
            "swin" => Ok(ModelKind::Swin),
            "unet" => Ok(ModelKind::UNet),
            other => Err(Error::Checkpoint(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Header fields of a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointInfo {
    pub kind: ModelKind,
    pub config_json: String,
    pub extra: BTreeMap<String, String>,
}

fn tensor_bytes(t: &Tensor) -> Result<(StDtype, Vec<u8>)> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => (
            StDtype::F64,
            flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        _ => (
            StDtype::F32,
            flat.to_dtype(DType::F32)?
                .to_vec1::<f32>()?
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect(),
        ),
    })
}

fn save_store(
    path: &Path,
    store: &ParamStore,
    kind: ModelKind,
    config: &impl Serialize,
    extra: &BTreeMap<String, String>,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut buffers = Vec::new();
    for (name, var) in store.iter() {
        let (dtype, bytes) = tensor_bytes(var.as_tensor())?;
        buffers.push((name.clone(), dtype, var.dims().to_vec(), bytes));
    }
    let views = buffers
        .iter()
        .map(|(name, dtype, shape, bytes)| {
            TensorView::new(*dtype, shape.clone(), bytes)
                .map(|view| (name.clone(), view))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut metadata: HashMap<String, String> = extra.clone().into_iter().collect();
    metadata.insert("format_version".into(), FORMAT_VERSION.into());
    metadata.insert("model_kind".into(), kind.tag().into());
    metadata.insert("config".into(), serde_json::to_string(config)?);
    safetensors::tensor::serialize_to_file(views, &Some(metadata), path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::Dependency { path: path.to_path_buf() });
    }
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_info(path: &Path, buffer: &[u8]) -> Result<CheckpointInfo> {
    let (_, meta) = SafeTensors::read_metadata(buffer)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut fields: BTreeMap<String, String> = meta
        .metadata()
        .clone()
        .unwrap_or_default()
        .into_iter()
        .collect();
    let version = fields.remove("format_version").unwrap_or_default();
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format version '{version}'",
            path.display()
        )));
    }
    let kind = ModelKind::parse(&fields.remove("model_kind").unwrap_or_default())?;
    let config_json = fields
        .remove("config")
        .ok_or_else(|| Error::Checkpoint(format!("{}: missing config", path.display())))?;
    Ok(CheckpointInfo {
        kind,
        config_json,
        extra: fields,
    })
}

/// Reads only the header.
pub fn read_info(path: &Path) -> Result<CheckpointInfo> {
    let buffer = read_file(path)?;
    parse_info(path, &buffer)
}

fn restore_store(path: &Path, buffer: &[u8], store: &ParamStore) -> Result<()> {
    let tensors = SafeTensors::deserialize(buffer)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut snapshot = BTreeMap::new();
    for (name, view) in tensors.tensors() {
        let shape = view.shape().to_vec();
        let data = view.data();
        let tensor = match view.dtype() {
            StDtype::F32 => {
                let values: Vec<f32> = data
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                Tensor::from_vec(values, shape, &Device::Cpu)?
            }
            StDtype::F64 => {
                let values: Vec<f64> = data
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                Tensor::from_vec(values, shape, &Device::Cpu)?
            }
            other => {
                return Err(Error::Checkpoint(format!("'{name}': unsupported dtype {other:?}")));
            }
        };
        snapshot.insert(name, tensor);
    }
    if snapshot.len() != store.len() {
        let extra: Vec<_> = snapshot.keys().filter(|k| store.get(k).is_none()).cloned().collect();
        if !extra.is_empty() {
            return Err(Error::Checkpoint(format!("unexpected parameters {extra:?}")));
        }
    }
    store.restore(&snapshot)
}

fn typed_config<C: DeserializeOwned>(info: &CheckpointInfo, want: ModelKind, path: &Path) -> Result<C> {
    if info.kind != want {
        return Err(Error::Checkpoint(format!(
            "{} holds a {} model, expected {}",
            path.display(),
            info.kind.tag(),
            want.tag()
        )));
    }
    Ok(serde_json::from_str(&info.config_json)?)
}

pub fn save_swin(path: &Path, model: &SwinClassifier, extra: &BTreeMap<String, String>) -> Result<()> {
    save_store(path, model.params(), ModelKind::Swin, model.config(), extra)
}

pub fn load_swin(path: &Path) -> Result<(SwinClassifier, CheckpointInfo)> {
    let buffer = read_file(path)?;
    let info = parse_info(path, &buffer)?;
    let config: SwinConfig = typed_config(&info, ModelKind::Swin, path)?;
    let model = SwinClassifier::new(config, 0)?;
    restore_store(path, &buffer, model.params())?;
    Ok((model, info))
}

pub fn save_unet(path: &Path, model: &UNet, extra: &BTreeMap<String, String>) -> Result<()> {
    save_store(path, model.params(), ModelKind::UNet, model.config(), extra)
}

pub fn load_unet(path: &Path) -> Result<(UNet, CheckpointInfo)> {
    let buffer = read_file(path)?;
    let info = parse_info(path, &buffer)?;
    let config: UNetConfig = typed_config(&info, ModelKind::UNet, path)?;
    let model = UNet::new(config, 0)?;
    restore_store(path, &buffer, model.params())?;
    Ok((model, info))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::to_f64_vec;
    use crate::swin::HeadKind;

    #[test]
    fn swin_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let model = SwinClassifier::new(SwinConfig::tiny(HeadKind::BinaryTwoLogit), 9).unwrap();
        let mut extra = BTreeMap::new();
        extra.insert("epochs".to_string(), "3".to_string());
        save_swin(&path, &model, &extra).unwrap();
        let (back, info) = load_swin(&path).unwrap();
        assert_eq!(info.kind, ModelKind::Swin);
        assert_eq!(info.extra.get("epochs").map(String::as_str), Some("3"));
        assert_eq!(back.config(), model.config());
        for (name, var) in model.params().iter() {
            let other = back.params().get(name).unwrap();
            assert_eq!(to_f64_vec(var.as_tensor()).unwrap(), to_f64_vec(other.as_tensor()).unwrap());
        }
    }

    #[test]
    fn unet_round_trip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.safetensors");
        let cfg = UNetConfig { base_channels: 2, input_side: 16, ..UNetConfig::default() };
        let model = UNet::new(cfg, 2).unwrap();
        save_unet(&path, &model, &BTreeMap::new()).unwrap();
        let (back, _) = load_unet(&path).unwrap();
        let w = |m: &UNet| to_f64_vec(m.params().get("output.weight").unwrap().as_tensor()).unwrap();
        assert_eq!(w(&back), w(&model));
        assert!(matches!(load_swin(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn missing_file_is_dependency_error() {
        let err = load_swin(Path::new("/nonexistent/model.safetensors"));
        assert!(matches!(err, Err(Error::Dependency { .. })));
    }
}
