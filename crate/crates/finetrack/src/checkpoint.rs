//! Model checkpoints as safetensors files of f64 tensors.
//!
//! Parameters are stored as `param/<name>`, BN running statistics as
//! `buffer/<name>`. The header metadata has a single `finetrack` entry: a
//! JSON object with the format version and the model configuration. One
//! key keeps the header bytes stable, since safetensors takes the metadata
//! as a `HashMap`.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use finetrack_core::model::{FineTrackModel, ModelConfig, Variant};
use finetrack_core::nn::ParamStore;
use finetrack_core::Tensor;

pub const FORMAT_VERSION: &str = "1";

const META_KEY: &str = "finetrack";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: String,
    model_config: StoredConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredConfig {
    variant: String,
    unified_channels: usize,
    parts: usize,
    part_dim: usize,
    global_dim: usize,
    identities: usize,
    flow_kernel: usize,
}

impl StoredConfig {
    fn from_config(c: &ModelConfig) -> Self {
        StoredConfig {
            variant: match c.variant {
                Variant::FineTrack => "finetrack",
                Variant::Baseline => "baseline",
            }
            .into(),
            unified_channels: c.unified_channels,
            parts: c.parts,
            part_dim: c.part_dim,
            global_dim: c.global_dim,
            identities: c.identities,
            flow_kernel: c.flow_kernel,
        }
    }

    fn to_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            variant: match self.variant.as_str() {
                "finetrack" => Variant::FineTrack,
                "baseline" => Variant::Baseline,
                other => bail!("unknown model variant `{other}`"),
            },
            unified_channels: self.unified_channels,
            parts: self.parts,
            part_dim: self.part_dim,
            global_dim: self.global_dim,
            identities: self.identities,
            flow_kernel: self.flow_kernel,
        })
    }
}

fn le_bytes(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Serializes `store` together with the configuration it was built from.
pub fn to_bytes(config: &ModelConfig, store: &ParamStore) -> Result<Vec<u8>> {
    let mut names = Vec::new();
    let mut blobs = Vec::new();
    for (name, t) in store.params() {
        names.push((format!("param/{name}"), t.shape().to_vec()));
        blobs.push(le_bytes(t));
    }
    for (name, t) in store.buffers() {
        names.push((format!("buffer/{name}"), t.shape().to_vec()));
        blobs.push(le_bytes(t));
    }
    let views = names
        .iter()
        .zip(&blobs)
        .map(|((n, shape), b)| Ok((n.as_str(), TensorView::new(Dtype::F64, shape.clone(), b)?)))
        .collect::<Result<Vec<_>>>()?;
    let header = Header {
        format_version: FORMAT_VERSION.into(),
        model_config: StoredConfig::from_config(config),
    };
    let meta = HashMap::from([(META_KEY.to_string(), serde_json::to_string(&header)?)]);
    Ok(safetensors::serialize(views, Some(meta))?)
}

pub fn save(path: &Path, config: &ModelConfig, store: &ParamStore) -> Result<()> {
    let bytes = to_bytes(config, store)?;
    std::fs::write(path, bytes).with_context(|| format!("writing checkpoint {}", path.display()))
}

/// Rebuilds the model and its weights, checking that every tensor the
/// model expects is present with the right shape.
pub fn from_bytes(bytes: &[u8]) -> Result<(FineTrackModel, ParamStore)> {
    let (_, header) = SafeTensors::read_metadata(bytes).context("reading checkpoint header")?;
    let meta = header.metadata().as_ref().context("checkpoint has no metadata")?;
    let raw = meta.get(META_KEY).context("checkpoint lacks a finetrack header")?;
    let version: serde_json::Value = serde_json::from_str(raw).context("parsing checkpoint header")?;
    match version.get("format_version").and_then(|v| v.as_str()) {
        Some(FORMAT_VERSION) => {}
        Some(v) => bail!("unsupported checkpoint format version {v}"),
        None => bail!("checkpoint lacks a format version"),
    }
    let stored: Header = serde_json::from_str(raw).context("parsing checkpoint model config")?;
    let model = FineTrackModel::new(stored.model_config.to_config()?)?;
    let reference = model.init(0);
    let tensors = SafeTensors::deserialize(bytes).context("reading checkpoint tensors")?;
    let mut store = ParamStore::new();
    let read = |key: &str, expected: &Tensor| -> Result<Tensor> {
        let view = tensors
            .tensor(key)
            .with_context(|| format!("checkpoint lacks `{key}`"))?;
        if view.dtype() != Dtype::F64 {
            bail!("`{key}` is {:?}, expected F64", view.dtype());
        }
        if view.shape() != expected.shape() {
            bail!("`{key}` has shape {:?}, expected {:?}", view.shape(), expected.shape());
        }
        let data = view
            .data()
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Tensor::new(view.shape(), data)?)
    };
    for (name, t) in reference.params() {
        store.insert_param(name.clone(), read(&format!("param/{name}"), t)?);
    }
    for (name, t) in reference.buffers() {
        store.insert_buffer(name.clone(), read(&format!("buffer/{name}"), t)?);
    }
    Ok((model, store))
}

pub fn load(path: &Path) -> Result<(FineTrackModel, ParamStore)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    from_bytes(&bytes).with_context(|| format!("loading checkpoint {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let config = ModelConfig {
            unified_channels: 12,
            part_dim: 8,
            global_dim: 16,
            ..ModelConfig::default()
        };
        let model = FineTrackModel::new(config).unwrap();
        let store = model.init(3);
        let (back_model, back) = from_bytes(&to_bytes(&config, &store).unwrap()).unwrap();
        assert_eq!(*back_model.config(), config);
        assert_eq!(back, store);
    }

    #[test]
    fn bytes_are_stable() {
        let config = ModelConfig {
            unified_channels: 12,
            part_dim: 8,
            global_dim: 16,
            ..ModelConfig::default()
        };
        let store = FineTrackModel::new(config).unwrap().init(1);
        // Each serialization builds a fresh, randomly keyed HashMap.
        let first = to_bytes(&config, &store).unwrap();
        for _ in 0..8 {
            assert_eq!(to_bytes(&config, &store).unwrap(), first);
        }
    }

    #[test]
    fn other_format_version_rejected() {
        let views: Vec<(&str, TensorView<'_>)> = Vec::new();
        let header = r#"{"format_version":"2","model_config":{}}"#.to_string();
        let bytes = safetensors::serialize(views, Some(HashMap::from([(META_KEY.to_string(), header)]))).unwrap();
        let err = from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
    }

    #[test]
    fn garbage_rejected() {
        assert!(from_bytes(b"not a checkpoint").is_err());
    }
}
