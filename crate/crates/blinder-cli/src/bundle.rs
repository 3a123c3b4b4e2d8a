//! Model bundle files: the three parameter streams plus a JSON descriptor
//! (schema, architecture, loss weights) in one binary container.
//!
//! ```text
//! offset  size   field
//! 0       4      magic "BLBN"
//! 4       4      container version (u32, currently 1)
//! 8       4      descriptor length (u32)
//! 12      ...    descriptor JSON (schema + model config)
//! ...     4      stream count (u32)
//! per stream:    name length (u16), name, byte length (u32), bytes
//! ```
//!
//! Each stream is a parameter file in the format documented in the core
//! library (`encoder`, `decoder`, `disc0`, `disc1`, ...).

use std::fs;
use std::path::Path;

use blinder_core::anonymizer::{BlinderModel, ModelConfig, ModelParams};
use blinder_core::data::DatasetSchema;
use blinder_core::params::ParameterSet;

use crate::error::CliError;

const MAGIC: &[u8; 4] = b"BLBN";
const VERSION: u32 = 1;

/// Descriptor stored inside the bundle.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BundleDescriptor {
    pub schema: DatasetSchema,
    pub model: ModelConfig,
}

/// Serializes a model into bundle bytes.
pub fn to_bytes(model: &BlinderModel<f32>) -> Result<Vec<u8>, CliError> {
    let descriptor = BundleDescriptor {
        schema: model.schema().clone(),
        model: model.config().clone(),
    };
    let json = serde_json::to_vec(&descriptor)?;
    let params = model.params();
    let mut streams: Vec<(String, Vec<u8>)> = vec![
        ("encoder".into(), params.encoder.to_bytes()),
        ("decoder".into(), params.decoder.to_bytes()),
    ];
    for (j, d) in params.discriminators.iter().enumerate() {
        streams.push((format!("disc{j}"), d.to_bytes()));
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(streams.len() as u32).to_le_bytes());
    for (name, bytes) in &streams {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(bytes);
    }
    Ok(out)
}

/// Reconstructs a model from bundle bytes.
pub fn from_bytes(bytes: &[u8]) -> Result<BlinderModel<f32>, CliError> {
    let corrupt = || CliError::data("corrupt model bundle".to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], CliError> {
        let end = pos.checked_add(n).ok_or_else(corrupt)?;
        if end > bytes.len() {
            return Err(corrupt());
        }
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(corrupt());
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(CliError::data(format!(
            "unsupported bundle version {version}"
        )));
    }
    let json_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let descriptor: BundleDescriptor = serde_json::from_slice(take(json_len)?)?;
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut streams = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(name_len)?)
            .map_err(|_| corrupt())?
            .to_string();
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let set = ParameterSet::<f32>::from_bytes(take(len)?)
            .map_err(|e| CliError::data(format!("bundle stream {name}: {e}")))?;
        streams.push((name, set));
    }
    if pos != bytes.len() {
        return Err(corrupt());
    }

    let expected = 2 + descriptor.schema.private_attributes.len();
    if streams.len() != expected {
        return Err(CliError::data(format!(
            "bundle has {} streams, schema expects {expected}",
            streams.len()
        )));
    }
    let find = |name: &str| -> Result<ParameterSet<f32>, CliError> {
        streams
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.clone())
            .ok_or_else(|| CliError::data(format!("bundle missing stream {name}")))
    };
    let params = ModelParams {
        encoder: find("encoder")?,
        decoder: find("decoder")?,
        discriminators: (0..descriptor.schema.private_attributes.len())
            .map(|j| find(&format!("disc{j}")))
            .collect::<Result<_, _>>()?,
    };
    let mut model = BlinderModel::build(&descriptor.schema, &descriptor.model, 0)
        .map_err(CliError::from)?;
    model
        .set_params(&params)
        .map_err(|e| CliError::data(format!("bundle parameters do not fit the architecture: {e}")))?;
    Ok(model)
}

pub fn save(path: &Path, model: &BlinderModel<f32>) -> Result<(), CliError> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<BlinderModel<f32>, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::data(format!("missing bundle {}: {e}", path.display())))?;
    from_bytes(&bytes)
}
