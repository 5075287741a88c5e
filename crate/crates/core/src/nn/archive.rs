//! Named-array archives (safetensors layout).
//!
//! Arrays are stored little-endian under their parameter names; free-form
//! text metadata (topology descriptions, config hashes, iteration counts)
//! lives in the header's `__metadata__` map. Files written here use `F64`;
//! `F32` arrays are accepted on load so weights exported from other tools
//! can be read directly. On load, arrays come back in file-offset order.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive {
    pub tensors: Vec<(String, ArrayD<f64>)>,
    pub metadata: HashMap<String, String>,
}

/// Rewrites the JSON header with sorted keys so equal archives give equal
/// bytes; the metadata map is otherwise emitted in hash order.
fn canonical_header(bytes: Vec<u8>) -> Result<Vec<u8>> {
    let bad = |e: String| Error::Weights(format!("header: {e}"));
    let n = u64::from_le_bytes(bytes[..8].try_into().expect("8-byte prefix")) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + n]).map_err(|e| bad(e.to_string()))?;
    let mut text = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
    text.resize(text.len().div_ceil(8) * 8, b' ');
    let mut out = Vec::with_capacity(8 + text.len() + bytes.len() - 8 - n);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&bytes[8 + n..]);
    Ok(out)
}

impl Archive {
    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let buffers: Vec<(String, Vec<u8>, Vec<usize>)> = self
            .tensors
            .iter()
            .map(|(name, arr)| {
                let bytes = arr.iter().flat_map(|v| v.to_le_bytes()).collect();
                (name.clone(), bytes, arr.shape().to_vec())
            })
            .collect();
        let views = buffers
            .iter()
            .map(|(name, bytes, shape)| {
                TensorView::new(Dtype::F64, shape.clone(), bytes)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| Error::Weights(format!("{name}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let metadata = (!self.metadata.is_empty()).then(|| self.metadata.clone());
        let bytes = safetensors::serialize(views, &metadata).map_err(|e| Error::Weights(e.to_string()))?;
        canonical_header(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Weights(e.to_string()))?;
        let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Weights(e.to_string()))?;
        let mut infos: Vec<(String, usize)> = header
            .tensors()
            .into_iter()
            .map(|(name, info)| (name, info.data_offsets.0))
            .collect();
        infos.sort_by_key(|(_, offset)| *offset);
        let names: Vec<String> = infos.into_iter().map(|(n, _)| n).collect();
        let mut tensors = Vec::with_capacity(names.len());
        for name in names {
            let view = st.tensor(&name).map_err(|e| Error::Weights(format!("{name}: {e}")))?;
            let data: Vec<f64> = match view.dtype() {
                Dtype::F64 => view
                    .data()
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                Dtype::F32 => view
                    .data()
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
                other => return Err(Error::Weights(format!("{name}: unsupported dtype {other:?}"))),
            };
            let arr = ArrayD::from_shape_vec(IxDyn(view.shape()), data).map_err(|e| Error::Weights(format!("{name}: {e}")))?;
            tensors.push((name, arr));
        }
        let metadata = header.metadata().clone().unwrap_or_default();
        Ok(Archive { tensors, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Weights(m) => Error::Weights(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
