//! Named-parameter persistence in the safetensors format.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::autograd::Param;
use crate::error::{Error, Result};
use crate::float::Float;

fn dtype_of<T: Float>() -> Dtype {
    if T::BYTES == 4 {
        Dtype::F32
    } else {
        Dtype::F64
    }
}

/// Serialises named arrays to safetensors bytes.
pub fn to_bytes<T: Float>(
    tensors: &[(&str, &ArrayD<T>)],
    metadata: Option<HashMap<String, String>>,
) -> Result<Vec<u8>> {
    let mut buffers: BTreeMap<&str, (Vec<usize>, Vec<u8>)> = BTreeMap::new();
    for (name, arr) in tensors {
        let mut bytes = Vec::with_capacity(arr.len() * T::BYTES);
        for &v in arr.iter() {
            v.write_le(&mut bytes);
        }
        if buffers.insert(name, (arr.shape().to_vec(), bytes)).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor name '{name}'")));
        }
    }
    let views = buffers
        .iter()
        .map(|(name, (shape, bytes))| {
            TensorView::new(dtype_of::<T>(), shape.clone(), bytes)
                .map(|v| (*name, v))
                .map_err(|e| Error::Checkpoint(format!("tensor '{name}': {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    safetensors::serialize(views, metadata).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Writes parameters to `path`, keyed by their names.
pub fn save<T: Float>(params: &[&Param<T>], path: &Path) -> Result<()> {
    let named: Vec<(&str, &ArrayD<T>)> = params.iter().map(|p| (p.name(), p.value())).collect();
    let bytes = to_bytes(&named, None)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads every tensor of a safetensors file, converting to `T`.
pub fn read_all<T: Float>(path: &Path) -> Result<BTreeMap<String, ArrayD<T>>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let st = SafeTensors::deserialize(&bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (name, view) in st.tensors() {
        let data = view.data();
        let values: Vec<T> = match view.dtype() {
            Dtype::F32 => data
                .chunks_exact(4)
                .map(|c| T::cast(f32::read_le(c) as f64))
                .collect(),
            Dtype::F64 => data.chunks_exact(8).map(|c| T::cast(f64::read_le(c))).collect(),
            other => {
                return Err(Error::Checkpoint(format!(
                    "{}: tensor '{name}' has unsupported dtype {other:?}",
                    path.display()
                )))
            }
        };
        let arr = ArrayD::from_shape_vec(IxDyn(view.shape()), values)
            .map_err(|e| Error::Checkpoint(format!("tensor '{name}': {e}")))?;
        out.insert(name, arr);
    }
    Ok(out)
}

/// Loads tensors from `path` into `params` by name. Every parameter must be
/// present with a matching shape. With `strict`, the file may not contain
/// tensors that match no parameter.
pub fn load_into<T: Float>(params: &mut [&mut Param<T>], path: &Path, strict: bool) -> Result<()> {
    let mut tensors = read_all::<T>(path)?;
    for p in params.iter_mut() {
        let arr = tensors.remove(p.name()).ok_or_else(|| {
            Error::Checkpoint(format!("{}: missing tensor '{}'", path.display(), p.name()))
        })?;
        if arr.shape() != p.value().shape() {
            return Err(Error::Checkpoint(format!(
                "{}: tensor '{}' has shape {:?}, expected {:?}",
                path.display(),
                p.name(),
                arr.shape(),
                p.value().shape()
            )));
        }
        p.set_value(arr);
    }
    if strict {
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Checkpoint(format!(
                "{}: unexpected tensor '{extra}'",
                path.display()
            )));
        }
    }
    Ok(())
}

/// Free-form string metadata stored in a safetensors header.
pub fn read_metadata(path: &Path) -> Result<HashMap<String, String>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, meta) = SafeTensors::read_metadata(&bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok(meta.metadata().clone().unwrap_or_default())
}
