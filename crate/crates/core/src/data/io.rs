//! On-disk bag datasets: `manifest.json` describing every bag plus one
//! little-endian blob `patches.bin` holding all patch values back to back.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Bag;
use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const MANIFEST: &str = "manifest.json";
pub const BLOB: &str = "patches.bin";
const FORMAT: &str = "setvec-bags";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dtype: DType,
    patch_shape: Vec<usize>,
    bags: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    subject_id: String,
    y: f64,
    n_patches: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coordinates: Option<Vec<[usize; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relevance: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    instance_labels: Option<Vec<u8>>,
}

pub fn save_bags<T: Scalar>(dir: &Path, bags: &[Bag<T>]) -> Result<()> {
    let first = bags
        .first()
        .ok_or_else(|| Error::Usage("refusing to write an empty bag dataset".into()))?;
    let patch_shape = first.patch_shape().to_vec();
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(bags.len());
    for b in bags {
        if b.patch_shape() != patch_shape {
            return Err(Error::shapes("save_bags", b.patch_shape(), &patch_shape));
        }
        for &v in b.patches.data() {
            v.write_le(&mut blob);
        }
        entries.push(Entry {
            subject_id: b.subject_id.clone(),
            y: b.y,
            n_patches: b.len(),
            coordinates: b.coordinates.clone(),
            relevance: b.relevance.clone(),
            instance_labels: b.instance_labels.clone(),
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        dtype: T::DTYPE,
        patch_shape,
        bags: entries,
    };
    fs::write(dir.join(BLOB), blob)?;
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

fn decode<S: Scalar, T: Scalar>(bytes: &[u8]) -> Vec<T> {
    bytes
        .chunks_exact(S::DTYPE.size_of())
        .map(|c| T::lit(S::read_le(c).as_f64()))
        .collect()
}

/// Loads a dataset written by [`save_bags`], converting values to `T`.
pub fn load_bags<T: Scalar>(dir: &Path) -> Result<Vec<Bag<T>>> {
    let mpath = dir.join(MANIFEST);
    let raw = fs::read(&mpath).map_err(|e| Error::Path {
        path: mpath.display().to_string(),
        hint: format!("{e}; generate a dataset first with `setvec gen-data`"),
    })?;
    let m: Manifest = serde_json::from_slice(&raw)
        .map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported dataset format {} v{}",
            mpath.display(),
            m.format,
            m.version
        )));
    }
    let blob = fs::read(dir.join(BLOB))?;
    let per_patch: usize = m.patch_shape.iter().product();
    let total: usize = m.bags.iter().map(|e| e.n_patches * per_patch).sum();
    let width = m.dtype.size_of();
    if blob.len() != total * width {
        return Err(Error::Format(format!(
            "{BLOB}: expected {} bytes, got {}",
            total * width,
            blob.len()
        )));
    }
    let mut offset = 0;
    m.bags
        .into_iter()
        .map(|e| {
            let len = e.n_patches * per_patch * width;
            let bytes = &blob[offset..offset + len];
            offset += len;
            let data = match m.dtype {
                DType::F32 => decode::<f32, T>(bytes),
                DType::F64 => decode::<f64, T>(bytes),
            };
            let mut shape = vec![e.n_patches];
            shape.extend_from_slice(&m.patch_shape);
            let mut bag = Bag::new(e.subject_id, Tensor::new(shape, data)?, e.y)?;
            if let Some(c) = e.coordinates {
                bag = bag.with_coordinates(c)?;
            }
            if let Some(r) = e.relevance {
                bag = bag.with_relevance(r)?;
            }
            if let Some(l) = e.instance_labels {
                bag = bag.with_instance_labels(l)?;
            }
            Ok(bag)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = Bag::new("a", Tensor::from_f64([2, 2, 2], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]).unwrap(), 3.0)
            .unwrap()
            .with_relevance(vec![true, false])
            .unwrap();
        let b = Bag::new("b", Tensor::from_f64([1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap(), -1.0)
            .unwrap()
            .with_coordinates(vec![[1, 2, 3]])
            .unwrap();
        save_bags(dir.path(), &[a.clone(), b.clone()]).unwrap();
        let back = load_bags::<f64>(dir.path()).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn truncated_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = Bag::new("a", Tensor::<f32>::zeros([2, 3]), 0.0).unwrap();
        save_bags(dir.path(), &[a]).unwrap();
        let p = dir.path().join(BLOB);
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_bags::<f32>(dir.path()), Err(Error::Format(_))));
    }
}
