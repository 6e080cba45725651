//! Binary checkpoint:
//!
//! ```text
//! "SETVECCK" | version u32 | header length u32 | header JSON | tensor data | SHA-256
//! ```
//!
//! All integers and tensor values are little endian. The header lists every
//! tensor (name, shape, role) in the order its values follow. The trailing
//! digest covers every preceding byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{OptimizerState, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelParams};
use crate::tensor::{DType, Scalar, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SETVECCK";
const DIGEST: usize = 32;

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Scalar = f64> {
    pub cfg: TrainConfig,
    pub params: ModelParams<T>,
    pub opt: OptimizerState<T>,
    pub epoch: usize,
    pub step: u64,
}

impl<T: Scalar> Checkpoint<T> {
    /// Fails unless the stored model has architecture `arch`.
    pub fn check_arch(&self, arch: &Architecture) -> Result<()> {
        if &self.params.arch != arch {
            return Err(Error::Incompatible(format!(
                "checkpoint architecture (patch {:?}, {} conv layers, d={}) does not match the \
                 configured one (patch {:?}, {} conv layers, d={})",
                self.params.arch.patch_shape,
                self.params.arch.conv.len(),
                self.params.arch.latent_dim,
                arch.patch_shape,
                arch.conv.len(),
                arch.latent_dim
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize, PartialEq, Eq, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum Role {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    role: Role,
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: DType,
    config: TrainConfig,
    config_hash: String,
    seed: u64,
    epoch: usize,
    step: u64,
    adam_t: u64,
    tensors: Vec<TensorEntry>,
}

fn entries<T: Scalar>(ck: &Checkpoint<T>) -> Vec<(Role, &str, &Tensor<T>)> {
    let p = &ck.params.params;
    let mut out: Vec<(Role, &str, &Tensor<T>)> = p.iter().map(|(n, t)| (Role::Param, n, t)).collect();
    out.extend(ck.params.buffers.iter().map(|(n, t)| (Role::Buffer, n, t)));
    out.extend(ck.opt.m.iter().enumerate().map(|(i, t)| (Role::AdamM, p.name(i), t)));
    out.extend(ck.opt.v.iter().enumerate().map(|(i, t)| (Role::AdamV, p.name(i), t)));
    out
}

pub fn encode_checkpoint<T: Scalar>(ck: &Checkpoint<T>) -> Result<Vec<u8>> {
    let list = entries(ck);
    let header = Header {
        dtype: T::DTYPE,
        config: ck.cfg.clone(),
        config_hash: ck.cfg.hash(),
        seed: ck.cfg.seed,
        epoch: ck.epoch,
        step: ck.step,
        adam_t: ck.opt.t,
        tensors: list
            .iter()
            .map(|(role, name, t)| TensorEntry {
                role: *role,
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, t) in &list {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let fixed = MAGIC.len() + 8;
    if bytes.len() < fixed + DIGEST {
        return Err(Error::Format(format!("checkpoint truncated ({} bytes)", bytes.len())));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Format("checkpoint checksum mismatch; the file is corrupt".into()));
    }
    let version = u32_at(body, MAGIC.len());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible(format!(
            "checkpoint format version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let hlen = u32_at(body, MAGIC.len() + 4) as usize;
    if body.len() < fixed + hlen {
        return Err(Error::Format("checkpoint header truncated".into()));
    }
    let header: Header = serde_json::from_slice(&body[fixed..fixed + hlen])
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    if header.dtype != T::DTYPE {
        return Err(Error::Incompatible(format!(
            "checkpoint holds {} values, expected {}",
            header.dtype.name(),
            T::DTYPE.name()
        )));
    }
    if header.config.hash() != header.config_hash {
        return Err(Error::Format("checkpoint config hash does not match its config".into()));
    }
    let mut params = ModelParams::<T>::zeros(&header.config.arch)?;
    let mut opt = OptimizerState::new(&params);
    opt.t = header.adam_t;
    let expected: Vec<(Role, String, Vec<usize>)> = {
        let probe = Checkpoint {
            cfg: header.config.clone(),
            params: params.clone(),
            opt: opt.clone(),
            epoch: 0,
            step: 0,
        };
        entries(&probe)
            .into_iter()
            .map(|(r, n, t)| (r, n.to_string(), t.shape().to_vec()))
            .collect()
    };
    if expected.len() != header.tensors.len()
        || expected
            .iter()
            .zip(&header.tensors)
            .any(|(e, h)| e.0 != h.role || e.1 != h.name || e.2 != h.shape)
    {
        return Err(Error::Incompatible(
            "checkpoint tensors do not match the layout of its architecture".into(),
        ));
    }
    let width = T::DTYPE.size_of();
    let data = &body[fixed + hlen..];
    let total: usize = expected.iter().map(|e| e.2.iter().product::<usize>()).sum();
    if data.len() != total * width {
        return Err(Error::Format(format!(
            "checkpoint payload: expected {} bytes, got {}",
            total * width,
            data.len()
        )));
    }
    let mut chunks = data.chunks_exact(width).map(T::read_le);
    let n_params = params.params.len();
    let n_buffers = params.buffers.len();
    let mut fill = |t: &mut Tensor<T>| {
        for v in t.data_mut() {
            *v = chunks.next().expect("length checked");
        }
    };
    for i in 0..n_params {
        fill(params.params.tensor_mut(i));
    }
    for i in 0..n_buffers {
        fill(params.buffers.tensor_mut(i));
    }
    for t in &mut opt.m {
        fill(t);
    }
    for t in &mut opt.v {
        fill(t);
    }
    Ok(Checkpoint {
        cfg: header.config,
        params,
        opt,
        epoch: header.epoch,
        step: header.step,
    })
}

/// Writes atomically: the file is assembled next to `path` and renamed.
pub fn save_checkpoint<T: Scalar>(ck: &Checkpoint<T>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    let tmp = path.with_extension("bin.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::Path {
        path: path.display().to_string(),
        hint: format!("{e}; train a model first with `setvec train`"),
    })?;
    decode_checkpoint(&bytes)
}

/// Element type stored in a checkpoint file, without decoding it.
pub fn checkpoint_dtype(path: &Path) -> Result<DType> {
    let bytes = fs::read(path)?;
    let fixed = MAGIC.len() + 8;
    if bytes.len() < fixed || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format(format!("{}: not a checkpoint file", path.display())));
    }
    let hlen = u32_at(&bytes, MAGIC.len() + 4) as usize;
    #[derive(Deserialize)]
    struct Peek {
        dtype: DType,
    }
    let peek: Peek = serde_json::from_slice(bytes.get(fixed..fixed + hlen).unwrap_or_default())
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    Ok(peek.dtype)
}
