use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::arch::Architecture;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{DType, Scalar, Tensor};

/// Which sub-network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Encoder,
    Decoder,
    Attention,
    Predictor,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::Encoder,
        ParamGroup::Decoder,
        ParamGroup::Attention,
        ParamGroup::Predictor,
    ];

    pub fn of(name: &str) -> Option<Self> {
        match name.split('.').next()? {
            "encoder" => Some(ParamGroup::Encoder),
            "decoder" => Some(ParamGroup::Decoder),
            "attention" => Some(ParamGroup::Attention),
            "predictor" => Some(ParamGroup::Predictor),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::Decoder => "decoder",
            ParamGroup::Attention => "attention",
            ParamGroup::Predictor => "predictor",
        }
    }
}

/// Ordered list of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Scalar = f64> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.entries.push((name.into(), t));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.entries
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Incompatible(format!("missing parameter {name}")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.entries[self.index_of(name)?].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let i = self.index_of(name)?;
        Ok(&mut self.entries[i].1)
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn tensor(&self, i: usize) -> &Tensor<T> {
        &self.entries[i].1
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.entries[i].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros_like(t)))
                .collect(),
        }
    }
}

/// All learnable parameters plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar = f64> {
    pub arch: Architecture,
    pub params: ParamStore<T>,
    /// Non-learnable state (`*.running_mean`, `*.running_var`).
    pub buffers: ParamStore<T>,
}

fn uniform<T: Scalar>(rng: &mut rng::Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

impl<T: Scalar> ModelParams<T> {
    /// Fan-in scaled uniform weights, zero biases, unit batch-norm scale.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, "init");
        Self::build(arch, |shape, fan_in| uniform(&mut rng, shape, fan_in))
    }

    /// Every weight zero (batch-norm scale still one).
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        Self::build(arch, |shape, _| Tensor::zeros(shape.to_vec()))
    }

    fn build(
        arch: &Architecture,
        mut weight: impl FnMut(&[usize], usize) -> Tensor<T>,
    ) -> Result<Self> {
        arch.validate()?;
        let rank = arch.rank();
        let d = arch.latent_dim;
        let mut p = ParamStore::new();
        let mut buffers = ParamStore::new();
        let mut add_bn = |p: &mut ParamStore<T>, prefix: &str, c: usize| {
            p.push(format!("{prefix}.gamma"), Tensor::full([c], T::one()));
            p.push(format!("{prefix}.beta"), Tensor::zeros([c]));
            buffers.push(format!("{prefix}.running_mean"), Tensor::zeros([c]));
            buffers.push(format!("{prefix}.running_var"), Tensor::full([c], T::one()));
        };

        for (i, c) in arch.conv.iter().enumerate() {
            let cin = arch.in_channels(i);
            let mut shape = vec![c.channels, cin];
            shape.extend(std::iter::repeat_n(c.kernel, rank));
            let fan_in = cin * c.kernel.pow(rank as u32);
            p.push(format!("encoder.conv{i}.weight"), weight(&shape, fan_in));
            p.push(format!("encoder.conv{i}.bias"), Tensor::zeros([c.channels]));
            if arch.batch_norm {
                add_bn(&mut p, &format!("encoder.bn{i}"), c.channels);
            }
        }
        let flat = arch.flat_dim();
        p.push("encoder.fc.weight", weight(&[d, flat], flat));
        p.push("encoder.fc.bias", Tensor::zeros([d]));

        p.push("decoder.fc.weight", weight(&[flat, d], d));
        p.push("decoder.fc.bias", Tensor::zeros([flat]));
        for i in (0..arch.conv.len()).rev() {
            let cz = arch.conv[i].channels;
            let cout = arch.in_channels(i);
            let kernel = arch.decoder_kernel(i);
            let mut shape = vec![cz, cout];
            shape.extend_from_slice(&kernel);
            let fan_in = cz * kernel.iter().product::<usize>();
            p.push(format!("decoder.deconv{i}.weight"), weight(&shape, fan_in));
            p.push(format!("decoder.deconv{i}.bias"), Tensor::zeros([cout]));
            if arch.batch_norm && i > 0 {
                add_bn(&mut p, &format!("decoder.bn{i}"), cout);
            }
        }

        let l = arch.attention_width;
        p.push("attention.el1.weight", weight(&[l, d], d));
        p.push("attention.el1.bias", Tensor::zeros([l]));
        p.push("attention.el2.weight", weight(&[1, l], l));
        p.push("attention.el2.bias", Tensor::zeros([1]));

        p.push("predictor.weight", weight(&[1, d], d));
        p.push("predictor.bias", Tensor::zeros([1]));

        Ok(Self {
            arch: arch.clone(),
            params: p,
            buffers,
        })
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    /// Indices of the parameters in `group`.
    pub fn group_indices(&self, group: ParamGroup) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| ParamGroup::of(self.params.name(i)) == Some(group))
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let conv = |s: &ParamStore<T>| {
            let mut out = ParamStore::new();
            for (n, t) in s.iter() {
                out.push(n, t.cast());
            }
            out
        };
        ModelParams {
            arch: self.arch.clone(),
            params: conv(&self.params),
            buffers: conv(&self.buffers),
        }
    }
}
