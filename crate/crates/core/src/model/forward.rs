use super::params::{ModelParams, ParamGroup};
use super::{AttentionMap, ForwardOptions, LatentSet, LossBreakdown};
use crate::data::Bag;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::{
    BatchNorm, BnMode, LinearCombination, LogEpsSum, Pool, PoolMode, ReconLoss, RunningStats,
    SquaredError, WeightedPool,
};
use crate::tensor::{Scalar, Tensor};

/// Batch statistics observed by one train-mode batch-norm layer.
#[derive(Clone, Debug)]
pub struct BnUpdate<T: Scalar> {
    pub prefix: String,
    pub mean: Tensor<T>,
    pub var_unbiased: Tensor<T>,
}

/// Result of evaluating the objective on one bag.
#[derive(Clone, Debug)]
pub struct BagOutput<T: Scalar = f64> {
    pub prediction: f64,
    /// Pooled bag vector fed to the predictor.
    pub pooled: Vec<f64>,
    pub attention: AttentionMap,
    pub losses: LossBreakdown,
    pub latents: LatentSet<T>,
}

/// Objective value plus gradients for one bag.
#[derive(Clone, Debug)]
pub struct BagGradient<T: Scalar = f64> {
    pub output: BagOutput<T>,
    /// Aligned with `ModelParams::params`; zero for groups that did not
    /// take part in the backward pass.
    pub grads: Vec<Tensor<T>>,
    pub bn_updates: Vec<BnUpdate<T>>,
}

/// Graph builder over a parameter set.
struct Net<'p, T: Scalar> {
    params: &'p ModelParams<T>,
    g: Graph<T>,
    vars: Vec<Option<Var>>,
    trainable: [bool; 4],
    bn_mode: BnMode,
    bn_inputs: Vec<(String, Var)>,
}

fn group_slot(g: ParamGroup) -> usize {
    match g {
        ParamGroup::Encoder => 0,
        ParamGroup::Decoder => 1,
        ParamGroup::Attention => 2,
        ParamGroup::Predictor => 3,
    }
}

impl<'p, T: Scalar> Net<'p, T> {
    fn new(params: &'p ModelParams<T>, bn_mode: BnMode, trainable: [bool; 4]) -> Self {
        Self {
            params,
            g: Graph::new(),
            vars: vec![None; params.params.len()],
            trainable,
            bn_mode,
            bn_inputs: Vec::new(),
        }
    }

    fn frozen(params: &'p ModelParams<T>, bn_mode: BnMode) -> Self {
        Self::new(params, bn_mode, [false; 4])
    }

    fn p(&mut self, name: &str) -> Result<Var> {
        let i = self.params.params.index_of(name)?;
        if let Some(v) = self.vars[i] {
            return Ok(v);
        }
        let t = self.params.params.tensor(i).clone();
        let group = ParamGroup::of(name).expect("parameter names carry a group prefix");
        let v = if self.trainable[group_slot(group)] {
            self.g.param(t)
        } else {
            self.g.constant(t)
        };
        self.vars[i] = Some(v);
        Ok(v)
    }

    fn bn(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let running = RunningStats {
            mean: self.params.buffers.get(&format!("{prefix}.running_mean"))?.clone(),
            var: self.params.buffers.get(&format!("{prefix}.running_var"))?.clone(),
        };
        let gamma = self.p(&format!("{prefix}.gamma"))?;
        let beta = self.p(&format!("{prefix}.beta"))?;
        if self.bn_mode == BnMode::Train {
            self.bn_inputs.push((prefix.to_string(), x));
        }
        self.g.apply(BatchNorm::new(self.bn_mode, running), &[x, gamma, beta])
    }

    /// `patches: [n, ...patch]` → latents `[n, d]`.
    fn encoder(&mut self, patches: Var) -> Result<Var> {
        let arch = &self.params.arch;
        let shape = self.g.value(patches).shape().to_vec();
        if shape[1..] != arch.patch_shape[..] {
            return Err(Error::dim(
                "encode",
                format!("patch shape {:?}, architecture expects {:?}", &shape[1..], arch.patch_shape),
            ));
        }
        let n = shape[0];
        let rank = arch.rank();
        let mut with_channel = vec![n, 1];
        with_channel.extend_from_slice(&arch.patch_shape);
        let mut x = self.g.reshape(patches, with_channel)?;
        for (i, c) in arch.conv.clone().iter().enumerate() {
            let k = self.p(&format!("encoder.conv{i}.weight"))?;
            let b = self.p(&format!("encoder.conv{i}.bias"))?;
            x = self.g.conv(rank, c.stride, x, k, b)?;
            if arch.batch_norm {
                x = self.bn(&format!("encoder.bn{i}"), x)?;
            }
            x = self.g.elu(x)?;
        }
        let flat = self.g.reshape(x, [n, arch.flat_dim()])?;
        let w = self.p("encoder.fc.weight")?;
        let b = self.p("encoder.fc.bias")?;
        self.g.affine(flat, w, b)
    }

    /// `z: [n, d]` → reconstructions `[n, ...patch]`.
    fn decoder(&mut self, z: Var) -> Result<Var> {
        let arch = self.params.arch.clone();
        let n = self.g.value(z).shape()[0];
        let rank = arch.rank();
        let w = self.p("decoder.fc.weight")?;
        let b = self.p("decoder.fc.bias")?;
        let x = self.g.affine(z, w, b)?;
        let x = self.g.elu(x)?;
        let chain = arch.spatial_chain();
        let mut shape = vec![n, arch.conv.last().expect("validated").channels];
        shape.extend_from_slice(chain.last().expect("validated"));
        let mut x = self.g.reshape(x, shape)?;
        for i in (0..arch.conv.len()).rev() {
            let k = self.p(&format!("decoder.deconv{i}.weight"))?;
            let b = self.p(&format!("decoder.deconv{i}.bias"))?;
            x = self.g.conv_transpose(rank, arch.conv[i].stride, x, k, b)?;
            if i > 0 {
                if arch.batch_norm {
                    x = self.bn(&format!("decoder.bn{i}"), x)?;
                }
                x = self.g.elu(x)?;
            }
        }
        let mut out = vec![n];
        out.extend_from_slice(&arch.patch_shape);
        self.g.reshape(x, out)
    }

    /// `h: [n, d]` → attention weights `[n]`.
    fn attention(&mut self, h: Var) -> Result<Var> {
        let n = self.g.value(h).shape()[0];
        let w1 = self.p("attention.el1.weight")?;
        let b1 = self.p("attention.el1.bias")?;
        let w2 = self.p("attention.el2.weight")?;
        let b2 = self.p("attention.el2.bias")?;
        let a = self.g.equivariant(h, w1, b1)?;
        let a = self.g.sigmoid(a)?;
        let a = self.g.equivariant(a, w2, b2)?;
        let a = self.g.sigmoid(a)?;
        let a = self.g.reshape(a, [n])?;
        self.g.softmax(a)
    }

    fn pool(&mut self, h: Var, alpha: Var, mode: PoolMode) -> Result<Var> {
        match mode {
            PoolMode::Weighted | PoolMode::WeightedSum => self.g.apply(
                WeightedPool {
                    scale_by_count: mode == PoolMode::WeightedSum,
                },
                &[h, alpha],
            ),
            _ => self.g.apply(Pool::new(mode)?, &[h]),
        }
    }

    /// `v: [d]` → scalar prediction.
    fn predict(&mut self, v: Var) -> Result<Var> {
        let d = self.g.value(v).len();
        let w = self.p("predictor.weight")?;
        let b = self.p("predictor.bias")?;
        let row = self.g.reshape(v, [1, d])?;
        let y = self.g.affine(row, w, b)?;
        self.g.reshape(y, Vec::<usize>::new())
    }

    fn bn_updates(&self) -> Vec<BnUpdate<T>> {
        self.bn_inputs
            .iter()
            .map(|(prefix, v)| {
                let (mean, var_unbiased) = channel_moments(self.g.value(*v));
                BnUpdate {
                    prefix: prefix.clone(),
                    mean,
                    var_unbiased,
                }
            })
            .collect()
    }
}

fn channel_moments<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let sp: usize = x.shape()[2..].iter().product();
    let count = (n * sp) as f64;
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let vals = (0..n).flat_map(|i| x.data()[(i * c + ch) * sp..(i * c + ch + 1) * sp].iter());
        let mu = vals.clone().copied().sum::<T>() / T::lit(count);
        let ss: T = vals.map(|&v| (v - mu) * (v - mu)).sum();
        mean[ch] = mu;
        var[ch] = if count > 1.0 { ss / T::lit(count - 1.0) } else { ss };
    }
    (Tensor::from_vec(mean), Tensor::from_vec(var))
}

struct Built {
    yhat: Var,
    pooled: Var,
    alpha: Var,
    h: Var,
    ld: Var,
    lg: Var,
    r: Var,
    total: Var,
}

fn build<T: Scalar>(net: &mut Net<'_, T>, bag: &Bag<T>, opts: &ForwardOptions) -> Result<Built> {
    let w = opts.weights;
    if w.lambda1 < 0.0 || w.lambda2 < 0.0 {
        return Err(Error::Usage(format!(
            "loss weights must be non-negative, got λ1={} λ2={}",
            w.lambda1, w.lambda2
        )));
    }
    if w.eps <= 0.0 {
        return Err(Error::Usage(format!("ε must be positive, got {}", w.eps)));
    }
    let x = net.g.constant(bag.patches.clone());
    let h = net.encoder(x)?;
    let alpha = net.attention(h)?;
    let pooled = net.pool(h, alpha, opts.pool)?;
    let yhat = net.predict(pooled)?;
    let target = net.g.constant(Tensor::scalar(T::lit(bag.y)));
    let ld = net.g.apply(SquaredError, &[yhat, target])?;

    // The decoder only receives gradient when its loss is weighted in.
    let z = if w.lambda1 == 0.0 {
        let v = net.g.value(h).clone();
        net.g.constant(v)
    } else {
        h
    };
    let xhat = net.decoder(z)?;
    let lg = net.g.apply(ReconLoss { kind: opts.recon }, &[xhat, x])?;
    let r = net.g.apply(LogEpsSum { eps: T::lit(w.eps) }, &[alpha])?;
    let total = net.g.apply(
        LinearCombination {
            coeffs: vec![T::one(), T::lit(w.lambda1), T::lit(w.lambda2)],
        },
        &[ld, lg, r],
    )?;
    Ok(Built {
        yhat,
        pooled,
        alpha,
        h,
        ld,
        lg,
        r,
        total,
    })
}

fn collect_output<T: Scalar>(net: &Net<'_, T>, b: &Built, bag: &Bag<T>) -> Result<BagOutput<T>> {
    let scalar = |v: Var| -> Result<f64> { Ok(net.g.value(v).item()?.as_f64()) };
    let losses = LossBreakdown {
        total: scalar(b.total)?,
        discriminative: scalar(b.ld)?,
        generative: scalar(b.lg)?,
        attention_reg: scalar(b.r)?,
    };
    for (name, v) in [
        ("discriminative loss", losses.discriminative),
        ("generative loss", losses.generative),
        ("attention regulariser", losses.attention_reg),
    ] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "{name} is {v} on bag {}",
                bag.subject_id
            )));
        }
    }
    Ok(BagOutput {
        prediction: scalar(b.yhat)?,
        pooled: net.g.value(b.pooled).to_f64_vec(),
        attention: AttentionMap {
            weights: net.g.value(b.alpha).to_f64_vec(),
            patch_ids: (0..bag.len()).collect(),
            coordinates: bag.coordinates.clone(),
        },
        losses,
        latents: LatentSet(net.g.value(b.h).clone()),
    })
}

impl<T: Scalar> ModelParams<T> {
    /// Folds observed batch statistics into the running estimates.
    pub fn apply_bn_update(&mut self, u: &BnUpdate<T>) -> Result<()> {
        let mut state = RunningStats {
            mean: self.buffers.get(&format!("{}.running_mean", u.prefix))?.clone(),
            var: self.buffers.get(&format!("{}.running_var", u.prefix))?.clone(),
        };
        let m = T::lit(crate::ops::BN_MOMENTUM);
        let keep = T::one() - m;
        state.mean = state.mean.zip_map(&u.mean, |r, b| keep * r + m * b)?;
        state.var = state.var.zip_map(&u.var_unbiased, |r, b| keep * r + m * b)?;
        *self.buffers.get_mut(&format!("{}.running_mean", u.prefix))? = state.mean;
        *self.buffers.get_mut(&format!("{}.running_var", u.prefix))? = state.var;
        Ok(())
    }
}

/// Evaluates the objective on one bag without gradients.
pub fn forward_bag<T: Scalar>(
    params: &ModelParams<T>,
    bag: &Bag<T>,
    opts: &ForwardOptions,
) -> Result<BagOutput<T>> {
    let mut net = Net::frozen(params, opts.bn_mode);
    let built = build(&mut net, bag, opts)?;
    collect_output(&net, &built, bag)
}

/// Evaluates the objective on one bag and differentiates it with respect to
/// every parameter.
pub fn forward_backward<T: Scalar>(
    params: &ModelParams<T>,
    bag: &Bag<T>,
    opts: &ForwardOptions,
) -> Result<BagGradient<T>> {
    let train_decoder = opts.weights.lambda1 != 0.0;
    let mut net = Net::new(params, opts.bn_mode, [true, train_decoder, true, true]);
    let built = build(&mut net, bag, opts)?;
    let output = collect_output(&net, &built, bag)?;
    let mut grads = net.g.backward(built.total)?;
    let mut out = Vec::with_capacity(params.params.len());
    for (i, var) in net.vars.iter().enumerate() {
        let g = var
            .and_then(|v| grads.take(v))
            .unwrap_or_else(|| Tensor::zeros_like(params.params.tensor(i)));
        out.push(g);
    }
    Ok(BagGradient {
        output,
        grads: out,
        bn_updates: net.bn_updates(),
    })
}

/// Latent code of a single patch.
pub fn encode_patch<T: Scalar>(
    x: &Tensor<T>,
    params: &ModelParams<T>,
    bn_mode: BnMode,
) -> Result<Tensor<T>> {
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    let mut net = Net::frozen(params, bn_mode);
    let xv = net.g.constant(x.clone().reshape(shape)?);
    let h = net.encoder(xv)?;
    let d = params.arch.latent_dim;
    net.g.value(h).clone().reshape([d])
}

/// Latent codes of every patch of a bag, one row per patch.
pub fn encode_bag<T: Scalar>(
    bag: &Bag<T>,
    params: &ModelParams<T>,
    bn_mode: BnMode,
) -> Result<LatentSet<T>> {
    if bag.is_empty() {
        return Err(Error::Domain("cannot encode an empty bag".into()));
    }
    let mut net = Net::frozen(params, bn_mode);
    let xv = net.g.constant(bag.patches.clone());
    let h = net.encoder(xv)?;
    Ok(LatentSet(net.g.value(h).clone()))
}

/// Reduces latents to one vector. Weighted modes require `alpha`.
pub fn pool<T: Scalar>(
    h: &LatentSet<T>,
    mode: PoolMode,
    alpha: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    use crate::ops::DifferentiableOp;
    match (mode.uses_weights(), alpha) {
        (true, None) => Err(Error::Usage(format!("pool mode {mode:?} needs attention weights"))),
        (true, Some(a)) => {
            if a.data().iter().any(|&v| v < T::zero()) {
                return Err(Error::Domain("attention weights must be non-negative".into()));
            }
            let s = a.sum().as_f64();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("attention weights sum to {s}, not 1")));
            }
            WeightedPool {
                scale_by_count: mode == PoolMode::WeightedSum,
            }
            .forward(&[&h.0, a])
        }
        (false, _) => Pool::new(mode)?.forward(&[&h.0]),
    }
}

/// `W·(H_k − max(H, rows)) + b` for every row `k`.
pub fn equivariant_layer<T: Scalar>(
    h: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (hv, wv, bv) = (g.constant(h.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let out = g.equivariant(hv, wv, bv)?;
    Ok(g.value(out).clone())
}

/// Attention weights for a latent set.
pub fn attention<T: Scalar>(h: &LatentSet<T>, params: &ModelParams<T>) -> Result<AttentionMap> {
    let mut net = Net::frozen(params, BnMode::Eval);
    let hv = net.g.constant(h.0.clone());
    let a = net.attention(hv)?;
    Ok(AttentionMap {
        weights: net.g.value(a).to_f64_vec(),
        patch_ids: (0..h.len()).collect(),
        coordinates: None,
    })
}

/// Linear prediction from a pooled vector.
pub fn predict<T: Scalar>(v: &Tensor<T>, params: &ModelParams<T>) -> Result<f64> {
    let expected = params.arch.latent_dim;
    if v.len() != expected || v.ndim() != 1 {
        return Err(Error::dim(
            "predict",
            format!("pooled vector has shape {:?}, predictor expects [{expected}]", v.shape()),
        ));
    }
    let mut net = Net::frozen(params, BnMode::Eval);
    let vv = net.g.constant(v.clone());
    let y = net.predict(vv)?;
    Ok(net.g.value(y).item()?.as_f64())
}

/// Reconstruction of one patch from its latent code.
pub fn decode_latent<T: Scalar>(
    z: &Tensor<T>,
    params: &ModelParams<T>,
    bn_mode: BnMode,
) -> Result<Tensor<T>> {
    let d = params.arch.latent_dim;
    if z.len() != d || z.ndim() != 1 {
        return Err(Error::dim(
            "decode",
            format!("latent has shape {:?}, decoder expects [{d}]", z.shape()),
        ));
    }
    let mut net = Net::frozen(params, bn_mode);
    let zv = net.g.constant(z.clone().reshape([1, d])?);
    let x = net.decoder(zv)?;
    net.g.value(x).clone().reshape(params.arch.patch_shape.clone())
}

/// `Σ_j log(α_j + ε)`.
pub fn regularizer_attention(alpha: &[f64], eps: f64) -> Result<f64> {
    use crate::ops::DifferentiableOp;
    let a = Tensor::from_vec(alpha.to_vec());
    LogEpsSum { eps }.forward(&[&a])?.item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, LossWeights};
    use crate::ops::ReconKind;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    fn tiny() -> Architecture {
        Architecture {
            patch_shape: vec![6, 6],
            conv: vec![crate::model::ConvSpec::new(2, 3, 1)],
            latent_dim: 3,
            attention_width: 2,
            batch_norm: false,
        }
    }

    #[test]
    fn zero_model_encodes_to_zero() {
        let p = ModelParams::<f64>::zeros(&Architecture::digits()).unwrap();
        let z = encode_patch(&Tensor::zeros([28, 28]), &p, BnMode::Eval).unwrap();
        assert_eq!(z.shape(), &[16]);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_patch_checks_shape() {
        let p = ModelParams::<f64>::init(&Architecture::digits(), 0).unwrap();
        let err = encode_patch(&Tensor::zeros([27, 28]), &p, BnMode::Eval).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn duplicates_encode_identically() {
        let p = ModelParams::<f64>::init(&tiny(), 1).unwrap();
        let x = Tensor::from_f64([6, 6], &(0..36).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>())
            .unwrap();
        let bag = Bag::from_patches("b", &[x.clone(), x.clone(), x.clone()], 0.0).unwrap();
        let h = encode_bag(&bag, &p, BnMode::Eval).unwrap();
        assert_eq!(h.len(), 3);
        assert_eq!(h.0.row(0), h.0.row(1));
        assert_eq!(h.0.row(1), h.0.row(2));
        assert_eq!(h.0.row(0), encode_patch(&x, &p, BnMode::Eval).unwrap().data());
    }

    #[test]
    fn pool_examples() {
        let h = LatentSet(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(pool(&h, PoolMode::Mean, None).unwrap().data(), &[2.0, 3.0]);
        assert_eq!(pool(&h, PoolMode::Max, None).unwrap().data(), &[3.0, 4.0]);
        let a = t(&[2], &[1.0, 0.0]);
        assert_eq!(pool(&h, PoolMode::Weighted, Some(&a)).unwrap().data(), &[1.0, 2.0]);
        assert!(matches!(pool(&h, PoolMode::Weighted, None), Err(Error::Usage(_))));
        let bad = t(&[2], &[0.7, 0.7]);
        assert!(pool(&h, PoolMode::Weighted, Some(&bad)).is_err());
    }

    #[test]
    fn equivariant_layer_examples() {
        let h = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = equivariant_layer(&h, &Tensor::eye(2), &Tensor::zeros([2])).unwrap();
        assert_eq!(y.data(), &[-2.0, -2.0, 0.0, 0.0]);
        let one = t(&[1, 2], &[5.0, -7.0]);
        let y = equivariant_layer(&one, &Tensor::eye(2), &Tensor::zeros([2])).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
        assert!(equivariant_layer(&h, &Tensor::eye(3), &Tensor::zeros([3])).is_err());
    }

    #[test]
    fn zero_attention_layers_give_uniform_weights() {
        let mut p = ModelParams::<f64>::init(&tiny(), 2).unwrap();
        for name in ["attention.el1.weight", "attention.el2.weight"] {
            p.params.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let h = LatentSet(t(&[4, 3], &[1.0, 5.0, -2.0, 0.3, 0.1, 9.0, 2.0, 2.0, 2.0, -1.0, 0.0, 1.0]));
        let a = attention(&h, &p).unwrap();
        for w in a.weights {
            assert!((w - 0.25).abs() < 1e-15);
        }
        let single = LatentSet(t(&[1, 3], &[3.0, 1.0, 4.0]));
        assert_eq!(attention(&single, &p).unwrap().weights, vec![1.0]);
    }

    #[test]
    fn predict_examples() {
        let mut p = ModelParams::<f64>::zeros(&tiny()).unwrap();
        p.params.get_mut("predictor.bias").unwrap().data_mut()[0] = 1.0;
        let v = t(&[3], &[1.0, 0.0, 0.0]);
        assert_eq!(predict(&v, &p).unwrap(), 1.0);
        p.params.get_mut("predictor.weight").unwrap().data_mut()[0] = 3.0;
        assert_eq!(predict(&v, &p).unwrap(), 4.0);
        assert!(predict(&t(&[2], &[1.0, 0.0]), &p).is_err());
    }

    #[test]
    fn decode_constant_bias() {
        let mut p = ModelParams::<f64>::zeros(&Architecture::digits()).unwrap();
        p.params.get_mut("decoder.deconv0.bias").unwrap().data_mut()[0] = 0.25;
        let x = decode_latent(&Tensor::zeros([16]), &p, BnMode::Eval).unwrap();
        assert_eq!(x.shape(), &[28, 28]);
        assert!(x.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn regulariser_values() {
        let sparse = regularizer_attention(&[1.0, 0.0, 0.0, 0.0], 1e-8).unwrap();
        let want = (1.0f64 + 1e-8).ln() + 3.0 * (1e-8f64).ln();
        assert!((sparse - want).abs() < 1e-12);
        assert!((sparse + 55.26).abs() < 5e-3);
        let uniform = regularizer_attention(&[0.25; 4], 1e-8).unwrap();
        assert!((uniform - 4.0 * (0.25f64 + 1e-8).ln()).abs() < 1e-12);
        assert!((uniform + 5.5452).abs() < 5e-5);
        assert!(sparse < uniform);
        assert!(regularizer_attention(&[1.5, -0.5], 1e-8).is_err());
    }

    #[test]
    fn loss_breakdown_identity_and_collapse() {
        let p = ModelParams::<f64>::init(&tiny(), 5).unwrap();
        let patches: Vec<Tensor<f64>> = (0..4)
            .map(|k| {
                Tensor::from_f64([6, 6], &(0..36).map(|i| ((i * (k + 2)) as f64).cos()).collect::<Vec<_>>())
                    .unwrap()
            })
            .collect();
        let bag = Bag::from_patches("b", &patches, 2.5).unwrap();
        let mut opts = ForwardOptions {
            weights: LossWeights { lambda1: 3.0, lambda2: 0.5, eps: 1e-8 },
            pool: PoolMode::Weighted,
            recon: ReconKind::Mse,
            bn_mode: BnMode::Eval,
        };
        let out = forward_bag(&p, &bag, &opts).unwrap();
        let l = out.losses;
        let recomposed = l.discriminative + 3.0 * l.generative + 0.5 * l.attention_reg;
        assert!((l.total - recomposed).abs() <= 1e-12 * l.total.abs().max(1.0));
        let s: f64 = out.attention.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);

        opts.weights.lambda1 = 0.0;
        opts.weights.lambda2 = 0.0;
        let out = forward_bag(&p, &bag, &opts).unwrap();
        assert_eq!(out.losses.total, (2.5 - out.prediction).powi(2));
        assert!(out.losses.generative > 0.0);
    }
}
