use serde::{Deserialize, Serialize};

use super::{arity, DifferentiableOp, Grads};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `x[n,in] · W[out,in]ᵀ + b[out]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Affine;

impl<T: Scalar> DifferentiableOp<T> for Affine {
    fn name(&self) -> &'static str {
        "affine"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        arity("affine", inputs, 3)?;
        let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
        if x.ndim() != 2 || w.ndim() != 2 || x.shape()[1] != w.shape()[1] {
            return Err(Error::shapes("affine", x.shape(), w.shape()));
        }
        let (n, inp, out) = (x.shape()[0], x.shape()[1], w.shape()[0]);
        if b.shape() != [out] {
            return Err(Error::shapes("affine", w.shape(), b.shape()));
        }
        let mut y = Tensor::zeros([n, out]);
        for row in y.data_mut().chunks_mut(out) {
            row.copy_from_slice(b.data());
        }
        T::gemm(false, true, n, out, inp, T::one(), x.data(), w.data(), T::one(), y.data_mut());
        Ok(y)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        wanted: &[bool],
    ) -> Result<Grads<T>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (n, inp, out) = (x.shape()[0], x.shape()[1], w.shape()[0]);
        let gx = wanted[0].then(|| {
            let mut gx = Tensor::zeros([n, inp]);
            T::gemm(false, false, n, inp, out, T::one(), g.data(), w.data(), T::zero(), gx.data_mut());
            gx
        });
        let gw = wanted[1].then(|| {
            let mut gw = Tensor::zeros([out, inp]);
            T::gemm(true, false, out, inp, n, T::one(), g.data(), x.data(), T::zero(), gw.data_mut());
            gw
        });
        let gb = wanted[2].then(|| {
            let mut gb = vec![T::zero(); out];
            for row in g.data().chunks(out) {
                for (a, &v) in gb.iter_mut().zip(row) {
                    *a = *a + v;
                }
            }
            Tensor::from_vec(gb)
        });
        Ok(vec![gx, gw, gb])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// `x` for `x > 0`, `e^x - 1` otherwise (alpha = 1).
    Elu,
    Sigmoid,
}

fn stable_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> DifferentiableOp<T> for Activation {
    fn name(&self) -> &'static str {
        match self {
            Activation::Elu => "elu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        arity("activation", inputs, 1)?;
        Ok(match self {
            Activation::Elu => inputs[0].map(|v| if v > T::zero() { v } else { v.exp_m1() }),
            Activation::Sigmoid => inputs[0].map(stable_sigmoid),
        })
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        g: &Tensor<T>,
        wanted: &[bool],
    ) -> Result<Grads<T>> {
        if !wanted[0] {
            return Ok(vec![None]);
        }
        let x = inputs[0].data();
        let y = output.data();
        let data = g
            .data()
            .iter()
            .enumerate()
            .map(|(i, &gi)| match self {
                // derivative at exactly 0 is taken from the right
                Activation::Elu => {
                    if x[i] >= T::zero() {
                        gi
                    } else {
                        gi * (y[i] + T::one())
                    }
                }
                Activation::Sigmoid => gi * y[i] * (T::one() - y[i]),
            })
            .collect();
        Ok(vec![Some(Tensor::new(inputs[0].shape().to_vec(), data)?)])
    }
}

/// Softmax over every element of the input, stabilised by max subtraction.
/// The normaliser is summed in sorted order so that permuting the input
/// permutes the output bit for bit.
#[derive(Clone, Copy, Debug, Default)]
pub struct Softmax;

impl<T: Scalar> DifferentiableOp<T> for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        arity("softmax", inputs, 1)?;
        let v = inputs[0];
        if v.is_empty() {
            return Err(Error::Domain("softmax of an empty vector".into()));
        }
        let m = v
            .data()
            .iter()
            .copied()
            .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
        let e = v.map(|x| (x - m).exp());
        let mut sorted = e.data().to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let z: T = sorted.into_iter().sum();
        Ok(e.map(|x| x / z))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        g: &Tensor<T>,
        wanted: &[bool],
    ) -> Result<Grads<T>> {
        if !wanted[0] {
            return Ok(vec![None]);
        }
        let s = output.data();
        let inner: T = g.data().iter().zip(s).map(|(&a, &b)| a * b).sum();
        let data = g.data().iter().zip(s).map(|(&gi, &si)| si * (gi - inner)).collect();
        Ok(vec![Some(Tensor::new(inputs[0].shape().to_vec(), data)?)])
    }
}

#[derive(Clone, Debug)]
pub struct Reshape {
    pub shape: Vec<usize>,
}

impl<T: Scalar> DifferentiableOp<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        arity("reshape", inputs, 1)?;
        inputs[0].clone().reshape(self.shape.clone())
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        wanted: &[bool],
    ) -> Result<Grads<T>> {
        if !wanted[0] {
            return Ok(vec![None]);
        }
        Ok(vec![Some(g.clone().reshape(inputs[0].shape().to_vec())?)])
    }
}

fn column_argmax<T: Scalar>(h: &Tensor<T>) -> Vec<usize> {
    let (n, d) = (h.shape()[0], h.shape()[1]);
    (0..d)
        .map(|j| {
            let mut best = 0;
            for k in 1..n {
                // strict comparison: first index wins ties
                if h.data()[k * d + j] > h.data()[best * d + j] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// `H − max(H, rows)`: subtracts the column-wise maximum from every row.
/// The inner step of an equivariant layer.
#[derive(Clone, Debug, Default)]
pub struct ColMaxCenter {
    argmax: Vec<usize>,
}

impl<T: Scalar> DifferentiableOp<T> for ColMaxCenter {
    fn name(&self) -> &'static str {
        "col_max_center"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        arity("col_max_center", inputs, 1)?;
        let h = inputs[0];
        if h.ndim() != 2 || h.shape()[0] == 0 {
            return Err(Error::dim(
                "col_max_center",
                format!("need a non-empty [N,d] matrix, got {:?}", h.shape()),
            ));
        }
        let d = h.shape()[1];
        self.argmax = column_argmax(h);
        let maxima: Vec<T> = self
            .argmax
            .iter()
            .enumerate()
            .map(|(j, &k)| h.data()[k * d + j])
            .collect();
        let mut out = h.clone();
        for row in out.data_mut().chunks_mut(d) {
            for (v, &m) in row.iter_mut().zip(&maxima) {
                *v = *v - m;
            }
        }
        Ok(out)
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        wanted: &[bool],
    ) -> Result<Grads<T>> {
        if !wanted[0] {
            return Ok(vec![None]);
        }
        let d = g.shape()[1];
        let mut gh = g.clone();
        for (j, &k) in self.argmax.iter().enumerate() {
            let col: T = g.data().iter().skip(j).step_by(d).copied().sum();
            gh.data_mut()[k * d + j] = gh.data()[k * d + j] - col;
        }
        Ok(vec![Some(gh)])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    /// Column means.
    Mean,
    /// Column maxima (first row wins ties).
    Max,
    /// Column sums.
    Sum,
    /// `Σ_j α_j H_j` with attention weights on the simplex.
    Weighted,
    /// `N · Σ_j α_j H_j`; equals [`PoolMode::Sum`] for uniform weights.
    WeightedSum,
}

impl PoolMode {
    pub fn uses_weights(self) -> bool {
        matches!(self, PoolMode::Weighted | PoolMode::WeightedSum)
    }
}

/// Unweighted reduction of `[N,d]` over rows.
#[derive(Clone, Debug)]
pub struct Pool {
    mode: PoolMode,
    argmax: Vec<usize>,
}

impl Pool {
    pub fn new(mode: PoolMode) -> Result<Self> {
        if mode.uses_weights() {
            return Err(Error::Usage(format!(
                "pool mode {mode:?} needs attention weights"
            )));
        }
        Ok(Self {
            mode,
            argmax: Vec::new(),
        })
    }
}

impl<T: Scalar> DifferentiableOp<T> for Pool {
    fn name(&self) -> &'static str {
        "pool"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        arity("pool", inputs, 1)?;
        let h = inputs[0];
        if h.ndim() != 2 || h.shape()[0] == 0 {
            return Err(Error::dim("pool", format!("need [N>=1,d], got {:?}", h.shape())));
        }
        let (n, d) = (h.shape()[0], h.shape()[1]);
        let mut out = vec![T::zero(); d];
        match self.mode {
            PoolMode::Max => {
                self.argmax = column_argmax(h);
                for (j, &k) in self.argmax.iter().enumerate() {
                    out[j] = h.data()[k * d + j];
                }
            }
            _ => {
                for row in h.data().chunks(d) {
                    for (a, &v) in out.iter_mut().zip(row) {
                        *a = *a + v;
                    }
                }
                if self.mode == PoolMode::Mean {
                    let inv = T::one() / T::lit(n as f64);
                    out.iter_mut().for_each(|v| *v = *v * inv);
                }
            }
        }
        Ok(Tensor::from_vec(out))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        wanted: &[bool],
    ) -> Result<Grads<T>> {
        if !wanted[0] {
            return Ok(vec![None]);
        }
        let h = inputs[0];
        let (n, d) = (h.shape()[0], h.shape()[1]);
        let mut gh = Tensor::zeros([n, d]);
        match self.mode {
            PoolMode::Max => {
                for (j, &k) in self.argmax.iter().enumerate() {
                    gh.data_mut()[k * d + j] = g.data()[j];
                }
            }
            _ => {
                let scale = if self.mode == PoolMode::Mean {
                    T::one() / T::lit(n as f64)
                } else {
                    T::one()
                };
                for row in gh.data_mut().chunks_mut(d) {
                    for (a, &v) in row.iter_mut().zip(g.data()) {
                        *a = v * scale;
                    }
                }
            }
        }
        Ok(vec![Some(gh)])
    }
}

/// Attention-weighted reduction: inputs `[H: [N,d], α: [N]]`.
#[derive(Clone, Copy, Debug)]
pub struct WeightedPool {
    pub scale_by_count: bool,
}

impl WeightedPool {
    fn scale<T: Scalar>(&self, n: usize) -> T {
        if self.scale_by_count {
            T::lit(n as f64)
        } else {
            T::one()
        }
    }
}

impl<T: Scalar> DifferentiableOp<T> for WeightedPool {
    fn name(&self) -> &'static str {
        "weighted_pool"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        arity("weighted_pool", inputs, 2)?;
        let (h, a) = (inputs[0], inputs[1]);
        if h.ndim() != 2 || h.shape()[0] == 0 || a.len() != h.shape()[0] {
            return Err(Error::shapes("weighted_pool", h.shape(), a.shape()));
        }
        let d = h.shape()[1];
        let c: T = self.scale(h.shape()[0]);
        let mut out = vec![T::zero(); d];
        for (row, &w) in h.data().chunks(d).zip(a.data()) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o = *o + w * v;
            }
        }
        out.iter_mut().for_each(|v| *v = *v * c);
        Ok(Tensor::from_vec(out))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        wanted: &[bool],
    ) -> Result<Grads<T>> {
        let (h, a) = (inputs[0], inputs[1]);
        let (n, d) = (h.shape()[0], h.shape()[1]);
        let c: T = self.scale(n);
        let gh = wanted[0].then(|| {
            let mut gh = Tensor::zeros([n, d]);
            for (row, &w) in gh.data_mut().chunks_mut(d).zip(a.data()) {
                for (o, &gv) in row.iter_mut().zip(g.data()) {
                    *o = c * w * gv;
                }
            }
            gh
        });
        let ga = wanted[1]
            .then(|| {
                let data = h
                    .data()
                    .chunks(d)
                    .map(|row| c * row.iter().zip(g.data()).map(|(&x, &y)| x * y).sum::<T>())
                    .collect();
                Tensor::new(a.shape().to_vec(), data)
            })
            .transpose()?;
        Ok(vec![gh, ga])
    }
}

/// `(prediction − target)²` for one-element inputs.
#[derive(Clone, Copy, Debug, Default)]
pub struct SquaredError;

impl<T: Scalar> DifferentiableOp<T> for SquaredError {
    fn name(&self) -> &'static str {
        "squared_error"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        arity("squared_error", inputs, 2)?;
        let r = inputs[0].item()? - inputs[1].item()?;
        Ok(Tensor::scalar(r * r))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        wanted: &[bool],
    ) -> Result<Grads<T>> {
        let r = inputs[0].item()? - inputs[1].item()?;
        let d = T::lit(2.0) * r * g.item()?;
        Ok(vec![
            wanted[0].then(|| Tensor::full(inputs[0].shape().to_vec(), d)),
            wanted[1].then(|| Tensor::full(inputs[1].shape().to_vec(), -d)),
        ])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconKind {
    /// Mean squared error per patch.
    Mse,
    /// Unsquared Euclidean norm per patch.
    L2norm,
}

/// Reconstruction loss over a bag: per-patch distance between `x̂` and `x`
/// (leading axis = patch), averaged over patches.
#[derive(Clone, Copy, Debug)]
pub struct ReconLoss {
    pub kind: ReconKind,
}

impl ReconLoss {
    fn per_patch<T: Scalar>(&self, xhat: &[T], x: &[T]) -> T {
        let ss: T = xhat.iter().zip(x).map(|(&a, &b)| (a - b) * (a - b)).sum();
        match self.kind {
            ReconKind::Mse => ss / T::lit(x.len() as f64),
            ReconKind::L2norm => ss.sqrt(),
        }
    }
}

impl<T: Scalar> DifferentiableOp<T> for ReconLoss {
    fn name(&self) -> &'static str {
        "recon_loss"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        arity("recon_loss", inputs, 2)?;
        let (xhat, x) = (inputs[0], inputs[1]);
        if xhat.shape() != x.shape() || x.ndim() == 0 || x.shape()[0] == 0 {
            return Err(Error::shapes("recon_loss", xhat.shape(), x.shape()));
        }
        let n = x.shape()[0];
        let total: T = (0..n).map(|k| self.per_patch(xhat.row(k), x.row(k))).sum();
        Ok(Tensor::scalar(total / T::lit(n as f64)))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        wanted: &[bool],
    ) -> Result<Grads<T>> {
        let (xhat, x) = (inputs[0], inputs[1]);
        let n = x.shape()[0];
        let p = x.row_len();
        let g = g.item()? / T::lit(n as f64);
        let mut gx = Tensor::zeros(x.shape().to_vec());
        for k in 0..n {
            let (a, b) = (xhat.row(k), x.row(k));
            let coef = match self.kind {
                ReconKind::Mse => T::lit(2.0) / T::lit(p as f64),
                ReconKind::L2norm => {
                    let norm = self.per_patch(a, b);
                    // zero subgradient at a perfect reconstruction
                    if norm > T::zero() {
                        T::one() / norm
                    } else {
                        T::zero()
                    }
                }
            };
            for ((o, &ai), &bi) in gx.row_mut(k).iter_mut().zip(a).zip(b) {
                *o = g * coef * (ai - bi);
            }
        }
        let gneg = wanted[1].then(|| gx.scale(-T::one()));
        Ok(vec![wanted[0].then_some(gx), gneg])
    }
}

/// `Σ_j log(α_j + ε)`; small when the weights are sparse.
#[derive(Clone, Copy, Debug)]
pub struct LogEpsSum<T> {
    pub eps: T,
}

impl<T: Scalar> DifferentiableOp<T> for LogEpsSum<T> {
    fn name(&self) -> &'static str {
        "log_eps_sum"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        arity("log_eps_sum", inputs, 1)?;
        if self.eps <= T::zero() {
            return Err(Error::Domain(format!("epsilon must be positive, got {}", self.eps)));
        }
        let a = inputs[0];
        if let Some(v) = a.data().iter().find(|&&v| v < T::zero()) {
            return Err(Error::Domain(format!("negative attention weight {v}")));
        }
        Ok(Tensor::scalar(a.data().iter().map(|&v| (v + self.eps).ln()).sum()))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        wanted: &[bool],
    ) -> Result<Grads<T>> {
        if !wanted[0] {
            return Ok(vec![None]);
        }
        let g = g.item()?;
        Ok(vec![Some(inputs[0].map(|v| g / (v + self.eps)))])
    }
}

/// `Σ_i c_i · s_i` over one-element inputs.
#[derive(Clone, Debug)]
pub struct LinearCombination<T> {
    pub coeffs: Vec<T>,
}

impl<T: Scalar> DifferentiableOp<T> for LinearCombination<T> {
    fn name(&self) -> &'static str {
        "linear_combination"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        arity("linear_combination", inputs, self.coeffs.len())?;
        let mut acc = T::zero();
        for (t, &c) in inputs.iter().zip(&self.coeffs) {
            acc = acc + c * t.item()?;
        }
        Ok(Tensor::scalar(acc))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        wanted: &[bool],
    ) -> Result<Grads<T>> {
        let g = g.item()?;
        Ok(inputs
            .iter()
            .zip(&self.coeffs)
            .zip(wanted)
            .map(|((t, &c), &w)| w.then(|| Tensor::full(t.shape().to_vec(), c * g)))
            .collect())
    }
}
