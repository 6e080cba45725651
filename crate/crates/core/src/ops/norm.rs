use serde::{Deserialize, Serialize};

use super::{arity, DifferentiableOp, Grads};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BnMode {
    /// Normalise by the statistics of the current batch.
    Train,
    /// Normalise by the running statistics.
    Eval,
}

/// Per-channel running mean and variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros([channels]),
            var: Tensor::full([channels], T::one()),
        }
    }
}

/// Batch normalisation over `[n, c, ...]`: inputs `[x, gamma[c], beta[c]]`.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    mode: BnMode,
    eps: T,
    running: RunningStats<T>,
    // filled by forward
    xhat: Vec<T>,
    inv_std: Vec<T>,
    batch_mean: Vec<T>,
    batch_var_unbiased: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(mode: BnMode, running: RunningStats<T>) -> Self {
        Self {
            mode,
            eps: T::lit(BN_EPS),
            running,
            xhat: Vec::new(),
            inv_std: Vec::new(),
            batch_mean: Vec::new(),
            batch_var_unbiased: Vec::new(),
        }
    }

    /// Exponential moving average update with the statistics of the last
    /// train-mode forward pass.
    pub fn update_running(&self, state: &mut RunningStats<T>) {
        let m = T::lit(BN_MOMENTUM);
        let keep = T::one() - m;
        for (r, &b) in state.mean.data_mut().iter_mut().zip(&self.batch_mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in state.var.data_mut().iter_mut().zip(&self.batch_var_unbiased) {
            *r = keep * *r + m * b;
        }
    }
}

fn channel_view(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::dim("batchnorm", format!("need [n, c, ...], got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

impl<T: Scalar> DifferentiableOp<T> for BatchNorm<T> {
    fn name(&self) -> &'static str {
        "batchnorm"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        arity("batchnorm", inputs, 3)?;
        let (x, gamma, beta) = (inputs[0], inputs[1], inputs[2]);
        let (n, c, sp) = channel_view(x.shape())?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shapes("batchnorm", x.shape(), gamma.shape()));
        }
        if self.running.mean.len() != c || self.running.var.len() != c {
            return Err(Error::shapes("batchnorm", x.shape(), self.running.mean.shape()));
        }
        if n == 0 {
            return Err(Error::Domain("batchnorm over an empty batch".into()));
        }
        let count = n * sp;
        let (mean, var): (Vec<T>, Vec<T>) = match self.mode {
            BnMode::Eval => (self.running.mean.data().to_vec(), self.running.var.data().to_vec()),
            BnMode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for i in 0..n {
                        s = s + x.data()[(i * c + ch) * sp..(i * c + ch + 1) * sp].iter().copied().sum();
                    }
                    let mu = s / T::lit(count as f64);
                    let mut ss = T::zero();
                    for i in 0..n {
                        for &v in &x.data()[(i * c + ch) * sp..(i * c + ch + 1) * sp] {
                            ss = ss + (v - mu) * (v - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = ss / T::lit(count as f64);
                }
                self.batch_mean = mean.clone();
                self.batch_var_unbiased = var
                    .iter()
                    .map(|&v| {
                        if count > 1 {
                            v * T::lit(count as f64) / T::lit((count - 1) as f64)
                        } else {
                            v
                        }
                    })
                    .collect();
                (mean, var)
            }
        };
        self.inv_std = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();
        self.xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for i in 0..n {
            for ch in 0..c {
                let r = (i * c + ch) * sp..(i * c + ch + 1) * sp;
                for j in r {
                    let xh = (x.data()[j] - mean[ch]) * self.inv_std[ch];
                    self.xhat[j] = xh;
                    out[j] = gamma.data()[ch] * xh + beta.data()[ch];
                }
            }
        }
        Tensor::new(x.shape().to_vec(), out)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        wanted: &[bool],
    ) -> Result<Grads<T>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let (n, c, sp) = channel_view(x.shape())?;
        let count = T::lit((n * sp) as f64);
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for i in 0..n {
            for ch in 0..c {
                for j in (i * c + ch) * sp..(i * c + ch + 1) * sp {
                    sum_g[ch] = sum_g[ch] + g.data()[j];
                    sum_gx[ch] = sum_gx[ch] + g.data()[j] * self.xhat[j];
                }
            }
        }
        let gx = wanted[0].then(|| {
            let mut gx = vec![T::zero(); x.len()];
            for i in 0..n {
                for ch in 0..c {
                    let scale = gamma.data()[ch] * self.inv_std[ch];
                    for j in (i * c + ch) * sp..(i * c + ch + 1) * sp {
                        gx[j] = match self.mode {
                            BnMode::Eval => scale * g.data()[j],
                            BnMode::Train => {
                                scale
                                    * (g.data()[j]
                                        - sum_g[ch] / count
                                        - self.xhat[j] * sum_gx[ch] / count)
                            }
                        };
                    }
                }
            }
            Tensor::new(x.shape().to_vec(), gx)
        });
        Ok(vec![
            gx.transpose()?,
            wanted[1].then(|| Tensor::from_vec(sum_gx)),
            wanted[2].then(|| Tensor::from_vec(sum_g)),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::batchnorm;

    #[test]
    fn constant_input_normalises_to_zero() {
        let x = Tensor::<f64>::full([4, 2, 3], 2.5);
        let mut st = RunningStats::new(2);
        let y = batchnorm(&x, &Tensor::full([2], 1.0), &Tensor::zeros([2]), BnMode::Train, &mut st)
            .unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));
        // running mean moved by momentum towards 2.5, variance towards 0
        assert!((st.mean.data()[0] - 0.25).abs() < 1e-12);
        assert!((st.var.data()[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn shift_by_beta() {
        let x = Tensor::<f64>::from_f64([4, 1], &[-1.0, 1.0, -1.0, 1.0]).unwrap();
        let mut st = RunningStats::new(1);
        let y = batchnorm(&x, &Tensor::full([1], 1.0), &Tensor::full([1], 5.0), BnMode::Train, &mut st)
            .unwrap();
        let mean = y.sum() / 4.0;
        assert!((mean - 5.0).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_with_fresh_stats_is_near_identity() {
        let x = Tensor::<f64>::from_f64([2, 1, 2], &[0.3, -1.2, 4.0, 0.0]).unwrap();
        let mut st = RunningStats::new(1);
        let y = batchnorm(&x, &Tensor::full([1], 1.0), &Tensor::zeros([1]), BnMode::Eval, &mut st)
            .unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b / (1.0 + BN_EPS).sqrt()).abs() < 1e-15);
            assert!((a - b).abs() < 1e-4);
        }
        assert_eq!(st, RunningStats::new(1));
    }

    #[test]
    fn empty_batch_is_a_domain_error() {
        let x = Tensor::<f64>::zeros([0, 1, 2]);
        let mut st = RunningStats::new(1);
        let err = batchnorm(&x, &Tensor::full([1], 1.0), &Tensor::zeros([1]), BnMode::Train, &mut st)
            .unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }
}
