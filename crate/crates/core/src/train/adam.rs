use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamGroup};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Usage(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Usage(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Usage(format!("adam eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// First and second moment estimates per parameter, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Scalar = f64> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.params.tensors().map(Tensor::zeros_like).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn cast<U: Scalar>(&self) -> OptimizerState<U> {
        OptimizerState {
            m: self.m.iter().map(Tensor::cast).collect(),
            v: self.v.iter().map(Tensor::cast).collect(),
            t: self.t,
        }
    }
}

/// One bias-corrected Adam update. Parameters are left untouched when any
/// gradient is non-finite.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    let n = params.params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Usage(format!(
            "adam: {n} parameters, {} gradients, {} moment slots",
            grads.len(),
            state.m.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        let p = params.params.tensor(i);
        if g.shape() != p.shape() {
            return Err(Error::shapes("adam", g.shape(), p.shape()));
        }
        if !g.all_finite() {
            let name = params.params.name(i);
            let group = ParamGroup::of(name).map_or("unknown", ParamGroup::name);
            return Err(Error::Numeric(format!(
                "non-finite gradient in the {group} group (parameter {name})"
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::lit(1.0 - cfg.beta1.powi(t));
    let c2 = T::lit(1.0 - cfg.beta2.powi(t));
    let lr = T::lit(cfg.learning_rate);
    let eps = T::lit(cfg.eps);
    let one = T::one();
    for (i, g) in grads.iter().enumerate() {
        let p = params.params.tensor_mut(i).data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for k in 0..p.len() {
            let gk = g.data()[k];
            m[k] = b1 * m[k] + (one - b1) * gk;
            v[k] = b2 * v[k] + (one - b2) * gk * gk;
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            p[k] = p[k] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, ConvSpec};

    fn tiny() -> ModelParams {
        let arch = Architecture {
            patch_shape: vec![4, 4],
            conv: vec![ConvSpec::new(1, 3, 1)],
            latent_dim: 1,
            attention_width: 1,
            batch_norm: false,
        };
        ModelParams::zeros(&arch).unwrap()
    }

    fn unit_grad_on_bias(p: &ModelParams) -> Vec<Tensor> {
        let mut g: Vec<Tensor> = p.params.tensors().map(Tensor::zeros_like).collect();
        let i = p.params.index_of("predictor.bias").unwrap();
        g[i].data_mut()[0] = 1.0;
        g
    }

    #[test]
    fn first_step_size() {
        let mut p = tiny();
        let mut s = OptimizerState::new(&p);
        let g = unit_grad_on_bias(&p);
        adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        let b = p.params.get("predictor.bias").unwrap().data()[0];
        assert!((b + 0.000999999990).abs() < 1e-15, "{b}");
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = tiny();
        let before = p.clone();
        let mut s = OptimizerState::new(&p);
        let g: Vec<Tensor> = p.params.tensors().map(Tensor::zeros_like).collect();
        adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn stateful_steps_differ_from_doubled_rate() {
        let cfg = AdamConfig::default();
        let mut twice = tiny();
        let mut s = OptimizerState::new(&twice);
        let g = unit_grad_on_bias(&twice);
        adam_step(&mut twice, &g, &mut s, &cfg).unwrap();
        adam_step(&mut twice, &g, &mut s, &cfg).unwrap();

        let mut once = tiny();
        let mut s1 = OptimizerState::new(&once);
        let doubled = AdamConfig { learning_rate: 2e-3, ..cfg };
        adam_step(&mut once, &g, &mut s1, &doubled).unwrap();

        let a = twice.params.get("predictor.bias").unwrap().data()[0];
        let b = once.params.get("predictor.bias").unwrap().data()[0];
        // with a constant gradient m̂/√v̂ = 1 on every step, so the parameter
        // lands in the same place; the state does not
        let want = -2.0 * 1e-3 / (1.0 + 1e-8);
        assert!((a - want).abs() < 1e-15);
        assert!((a - b).abs() < 1e-15);
        assert_eq!((s.t, s1.t), (2, 1));
        assert_ne!(s, s1);

        // feeding both runs the same next gradient now separates them
        let mut g2 = g.clone();
        let i = twice.params.index_of("predictor.bias").unwrap();
        g2[i].data_mut()[0] = -1.0;
        adam_step(&mut twice, &g2, &mut s, &cfg).unwrap();
        adam_step(&mut once, &g2, &mut s1, &cfg).unwrap();
        let a = twice.params.get("predictor.bias").unwrap().data()[0];
        let b = once.params.get("predictor.bias").unwrap().data()[0];
        assert!((a - b).abs() > 1e-6, "{a} {b}");
    }

    #[test]
    fn non_finite_gradient_names_group() {
        let mut p = tiny();
        let before = p.clone();
        let mut s = OptimizerState::new(&p);
        let mut g: Vec<Tensor> = p.params.tensors().map(Tensor::zeros_like).collect();
        let i = p.params.index_of("attention.el1.weight").unwrap();
        g[i].data_mut()[0] = f64::NAN;
        let err = adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap_err();
        assert!(matches!(&err, Error::Numeric(m) if m.contains("attention")), "{err}");
        assert_eq!(p, before);
        assert_eq!(s.t, 0);
    }
}
