//! Shared fixtures for the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setvec_core::data::Bag;
use setvec_core::gradcheck::{central_difference, grad_check, relative_error, DEFAULT_STEP};
use setvec_core::model::{
    forward_backward, forward_bag, Architecture, ConvSpec, ForwardOptions, LossWeights, ModelParams, ParamGroup,
};
use setvec_core::ops::*;
use setvec_core::Tensor;

pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const END_TO_END_TOL: f64 = 1e-3;

pub fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn random_bag(rng: &mut ChaCha8Rng, n: usize, patch: &[usize], y: f64) -> Bag {
    let mut shape = vec![n];
    shape.extend_from_slice(patch);
    Bag::new("g", rand_tensor(rng, &shape, 0.0, 1.0), y).unwrap()
}

/// A named maximum relative error.
pub type Check = (String, f64);

fn run(name: impl Into<String>, op: &mut dyn DifferentiableOp<f64>, inputs: &[Tensor]) -> Check {
    (name.into(), grad_check(op, inputs, DEFAULT_STEP).unwrap())
}

/// Central-difference check of every differentiable primitive.
pub fn primitive_checks() -> Vec<Check> {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut out = Vec::new();
    let x = rand_tensor(&mut r, &[4, 5], -2.0, 2.0);
    let w = rand_tensor(&mut r, &[3, 5], -1.0, 1.0);
    let b = rand_tensor(&mut r, &[3], -1.0, 1.0);
    out.push(run("affine", &mut Affine, &[x.clone(), w, b]));
    out.push(run("elu", &mut Activation::Elu, std::slice::from_ref(&x)));
    out.push(run("sigmoid", &mut Activation::Sigmoid, &[x]));

    let v = rand_tensor(&mut r, &[7], -3.0, 3.0);
    out.push(run("softmax", &mut Softmax, &[v]));
    let x = rand_tensor(&mut r, &[2, 3, 4], -1.0, 1.0);
    out.push(run("reshape", &mut Reshape { shape: vec![2, 12] }, &[x]));
    let h = rand_tensor(&mut r, &[6, 4], -1.0, 1.0);
    out.push(run("col_max_center", &mut ColMaxCenter::default(), &[h]));

    let h = rand_tensor(&mut r, &[5, 3], -1.0, 1.0);
    for mode in [PoolMode::Mean, PoolMode::Max, PoolMode::Sum] {
        out.push(run(format!("pool {mode:?}"), &mut Pool::new(mode).unwrap(), std::slice::from_ref(&h)));
    }
    let a = rand_tensor(&mut r, &[5], 0.1, 1.0);
    for scale_by_count in [false, true] {
        out.push(run(
            format!("weighted_pool scale_by_count={scale_by_count}"),
            &mut WeightedPool { scale_by_count },
            &[h.clone(), a.clone()],
        ));
    }

    let yhat = rand_tensor(&mut r, &[1], -2.0, 2.0);
    let y = rand_tensor(&mut r, &[1], -2.0, 2.0);
    out.push(run("squared_error", &mut SquaredError, &[yhat, y]));
    let xhat = rand_tensor(&mut r, &[3, 1, 4, 4], 0.0, 1.0);
    let x = rand_tensor(&mut r, &[3, 1, 4, 4], 0.0, 1.0);
    for kind in [ReconKind::Mse, ReconKind::L2norm] {
        out.push(run(format!("recon {kind:?}"), &mut ReconLoss { kind }, &[xhat.clone(), x.clone()]));
    }
    let a = rand_tensor(&mut r, &[6], 0.05, 1.0);
    out.push(run("log_eps_sum", &mut LogEpsSum { eps: 1e-8 }, &[a]));
    let s: Vec<Tensor> = (0..3).map(|_| rand_tensor(&mut r, &[1], -1.0, 1.0)).collect();
    out.push(run("linear_combination", &mut LinearCombination { coeffs: vec![1.0, 100.0, 0.01] }, &s));

    let x = rand_tensor(&mut r, &[2, 2, 7, 6], -1.0, 1.0);
    let k = rand_tensor(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
    let b = rand_tensor(&mut r, &[3], -1.0, 1.0);
    for stride in [1, 2] {
        out.push(run(format!("conv2d stride {stride}"), &mut Conv::new(2, stride), &[x.clone(), k.clone(), b.clone()]));
    }
    let z = rand_tensor(&mut r, &[2, 3, 3, 2], -1.0, 1.0);
    let kt = rand_tensor(&mut r, &[3, 2, 3, 4], -1.0, 1.0);
    let bt = rand_tensor(&mut r, &[2], -1.0, 1.0);
    out.push(run("conv_transpose2d", &mut ConvTranspose::new(2, 2), &[z, kt, bt]));
    let v = rand_tensor(&mut r, &[1, 1, 5, 5, 4], -1.0, 1.0);
    let k3 = rand_tensor(&mut r, &[2, 1, 3, 3, 2], -1.0, 1.0);
    let b3 = rand_tensor(&mut r, &[2], -1.0, 1.0);
    out.push(run("conv3d", &mut Conv::new(3, 2), &[v, k3, b3]));
    let z3 = rand_tensor(&mut r, &[1, 2, 2, 2, 2], -1.0, 1.0);
    let kt3 = rand_tensor(&mut r, &[2, 1, 3, 3, 2], -1.0, 1.0);
    let bt3 = rand_tensor(&mut r, &[1], -1.0, 1.0);
    out.push(run("conv_transpose3d", &mut ConvTranspose::new(3, 2), &[z3, kt3, bt3]));

    let x = rand_tensor(&mut r, &[4, 3, 2, 2], -1.0, 2.0);
    let g = rand_tensor(&mut r, &[3], 0.5, 1.5);
    let b = rand_tensor(&mut r, &[3], -0.5, 0.5);
    let running = RunningStats {
        mean: rand_tensor(&mut r, &[3], -0.2, 0.2),
        var: rand_tensor(&mut r, &[3], 0.5, 1.5),
    };
    for mode in [BnMode::Train, BnMode::Eval] {
        out.push(run(
            format!("batchnorm {mode:?}"),
            &mut BatchNorm::new(mode, running.clone()),
            &[x.clone(), g.clone(), b.clone()],
        ));
    }
    out
}

/// Checks 3 random coordinates of every parameter group against central
/// differences of the total objective.
pub fn objective_checks(label: &str, params: &ModelParams, bag: &Bag, opts: &ForwardOptions, seed: u64) -> Vec<Check> {
    let analytic = forward_backward(params, bag, opts).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for group in ParamGroup::ALL {
        let idx = params.group_indices(group);
        assert!(!idx.is_empty(), "{group:?} has parameters");
        for _ in 0..3 {
            let i = idx[r.gen_range(0..idx.len())];
            let j = r.gen_range(0..params.params.tensor(i).len());
            let x0 = params.params.tensor(i).data()[j];
            let mut work = params.clone();
            let numeric = central_difference(
                |x| {
                    work.params.tensor_mut(i).data_mut()[j] = x;
                    Ok(forward_bag(&work, bag, opts)?.losses.total)
                },
                x0,
                DEFAULT_STEP,
            )
            .unwrap();
            let err = relative_error(analytic.grads[i].data()[j], numeric);
            out.push((format!("{label} {}[{j}]", params.params.name(i)), err));
        }
    }
    out
}

/// Full-objective checks on both architectures, batch norm in eval mode.
pub fn end_to_end_checks() -> Vec<Check> {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let mut out = Vec::new();
    let params = ModelParams::<f64>::init(&Architecture::digits(), 11).unwrap();
    let bag = random_bag(&mut r, 5, &[28, 28], 9.0);
    for pool in [PoolMode::Weighted, PoolMode::WeightedSum] {
        let opts = ForwardOptions { pool, ..ForwardOptions::default() };
        out.extend(objective_checks(&format!("digits {pool:?}"), &params, &bag, &opts, 100));
    }
    let arch = Architecture {
        patch_shape: vec![8, 8, 8],
        conv: vec![ConvSpec::new(3, 3, 2), ConvSpec::new(4, 3, 2)],
        latent_dim: 6,
        attention_width: 4,
        batch_norm: true,
    };
    let params = ModelParams::<f64>::init(&arch, 12).unwrap();
    let bag = random_bag(&mut r, 4, &[8, 8, 8], 3.0);
    let opts = ForwardOptions {
        weights: LossWeights { lambda1: 100.0, lambda2: 0.01, eps: 1e-8 },
        bn_mode: BnMode::Eval,
        ..ForwardOptions::default()
    };
    out.extend(objective_checks("volume", &params, &bag, &opts, 200));
    out
}
