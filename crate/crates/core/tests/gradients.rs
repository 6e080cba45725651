//! Finite-difference checks of every primitive and of the full objective.

mod common;

use common::{end_to_end_checks, primitive_checks, random_bag, END_TO_END_TOL, PRIMITIVE_TOL};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use setvec_core::model::{forward_backward, Architecture, ForwardOptions, LossWeights, ModelParams, ParamGroup};

#[test]
fn every_primitive_matches_central_differences() {
    let checks = primitive_checks();
    assert_eq!(checks.len(), 23);
    for (name, err) in checks {
        assert!(err < PRIMITIVE_TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn full_objective_matches_central_differences() {
    let checks = end_to_end_checks();
    assert_eq!(checks.len(), 3 * 3 * 4);
    for (name, err) in checks {
        assert!(err < END_TO_END_TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn detached_decoder_has_zero_gradient() {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let params = ModelParams::<f64>::init(&Architecture::digits(), 13).unwrap();
    let bag = random_bag(&mut r, 3, &[28, 28], 4.0);
    let opts = ForwardOptions {
        weights: LossWeights { lambda1: 0.0, ..LossWeights::default() },
        ..ForwardOptions::default()
    };
    let g = forward_backward(&params, &bag, &opts).unwrap();
    for i in params.group_indices(ParamGroup::Decoder) {
        assert_eq!(g.grads[i].max_abs(), 0.0);
    }
    assert!(g.output.losses.generative > 0.0);
}
