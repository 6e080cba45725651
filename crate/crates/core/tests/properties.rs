//! Property-based checks of the model, data and metric invariants.

use proptest::prelude::*;
use setvec_core::data::{
    extract_patches_3d, make_bags, parse_idx, parse_idx_labels, prime_sum, serialize_idx, serialize_idx_labels,
    window_starts, Bag, DigitDataset,
};
use setvec_core::eval::{auc_pairwise, r_squared, roc_curve};
use setvec_core::model::{attention, encode_bag, forward_bag, Architecture, ConvSpec, ForwardOptions, ModelParams};
use setvec_core::ops::PoolMode;
use setvec_core::Tensor;

fn small_arch() -> Architecture {
    Architecture {
        patch_shape: vec![9, 9],
        conv: vec![ConvSpec::new(3, 3, 2), ConvSpec::new(4, 3, 1)],
        latent_dim: 5,
        attention_width: 4,
        batch_norm: false,
    }
}

fn bag_strategy() -> impl Strategy<Value = (Vec<f64>, usize, f64)> {
    (1usize..8).prop_flat_map(|n| (prop::collection::vec(0.0f64..1.0, n * 81), Just(n), -5.0f64..5.0))
}

fn permuted_bag_strategy() -> impl Strategy<Value = ((Vec<f64>, usize, f64), Vec<usize>)> {
    bag_strategy().prop_flat_map(|b| {
        let n = b.1;
        (Just(b), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prediction_invariant_attention_equivariant((((data, n, y), order), seed) in (permuted_bag_strategy(), 0u64..1000)) {
        let params = ModelParams::<f64>::init(&small_arch(), seed).unwrap();
        let bag = Bag::new("p", Tensor::new(vec![n, 9, 9], data).unwrap(), y).unwrap();
        let shuffled = bag.permuted(&order).unwrap();
        for pool in [PoolMode::Mean, PoolMode::Max, PoolMode::Sum, PoolMode::Weighted, PoolMode::WeightedSum] {
            let opts = ForwardOptions { pool, ..ForwardOptions::default() };
            let a = forward_bag(&params, &bag, &opts).unwrap();
            let b = forward_bag(&params, &shuffled, &opts).unwrap();
            let scale = a.prediction.abs().max(1e-300);
            prop_assert!((a.prediction - b.prediction).abs() <= 1e-9 * scale);
            for (k, &o) in order.iter().enumerate() {
                prop_assert_eq!(b.attention.weights[k], a.attention.weights[o]);
            }
        }
    }

    #[test]
    fn loss_identity_and_simplex(((data, n, y), seed, l1, l2) in (bag_strategy(), 0u64..1000, 0.0f64..200.0, 0.0f64..1.0)) {
        let params = ModelParams::<f64>::init(&small_arch(), seed).unwrap();
        let bag = Bag::new("p", Tensor::new(vec![n, 9, 9], data).unwrap(), y).unwrap();
        let mut opts = ForwardOptions::default();
        opts.weights.lambda1 = l1;
        opts.weights.lambda2 = l2;
        let out = forward_bag(&params, &bag, &opts).unwrap();
        let l = out.losses;
        let recomposed = l.discriminative + l1 * l.generative + l2 * l.attention_reg;
        prop_assert!((l.total - recomposed).abs() <= 1e-12 * l.total.abs().max(1e-300));
        let w = &out.attention.weights;
        prop_assert!(w.iter().all(|&a| a >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let h = encode_bag(&bag, &params, opts.bn_mode).unwrap();
        prop_assert_eq!(attention(&h, &params).unwrap().weights, w.clone());
    }

    #[test]
    fn trapezoid_auc_matches_pairwise(scores in prop::collection::vec(0u8..6, 2..40), flips in prop::collection::vec(any::<bool>(), 40)) {
        let s: Vec<f64> = scores.iter().map(|&v| f64::from(v) / 5.0).collect();
        let l: Vec<bool> = flips[..s.len()].to_vec();
        match (roc_curve(&s, &l).unwrap(), auc_pairwise(&s, &l)) {
            (Some(c), Some(p)) => {
                prop_assert!((c.auc - p).abs() <= 1e-9);
                prop_assert!(c.tpr.windows(2).all(|w| w[0] <= w[1]));
                prop_assert!(c.fpr.windows(2).all(|w| w[0] <= w[1]));
            }
            (None, None) => prop_assert!(l.iter().all(|&x| x) || l.iter().all(|&x| !x)),
            _ => prop_assert!(false, "roc and pairwise disagree on definedness"),
        }
    }

    #[test]
    fn r_squared_is_one_on_exact_fit(y in prop::collection::vec(-100.0f64..100.0, 2..30)) {
        prop_assume!(y.iter().any(|&v| (v - y[0]).abs() > 1e-6));
        prop_assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
    }

    #[test]
    fn idx_round_trip(bytes in prop::collection::vec(any::<u8>(), 1..200), labels in prop::collection::vec(0u8..10, 1..50)) {
        let n = bytes.len();
        let mut raw = vec![0, 0, 0x08, 0x02];
        raw.extend_from_slice(&(n as u32).to_be_bytes());
        raw.extend_from_slice(&1u32.to_be_bytes());
        raw.extend_from_slice(&bytes);
        let t = parse_idx(&raw).unwrap();
        prop_assert_eq!(t.shape(), &[n, 1][..]);
        prop_assert_eq!(serialize_idx(&t).unwrap(), raw);
        let lb = serialize_idx_labels(&labels).unwrap();
        prop_assert_eq!(parse_idx_labels(&lb).unwrap(), labels);
    }

    #[test]
    fn windows_cover_every_voxel(extent in 1usize..80, patch in 1usize..40, overlap in 0.0f64..0.95) {
        prop_assume!(patch <= extent);
        let starts = window_starts(extent, patch, overlap).unwrap();
        prop_assert_eq!(starts[0], 0);
        prop_assert_eq!(*starts.last().unwrap(), extent - patch);
        prop_assert!(starts.windows(2).all(|w| w[0] < w[1] && w[1] <= w[0] + patch));
    }

    #[test]
    fn make_bags_labels_recompute(seed in 0u64..10_000, lo in 1usize..6, extra in 0usize..6) {
        let n_img = 30;
        let labels: Vec<u8> = (0..n_img).map(|i| (i * 7 % 10) as u8).collect();
        let images: Vec<f64> = (0..n_img * 784).map(|i| ((i / 784) as f64) / n_img as f64).collect();
        let ds = DigitDataset::new(Tensor::new(vec![n_img, 28, 28], images).unwrap(), labels.clone()).unwrap();
        let bags = make_bags::<f64>(&ds, seed, 5, lo, lo + extra).unwrap();
        for b in &bags {
            prop_assert!((lo..=lo + extra).contains(&b.len()));
            // the first pixel identifies the source image
            let digits: Vec<u8> = (0..b.len())
                .map(|k| labels[(b.patch(k).data()[0] * n_img as f64).round() as usize])
                .collect();
            prop_assert_eq!(b.y, prime_sum(&digits));
            prop_assert_eq!(b.instance_labels.as_ref().unwrap(), &digits);
        }
    }

    #[test]
    fn patches_are_exact_sub_blocks(d in 4usize..14, h in 4usize..14, w in 4usize..14, patch in 2usize..5, overlap in 0.0f64..0.6) {
        let vol: Vec<f64> = (0..d * h * w).map(|i| i as f64).collect();
        let t = Tensor::new(vec![d, h, w], vol).unwrap();
        let bag = extract_patches_3d(&t, patch, overlap).unwrap();
        let coords = bag.coordinates.clone().unwrap();
        let mut seen = vec![false; d * h * w];
        for (k, [z, y, x]) in coords.iter().copied().enumerate() {
            let p = bag.patch(k);
            for i in 0..patch {
                for j in 0..patch {
                    for l in 0..patch {
                        let src = ((z + i) * h + (y + j)) * w + x + l;
                        prop_assert_eq!(p.data()[(i * patch + j) * patch + l], src as f64);
                        seen[src] = true;
                    }
                }
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }
}
