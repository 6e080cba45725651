//! Metrics and exports: R², per-bag attention ROC, ordinal accuracy, latent
//! spectrum and CSV/JSON writers.

mod export;
mod roc;

pub use export::{
    export_attention, export_subject_vectors, fmt_sig, write_attention_csv, write_subject_csv,
    AttentionRow, SubjectRow,
};
pub use roc::{attention_roc, auc_pairwise, roc_curve, AttentionRoc, RocCurve, FPR_GRID};

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Bag;
use crate::error::{Error, Result};
use crate::model::{forward_bag, AttentionMap, BagOutput, ForwardOptions, ModelParams};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r_squared(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::Usage(format!(
            "r_squared: {} targets but {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::Domain("r_squared needs at least two samples".into()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Domain("r_squared is undefined for constant targets".into()));
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Fraction of predictions within `max_offset` classes of the truth.
pub fn ordinal_accuracy(y_true: &[i64], y_pred: &[i64], max_offset: u64) -> Result<f64> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::Usage(format!(
            "ordinal_accuracy needs equal non-empty inputs, got {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let hits = y_true
        .iter()
        .zip(y_pred)
        .filter(|(a, b)| a.abs_diff(**b) <= max_offset)
        .count();
    Ok(hits as f64 / y_true.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Descending.
    pub singular_values: Vec<f64>,
    /// `exp` of the Shannon entropy of the normalised singular values.
    pub effective_rank: f64,
    /// Count of singular values above 1% of the largest.
    pub threshold_rank: usize,
    pub explained_variance: Vec<f64>,
}

impl SpectrumReport {
    /// Share of the largest singular value in the total.
    pub fn top_share(&self) -> f64 {
        let s: f64 = self.singular_values.iter().sum();
        if s == 0.0 {
            1.0
        } else {
            self.singular_values[0] / s
        }
    }
}

/// Singular spectrum of the column-centred `[n, d]` latent matrix.
pub fn latent_spectrum<T: Scalar>(latents: &Tensor<T>) -> Result<SpectrumReport> {
    if latents.ndim() != 2 || latents.shape()[0] == 0 || latents.shape()[1] == 0 {
        return Err(Error::dim(
            "latent_spectrum",
            format!("expected a non-empty [n, d] matrix, got {:?}", latents.shape()),
        ));
    }
    let (n, d) = (latents.shape()[0], latents.shape()[1]);
    let mut m = DMatrix::from_row_iterator(n, d, latents.data().iter().map(|v| v.as_f64()));
    for mut col in m.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sv.iter().sum();
    let effective_rank = if total > 0.0 {
        let h: f64 = sv
            .iter()
            .map(|s| s / total)
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.ln())
            .sum();
        h.exp()
    } else {
        1.0
    };
    let sq: f64 = sv.iter().map(|s| s * s).sum();
    let explained_variance = sv.iter().map(|s| if sq > 0.0 { s * s / sq } else { 0.0 }).collect();
    let threshold_rank = sv.iter().filter(|&&s| s > 0.01 * sv[0]).count();
    Ok(SpectrumReport {
        singular_values: sv,
        effective_rank,
        threshold_rank,
        explained_variance,
    })
}

/// Forward pass over every bag, in parallel, results in input order.
pub fn predict_bags<T: Scalar>(
    params: &ModelParams<T>,
    bags: &[Bag<T>],
    opts: &ForwardOptions,
) -> Result<Vec<BagOutput<T>>> {
    bags.par_iter().map(|b| forward_bag(params, b, opts)).collect()
}

/// R² of the model's predictions on `bags`.
pub fn bags_r_squared(outputs: &[BagOutput<impl Scalar>], bags: &[Bag<impl Scalar>]) -> Result<f64> {
    let y: Vec<f64> = bags.iter().map(|b| b.y).collect();
    let yhat: Vec<f64> = outputs.iter().map(|o| o.prediction).collect();
    r_squared(&y, &yhat)
}

/// Stacks the latents of every bag into one `[Σ N_i, d]` matrix.
pub fn stack_latents<T: Scalar>(outputs: &[BagOutput<T>]) -> Result<Tensor<T>> {
    let d = outputs
        .first()
        .ok_or_else(|| Error::Domain("no outputs to stack".into()))?
        .latents
        .dim();
    let rows: usize = outputs.iter().map(|o| o.latents.len()).sum();
    let mut data = Vec::with_capacity(rows * d);
    for o in outputs {
        data.extend_from_slice(o.latents.0.data());
    }
    Tensor::new([rows, d], data)
}

/// Mean over bags of the within-bag standard deviation of attention.
pub fn mean_attention_std(maps: &[AttentionMap]) -> f64 {
    maps.iter().map(AttentionMap::std_dev).sum::<f64>() / maps.len().max(1) as f64
}

/// Uniform attention for every bag.
pub fn uniform_attention<T: Scalar>(bags: &[Bag<T>]) -> Vec<AttentionMap> {
    bags.iter()
        .map(|b| AttentionMap {
            weights: vec![1.0 / b.len() as f64; b.len()],
            patch_ids: (0..b.len()).collect(),
            coordinates: b.coordinates.clone(),
        })
        .collect()
}

/// Seeded random attention: uniform draws normalised to sum to one.
pub fn random_attention<T: Scalar>(bags: &[Bag<T>], seed: u64) -> Vec<AttentionMap> {
    let mut rng = rng::stream(seed, "random-attention");
    bags.iter()
        .map(|b| {
            let raw: Vec<f64> = (0..b.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            AttentionMap {
                weights: raw.iter().map(|v| v / s).collect(),
                patch_ids: (0..b.len()).collect(),
                coordinates: b.coordinates.clone(),
            }
        })
        .collect()
}
