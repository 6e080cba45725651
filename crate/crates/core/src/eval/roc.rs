use serde::{Deserialize, Serialize};

use crate::data::Bag;
use crate::error::{Error, Result};
use crate::model::AttentionMap;
use crate::tensor::Scalar;

/// Number of points of the common FPR grid used for averaging.
pub const FPR_GRID: usize = 101;

/// ROC curve of one scored set. Points run from `(0, 0)` to `(1, 1)`;
/// `thresholds[k]` is the score cut producing point `k` (`+∞` for the first).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
    pub auc: f64,
}

impl RocCurve {
    /// TPR at `f`, interpolating linearly between points and taking the top
    /// of any vertical segment.
    pub fn tpr_at(&self, f: f64) -> f64 {
        let i = self.fpr.partition_point(|&x| x <= f).saturating_sub(1);
        if self.fpr[i] == f || i + 1 == self.fpr.len() {
            return self.tpr[i];
        }
        let (f0, f1, t0, t1) = (self.fpr[i], self.fpr[i + 1], self.tpr[i], self.tpr[i + 1]);
        t0 + (t1 - t0) * (f - f0) / (f1 - f0)
    }
}

/// ROC curve of `scores` against binary `labels`, or `None` when one class is
/// absent. Tied scores form a single diagonal step.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Option<RocCurve>> {
    if scores.len() != labels.len() {
        return Err(Error::Usage(format!(
            "roc: {} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("roc: score {s}")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let (mut thresholds, mut tpr, mut fpr) = (vec![f64::INFINITY], vec![0.0], vec![0.0]);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        thresholds.push(s);
        tpr.push(tp as f64 / pos as f64);
        fpr.push(fp as f64 / neg as f64);
    }
    let auc = fpr
        .windows(2)
        .zip(tpr.windows(2))
        .map(|(f, t)| (f[1] - f[0]) * (t[0] + t[1]) / 2.0)
        .sum();
    Ok(Some(RocCurve {
        thresholds,
        tpr,
        fpr,
        auc,
    }))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc_pairwise(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

/// Per-bag ROC curves plus their vertical average.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRoc {
    /// `None` for bags lacking one of the classes.
    pub per_bag: Vec<Option<RocCurve>>,
    pub grid: Vec<f64>,
    pub mean_tpr: Vec<f64>,
    /// Standard deviation across bags at each grid point.
    pub std_tpr: Vec<f64>,
    /// Mean of the per-bag AUCs.
    pub mean_auc: f64,
    pub skipped: usize,
}

/// Scores every bag's attention against its relevance mask.
pub fn attention_roc<T: Scalar>(bags: &[Bag<T>], maps: &[AttentionMap]) -> Result<AttentionRoc> {
    if bags.len() != maps.len() {
        return Err(Error::Usage(format!("{} bags but {} attention maps", bags.len(), maps.len())));
    }
    let mut per_bag = Vec::with_capacity(bags.len());
    for (b, m) in bags.iter().zip(maps) {
        let rel = b.relevance.as_ref().ok_or_else(|| {
            Error::Usage(format!("bag {} has no relevance mask", b.subject_id))
        })?;
        per_bag.push(roc_curve(&m.weights, rel)?);
    }
    let curves: Vec<&RocCurve> = per_bag.iter().flatten().collect();
    if curves.is_empty() {
        return Err(Error::Domain("no bag has both relevant and irrelevant patches".into()));
    }
    let grid: Vec<f64> = (0..FPR_GRID).map(|i| i as f64 / (FPR_GRID - 1) as f64).collect();
    let n = curves.len() as f64;
    let mut mean_tpr = Vec::with_capacity(FPR_GRID);
    let mut std_tpr = Vec::with_capacity(FPR_GRID);
    for &f in &grid {
        let vals: Vec<f64> = curves.iter().map(|c| c.tpr_at(f)).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        mean_tpr.push(mean);
        std_tpr.push(var.sqrt());
    }
    let mean_auc = curves.iter().map(|c| c.auc).sum::<f64>() / n;
    Ok(AttentionRoc {
        skipped: per_bag.len() - curves.len(),
        per_bag,
        grid,
        mean_tpr,
        std_tpr,
        mean_auc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        let s = [0.4, 0.3, 0.2, 0.1];
        let l = [true, false, true, false];
        assert_eq!(roc_curve(&s, &l).unwrap().unwrap().auc, 0.75);
        assert_eq!(auc_pairwise(&s, &l), Some(0.75));
        let perfect = roc_curve(&s, &[true, true, false, false]).unwrap().unwrap();
        assert_eq!(perfect.auc, 1.0);
        let tied = roc_curve(&[0.25; 4], &l).unwrap().unwrap();
        assert_eq!(tied.auc, 0.5);
        assert_eq!(auc_pairwise(&[0.25; 4], &l), Some(0.5));
        assert!(roc_curve(&s, &[true; 4]).unwrap().is_none());
    }

    #[test]
    fn curve_is_monotone() {
        let c = roc_curve(&[0.9, 0.5, 0.5, 0.1, 0.3], &[true, false, true, false, true])
            .unwrap()
            .unwrap();
        for w in c.tpr.windows(2).zip(c.fpr.windows(2)) {
            assert!(w.0[1] >= w.0[0] && w.1[1] >= w.1[0]);
        }
        assert_eq!((c.fpr[0], c.tpr[0]), (0.0, 0.0));
        assert_eq!((*c.fpr.last().unwrap(), *c.tpr.last().unwrap()), (1.0, 1.0));
        assert_eq!(c.tpr_at(0.0), 1.0 / 3.0);
        assert_eq!(c.tpr_at(1.0), 1.0);
    }
}
