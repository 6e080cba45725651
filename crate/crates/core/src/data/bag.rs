use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One subject: a set of equally shaped patches and a scalar target.
///
/// Patches are stored stacked along the leading axis, so `patches` has shape
/// `[N, ...patch shape]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag<T: Scalar = f64> {
    pub subject_id: String,
    pub patches: Tensor<T>,
    pub y: f64,
    /// Per-patch ground truth relevance, when known.
    pub relevance: Option<Vec<bool>>,
    /// Per-patch voxel offset `(d, h, w)` inside the source volume.
    pub coordinates: Option<Vec<[usize; 3]>>,
    /// Per-patch instance label (digit class for digit bags).
    pub instance_labels: Option<Vec<u8>>,
}

impl<T: Scalar> Bag<T> {
    pub fn new(subject_id: impl Into<String>, patches: Tensor<T>, y: f64) -> Result<Self> {
        if patches.ndim() < 2 || patches.shape()[0] == 0 {
            return Err(Error::Domain(format!(
                "a bag needs at least one patch, got patches of shape {:?}",
                patches.shape()
            )));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            patches,
            y,
            relevance: None,
            coordinates: None,
            instance_labels: None,
        })
    }

    pub fn from_patches(subject_id: impl Into<String>, patches: &[Tensor<T>], y: f64) -> Result<Self> {
        let refs: Vec<&Tensor<T>> = patches.iter().collect();
        Self::new(subject_id, Tensor::stack(&refs)?, y)
    }

    pub fn with_relevance(mut self, relevance: Vec<bool>) -> Result<Self> {
        self.check_len("relevance", relevance.len())?;
        self.relevance = Some(relevance);
        Ok(self)
    }

    pub fn with_coordinates(mut self, coordinates: Vec<[usize; 3]>) -> Result<Self> {
        self.check_len("coordinates", coordinates.len())?;
        self.coordinates = Some(coordinates);
        Ok(self)
    }

    pub fn with_instance_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        self.check_len("instance labels", labels.len())?;
        self.instance_labels = Some(labels);
        Ok(self)
    }

    fn check_len(&self, what: &str, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(Error::Usage(format!(
                "{what} has {n} entries for a bag of {} patches",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.patches.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch_shape(&self) -> &[usize] {
        &self.patches.shape()[1..]
    }

    pub fn patch(&self, i: usize) -> Tensor<T> {
        Tensor::new(self.patch_shape().to_vec(), self.patches.row(i).to_vec())
            .expect("row of a stacked tensor")
    }

    /// Reorders patches and every per-patch annotation.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::Usage("permutation length differs from bag size".into()));
        }
        Ok(Self {
            subject_id: self.subject_id.clone(),
            patches: self.patches.select_rows(order)?,
            y: self.y,
            relevance: self.relevance.as_deref().map(|v| reorder(v, order)),
            coordinates: self.coordinates.as_deref().map(|v| reorder(v, order)),
            instance_labels: self.instance_labels.as_deref().map(|v| reorder(v, order)),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Bag<U> {
        Bag {
            subject_id: self.subject_id.clone(),
            patches: self.patches.cast(),
            y: self.y,
            relevance: self.relevance.clone(),
            coordinates: self.coordinates.clone(),
            instance_labels: self.instance_labels.clone(),
        }
    }
}

fn reorder<V: Copy>(v: &[V], order: &[usize]) -> Vec<V> {
    order.iter().map(|&i| v[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_bag_rejected() {
        let err = Bag::<f64>::new("s", Tensor::zeros([0, 2, 2]), 0.0).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        assert!(Bag::<f64>::from_patches("s", &[], 0.0).is_err());
    }

    #[test]
    fn annotation_lengths_checked() {
        let bag = Bag::<f64>::new("s", Tensor::zeros([2, 2, 2]), 1.0).unwrap();
        assert!(bag.clone().with_relevance(vec![true]).is_err());
        assert!(bag.with_relevance(vec![true, false]).is_ok());
    }

    #[test]
    fn permutation_moves_annotations() {
        let p = Tensor::<f64>::from_f64([3, 1, 1], &[10.0, 20.0, 30.0]).unwrap();
        let bag = Bag::new("s", p, 1.0)
            .unwrap()
            .with_relevance(vec![true, false, false])
            .unwrap();
        let q = bag.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(q.patches.data(), &[30.0, 10.0, 20.0]);
        assert_eq!(q.relevance.unwrap(), vec![false, true, false]);
    }
}
