use std::path::{Path, PathBuf};

use rand::Rng as _;

use super::idx::{parse_idx, parse_idx_labels, read_maybe_gz};
use super::Bag;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

/// Labelled 28×28 digit images with pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DigitDataset {
    /// `[n, 28, 28]`
    pub images: Tensor,
    pub labels: Vec<u8>,
}

/// Which half of the standard train/test partition to load.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

pub fn is_prime_digit(d: u8) -> bool {
    matches!(d, 2 | 3 | 5 | 7)
}

/// Sum of the prime digits of a bag, duplicates included.
pub fn prime_sum(digits: &[u8]) -> f64 {
    digits.iter().filter(|&&d| is_prime_digit(d)).map(|&d| f64::from(d)).sum()
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [format!("{stem}.gz"), stem.to_string()] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Path {
        path: dir.join(stem).display().to_string(),
        hint: "expected an IDX file, optionally gzip compressed (.gz)".into(),
    })
}

impl DigitDataset {
    pub fn new(images: Tensor, labels: Vec<u8>) -> Result<Self> {
        if images.ndim() != 3 || images.shape()[1..] != [28, 28] {
            return Err(Error::Format(format!(
                "digit images must be [n, 28, 28], got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::Format(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::Format(format!("digit label {l} outside 0..=9")));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Format("pixel values outside [0, 1]".into()));
        }
        Ok(Self { images, labels })
    }

    /// Loads `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]` from `dir`.
    pub fn load(dir: &Path, split: Split) -> Result<Self> {
        let p = split.prefix();
        let images = parse_idx(&read_maybe_gz(&find(dir, &format!("{p}-images-idx3-ubyte"))?)?)?;
        let labels = parse_idx_labels(&read_maybe_gz(&find(dir, &format!("{p}-labels-idx1-ubyte"))?)?)?;
        Self::new(images, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        self.images.row(i)
    }
}

/// Bags of digits drawn with replacement; the target is the sum of the prime
/// digits in the bag and the relevance mask marks them.
pub fn make_bags<T: Scalar>(
    ds: &DigitDataset,
    rng_seed: u64,
    n_bags: usize,
    min_size: usize,
    max_size: usize,
) -> Result<Vec<Bag<T>>> {
    if min_size > max_size {
        return Err(Error::Usage(format!(
            "bag size range is empty: min {min_size} > max {max_size}"
        )));
    }
    if min_size == 0 {
        return Err(Error::Usage("bags need at least one instance".into()));
    }
    if ds.is_empty() {
        return Err(Error::Domain("cannot draw bags from an empty dataset".into()));
    }
    let mut rng = rng::stream(rng_seed, "data");
    let pix = 28 * 28;
    (0..n_bags)
        .map(|b| {
            let n = rng.gen_range(min_size..=max_size);
            let picks: Vec<usize> = (0..n).map(|_| rng.gen_range(0..ds.len())).collect();
            let mut data = Vec::with_capacity(n * pix);
            for &i in &picks {
                data.extend(ds.image(i).iter().map(|&v| T::lit(v)));
            }
            let digits: Vec<u8> = picks.iter().map(|&i| ds.labels[i]).collect();
            let relevance = digits.iter().map(|&d| is_prime_digit(d)).collect();
            Bag::new(format!("bag-{b:05}"), Tensor::new([n, 28, 28], data)?, prime_sum(&digits))?
                .with_relevance(relevance)?
                .with_instance_labels(digits)
        })
        .collect()
}
