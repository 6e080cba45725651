use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One strided convolution of the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub const fn new(channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            channels,
            kernel,
            stride,
        }
    }
}

/// Network shape. The decoder mirrors `conv` with transposed convolutions
/// whose kernels are sized so the reconstruction matches `patch_shape`
/// exactly.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    /// `[h, w]` for 2-D patches, `[d, h, w]` for 3-D.
    pub patch_shape: Vec<usize>,
    pub conv: Vec<ConvSpec>,
    pub latent_dim: usize,
    /// Width of the first equivariant attention layer.
    pub attention_width: usize,
    pub batch_norm: bool,
}

impl Architecture {
    /// 28×28 digit patches.
    pub fn digits() -> Self {
        Self {
            patch_shape: vec![28, 28],
            conv: vec![ConvSpec::new(8, 3, 2), ConvSpec::new(16, 3, 2)],
            latent_dim: 16,
            attention_width: 8,
            batch_norm: false,
        }
    }

    /// 32³ volumetric patches.
    pub fn volume() -> Self {
        Self {
            patch_shape: vec![32, 32, 32],
            conv: vec![ConvSpec::new(8, 3, 2), ConvSpec::new(16, 3, 2)],
            latent_dim: 16,
            attention_width: 8,
            batch_norm: true,
        }
    }

    pub fn rank(&self) -> usize {
        self.patch_shape.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.rank()) {
            return Err(Error::Usage(format!(
                "patch shape must be 2-D or 3-D, got {:?}",
                self.patch_shape
            )));
        }
        if self.conv.is_empty() {
            return Err(Error::Usage("encoder needs at least one conv layer".into()));
        }
        if self.latent_dim == 0 || self.attention_width == 0 {
            return Err(Error::Usage("latent and attention widths must be positive".into()));
        }
        let mut spatial = self.patch_shape.clone();
        for (i, c) in self.conv.iter().enumerate() {
            if c.channels == 0 || c.kernel == 0 || c.stride == 0 {
                return Err(Error::Usage(format!("conv layer {i} has a zero field: {c:?}")));
            }
            if spatial.iter().any(|&s| s < c.kernel) {
                return Err(Error::Usage(format!(
                    "conv layer {i}: kernel {} does not fit spatial extent {spatial:?}",
                    c.kernel
                )));
            }
            spatial = spatial.iter().map(|&s| (s - c.kernel) / c.stride + 1).collect();
        }
        Ok(())
    }

    /// Spatial extent at the input of each conv layer, followed by the
    /// extent after the last one.
    pub fn spatial_chain(&self) -> Vec<Vec<usize>> {
        let mut chain = vec![self.patch_shape.clone()];
        for c in &self.conv {
            let last = chain.last().expect("non-empty chain");
            chain.push(last.iter().map(|&s| (s - c.kernel) / c.stride + 1).collect());
        }
        chain
    }

    /// Flattened width of the last conv feature map.
    pub fn flat_dim(&self) -> usize {
        let chain = self.spatial_chain();
        let last = chain.last().expect("non-empty chain");
        self.conv.last().map_or(1, |c| c.channels) * last.iter().product::<usize>()
    }

    pub fn patch_len(&self) -> usize {
        self.patch_shape.iter().product()
    }

    /// Kernel extents (per axis) of the transposed conv that undoes encoder
    /// layer `i`.
    pub fn decoder_kernel(&self, i: usize) -> Vec<usize> {
        let chain = self.spatial_chain();
        let s = self.conv[i].stride;
        chain[i]
            .iter()
            .zip(&chain[i + 1])
            .map(|(&out, &inp)| out - (inp - 1) * s)
            .collect()
    }

    /// Input channel count of encoder layer `i`.
    pub fn in_channels(&self, i: usize) -> usize {
        if i == 0 {
            1
        } else {
            self.conv[i - 1].channels
        }
    }
}
