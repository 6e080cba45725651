use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Bag;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

/// Window start offsets along one axis: stride `floor(patch·(1 − overlap))`,
/// with a final window clamped to end at the boundary.
pub fn window_starts(extent: usize, patch: usize, overlap: f64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Usage(format!("overlap must be in [0, 1), got {overlap}")));
    }
    if patch == 0 {
        return Err(Error::Usage("patch size must be positive".into()));
    }
    if extent < patch {
        return Err(Error::Domain(format!(
            "volume extent {extent} is smaller than the patch size {patch}"
        )));
    }
    let stride = ((patch as f64 * (1.0 - overlap)).floor() as usize).max(1);
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s + patch <= extent).collect();
    let last = *starts.last().expect("extent ≥ patch");
    if last + patch < extent {
        starts.push(extent - patch);
    }
    Ok(starts)
}

/// Cuts a `[D, H, W]` volume into overlapping cubes of side `patch`. The bag
/// carries coordinates but no target (`y = 0`).
pub fn extract_patches_3d<T: Scalar>(volume: &Tensor<T>, patch: usize, overlap: f64) -> Result<Bag<T>> {
    if volume.ndim() != 3 {
        return Err(Error::dim(
            "extract_patches_3d",
            format!("expected a [D, H, W] volume, got {:?}", volume.shape()),
        ));
    }
    let [d, h, w] = [volume.shape()[0], volume.shape()[1], volume.shape()[2]];
    let (sd, sh, sw) = (
        window_starts(d, patch, overlap)?,
        window_starts(h, patch, overlap)?,
        window_starts(w, patch, overlap)?,
    );
    let count = sd.len() * sh.len() * sw.len();
    let mut data = Vec::with_capacity(count * patch * patch * patch);
    let mut coords = Vec::with_capacity(count);
    let src = volume.data();
    for &z in &sd {
        for &y in &sh {
            for &x in &sw {
                coords.push([z, y, x]);
                for i in z..z + patch {
                    for j in y..y + patch {
                        let row = (i * h + j) * w;
                        data.extend_from_slice(&src[row + x..row + x + patch]);
                    }
                }
            }
        }
    }
    Bag::new("volume", Tensor::new([count, patch, patch, patch], data)?, 0.0)?.with_coordinates(coords)
}

/// A spherical lesion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub center: [f64; 3],
    pub radius: f64,
}

/// Synthetic volume with dark spherical lesions over a smooth background.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    /// `[size, size, size]`
    pub volume: Tensor,
    /// Lesion voxel count over total voxel count.
    pub severity: f64,
    /// Lesion membership per voxel, row-major like `volume`.
    pub mask: Vec<bool>,
}

const GRID: usize = 5;

fn smooth_background(rng: &mut rng::Rng, size: usize) -> Vec<f64> {
    let coarse: Vec<f64> = (0..GRID * GRID * GRID).map(|_| rng.gen_range(0.4..0.6)).collect();
    let at = |a: usize, b: usize, c: usize| coarse[(a * GRID + b) * GRID + c];
    let scale = (GRID - 1) as f64 / (size.max(2) - 1) as f64;
    let split = |i: usize| {
        let p = i as f64 * scale;
        let lo = (p.floor() as usize).min(GRID - 2);
        (lo, p - lo as f64)
    };
    let mut out = Vec::with_capacity(size * size * size);
    for i in 0..size {
        let (a, fa) = split(i);
        for j in 0..size {
            let (b, fb) = split(j);
            for k in 0..size {
                let (c, fc) = split(k);
                let mut v = 0.0;
                for (da, wa) in [(0, 1.0 - fa), (1, fa)] {
                    for (db, wb) in [(0, 1.0 - fb), (1, fb)] {
                        for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
                            v += wa * wb * wc * at(a + da, b + db, c + dc);
                        }
                    }
                }
                out.push(v);
            }
        }
    }
    out
}

/// Renders the given lesions over a background drawn from `seed`. Lesion
/// voxels are darkened by `lesion_intensity`.
pub fn render_phantom(seed: u64, size: usize, lesions: &[Lesion], lesion_intensity: f64) -> Result<Phantom> {
    if size == 0 {
        return Err(Error::Usage("phantom size must be positive".into()));
    }
    let mut rng = rng::stream(seed, "phantom-background");
    let mut volume = smooth_background(&mut rng, size);
    let mut mask = vec![false; volume.len()];
    for l in lesions {
        let r2 = l.radius * l.radius;
        let range = |c: f64| {
            let lo = (c - l.radius).floor().max(0.0) as usize;
            let hi = ((c + l.radius).ceil() as usize).min(size - 1);
            lo..=hi
        };
        for i in range(l.center[0]) {
            for j in range(l.center[1]) {
                for k in range(l.center[2]) {
                    let d2 = (i as f64 - l.center[0]).powi(2)
                        + (j as f64 - l.center[1]).powi(2)
                        + (k as f64 - l.center[2]).powi(2);
                    if d2 <= r2 {
                        mask[(i * size + j) * size + k] = true;
                    }
                }
            }
        }
    }
    for (v, &m) in volume.iter_mut().zip(&mask) {
        if m {
            *v -= lesion_intensity;
        }
    }
    let severity = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
    Ok(Phantom {
        volume: Tensor::new([size, size, size], volume)?,
        severity,
        mask,
    })
}

/// Phantom with `n_lesions` randomly placed lesions of radius between 6%
/// and 14% of the volume side.
pub fn synth_phantom(rng_seed: u64, size: usize, n_lesions: usize, lesion_intensity: f64) -> Result<Phantom> {
    let mut rng = rng::stream(rng_seed, "phantom-lesions");
    let s = size as f64;
    let lesions: Vec<Lesion> = (0..n_lesions)
        .map(|_| {
            let radius = rng.gen_range(0.06 * s..=0.14 * s);
            let lo = radius.min(s / 2.0);
            let hi = (s - 1.0 - radius).max(lo);
            let center = [(); 3].map(|_| rng.gen_range(lo..=hi));
            Lesion { center, radius }
        })
        .collect();
    render_phantom(rng_seed, size, &lesions, lesion_intensity)
}

/// Settings for a set of phantom bags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub size: usize,
    pub patch: usize,
    pub overlap: f64,
    pub max_lesions: usize,
    pub lesion_intensity: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            size: 64,
            patch: 32,
            overlap: 0.4,
            max_lesions: 4,
            lesion_intensity: 0.3,
        }
    }
}

/// Bags of phantom patches. Each phantom has a uniformly drawn lesion count
/// in `0..=max_lesions`; the target is the lesion volume in percent and a
/// patch is relevant when it contains any lesion voxel.
pub fn phantom_bags<T: Scalar>(rng_seed: u64, count: usize, cfg: &PhantomConfig) -> Result<Vec<Bag<T>>> {
    let mut rng = rng::stream(rng_seed, "data");
    (0..count)
        .map(|b| {
            let seed: u64 = rng.gen();
            let n = rng.gen_range(0..=cfg.max_lesions);
            let ph = synth_phantom(seed, cfg.size, n, cfg.lesion_intensity)?;
            let mut bag = extract_patches_3d(&ph.volume.cast::<T>(), cfg.patch, cfg.overlap)?;
            let s = cfg.size;
            let relevance = bag
                .coordinates
                .as_ref()
                .expect("extracted bags carry coordinates")
                .iter()
                .map(|&[z, y, x]| {
                    (z..z + cfg.patch).any(|i| {
                        (y..y + cfg.patch)
                            .any(|j| ph.mask[(i * s + j) * s + x..(i * s + j) * s + x + cfg.patch].contains(&true))
                    })
                })
                .collect();
            bag.subject_id = format!("phantom-{b:05}");
            bag.y = 100.0 * ph.severity;
            bag.with_relevance(relevance)
        })
        .collect()
}
