//! Dataset construction: digit files, synthetic digit bags, volumetric
//! patch extraction and synthetic phantom volumes.

mod bag;
mod digits;
pub mod idx;
mod io;
mod volume;

pub use bag::Bag;
pub use digits::{is_prime_digit, make_bags, prime_sum, DigitDataset, Split};
pub use idx::{parse_idx, parse_idx_labels, serialize_idx, serialize_idx_labels};
pub use io::{load_bags, save_bags};
pub use volume::{
    extract_patches_3d, phantom_bags, render_phantom, synth_phantom, window_starts, Lesion, Phantom,
    PhantomConfig,
};
