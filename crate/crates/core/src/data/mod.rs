//! Dataset construction (bars, image patches) and file formats.

mod bars;
pub mod formats;
mod patches;

pub use bars::{bars_dictionary, generate_bars, BarsSpec};
pub use patches::{dead_leaves_image, DEAD_LEAVES_MIN_RADIUS, extract_patches, zca_whiten, PatchSpec, Whitening, Zca, ZCA_EPSILON, ZCA_ILL_CONDITIONED};
