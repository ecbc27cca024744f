//! Slides, preprocessing, batch sampling and synthetic data.

mod preprocess;
mod sampler;
mod slide;
pub mod synth;

pub use preprocess::{
    normalize_counts, preprocess, PreprocessManifest, ProcessedDataset, DEFAULT_TARGET_SUM,
};
pub use sampler::{batch_sampler, epoch_batches};
pub use slide::{PatchShape, Slide, SlideImage};
pub use synth::{synth_generate, GenConfig, ImageKind};
