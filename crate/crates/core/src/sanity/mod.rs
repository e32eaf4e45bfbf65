//! Parameter-randomization sanity checks for saliency maps.

mod correlation;
mod hog;
mod randomization;

pub use correlation::{pearson, ranks, spearman, Correlation};
pub use hog::{hog_descriptor, HOG_BINS, HOG_CELL};
pub use randomization::{
    randomize_layer, run_randomization_test, RandomizationMode, RandomizationPlan, SimilarityRecord,
};
