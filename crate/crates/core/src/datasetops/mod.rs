//! Class statistics, iterative stratification and augmentation.

pub mod augment;
pub mod stats;
pub mod stratify;

pub use augment::{augment, AugmentConfig};
pub use stats::{class_weights, dataset_stats, ClassStats, ClassWeights, DatasetStats};
pub use stratify::{iterative_stratify, LabelSet, StratifiedSplit};
