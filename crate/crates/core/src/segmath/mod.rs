//! Segmentation math: the object-contextual representation head, weighted
//! cross-entropy, and a per-pixel linear classifier with weak learning.

pub mod classifier;
pub mod features;
pub mod loss;
pub mod ocr;

pub use classifier::{
    predict, train, train_prepared, weak_learn, weak_learn_prepared, PixelClassifier, TrainConfig, TrainOutcome,
    TrainingSet, WeakLearnOutcome,
};
pub use features::{extract_features, FEATURE_DIM};
pub use loss::{sample_weights, weighted_ce, weighted_ce_probs, LossGrad};
pub use ocr::{CoarseMaps, FeatureMap, OcrHead, RegionRepresentations, RelationWeights, TransformPsi};
