//! Recognition toolkit over CNN-style feature vectors.
//!
//! - [`svm`]: linear hinge-loss SVM with one-vs-all and one-vs-one multiclass strategies
//! - [`augment`]: crop/rotation/mirror plans and test-time response pooling
//! - [`preprocess`]: L2 normalization, PCA whitening, signed power transform
//! - [`retrieval`]: multi-level spatial search over patch descriptors
//! - [`metrics`]: average precision, confusion-matrix accuracy, recall@k
//! - [`extract`]: the boundary where image regions become vectors
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the scalar for the common cases.

pub mod augment;
pub mod error;
pub mod extract;
pub mod feature;
pub mod io;
pub mod metrics;
pub mod presets;
pub mod preprocess;
pub mod retrieval;
pub mod scalar;
pub mod svm;

pub use error::{Error, Result, Warning};
pub use feature::{base_id, PixelGrid, Rect};
pub use scalar::Real;

pub type FeatureVector = feature::FeatureVector<f64>;
pub type FeatureMatrix = feature::FeatureMatrix<f64>;
pub type PcaWhitenModel = preprocess::PcaWhitenModel<f64>;
pub type BinaryModel = svm::BinaryModel<f64>;
pub type MulticlassModel = svm::MulticlassModel<f64>;
pub type TrainingSet = svm::TrainingSet<f64>;
pub type RetrievalIndex = retrieval::RetrievalIndex<f64>;
pub type ExtractorBinding = extract::ExtractorBinding<f64>;

pub type FeatureVectorF32 = feature::FeatureVector<f32>;
pub type FeatureMatrixF32 = feature::FeatureMatrix<f32>;
pub type PcaWhitenModelF32 = preprocess::PcaWhitenModel<f32>;
pub type MulticlassModelF32 = svm::MulticlassModel<f32>;
pub type RetrievalIndexF32 = retrieval::RetrievalIndex<f32>;
