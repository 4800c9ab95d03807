//! Active source-free domain adaptation for slice-wise segmentation: ensemble
//! uncertainty scoring, diversity-aware annotation selection, and tiered
//! self-training, plus the tensor formats, metrics and synthetic data that
//! support them.

pub mod adapt;
pub mod augment;
pub mod config;
pub mod error;
pub mod metrics;
pub mod report;
pub mod scalar;
pub mod segmenter;
pub mod select;
pub mod synthdata;
pub mod tensorio;
pub mod uncertainty;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensorio::Tensor;

pub type SegmenterF32 = segmenter::Segmenter<f32>;
pub type SegmenterF64 = segmenter::Segmenter<f64>;
/// Normalised `H×W` image.
pub type Image = Tensor<f32>;
/// `H×W` class-index map.
pub type LabelMap = Tensor<u8>;
/// `C×H×W` averaged class probabilities.
pub type EnsembleProb = Tensor<f32>;
