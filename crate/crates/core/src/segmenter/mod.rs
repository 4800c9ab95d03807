//! Small convolutional segmenter with hand-derived gradients.
//!
//! Architecture (fixed): `conv3x3(1→8) → ReLU → conv3x3(8→16) → ReLU` as the
//! encoder, then a `conv1x1(16→C)` head and a per-pixel softmax. Convolutions
//! use zero padding of one pixel so every map keeps the input's `H×W`.

pub mod gradcheck;
mod io;
mod loss;
mod net;
mod train;

pub use io::{load_model, save_model};
pub use loss::{loss, LossParts, DICE_SMOOTH};
pub use net::{backward, Forward, Segmenter, ENC1_CHANNELS, ENC2_CHANNELS};
pub use train::{lr_schedule, train, write_trace_csv, TrainConfig, TrainOutcome, TrainSample, TraceRow};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensorio::Tensor;

/// Anything that maps an `H×W` image to a `C×H×W` probability map.
pub trait ProbModel<T: Scalar> {
    fn num_classes(&self) -> usize;
    fn predict(&self, image: &Tensor<T>) -> Result<Tensor<T>>;
}

impl<T: Scalar> ProbModel<T> for Segmenter<T> {
    fn num_classes(&self) -> usize {
        Segmenter::num_classes(self)
    }

    fn predict(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(image)?.prob)
    }
}

impl<T: Scalar, M: ProbModel<T> + ?Sized> ProbModel<T> for &M {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }

    fn predict(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        (**self).predict(image)
    }
}

/// Per-pixel argmax of a `C×H×W` map; ties go to the lowest class.
pub fn argmax_labels<T: Scalar>(prob: &Tensor<T>) -> Result<Tensor<u8>> {
    if prob.rank() != 3 {
        return Err(crate::Error::Shape(format!("expected C×H×W, got {:?}", prob.dims())));
    }
    let c = prob.dims()[0];
    let (h, w) = prob.plane();
    let hw = h * w;
    let d = prob.data();
    let labels = (0..hw)
        .map(|j| {
            let mut best = 0;
            for ci in 1..c {
                if d[ci * hw + j] > d[best * hw + j] {
                    best = ci;
                }
            }
            best as u8
        })
        .collect();
    Tensor::new(vec![h, w], labels)
}
