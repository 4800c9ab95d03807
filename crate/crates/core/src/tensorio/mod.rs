//! Array containers, the `UGTS` on-disk tensor format, and dataset manifests.

mod container;
mod manifest;
mod tensor;

pub use container::{read_tensor, read_tensor_as, write_tensor, AnyTensor, DType, Element};
pub use manifest::{load_manifest, write_manifest, DatasetManifest, SliceEntry, TargetSlice};
pub use tensor::Tensor;
