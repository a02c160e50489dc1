//! Deterministic f64 neural-network primitives.
//!
//! Everything here is CPU-only, double precision, and bit-reproducible:
//! layers carry explicit forward caches and hand-written backward passes,
//! random state always comes from a caller-supplied seeded generator, and
//! weights round-trip through a flat named-tensor archive.

pub mod archive;
pub mod conv;
pub mod error;
pub mod layers;
pub mod loss;
pub mod norm;
pub mod optim;
pub mod param;
pub mod rng;

pub use archive::{read_archive, write_archive, NamedTensor};
pub use conv::Conv2d;
pub use error::{NnError, Result};
pub use layers::{dropout_mask, max_pool2, max_pool2_backward, upsample2, upsample2_backward, Dense};
pub use loss::softmax_cross_entropy;
pub use norm::{BatchNorm1d, BatchNorm2d, InstanceNorm};
pub use optim::{Adam, Sgd};
pub use param::Param;
pub use rng::{derive_seed, seeded_rng};

/// Batch of feature maps, laid out `[batch, channels, height, width]`.
pub type Tensor4 = ndarray::Array4<f64>;
/// Row-major matrix, `[batch, features]` for dense layers.
pub type Tensor2 = ndarray::Array2<f64>;
