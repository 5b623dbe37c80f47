//! Training and inference engine for the SPAN super-resolution network.

pub mod error;
pub mod fixtures;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod real;
pub mod resample;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, FormatError, Result};
pub use real::{Precision, Real};
pub use rng::SeededRng;
pub use tensor::{Distribution, Shape4, Tensor4};
