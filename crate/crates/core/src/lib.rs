//! Person and soft-biometric identification from multi-channel on-body sensor
//! recordings with late-fusion temporal CNNs (one convolutional branch per limb).

pub mod attributes;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod explain;
pub mod gradcheck;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{ParamSet, ParamTensor, Tensor};
