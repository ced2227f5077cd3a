//! Photoacoustic tomography workbench.
//!
//! Simulates sparse, limited-view acoustic measurements from procedural
//! phantoms, reconstructs artifact-laden images by time reversal, and trains
//! dense dilated UNet / fully dense UNet post-processing networks to remove
//! the artifacts.

pub mod acoustics;
pub mod autodiff;
pub mod error;
pub mod metrics;
pub mod network;
pub mod phantom;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ConvSpec, Padding, Precision, Tensor};
