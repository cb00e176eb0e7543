//! Wi-Fi sensing from compressed beamforming feedback.
//!
//! * [`codec`]: channel SVD, φ/ψ feedback-angle decomposition, quantization,
//!   bit-packed frames and record files.
//! * [`sim`]: seeded MU-MIMO sounding simulator producing labeled frame streams.
//! * [`pipeline`]: windowing and fixed-size tensor assembly.
//! * [`learner`]: from-scratch CNN, SGD and the two-stage meta/micro trainer.

pub mod codec;
pub mod exec;
pub mod learner;
pub mod pipeline;
pub mod rng;
pub mod sim;
