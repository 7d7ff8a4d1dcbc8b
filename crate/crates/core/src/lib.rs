//! Error-bounded lossy compression for floating-point arrays that also
//! bounds the error of a derived quantity of interest (QoI).
//!
//! The pipeline estimates a per-point data error bound from the QoI's
//! derivatives, tunes a global bound against sample compressions, encodes the
//! data with a Lorenzo predictor and per-point quantisation, then checks the
//! QoI on the reconstruction and stores any violating points losslessly.

pub mod codec;
pub mod ebtune;
pub mod expr;
pub mod field;
pub mod fixtures;
pub mod metrics;
pub mod pipeline;
pub mod qoi;
pub mod scalar;
pub mod validate;
pub mod wire;

pub use field::Field;
pub use scalar::{ElementWidth, Real};

/// Single-precision field.
pub type Field32 = Field<f32>;
/// Double-precision field.
pub type Field64 = Field<f64>;
