//! Facial action-unit detection pipeline engine.

pub mod align;
pub mod analytics;
pub mod au;
pub mod data;
pub mod eval;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;
