pub mod align;
pub mod analyze;
pub mod bench;
pub mod eval;
pub mod infer;
pub mod sample;
pub mod serve;
pub mod synth;
pub mod train;
