//! Everything that runs on quantized tensors: synthetic inputs, fused
//! products and the evaluation harness.

pub mod eval;
pub mod fused;
pub mod synth;

pub use eval::{ablate_block_size, eval_error, eval_quantized, write_csv, write_json, AblationRow, ErrorReport};
pub use fused::{dense_matmul, fused_matmul, fused_matvec};
pub use synth::{GeneratorSpec, WeightDist};
