//! Rotation-domain ternary weight quantization.
//!
//! Blocks of weights are rotated by a normalized Walsh-Hadamard transform,
//! quantized to ternary codes with a per-block binary16 scale, and packed as
//! three bit planes. Tensors round-trip through a small "ITQ3" container and
//! can be multiplied without materializing the dense matrix.

pub mod cli;
pub mod codec;
pub mod compute;
pub mod error;
pub mod packing;
pub mod quantizer;
pub mod selfcheck;
pub mod transform;

pub use codec::{
    decode_block, dequantize_tensor, encode_block, parse_container, quantize_tensor, read_container,
    write_container, QuantConfig, QuantizedTensor, WeightTensor,
};
pub use error::{Error, Result};
pub use packing::{PackedBlock, TernaryCodes, Variant};
pub use quantizer::{ScalePolicy, TernaryGrid};
pub use transform::{fwht_forward, fwht_inverse, TransformBlock};
