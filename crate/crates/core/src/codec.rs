//! Block and tensor encode/decode, and the `ITQ3` container format.
//!
//! Encoding a block rotates it with the normalized Walsh-Hadamard transform,
//! picks a scale from the rotated values, and stores ternary codes for the
//! rotated values. Decoding dequantizes and applies the same transform again,
//! which is its own inverse.
//!
//! Tensors are flattened row-major and cut into consecutive blocks; the last
//! block is zero-padded and the pad length recorded in the header.
//!
//! Container layout (little-endian):
//!
//! ```text
//! magic    4   "ITQ3"
//! version  u16 1
//! flags    u16 bit 0: variant SS, bit 1: asymmetric zero-points
//! rows     u64
//! cols     u64
//! block_n  u32
//! pad      u32
//! blocks   ceil(rows * cols / block_n) serialized blocks, back to back
//! ```

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packing::{self, serialize_block, PackedBlock, TernaryCodes, Variant, SUB_BLOCKS};
use crate::quantizer::{
    block_stats, optimal_scale, quantize_code, zero_point, ScalePolicy, TernaryGrid,
};
use crate::transform::fwht_in_place;

pub const MAGIC: [u8; 4] = *b"ITQ3";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;

pub const FLAG_SUB_SCALES: u16 = 1 << 0;
pub const FLAG_ASYMMETRIC: u16 = 1 << 1;

/// Block sizes the codec accepts.
pub const BLOCK_SIZES: [usize; 5] = [32, 64, 128, 256, 512];

/// Dense row-major `f32` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTensor {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl WeightTensor {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("dimensions must be positive, got {rows}x{cols}")));
        }
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Shape(format!("{rows}x{cols} overflows")))?;
        if values.len() != len {
            return Err(Error::Shape(format!(
                "{rows}x{cols} tensor needs {len} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite weight at index {i}")));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows.saturating_mul(cols)])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub block_n: usize,
    pub variant: Variant,
    pub policy: ScalePolicy,
    /// Forces every zero-point to 0.
    pub symmetric: bool,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            block_n: 256,
            variant: Variant::S,
            policy: ScalePolicy::default(),
            symmetric: true,
        }
    }
}

impl QuantConfig {
    pub fn with_block(block_n: usize) -> Result<Self> {
        let cfg = Self {
            block_n,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_block_n(self.block_n)?;
        if let ScalePolicy::Constant(c) = self.policy {
            ScalePolicy::constant(c)?;
        }
        Ok(())
    }
}

fn check_block_n(n: usize) -> Result<()> {
    if BLOCK_SIZES.contains(&n) {
        Ok(())
    } else {
        Err(Error::Length {
            len: n,
            reason: "block size must be one of 32, 64, 128, 256, 512",
        })
    }
}

/// Output of [`quantize_tensor`]: logical shape plus encoded blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedTensor {
    rows: usize,
    cols: usize,
    block_n: usize,
    variant: Variant,
    asymmetric: bool,
    pad: usize,
    blocks: Vec<PackedBlock>,
}

impl QuantizedTensor {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn block_n(&self) -> usize {
        self.block_n
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn asymmetric(&self) -> bool {
        self.asymmetric
    }

    /// Zero values appended to the final block.
    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn blocks(&self) -> &[PackedBlock] {
        &self.blocks
    }

    /// Number of logical weights, `rows * cols`.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Encoded size in bytes, header included.
    pub fn byte_len(&self) -> usize {
        HEADER_LEN + self.blocks.len() * self.variant.block_bytes(self.block_n)
    }

    fn flags(&self) -> u16 {
        let mut flags = 0;
        if self.variant == Variant::SS {
            flags |= FLAG_SUB_SCALES;
        }
        if self.asymmetric {
            flags |= FLAG_ASYMMETRIC;
        }
        flags
    }
}

fn block_count(len: usize, block_n: usize) -> usize {
    len.div_ceil(block_n)
}

/// Encodes one block, returning the packed block and its rotated values.
pub(crate) fn encode_block_with_coeffs(w: &[f32], cfg: &QuantConfig) -> Result<(PackedBlock, Vec<f32>)> {
    if w.len() != cfg.block_n {
        return Err(Error::Length {
            len: w.len(),
            reason: "block input length must equal the configured block size",
        });
    }
    if let Some(i) = w.iter().position(|v| !v.is_finite()) {
        return Err(Error::domain(format!("non-finite weight at index {i}")));
    }
    let mut coeffs = w.to_vec();
    fwht_in_place(&mut coeffs);
    let block = quantize_values(&coeffs, cfg)?;
    Ok((block, coeffs))
}

/// Chooses scales for `values` and packs their ternary codes, with no rotation.
pub(crate) fn quantize_values(values: &[f32], cfg: &QuantConfig) -> Result<PackedBlock> {
    let n = values.len();
    let stats = block_stats(values)?;
    let (grid, sub_scales, per_sub): (TernaryGrid, Option<[f32; SUB_BLOCKS]>, usize) = match cfg.variant {
        Variant::S => {
            let d = packing::storable_scale(optimal_scale(&stats, cfg.policy));
            let z = if cfg.symmetric { 0 } else { zero_point(stats.mean, f64::from(d)) };
            (TernaryGrid::new(d, z)?, None, n)
        }
        Variant::SS => {
            let sub_len = n / SUB_BLOCKS;
            let mut subs = [0f32; SUB_BLOCKS];
            for (d_m, chunk) in subs.iter_mut().zip(values.chunks_exact(sub_len)) {
                let s = block_stats(chunk)?;
                *d_m = packing::storable_scale(optimal_scale(&s, cfg.policy));
            }
            // The block-level field only records the average; decode uses the sub-scales.
            let mean_d = subs.iter().map(|&d| f64::from(d)).sum::<f64>() / SUB_BLOCKS as f64;
            let d = packing::storable_scale(mean_d);
            let z = if cfg.symmetric { 0 } else { zero_point(stats.mean, f64::from(d)) };
            (TernaryGrid::new(d, z)?, Some(subs), sub_len)
        }
    };

    let scales = element_scales(grid.d(), sub_scales.as_ref(), per_sub);
    let codes: Vec<i8> = values
        .iter()
        .zip(scales)
        .map(|(&c, d)| quantize_code(c, d, grid.z()))
        .collect();
    let codes = TernaryCodes::new(codes)?;
    serialize_block(&codes, &grid, sub_scales.as_ref())
}

/// Scale applied to each element: the block scale for variant S, the owning
/// sub-block's scale for variant SS.
fn element_scales<'a>(
    d: f32,
    subs: Option<&'a [f32; SUB_BLOCKS]>,
    sub_len: usize,
) -> impl Iterator<Item = f32> + 'a {
    let n = if subs.is_some() { sub_len * SUB_BLOCKS } else { sub_len };
    (0..n).map(move |j| match subs {
        Some(s) => s[j / sub_len],
        None => d,
    })
}

/// Rotate, choose scales, quantize and pack one block of `cfg.block_n` weights.
pub fn encode_block(w: &[f32], cfg: &QuantConfig) -> Result<PackedBlock> {
    encode_block_with_coeffs(w, cfg).map(|(b, _)| b)
}

/// Dequantized rotated-domain values `d * (q - z)` of a block.
pub fn dequantize_coefficients_into(block: &PackedBlock, out: &mut [f32]) -> Result<()> {
    let n = block.n();
    if out.len() != n {
        return Err(Error::Length {
            len: out.len(),
            reason: "output buffer must match the block length",
        });
    }
    let mut codes = vec![0i8; n];
    packing::unpack_into(block.quants(), &mut codes)?;
    let z = block.zero_point();
    for ((o, &q), d) in out.iter_mut().zip(&codes).zip(block_element_scales(block)) {
        *o = d * f32::from(q - z);
    }
    Ok(())
}

/// Per-element scale of a decoded block.
pub(crate) fn block_element_scales(block: &PackedBlock) -> Vec<f32> {
    let n = block.n();
    match block.sub_scales() {
        Some(subs) => (0..n).map(|j| subs[j / (n / SUB_BLOCKS)]).collect(),
        None => vec![block.scale(); n],
    }
}

pub fn dequantize_coefficients(block: &PackedBlock) -> Result<Vec<f32>> {
    let mut out = vec![0f32; block.n()];
    dequantize_coefficients_into(block, &mut out)?;
    Ok(out)
}

/// Decodes a block into `out`, which must hold `block.n()` values.
pub fn decode_block_into(block: &PackedBlock, out: &mut [f32]) -> Result<()> {
    dequantize_coefficients_into(block, out)?;
    fwht_in_place(out);
    Ok(())
}

pub fn decode_block(block: &PackedBlock) -> Result<Vec<f32>> {
    let mut out = vec![0f32; block.n()];
    decode_block_into(block, &mut out)?;
    Ok(out)
}

/// Copies block `b` of the flattened tensor into `buf`, zero-filling past the end.
pub(crate) fn gather_block(values: &[f32], b: usize, buf: &mut [f32]) {
    let n = buf.len();
    let start = b * n;
    let end = (start + n).min(values.len());
    let live = end - start;
    buf[..live].copy_from_slice(&values[start..end]);
    buf[live..].fill(0.0);
}

pub fn quantize_tensor(w: &WeightTensor, cfg: &QuantConfig) -> Result<QuantizedTensor> {
    cfg.validate()?;
    let n = cfg.block_n;
    let len = w.values.len();
    let count = block_count(len, n);
    let blocks = (0..count)
        .into_par_iter()
        .map(|b| {
            let mut buf = vec![0f32; n];
            gather_block(&w.values, b, &mut buf);
            encode_block(&buf, cfg).map_err(|e| e.in_block(b))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedTensor {
        rows: w.rows,
        cols: w.cols,
        block_n: n,
        variant: cfg.variant,
        asymmetric: !cfg.symmetric,
        pad: count * n - len,
        blocks,
    })
}

pub fn dequantize_tensor(q: &QuantizedTensor) -> Result<WeightTensor> {
    let n = q.block_n;
    let mut values = vec![0f32; q.blocks.len() * n];
    values
        .par_chunks_exact_mut(n)
        .zip(q.blocks.par_iter())
        .enumerate()
        .try_for_each(|(b, (out, block))| decode_block_into(block, out).map_err(|e| e.in_block(b)))?;
    values.truncate(q.len());
    WeightTensor::new(q.rows, q.cols, values)
}

pub fn write_container<W: Write>(q: &QuantizedTensor, mut sink: W) -> Result<()> {
    let mut out = Vec::with_capacity(q.byte_len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&q.flags().to_le_bytes());
    out.extend_from_slice(&(q.rows as u64).to_le_bytes());
    out.extend_from_slice(&(q.cols as u64).to_le_bytes());
    out.extend_from_slice(&(q.block_n as u32).to_le_bytes());
    out.extend_from_slice(&(q.pad as u32).to_le_bytes());
    for block in &q.blocks {
        block.write_bytes(&mut out);
    }
    sink.write_all(&out)?;
    sink.flush()?;
    Ok(())
}

pub fn read_container<R: Read>(mut source: R) -> Result<QuantizedTensor> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse_container(&bytes)
}

pub fn parse_container(bytes: &[u8]) -> Result<QuantizedTensor> {
    if bytes.len() >= 4 && bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            found: bytes[..4].try_into().expect("four bytes"),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let u16_at = |i: usize| u16::from_le_bytes(bytes[i..i + 2].try_into().expect("two bytes"));
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("four bytes"));
    let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("eight bytes"));

    let version = u16_at(4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let flags = u16_at(6);
    if flags & !(FLAG_SUB_SCALES | FLAG_ASYMMETRIC) != 0 {
        return Err(Error::Corruption {
            index: 6,
            reason: format!("unknown flag bits in {flags:#06x}"),
        });
    }
    let variant = if flags & FLAG_SUB_SCALES != 0 { Variant::SS } else { Variant::S };
    let asymmetric = flags & FLAG_ASYMMETRIC != 0;

    let to_usize = |v: u64, what: &str| {
        usize::try_from(v).map_err(|_| Error::SizeMismatch(format!("{what} {v} does not fit in memory")))
    };
    let rows = to_usize(u64_at(8), "rows")?;
    let cols = to_usize(u64_at(16), "cols")?;
    let block_n = u32_at(24) as usize;
    let pad = u32_at(28) as usize;

    if rows == 0 || cols == 0 {
        return Err(Error::SizeMismatch(format!("empty tensor {rows}x{cols}")));
    }
    check_block_n(block_n).map_err(|_| Error::SizeMismatch(format!("unsupported block size {block_n}")))?;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::SizeMismatch(format!("{rows}x{cols} overflows")))?;
    let count = block_count(len, block_n);
    if pad != count * block_n - len {
        return Err(Error::SizeMismatch(format!(
            "pad {pad} inconsistent with {rows}x{cols} in blocks of {block_n} (expected {})",
            count * block_n - len
        )));
    }

    let block_bytes = variant.block_bytes(block_n);
    let expected = count
        .checked_mul(block_bytes)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::SizeMismatch("block payload size overflows".into()))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::SizeMismatch(format!(
            "{} trailing bytes after {count} blocks",
            bytes.len() - expected
        )));
    }

    let blocks = bytes[HEADER_LEN..]
        .chunks_exact(block_bytes)
        .enumerate()
        .map(|(b, raw)| {
            let block = PackedBlock::from_bytes(raw, block_n, variant).map_err(|e| e.in_block(b))?;
            if !asymmetric && block.zero_point() != 0 {
                return Err(Error::Corruption {
                    index: b,
                    reason: "non-zero zero-point in a symmetric container".into(),
                }
                .in_block(b));
            }
            Ok(block)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(QuantizedTensor {
        rows,
        cols,
        block_n,
        variant,
        asymmetric,
        pad,
        blocks,
    })
}
