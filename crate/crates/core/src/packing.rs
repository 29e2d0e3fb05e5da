//! Bit-exact block serialization.
//!
//! A block of `n` ternary codes is stored as `c = code + 1` in three bit-planes
//! of `n / 8` bytes each. Plane `b` holds bit `b` of every stored code, and bit
//! `j` of a plane lives at byte `j / 8`, bit position `j % 8`. Planes follow
//! each other low to high, giving exactly `3n/8` bytes.
//!
//! Block layout (little-endian throughout):
//!
//! ```text
//! quants        3n/8 bytes
//! scale         2 bytes   binary16
//! zero-point    2 bytes   binary16, one of -1, 0, 1
//! sub-scales    16 bytes  8 x binary16 (variant SS only)
//! ```
//!
//! For `n = 256` that is 100 bytes (variant S) or 116 bytes (variant SS).

use std::fmt;
use std::str::FromStr;

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::TernaryGrid;

/// Number of sub-block scales carried by variant SS.
pub const SUB_BLOCKS: usize = 8;

/// Largest positive finite binary16 value, 65504.
pub const F16_MAX_BITS: u16 = 0x7BFF;

/// Smallest positive binary16 value (subnormal), 2^-24.
pub const F16_MIN_POSITIVE_BITS: u16 = 0x0001;

const CANONICAL_NAN_BITS: u16 = 0x7E00;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// One scale and one zero-point per block.
    #[default]
    S,
    /// Additionally eight sub-block scales.
    SS,
}

impl Variant {
    pub fn block_bytes(self, n: usize) -> usize {
        let base = 3 * n / 8 + 4;
        match self {
            Variant::S => base,
            Variant::SS => base + 2 * SUB_BLOCKS,
        }
    }

    pub fn bits_per_weight(self, n: usize) -> f64 {
        (self.block_bytes(n) * 8) as f64 / n as f64
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" => Ok(Variant::S),
            "ss" => Ok(Variant::SS),
            other => Err(Error::domain(format!("unknown variant {other:?} (expected s or ss)"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::S => "s",
            Variant::SS => "ss",
        })
    }
}

/// A block of codes in `{-1, 0, 1}` whose length is a positive multiple of 8.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TernaryCodes(Vec<i8>);

impl TernaryCodes {
    pub fn new(codes: Vec<i8>) -> Result<Self> {
        check_code_len(codes.len())?;
        if let Some(i) = codes.iter().position(|c| !(-1..=1).contains(c)) {
            return Err(Error::domain(format!(
                "code {} at index {i} outside {{-1, 0, 1}}",
                codes[i]
            )));
        }
        Ok(Self(codes))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<i8> {
        self.0
    }
}

fn check_code_len(n: usize) -> Result<()> {
    if n == 0 || !n.is_multiple_of(8) || n > crate::transform::MAX_LEN {
        return Err(Error::Length {
            len: n,
            reason: "code count must be a positive multiple of 8, at most 512",
        });
    }
    Ok(())
}

pub fn pack_ternary(codes: &TernaryCodes) -> Vec<u8> {
    let mut out = vec![0u8; 3 * codes.len() / 8];
    pack_into(codes.as_slice(), &mut out);
    out
}

pub(crate) fn pack_into(codes: &[i8], out: &mut [u8]) {
    let plane = codes.len() / 8;
    debug_assert_eq!(out.len(), 3 * plane);
    out.fill(0);
    for (j, &q) in codes.iter().enumerate() {
        let c = (q + 1) as u8;
        let (byte, bit) = (j / 8, j % 8);
        for b in 0..3 {
            out[b * plane + byte] |= ((c >> b) & 1) << bit;
        }
    }
}

pub fn unpack_ternary(bytes: &[u8], n: usize) -> Result<TernaryCodes> {
    check_code_len(n)?;
    let mut codes = vec![0i8; n];
    unpack_into(bytes, &mut codes)?;
    Ok(TernaryCodes(codes))
}

pub(crate) fn unpack_into(bytes: &[u8], codes: &mut [i8]) -> Result<()> {
    let n = codes.len();
    let plane = n / 8;
    if bytes.len() != 3 * plane {
        return Err(Error::SizeMismatch(format!(
            "{n} codes need {} packed bytes, got {}",
            3 * plane,
            bytes.len()
        )));
    }
    let (p0, rest) = bytes.split_at(plane);
    let (p1, p2) = rest.split_at(plane);
    for (j, code) in codes.iter_mut().enumerate() {
        let (byte, bit) = (j / 8, j % 8);
        let c = ((p0[byte] >> bit) & 1) | (((p1[byte] >> bit) & 1) << 1) | (((p2[byte] >> bit) & 1) << 2);
        if c > 2 {
            return Err(Error::Corruption {
                index: j,
                reason: format!("stored code {c} is not in {{0, 1, 2}}"),
            });
        }
        *code = c as i8 - 1;
    }
    Ok(())
}

/// IEEE 754 binary16 encoding with round-to-nearest-even. Finite values beyond
/// the half range saturate to +/-65504; infinities and NaN pass through.
pub fn encode_f16(x: f32) -> u16 {
    let h = f16::from_f32(x);
    if h.is_infinite() && x.is_finite() {
        if x > 0.0 {
            F16_MAX_BITS
        } else {
            F16_MAX_BITS | 0x8000
        }
    } else if h.is_nan() {
        CANONICAL_NAN_BITS
    } else {
        h.to_bits()
    }
}

/// Exact binary16 decode; every NaN pattern decodes to the canonical NaN.
pub fn decode_f16(bits: u16) -> f32 {
    let h = f16::from_bits(bits);
    if h.is_nan() {
        f32::NAN
    } else {
        h.to_f32()
    }
}

/// Rounds a positive scale to the nearest value the block header can hold.
/// Scales below the smallest binary16 subnormal are raised to it.
pub fn storable_scale(d: f64) -> f32 {
    let bits = encode_f16(d as f32);
    if bits == 0 {
        decode_f16(F16_MIN_POSITIVE_BITS)
    } else {
        decode_f16(bits)
    }
}

/// One serialized block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedBlock {
    n: usize,
    quants: Vec<u8>,
    scale_bits: u16,
    zp_bits: u16,
    sub_scale_bits: Option<[u16; SUB_BLOCKS]>,
}

fn positive_scale_bits(d: f32, what: &str) -> Result<u16> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::domain(format!("{what} must be positive and finite, got {d}")));
    }
    let bits = encode_f16(d);
    if bits == 0 {
        return Err(Error::domain(format!("{what} {d} underflows binary16")));
    }
    Ok(bits)
}

/// Packs codes and scale metadata into a block. Passing `sub_scales` selects
/// variant SS.
pub fn serialize_block(
    q: &TernaryCodes,
    grid: &TernaryGrid,
    sub_scales: Option<&[f32; SUB_BLOCKS]>,
) -> Result<PackedBlock> {
    let scale_bits = positive_scale_bits(grid.d(), "block scale")?;
    let sub_scale_bits = match sub_scales {
        Some(subs) => {
            let mut bits = [0u16; SUB_BLOCKS];
            for (b, &d) in bits.iter_mut().zip(subs) {
                *b = positive_scale_bits(d, "sub-block scale")?;
            }
            Some(bits)
        }
        None => None,
    };
    Ok(PackedBlock {
        n: q.len(),
        quants: pack_ternary(q),
        scale_bits,
        zp_bits: encode_f16(f32::from(grid.z())),
        sub_scale_bits,
    })
}

impl PackedBlock {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn variant(&self) -> Variant {
        if self.sub_scale_bits.is_some() {
            Variant::SS
        } else {
            Variant::S
        }
    }

    pub fn quants(&self) -> &[u8] {
        &self.quants
    }

    pub fn scale_bits(&self) -> u16 {
        self.scale_bits
    }

    pub fn zp_bits(&self) -> u16 {
        self.zp_bits
    }

    pub fn sub_scale_bits(&self) -> Option<&[u16; SUB_BLOCKS]> {
        self.sub_scale_bits.as_ref()
    }

    pub fn scale(&self) -> f32 {
        decode_f16(self.scale_bits)
    }

    pub fn zero_point(&self) -> i8 {
        decode_f16(self.zp_bits) as i8
    }

    pub fn grid(&self) -> TernaryGrid {
        TernaryGrid::new(self.scale(), self.zero_point()).expect("validated at construction")
    }

    pub fn sub_scales(&self) -> Option<[f32; SUB_BLOCKS]> {
        self.sub_scale_bits.map(|bits| bits.map(decode_f16))
    }

    pub fn codes(&self) -> TernaryCodes {
        unpack_ternary(&self.quants, self.n).expect("validated at construction")
    }

    pub fn byte_len(&self) -> usize {
        self.variant().block_bytes(self.n)
    }

    pub fn write_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.quants);
        out.extend_from_slice(&self.scale_bits.to_le_bytes());
        out.extend_from_slice(&self.zp_bits.to_le_bytes());
        if let Some(subs) = &self.sub_scale_bits {
            for s in subs {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        self.write_bytes(&mut out);
        out
    }

    /// Parses and validates one block of `n` codes.
    pub fn from_bytes(bytes: &[u8], n: usize, variant: Variant) -> Result<Self> {
        check_code_len(n)?;
        let expected = variant.block_bytes(n);
        if bytes.len() != expected {
            return Err(Error::SizeMismatch(format!(
                "block of {n} codes ({variant}) is {expected} bytes, got {}",
                bytes.len()
            )));
        }
        let qlen = 3 * n / 8;
        let quants = bytes[..qlen].to_vec();
        let mut scratch = vec![0i8; n];
        unpack_into(&quants, &mut scratch)?;

        let half_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let scale_bits = half_at(qlen);
        let zp_bits = half_at(qlen + 2);

        check_scale_field(scale_bits, "block scale")?;
        let z = decode_f16(zp_bits);
        if !(z == -1.0 || z == 0.0 || z == 1.0) {
            return Err(Error::Corruption {
                index: 0,
                reason: format!("zero-point field {zp_bits:#06x} decodes to {z}"),
            });
        }

        let sub_scale_bits = match variant {
            Variant::S => None,
            Variant::SS => {
                let mut subs = [0u16; SUB_BLOCKS];
                for (m, s) in subs.iter_mut().enumerate() {
                    *s = half_at(qlen + 4 + 2 * m);
                    check_scale_field(*s, "sub-block scale")?;
                }
                Some(subs)
            }
        };

        Ok(Self {
            n,
            quants,
            scale_bits,
            zp_bits,
            sub_scale_bits,
        })
    }
}

fn check_scale_field(bits: u16, what: &str) -> Result<()> {
    let d = decode_f16(bits);
    if d.is_nan() || d <= 0.0 || d.is_infinite() {
        return Err(Error::Corruption {
            index: 0,
            reason: format!("{what} field {bits:#06x} decodes to {d}"),
        });
    }
    Ok(())
}
