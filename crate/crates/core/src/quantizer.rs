//! Ternary quantization in the rotated domain.
//!
//! A block is quantized against a [`TernaryGrid`]: a positive step `d` and an
//! integer zero-point `z` in `{-1, 0, 1}`. Codes are
//! `clamp(round(x / d) + z, -1, 1)` and reconstruct to `d * (code - z)`, so the
//! three representable values are centred on `-z * d`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf_inv;

use crate::error::{Error, Result};

/// Default scale factor: `d = 0.7979 * sigma`.
pub const DEFAULT_SCALE_FACTOR: f64 = 0.7979;

/// Scale used when a block has no spread (e.g. all zeros).
pub const SCALE_FLOOR: f64 = 1e-8;

/// Grid resolution and upper end of the search for the numeric minimizer.
pub const ARGMIN_GRID_STEP: f64 = 1e-3;
pub const ARGMIN_GRID_MAX: f64 = 2.0;

const MSE_ABS_TOL: f64 = 1e-9;
const TAIL_SIGMAS: f64 = 14.0;

/// How the per-block scale is derived from block statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "constant", rename_all = "kebab-case")]
pub enum ScalePolicy {
    /// `d = constant * sigma`.
    Constant(f64),
    /// `d = t * sigma` where `t` minimizes [`ternary_mse`]`(t, 1)` on a grid.
    NumericArgmin,
    /// `d = (2/3) * mean(|x|)`.
    MeanAbs,
}

impl Default for ScalePolicy {
    fn default() -> Self {
        ScalePolicy::Constant(DEFAULT_SCALE_FACTOR)
    }
}

impl ScalePolicy {
    pub fn constant(constant: f64) -> Result<Self> {
        if !(constant.is_finite() && constant > 0.0) {
            return Err(Error::domain(format!(
                "scale constant must be positive and finite, got {constant}"
            )));
        }
        Ok(ScalePolicy::Constant(constant))
    }
}

impl FromStr for ScalePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(ScalePolicy::default()),
            "argmin" => Ok(ScalePolicy::NumericArgmin),
            "meanabs" => Ok(ScalePolicy::MeanAbs),
            other => Err(Error::domain(format!(
                "unknown scale policy {other:?} (expected paper, argmin or meanabs)"
            ))),
        }
    }
}

impl fmt::Display for ScalePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalePolicy::Constant(c) if *c == DEFAULT_SCALE_FACTOR => f.write_str("paper"),
            ScalePolicy::Constant(c) => write!(f, "constant({c})"),
            ScalePolicy::NumericArgmin => f.write_str("argmin"),
            ScalePolicy::MeanAbs => f.write_str("meanabs"),
        }
    }
}

/// Population statistics of one block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BlockStats {
    pub len: usize,
    pub mean: f64,
    /// Standard deviation, dividing by `len`.
    pub sigma: f64,
    pub l1: f64,
    pub linf: f64,
    pub excess_kurtosis: f64,
}

impl BlockStats {
    /// Statistics of `c * x` given those of `x`, for `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            len: self.len,
            mean: self.mean * c,
            sigma: self.sigma * c,
            l1: self.l1 * c,
            linf: self.linf * c,
            excess_kurtosis: self.excess_kurtosis,
        }
    }
}

pub fn block_stats<T: Copy + Into<f64>>(values: &[T]) -> Result<BlockStats> {
    if values.is_empty() {
        return Err(Error::domain("statistics of an empty block"));
    }
    let n = values.len() as f64;
    let mut sum = 0.0;
    let mut l1 = 0.0;
    let mut linf = 0f64;
    for (i, &v) in values.iter().enumerate() {
        let v: f64 = v.into();
        if !v.is_finite() {
            return Err(Error::domain(format!("non-finite value at index {i}")));
        }
        sum += v;
        l1 += v.abs();
        linf = linf.max(v.abs());
    }
    let mean = sum / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &v in values {
        let d = v.into() - mean;
        let d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= n;
    m4 /= n;
    let excess_kurtosis = if m2 > 0.0 { m4 / (m2 * m2) - 3.0 } else { 0.0 };
    Ok(BlockStats {
        len: values.len(),
        mean,
        sigma: m2.sqrt(),
        l1,
        linf,
        excess_kurtosis,
    })
}

/// Step and zero-point of a ternary grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TernaryGrid {
    d: f32,
    z: i8,
}

impl TernaryGrid {
    pub fn new(d: f32, z: i8) -> Result<Self> {
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::domain(format!(
                "grid scale must be positive and finite, got {d}"
            )));
        }
        if !(-1..=1).contains(&z) {
            return Err(Error::domain(format!("zero-point {z} outside {{-1, 0, 1}}")));
        }
        Ok(Self { d, z })
    }

    pub fn symmetric(d: f32) -> Result<Self> {
        Self::new(d, 0)
    }

    pub fn d(&self) -> f32 {
        self.d
    }

    pub fn z(&self) -> i8 {
        self.z
    }

    /// Whether `x` lies inside the unclamped range `|x + z*d| <= 1.5 d`.
    pub fn in_range(&self, x: f32) -> bool {
        (x + f32::from(self.z) * self.d).abs() <= 1.5 * self.d
    }
}

/// Zero-point that recentres a block with the given mean, restricted to
/// `{-1, 0, 1}`.
pub fn zero_point(mean: f64, d: f64) -> i8 {
    (-(mean / d).round()).clamp(-1.0, 1.0) as i8
}

#[inline]
pub(crate) fn quantize_code(x: f32, d: f32, z: i8) -> i8 {
    // f32::round rounds half away from zero.
    let r = (x / d).round();
    (r + f32::from(z)).clamp(-1.0, 1.0) as i8
}

#[inline]
pub(crate) fn dequantize_code(code: i8, d: f32, z: i8) -> f32 {
    d * f32::from(code - z)
}

pub fn ternary_quantize(x: f32, grid: &TernaryGrid) -> Result<i8> {
    if !x.is_finite() {
        return Err(Error::domain(format!("cannot quantize non-finite value {x}")));
    }
    Ok(quantize_code(x, grid.d, grid.z))
}

pub fn ternary_dequantize(code: i8, grid: &TernaryGrid) -> Result<f32> {
    if !(-1..=1).contains(&code) {
        return Err(Error::domain(format!("ternary code {code} outside {{-1, 0, 1}}")));
    }
    Ok(dequantize_code(code, grid.d, grid.z))
}

fn gaussian_pdf(x: f64, sigma: f64) -> f64 {
    let u = x / sigma;
    (-0.5 * u * u).exp() / (sigma * (2.0 * PI).sqrt())
}

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + adaptive_simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(fa, fm, fb, a, b);
    adaptive_simpson_rec(&f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Mean squared error of the ternary quantizer with threshold and level both
/// equal to `alpha`, for `x ~ N(0, sigma^2)`: values with `|x| <= alpha` map
/// to 0, the rest to `sign(x) * alpha`.
pub fn ternary_mse(alpha: f64, sigma: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha > 0.0 && sigma.is_finite() && sigma > 0.0) {
        return Err(Error::domain(format!(
            "ternary_mse needs positive finite inputs, got alpha={alpha}, sigma={sigma}"
        )));
    }
    let tol = MSE_ABS_TOL / 4.0;
    // Both terms are even in x; integrate the positive half and double.
    let dead_zone = integrate(|x| x * x * gaussian_pdf(x, sigma), 0.0, alpha, tol);
    let upper = alpha + TAIL_SIGMAS * sigma;
    let tail = integrate(
        |x| (x - alpha) * (x - alpha) * gaussian_pdf(x, sigma),
        alpha,
        upper,
        tol,
    );
    Ok(2.0 * (dead_zone + tail))
}

/// Grid-search minimizer of `ternary_mse(t, 1)` over `(0, 2]` with step
/// `1e-3`. Computed once per process.
pub fn numeric_argmin_factor() -> f64 {
    static FACTOR: OnceLock<f64> = OnceLock::new();
    *FACTOR.get_or_init(|| {
        let steps = (ARGMIN_GRID_MAX / ARGMIN_GRID_STEP).round() as usize;
        let mut best = (f64::INFINITY, 0.0);
        for k in 1..=steps {
            let t = k as f64 * ARGMIN_GRID_STEP;
            let mse = ternary_mse(t, 1.0).expect("grid points are positive");
            if mse < best.0 {
                best = (mse, t);
            }
        }
        best.1
    })
}

/// `sqrt(2) * erfinv(2/3)`, the closed-form factor quoted alongside 0.798.
pub fn erfinv_scale_factor() -> f64 {
    std::f64::consts::SQRT_2 * erf_inv(2.0 / 3.0)
}

pub fn optimal_scale(stats: &BlockStats, policy: ScalePolicy) -> f64 {
    let d = match policy {
        ScalePolicy::Constant(c) => c * stats.sigma,
        ScalePolicy::NumericArgmin => numeric_argmin_factor() * stats.sigma,
        ScalePolicy::MeanAbs => 2.0 / 3.0 * stats.l1 / stats.len as f64,
    };
    if d > 0.0 && d.is_finite() {
        d
    } else {
        SCALE_FLOOR
    }
}

/// Uniform `bits`-bit quantizer on `[wmin, wmax]`: step
/// `(wmax - wmin) / (2^bits - 1)`, levels at integer multiples of the step,
/// result clamped to the range.
pub fn uniform_quantize(x: f64, bits: u32, wmin: f64, wmax: f64) -> Result<f64> {
    if !(2..=8).contains(&bits) {
        return Err(Error::domain(format!("bits must be in [2, 8], got {bits}")));
    }
    if !wmin.is_finite() || !wmax.is_finite() || wmin >= wmax {
        return Err(Error::domain(format!(
            "uniform range needs wmin < wmax, got [{wmin}, {wmax}]"
        )));
    }
    let step = (wmax - wmin) / f64::from((1u32 << bits) - 1);
    Ok((step * (x / step + 0.5).floor()).clamp(wmin, wmax))
}
