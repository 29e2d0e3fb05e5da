//! Normalized fast Walsh-Hadamard transform.
//!
//! All transforms here use the orthonormal convention: the butterfly network
//! runs unscaled and the result is multiplied once by `1/sqrt(n)` at the end.
//! Under that convention the transform is its own inverse and preserves the
//! Euclidean norm, so quantization error measured in the rotated domain equals
//! reconstruction error in the weight domain.
//!
//! Arithmetic runs in the element type of the input. `f32` mirrors what a GPU
//! kernel would do in shared memory; `f64` is there for tight-tolerance checks.

use std::fmt::Debug;

use num_traits::Float;

use crate::error::{Error, Result};

/// Largest supported transform length.
pub const MAX_LEN: usize = 512;

/// Largest length accepted by [`hadamard_oracle`].
pub const ORACLE_MAX_LEN: usize = 64;

/// Number of lanes in the warp-level transform.
pub const WARP_LEN: usize = 32;

/// Scalar types the transform operates on.
pub trait Real: Float + Debug + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

/// A power-of-two length vector of finite values.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformBlock<T = f32> {
    values: Vec<T>,
}

impl<T: Real> TransformBlock<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        check_len(values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite value at index {i}")));
        }
        Ok(Self { values })
    }

    pub fn from_slice(values: &[T]) -> Result<Self> {
        Self::new(values.to_vec())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    /// Number of butterfly stages, `log2(len)`.
    pub fn stages(&self) -> u32 {
        self.values.len().trailing_zeros()
    }
}

impl<T> AsRef<[T]> for TransformBlock<T> {
    fn as_ref(&self) -> &[T] {
        &self.values
    }
}

/// Validates a transform length: a power of two in `[2, MAX_LEN]`.
pub fn check_len(len: usize) -> Result<()> {
    if !len.is_power_of_two() {
        return Err(Error::Length {
            len,
            reason: "transform length must be a power of two",
        });
    }
    if !(2..=MAX_LEN).contains(&len) {
        return Err(Error::Length {
            len,
            reason: "transform length must be in [2, 512]",
        });
    }
    Ok(())
}

fn inv_sqrt_len<T: Real>(n: usize) -> T {
    T::one() / T::from(n).expect("length fits in a float").sqrt()
}

/// In-place normalized transform for the hot paths.
///
/// Panics if `data.len()` is not a power of two; callers validate lengths at
/// their own boundary.
pub fn fwht_in_place<T: Real>(data: &mut [T]) {
    let n = data.len();
    assert!(n.is_power_of_two(), "transform length {n} is not a power of two");
    let mut half = 1;
    while half < n {
        for chunk in data.chunks_exact_mut(2 * half) {
            let (lo, hi) = chunk.split_at_mut(half);
            for (u, v) in lo.iter_mut().zip(hi.iter_mut()) {
                let (a, b) = (*u, *v);
                *u = a + b;
                *v = a - b;
            }
        }
        half <<= 1;
    }
    let scale = inv_sqrt_len::<T>(n);
    for x in data.iter_mut() {
        *x = *x * scale;
    }
}

/// Forward transform `H_n v`.
pub fn fwht_forward<T: Real>(v: &TransformBlock<T>) -> TransformBlock<T> {
    let mut values = v.values.clone();
    fwht_in_place(&mut values);
    TransformBlock { values }
}

/// Inverse transform. The normalized Hadamard matrix is involutory, so this is
/// the same computation as [`fwht_forward`].
pub fn fwht_inverse<T: Real>(v: &TransformBlock<T>) -> TransformBlock<T> {
    fwht_forward(v)
}

/// Dense-matrix reference: builds `H_n` explicitly by Sylvester doubling and
/// multiplies. O(n^2), meant for checking the butterfly on small sizes.
pub fn hadamard_oracle<T: Real>(v: &TransformBlock<T>) -> Result<TransformBlock<T>> {
    let n = v.len();
    if n > ORACLE_MAX_LEN {
        return Err(Error::Size {
            len: n,
            max: ORACLE_MAX_LEN,
        });
    }

    // Unnormalized +/-1 matrix, doubled as [[H, H], [H, -H]].
    let mut h: Vec<Vec<T>> = vec![vec![T::one()]];
    while h.len() < n {
        let m = h.len();
        let mut next = vec![vec![T::zero(); 2 * m]; 2 * m];
        for i in 0..m {
            for j in 0..m {
                next[i][j] = h[i][j];
                next[i][j + m] = h[i][j];
                next[i + m][j] = h[i][j];
                next[i + m][j + m] = -h[i][j];
            }
        }
        h = next;
    }

    let scale = inv_sqrt_len::<T>(n);
    let values = h
        .iter()
        .map(|row| {
            row.iter()
                .zip(v.values())
                .fold(T::zero(), |acc, (&hij, &x)| acc + hij * x)
                * scale
        })
        .collect();
    Ok(TransformBlock { values })
}

/// Per-stage state of a staged transform.
#[derive(Clone, Debug, PartialEq)]
pub struct StageTrace<T = f32> {
    stages: Vec<TransformBlock<T>>,
    output: TransformBlock<T>,
}

impl<T: Real> StageTrace<T> {
    /// Unnormalized snapshot after each butterfly stage, `log2(n)` entries.
    pub fn stages(&self) -> &[TransformBlock<T>] {
        &self.stages
    }

    /// Final block after the `1/sqrt(n)` normalization.
    pub fn output(&self) -> &TransformBlock<T> {
        &self.output
    }

    pub fn into_output(self) -> TransformBlock<T> {
        self.output
    }
}

/// Emulates the shared-memory butterfly schedule of the fused decode kernel:
/// element `j` exchanges with `j ^ step` for `step = 1, 2, 4, ...`, the lower
/// index keeping `u + v` and the upper one `u - v`.
///
/// A kernel that writes in place between two barriers lets a thread read its
/// partner's value after the partner has already overwritten it. Each stage
/// here reads only from the previous stage's snapshot, which is what the
/// barrier placement is meant to guarantee.
pub fn fwht_staged<T: Real>(v: &TransformBlock<T>) -> StageTrace<T> {
    let n = v.len();
    let mut stages = Vec::with_capacity(v.stages() as usize);
    let mut prev = v.values.clone();
    let mut step = 1;
    while step < n {
        let next: Vec<T> = (0..n)
            .map(|j| {
                let partner = prev[j ^ step];
                if j & step == 0 {
                    prev[j] + partner
                } else {
                    partner - prev[j]
                }
            })
            .collect();
        stages.push(TransformBlock {
            values: next.clone(),
        });
        prev = next;
        step <<= 1;
    }
    let scale = inv_sqrt_len::<T>(n);
    let output = TransformBlock {
        values: prev.into_iter().map(|x| x * scale).collect(),
    };
    StageTrace { stages, output }
}

/// 32-point transform in the form of a warp shuffle: each lane holds one
/// value and combines it with the lane `lane ^ step`.
pub fn fwht32_warp<T: Real>(v: &TransformBlock<T>) -> Result<TransformBlock<T>> {
    if v.len() != WARP_LEN {
        return Err(Error::Length {
            len: v.len(),
            reason: "warp transform requires exactly 32 values",
        });
    }
    let mut lanes: [T; WARP_LEN] = [T::zero(); WARP_LEN];
    lanes.copy_from_slice(v.values());
    let mut step = 1;
    while step < WARP_LEN {
        let prev = lanes;
        for (lane, val) in lanes.iter_mut().enumerate() {
            let partner = prev[lane ^ step];
            // Upper lane takes partner - own so that the result is H_32 v.
            *val = if lane & step != 0 {
                partner - prev[lane]
            } else {
                prev[lane] + partner
            };
        }
        step <<= 1;
    }
    let scale = inv_sqrt_len::<T>(WARP_LEN);
    Ok(TransformBlock {
        values: lanes.iter().map(|&x| x * scale).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn block(v: &[f64]) -> TransformBlock<f64> {
        TransformBlock::from_slice(v).unwrap()
    }

    fn random_block(rng: &mut ChaCha8Rng, n: usize) -> TransformBlock<f64> {
        TransformBlock::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_pair() {
        let out = fwht_forward(&block(&[1.0, 1.0]));
        assert!((out.values()[0] - 2f64.sqrt()).abs() < 1e-12);
        assert!(out.values()[1].abs() < 1e-12);

        let back = fwht_inverse(&block(&[2f64.sqrt(), 0.0]));
        assert!(max_abs_diff(back.values(), &[1.0, 1.0]) < 1e-12);
    }

    #[test]
    fn impulse_spreads_uniformly() {
        let out = fwht_forward(&block(&[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(out.values(), &[0.5, 0.5, 0.5, 0.5]);

        let m = 7.5f32;
        let mut v = vec![0f32; 256];
        v[37] = m;
        let out = fwht_forward(&TransformBlock::new(v).unwrap());
        for c in out.values() {
            assert!((c.abs() - m / 16.0).abs() <= 1e-6 * m);
        }
    }

    #[test]
    fn involution_small() {
        let v = block(&[3.0, -1.0, 4.0, 1.0]);
        let back = fwht_inverse(&fwht_forward(&v));
        assert!(max_abs_diff(back.values(), v.values()) < 1e-6);
    }

    #[test]
    fn rejects_bad_lengths_and_values() {
        assert!(matches!(
            TransformBlock::new(vec![0f32; 3]),
            Err(Error::Length { len: 3, .. })
        ));
        assert!(matches!(
            TransformBlock::new(vec![0f32; 1024]),
            Err(Error::Length { .. })
        ));
        assert!(matches!(
            TransformBlock::new(vec![0f32; 1]),
            Err(Error::Length { .. })
        ));
        assert!(matches!(
            TransformBlock::new(vec![0.0, f32::NAN]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            TransformBlock::new(vec![f32::INFINITY, 0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn oracle_closed_forms() {
        let out = hadamard_oracle(&block(&[1.0, 1.0])).unwrap();
        assert!(max_abs_diff(out.values(), &[2f64.sqrt(), 0.0]) < 1e-12);
        let out = hadamard_oracle(&block(&[1.0, 0.0])).unwrap();
        let r = 0.5f64.sqrt();
        assert!(max_abs_diff(out.values(), &[r, r]) < 1e-12);
    }

    #[test]
    fn oracle_rejects_large_inputs() {
        let v = TransformBlock::new(vec![0f64; 128]).unwrap();
        assert!(matches!(
            hadamard_oracle(&v),
            Err(Error::Size { len: 128, max: 64 })
        ));
    }

    #[test]
    fn butterfly_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 1..=6 {
            let n = 1 << k;
            for _ in 0..20 {
                let v = random_block(&mut rng, n);
                let fast = fwht_forward(&v);
                let dense = hadamard_oracle(&v).unwrap();
                assert!(max_abs_diff(fast.values(), dense.values()) < 1e-12);
            }
        }
    }

    #[test]
    fn staged_trace_shape_and_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_block(&mut rng, 256);
        let trace = fwht_staged(&v);
        assert_eq!(trace.stages().len(), 8);
        assert!(max_abs_diff(trace.output().values(), fwht_forward(&v).values()) < 1e-12);

        let trace = fwht_staged(&block(&[1.0, 1.0]));
        assert_eq!(trace.stages().len(), 1);
        assert!(max_abs_diff(trace.output().values(), &[2f64.sqrt(), 0.0]) < 1e-12);
    }

    #[test]
    fn staged_first_stage_pairs_neighbours() {
        let trace = fwht_staged(&block(&[1.0, 2.0, 3.0, 5.0]));
        assert_eq!(trace.stages()[0].values(), &[3.0, -1.0, 8.0, -2.0]);
        assert_eq!(trace.stages()[1].values(), &[11.0, -3.0, -5.0, 1.0]);
    }

    #[test]
    fn warp_transform() {
        let ones = TransformBlock::new(vec![1f64; 32]).unwrap();
        let out = fwht32_warp(&ones).unwrap();
        assert!((out.values()[0] - 32f64.sqrt()).abs() < 1e-12);
        assert!(out.values()[1..].iter().all(|x| x.abs() < 1e-12));

        let mut e0 = vec![0f64; 32];
        e0[0] = 1.0;
        let out = fwht32_warp(&TransformBlock::new(e0).unwrap()).unwrap();
        assert!(out.values().iter().all(|x| (x - 0.176_776_695).abs() < 1e-6));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let v = random_block(&mut rng, 32);
            let a = fwht32_warp(&v).unwrap();
            assert!(max_abs_diff(a.values(), fwht_forward(&v).values()) < 1e-6);
        }

        assert!(matches!(
            fwht32_warp(&TransformBlock::new(vec![0f64; 64]).unwrap()),
            Err(Error::Length { len: 64, .. })
        ));
    }

    #[test]
    fn double_precision_involution_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let v = random_block(&mut rng, 512);
            let back = fwht_inverse(&fwht_forward(&v));
            let vmax = v.values().iter().fold(0f64, |m, x| m.max(x.abs()));
            assert!(max_abs_diff(back.values(), v.values()) <= 1e-12 * vmax);
        }
    }
}
