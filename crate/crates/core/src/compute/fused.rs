//! Multiply directly from packed blocks.
//!
//! Each block is decoded once into a scratch buffer and consumed immediately;
//! the dense matrix is never materialized. Products accumulate in `f64`, and
//! every output element sums its terms in increasing column order, so results
//! do not depend on how blocks are scheduled.

use crate::codec::{decode_block_into, QuantizedTensor, WeightTensor};
use crate::error::{Error, Result};

/// `x` is `cols x k` row-major; returns the `rows x k` accumulators.
fn fused_accumulate(q: &QuantizedTensor, x: &[f32], k: usize) -> Result<Vec<f64>> {
    let (rows, cols, n) = (q.rows(), q.cols(), q.block_n());
    let len = q.len();
    let mut acc = vec![0f64; rows * k];
    let mut scratch = vec![0f32; n];
    for (b, block) in q.blocks().iter().enumerate() {
        decode_block_into(block, &mut scratch).map_err(|e| e.in_block(b))?;
        let start = b * n;
        let live = n.min(len - start);
        for (j, &w) in scratch[..live].iter().enumerate() {
            let g = start + j;
            let (r, c) = (g / cols, g % cols);
            let w = f64::from(w);
            let out = &mut acc[r * k..(r + 1) * k];
            for (o, &xv) in out.iter_mut().zip(&x[c * k..(c + 1) * k]) {
                *o += w * f64::from(xv);
            }
        }
    }
    Ok(acc)
}

pub fn fused_matvec(q: &QuantizedTensor, x: &[f32]) -> Result<Vec<f32>> {
    if x.len() != q.cols() {
        return Err(Error::Shape(format!(
            "vector of length {} against {}x{} weights",
            x.len(),
            q.rows(),
            q.cols()
        )));
    }
    Ok(fused_accumulate(q, x, 1)?.into_iter().map(|v| v as f32).collect())
}

/// `Q * X` for `X` of shape `cols x k`.
pub fn fused_matmul(q: &QuantizedTensor, x: &WeightTensor) -> Result<WeightTensor> {
    if x.rows() != q.cols() {
        return Err(Error::Shape(format!(
            "{}x{} weights times {}x{} input",
            q.rows(),
            q.cols(),
            x.rows(),
            x.cols()
        )));
    }
    let k = x.cols();
    let acc = fused_accumulate(q, x.values(), k)?;
    WeightTensor::new(q.rows(), k, acc.into_iter().map(|v| v as f32).collect())
}

/// Plain dense product with `f64` accumulation, the reference for the fused
/// paths.
pub fn dense_matmul(w: &WeightTensor, x: &WeightTensor) -> Result<WeightTensor> {
    if x.rows() != w.cols() {
        return Err(Error::Shape(format!(
            "{}x{} times {}x{}",
            w.rows(),
            w.cols(),
            x.rows(),
            x.cols()
        )));
    }
    let k = x.cols();
    let mut out = Vec::with_capacity(w.rows() * k);
    for r in 0..w.rows() {
        let row = w.row(r);
        for t in 0..k {
            let s: f64 = row
                .iter()
                .enumerate()
                .map(|(c, &wv)| f64::from(wv) * f64::from(x.values()[c * k + t]))
                .sum();
            out.push(s as f32);
        }
    }
    WeightTensor::new(w.rows(), k, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{dequantize_tensor, quantize_tensor, QuantConfig};
    use crate::compute::synth::{GeneratorSpec, WeightDist};

    fn sample(rows: usize, cols: usize, seed: u64) -> WeightTensor {
        GeneratorSpec {
            dist: WeightDist::Gaussian,
            rows,
            cols,
            seed,
        }
        .generate()
        .unwrap()
    }

    #[test]
    fn zero_cases() {
        let q = quantize_tensor(&WeightTensor::zeros(4, 300).unwrap(), &QuantConfig::default()).unwrap();
        let x = sample(300, 1, 1);
        assert!(fused_matvec(&q, x.values()).unwrap().iter().all(|&v| v == 0.0));

        let q = quantize_tensor(&sample(4, 300, 2), &QuantConfig::default()).unwrap();
        assert!(fused_matvec(&q, &[0.0; 300]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_dense_oracle() {
        let w = sample(8, 512, 3);
        let q = quantize_tensor(&w, &QuantConfig::default()).unwrap();
        let dense = dequantize_tensor(&q).unwrap();
        let x = sample(512, 1, 4);
        let fused = fused_matvec(&q, x.values()).unwrap();
        let oracle = dense_matmul(&dense, &x).unwrap();
        for (a, b) in fused.iter().zip(oracle.values()) {
            assert!((a - b).abs() <= 1e-5 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn blocks_crossing_rows() {
        // 3 x 100 in blocks of 64: blocks straddle row boundaries.
        let w = sample(3, 100, 5);
        let q = quantize_tensor(&w, &QuantConfig::with_block(64).unwrap()).unwrap();
        let dense = dequantize_tensor(&q).unwrap();
        let x = sample(100, 7, 6);
        let fused = fused_matmul(&q, &x).unwrap();
        assert_eq!(fused, dense_matmul(&dense, &x).unwrap());
    }

    #[test]
    fn matvec_is_matmul_with_one_column() {
        let w = sample(5, 256, 7);
        let q = quantize_tensor(&w, &QuantConfig::default()).unwrap();
        let x = sample(256, 1, 8);
        let mv = fused_matvec(&q, x.values()).unwrap();
        let mm = fused_matmul(&q, &x).unwrap();
        assert_eq!(mv.as_slice(), mm.values());
    }

    #[test]
    fn identity_probe_recovers_weights() {
        let w = sample(4, 64, 9);
        let q = quantize_tensor(&w, &QuantConfig::with_block(64).unwrap()).unwrap();
        let mut eye = vec![0f32; 64 * 64];
        for i in 0..64 {
            eye[i * 64 + i] = 1.0;
        }
        let eye = WeightTensor::new(64, 64, eye).unwrap();
        let got = fused_matmul(&q, &eye).unwrap();
        assert_eq!(got, dequantize_tensor(&q).unwrap());
    }

    #[test]
    fn shape_errors() {
        let q = quantize_tensor(&sample(2, 64, 1), &QuantConfig::with_block(64).unwrap()).unwrap();
        assert!(matches!(fused_matvec(&q, &[0.0; 63]), Err(Error::Shape(_))));
        assert!(matches!(fused_matmul(&q, &sample(32, 2, 1)), Err(Error::Shape(_))));
    }
}
