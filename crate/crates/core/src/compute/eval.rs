//! Error measurement and the block-size sweep.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::codec::{
    block_element_scales, dequantize_coefficients, gather_block, quantize_tensor, quantize_values, QuantConfig,
    QuantizedTensor, WeightTensor,
};
use crate::compute::synth::GeneratorSpec;
use crate::error::{Error, Result};
use crate::quantizer::{uniform_quantize, ScalePolicy};
use crate::transform::fwht_in_place;

/// Bit width of the unrotated uniform baseline.
pub const UNIFORM_BASELINE_BITS: u32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorReport {
    pub rows: usize,
    pub cols: usize,
    pub block_n: usize,
    pub variant: String,
    pub policy: String,
    pub blocks: usize,
    /// Mean squared reconstruction error over the logical weights.
    pub mse: f64,
    pub median_block_mse: f64,
    /// `||W_hat - W||_F / ||W||_F`, 0 for an all-zero tensor.
    pub frobenius_rel: f64,
    /// Block infinity norm before and after rotation, averaged over blocks.
    pub linf_in: f64,
    pub linf_rot: f64,
    /// Minimum of `sum(d^2) / 4 - ||w_hat - w||^2` over blocks where nothing
    /// clamps; absent when every block clamps.
    pub bound_slack: Option<f64>,
    pub unclamped_blocks: usize,
    pub clamp_fraction: f64,
    pub zero_fraction: f64,
    /// Largest relative gap between weight-domain and rotated-domain block
    /// error norms.
    pub transfer_max_rel: f64,
    pub unrotated_mse: f64,
    pub unrotated_median_block_mse: f64,
    pub uniform3_mse: f64,
    pub uniform3_median_block_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub block_n: usize,
    pub mse: f64,
    pub median_block_mse: f64,
    /// Transform cost per weight in multiply-add units, `log2(n) + 1`.
    pub relative_overhead: f64,
}

/// Per-block measurements, reduced in block order afterwards.
struct BlockEval {
    live: usize,
    err2_logical: f64,
    energy_logical: f64,
    err2_rec: f64,
    err2_rot: f64,
    bound: f64,
    clamped: usize,
    zeros: usize,
    linf_in: f64,
    linf_rot: f64,
    unrotated_err2: f64,
    uniform_err2: f64,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

fn linf(v: &[f32]) -> f64 {
    v.iter().fold(0f64, |m, &x| m.max(f64::from(x).abs()))
}

fn uniform_baseline(w: &[f32]) -> Result<Vec<f32>> {
    let (lo, hi) = w
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(f64::from(x)), hi.max(f64::from(x)))
        });
    if lo == hi {
        return Ok(w.to_vec());
    }
    w.iter()
        .map(|&x| uniform_quantize(f64::from(x), UNIFORM_BASELINE_BITS, lo, hi).map(|v| v as f32))
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn eval_block(w: &[f32], live: usize, q: &QuantizedTensor, b: usize, baseline_cfg: &QuantConfig) -> Result<BlockEval> {
    let block = &q.blocks()[b];
    let mut coeffs = w.to_vec();
    fwht_in_place(&mut coeffs);
    let deq = dequantize_coefficients(block)?;
    let mut rec = deq.clone();
    fwht_in_place(&mut rec);

    let scales = block_element_scales(block);
    let z = f32::from(block.zero_point());
    let clamped = coeffs
        .iter()
        .zip(&scales)
        .filter(|(&c, &d)| (c + z * d).abs() > 1.5 * d)
        .count();
    let zeros = block.codes().as_slice().iter().filter(|&&c| c == 0).count();
    let bound = scales.iter().map(|&d| f64::from(d) * f64::from(d) / 4.0).sum();

    let unrotated = dequantize_coefficients(&quantize_values(w, baseline_cfg)?)?;
    let uniform = uniform_baseline(w)?;

    Ok(BlockEval {
        live,
        err2_logical: sq_dist(&rec[..live], &w[..live]),
        energy_logical: w[..live].iter().map(|&x| f64::from(x) * f64::from(x)).sum(),
        err2_rec: sq_dist(&rec, w),
        err2_rot: sq_dist(&deq, &coeffs),
        bound,
        clamped,
        zeros,
        linf_in: linf(w),
        linf_rot: linf(&coeffs),
        unrotated_err2: sq_dist(&unrotated[..live], &w[..live]),
        uniform_err2: sq_dist(&uniform[..live], &w[..live]),
    })
}

/// Measures an existing quantization of `w`. `policy` only drives the
/// unrotated ternary baseline, which uses the tensor's variant and symmetry.
pub fn eval_quantized(w: &WeightTensor, q: &QuantizedTensor, policy: ScalePolicy) -> Result<ErrorReport> {
    if (w.rows(), w.cols()) != (q.rows(), q.cols()) {
        return Err(Error::Shape(format!(
            "reference is {}x{}, quantized tensor is {}x{}",
            w.rows(),
            w.cols(),
            q.rows(),
            q.cols()
        )));
    }
    let n = q.block_n();
    let baseline_cfg = QuantConfig {
        block_n: n,
        variant: q.variant(),
        policy,
        symmetric: !q.asymmetric(),
    };
    let values = w.values();
    let evals = (0..q.blocks().len())
        .into_par_iter()
        .map(|b| {
            let mut buf = vec![0f32; n];
            gather_block(values, b, &mut buf);
            let live = n.min(values.len() - b * n);
            eval_block(&buf, live, q, b, &baseline_cfg).map_err(|e| e.in_block(b))
        })
        .collect::<Result<Vec<_>>>()?;

    let total = values.len() as f64;
    let nb = evals.len() as f64;
    let coded = (evals.len() * n) as f64;

    let (mut err2, mut energy, mut unrot, mut unif) = (0.0, 0.0, 0.0, 0.0);
    let (mut clamped, mut zeros) = (0usize, 0usize);
    let (mut linf_in, mut linf_rot) = (0.0, 0.0);
    let mut slack: Option<f64> = None;
    let mut unclamped_blocks = 0;
    let mut transfer_max_rel = 0f64;
    for e in &evals {
        err2 += e.err2_logical;
        energy += e.energy_logical;
        unrot += e.unrotated_err2;
        unif += e.uniform_err2;
        clamped += e.clamped;
        zeros += e.zeros;
        linf_in += e.linf_in;
        linf_rot += e.linf_rot;
        if e.clamped == 0 {
            unclamped_blocks += 1;
            let s = e.bound - e.err2_rec;
            slack = Some(slack.map_or(s, |m| m.min(s)));
        }
        let (a, r) = (e.err2_rec.sqrt(), e.err2_rot.sqrt());
        let gap = (a - r).abs();
        let rel = if gap == 0.0 { 0.0 } else { gap / r.max(f64::MIN_POSITIVE) };
        transfer_max_rel = transfer_max_rel.max(rel);
    }

    let block_mse = |f: fn(&BlockEval) -> f64| median(evals.iter().map(|e| f(e) / e.live as f64).collect());

    Ok(ErrorReport {
        rows: w.rows(),
        cols: w.cols(),
        block_n: n,
        variant: q.variant().to_string(),
        policy: policy.to_string(),
        blocks: evals.len(),
        mse: err2 / total,
        median_block_mse: block_mse(|e| e.err2_logical),
        frobenius_rel: if err2 == 0.0 { 0.0 } else { (err2 / energy.max(f64::MIN_POSITIVE)).sqrt() },
        linf_in: linf_in / nb,
        linf_rot: linf_rot / nb,
        bound_slack: slack,
        unclamped_blocks,
        clamp_fraction: clamped as f64 / coded,
        zero_fraction: zeros as f64 / coded,
        transfer_max_rel,
        unrotated_mse: unrot / total,
        unrotated_median_block_mse: block_mse(|e| e.unrotated_err2),
        uniform3_mse: unif / total,
        uniform3_median_block_mse: block_mse(|e| e.uniform_err2),
    })
}

/// Quantizes `w` under `cfg` and measures the result.
pub fn eval_error(w: &WeightTensor, cfg: &QuantConfig) -> Result<ErrorReport> {
    let q = quantize_tensor(w, cfg)?;
    eval_quantized(w, &q, cfg.policy)
}

/// Quantizes one generated tensor at each block size in `sweep`. The tensor is
/// generated once, so every row sees the same weights.
pub fn ablate_block_size(spec: &GeneratorSpec, sweep: &[usize], base: &QuantConfig) -> Result<Vec<AblationRow>> {
    let w = spec.generate()?;
    sweep
        .iter()
        .map(|&block_n| {
            let cfg = QuantConfig { block_n, ..*base };
            let report = eval_error(&w, &cfg)?;
            Ok(AblationRow {
                block_n,
                mse: report.mse,
                median_block_mse: report.median_block_mse,
                relative_overhead: f64::from(block_n.trailing_zeros()) + 1.0,
            })
        })
        .collect()
}

pub fn write_json<T: Serialize, W: Write>(rows: &[T], mut sink: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut sink, rows).map_err(|e| Error::Io(e.into()))?;
    writeln!(sink)?;
    Ok(())
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::synth::WeightDist;
    use crate::packing::Variant;

    fn tensor(dist: WeightDist, rows: usize, cols: usize, seed: u64) -> WeightTensor {
        GeneratorSpec { dist, rows, cols, seed }.generate().unwrap()
    }

    #[test]
    fn zero_tensor_report() {
        let r = eval_error(&WeightTensor::zeros(2, 256).unwrap(), &QuantConfig::default()).unwrap();
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.clamp_fraction, 0.0);
        assert_eq!(r.zero_fraction, 1.0);
        assert_eq!(r.frobenius_rel, 0.0);
        assert_eq!(r.unclamped_blocks, 2);
        assert!(r.bound_slack.unwrap() > 0.0);
    }

    #[test]
    fn linf_reduction_ratios() {
        let g = eval_error(&tensor(WeightDist::Gaussian, 64, 4096, 1), &QuantConfig::default()).unwrap();
        let t = eval_error(&tensor(WeightDist::StudentT { nu: 3.0 }, 64, 4096, 1), &QuantConfig::default()).unwrap();
        let (rg, rt) = (g.linf_rot / g.linf_in, t.linf_rot / t.linf_in);
        // An orthogonal map sends iid Gaussians to iid Gaussians, so the
        // Gaussian ratio sits at 1; heavy tails are compressed well below it.
        assert!((rg - 1.0).abs() < 0.03, "{rg}");
        assert!(rt < 0.75 * rg, "{rt} vs {rg}");
    }

    #[test]
    fn report_invariants() {
        for variant in [Variant::S, Variant::SS] {
            let cfg = QuantConfig {
                variant,
                ..QuantConfig::default()
            };
            let r = eval_error(&tensor(WeightDist::Laplace, 3, 1000, 2), &cfg).unwrap();
            assert!(r.transfer_max_rel < 1e-4);
            assert!((0.0..=1.0).contains(&r.clamp_fraction));
            assert!((0.0..=1.0).contains(&r.zero_fraction));
            if let Some(s) = r.bound_slack {
                assert!(s >= 0.0);
            }
            assert_eq!(r.blocks, 12);
        }
    }

    #[test]
    fn csv_and_json_headers() {
        let rows = ablate_block_size(
            &GeneratorSpec {
                dist: WeightDist::Gaussian,
                rows: 4,
                cols: 512,
                seed: 1,
            },
            &[256],
            &QuantConfig::default(),
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].mse > 0.0);

        let mut out = Vec::new();
        write_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("block_n,mse,median_block_mse,relative_overhead\n256,"));

        let mut out = Vec::new();
        write_json(&rows, &mut out).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
        assert_eq!(v[0]["block_n"], 256);
        assert_eq!(v[0]["relative_overhead"], 9.0);
    }

    #[test]
    fn overhead_increases_with_block_size() {
        let rows = ablate_block_size(
            &GeneratorSpec {
                dist: WeightDist::Gaussian,
                rows: 2,
                cols: 512,
                seed: 1,
            },
            &[32, 64, 128, 256, 512],
            &QuantConfig::default(),
        )
        .unwrap();
        assert!(rows.windows(2).all(|w| w[1].relative_overhead > w[0].relative_overhead));
    }

    #[test]
    fn shape_mismatch() {
        let w = tensor(WeightDist::Gaussian, 2, 256, 1);
        let q = quantize_tensor(&tensor(WeightDist::Gaussian, 1, 512, 1), &QuantConfig::default()).unwrap();
        assert!(matches!(eval_quantized(&w, &q, ScalePolicy::default()), Err(Error::Shape(_))));
    }
}
