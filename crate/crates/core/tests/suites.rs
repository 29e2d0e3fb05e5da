//! Rotation against no rotation on the standard synthetic suites.

use itq3::codec::QuantConfig;
use itq3::compute::{eval_error, ErrorReport, GeneratorSpec, WeightDist};
use itq3::packing::Variant;
use itq3::quantizer::ScalePolicy;

fn report(dist: WeightDist, cfg: &QuantConfig) -> ErrorReport {
    let w = GeneratorSpec {
        dist,
        rows: 64,
        cols: 4096,
        seed: 21,
    }
    .generate()
    .unwrap();
    eval_error(&w, cfg).unwrap()
}

#[test]
fn rotation_never_hurts_the_median() {
    let suites = [
        WeightDist::Gaussian,
        WeightDist::Laplace,
        WeightDist::StudentT { nu: 3.0 },
        WeightDist::standard_outliers(),
    ];
    for policy in [ScalePolicy::default(), ScalePolicy::NumericArgmin, ScalePolicy::MeanAbs] {
        for variant in [Variant::S, Variant::SS] {
            let cfg = QuantConfig {
                variant,
                policy,
                ..QuantConfig::default()
            };
            for dist in suites {
                let r = report(dist, &cfg);
                assert!(r.blocks >= 1000);
                let (rot, plain) = (r.median_block_mse, r.unrotated_median_block_mse);
                println!("{dist} {variant} {policy}: rotated {rot:.4}, unrotated {plain:.4}");
                if dist == WeightDist::Gaussian {
                    // Gaussian blocks are already Gaussian; rotation is a wash.
                    assert!(rot <= plain * 1.02, "{dist} {variant} {policy}: {rot} vs {plain}");
                } else {
                    assert!(rot < plain, "{dist} {variant} {policy}: {rot} vs {plain}");
                }
            }
        }
    }
}

#[test]
fn rotation_flattens_heavy_tails() {
    let cfg = QuantConfig::default();
    let gaussian = report(WeightDist::Gaussian, &cfg);
    let outliers = report(WeightDist::standard_outliers(), &cfg);
    let t3 = report(WeightDist::StudentT { nu: 3.0 }, &cfg);
    assert!(outliers.linf_rot < 0.5 * outliers.linf_in);
    assert!(t3.linf_rot / t3.linf_in < gaussian.linf_rot / gaussian.linf_in);
}
