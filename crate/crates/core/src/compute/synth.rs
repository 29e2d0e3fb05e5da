//! Seeded synthetic weight generators.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::codec::WeightTensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "kebab-case")]
pub enum WeightDist {
    /// N(0, 1).
    Gaussian,
    /// Laplace with unit variance (excess kurtosis 3).
    Laplace,
    /// Student-t with `nu` degrees of freedom.
    StudentT { nu: f64 },
    /// N(0, 1) with each weight independently multiplied by `mult` with
    /// probability `frac`.
    Outlier { frac: f64, mult: f64 },
}

impl WeightDist {
    /// Gaussian with 1% of weights scaled by 20.
    pub const fn standard_outliers() -> Self {
        WeightDist::Outlier {
            frac: 0.01,
            mult: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightDist::StudentT { nu } if !(nu.is_finite() && nu > 0.0) => {
                Err(Error::domain(format!("student-t needs nu > 0, got {nu}")))
            }
            WeightDist::Outlier { frac, mult } if !((0.0..=1.0).contains(&frac) && mult.is_finite()) => Err(
                Error::domain(format!("outlier fraction must be in [0, 1] and multiplier finite, got {frac}, {mult}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f32 {
        match *self {
            WeightDist::Gaussian => StandardNormal.sample(rng),
            WeightDist::Laplace => {
                // Inverse CDF with b = 1/sqrt(2).
                let u: f64 = rng.random_range(-0.5..0.5);
                let b = std::f64::consts::FRAC_1_SQRT_2;
                (-b * u.signum() * (1.0 - 2.0 * u.abs()).ln()) as f32
            }
            WeightDist::StudentT { nu } => {
                let t = StudentT::new(nu).expect("validated nu");
                t.sample(rng) as f32
            }
            WeightDist::Outlier { frac, mult } => {
                let x: f64 = StandardNormal.sample(rng);
                let x = if rng.random_bool(frac) { x * mult } else { x };
                x as f32
            }
        }
    }

    pub fn sample_vec<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<f32> {
        (0..len).map(|_| self.sample(rng)).collect()
    }
}

impl fmt::Display for WeightDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightDist::Gaussian => f.write_str("gaussian"),
            WeightDist::Laplace => f.write_str("laplace"),
            WeightDist::StudentT { nu } => write!(f, "student-t(nu={nu})"),
            WeightDist::Outlier { frac, mult } => write!(f, "outlier(frac={frac}, mult={mult})"),
        }
    }
}

/// Name-only parse; parameters take their standard values (nu = 3,
/// 1% outliers at x20).
impl FromStr for WeightDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(WeightDist::Gaussian),
            "laplace" => Ok(WeightDist::Laplace),
            "student-t" => Ok(WeightDist::StudentT { nu: 3.0 }),
            "outlier" => Ok(WeightDist::standard_outliers()),
            other => Err(Error::domain(format!(
                "unknown distribution {other:?} (expected gaussian, laplace, student-t or outlier)"
            ))),
        }
    }
}

/// Everything needed to regenerate a synthetic tensor bit for bit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub dist: WeightDist,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn generate(&self) -> Result<WeightTensor> {
        self.dist.validate()?;
        let len = self
            .rows
            .checked_mul(self.cols)
            .ok_or_else(|| Error::Shape(format!("{}x{} overflows", self.rows, self.cols)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        WeightTensor::new(self.rows, self.cols, self.dist.sample_vec(len, &mut rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::block_stats;

    fn stats_of(dist: WeightDist) -> crate::quantizer::BlockStats {
        let t = GeneratorSpec {
            dist,
            rows: 1000,
            cols: 500,
            seed: 3,
        }
        .generate()
        .unwrap();
        block_stats(t.values()).unwrap()
    }

    #[test]
    fn moments() {
        let g = stats_of(WeightDist::Gaussian);
        assert!((g.sigma - 1.0).abs() < 0.01 && g.excess_kurtosis.abs() < 0.05);
        let l = stats_of(WeightDist::Laplace);
        assert!((l.sigma - 1.0).abs() < 0.01 && (l.excess_kurtosis - 3.0).abs() < 0.2);
        let t = stats_of(WeightDist::StudentT { nu: 5.0 });
        assert!((t.sigma - (5f64 / 3.0).sqrt()).abs() < 0.03);
        let o = stats_of(WeightDist::standard_outliers());
        // Variance 0.99 + 0.01 * 400 = 4.99.
        assert!((o.sigma * o.sigma - 4.99).abs() < 0.2, "{}", o.sigma);
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let spec = GeneratorSpec {
            dist: WeightDist::Laplace,
            rows: 4,
            cols: 64,
            seed: 42,
        };
        assert_eq!(spec.generate().unwrap(), spec.generate().unwrap());
        let other = GeneratorSpec { seed: 43, ..spec };
        assert_ne!(spec.generate().unwrap(), other.generate().unwrap());
    }

    #[test]
    fn validation() {
        assert!(WeightDist::StudentT { nu: 0.0 }.validate().is_err());
        assert!(WeightDist::Outlier { frac: 1.5, mult: 2.0 }.validate().is_err());
        assert!("cauchy".parse::<WeightDist>().is_err());
        assert_eq!("outlier".parse::<WeightDist>().unwrap(), WeightDist::standard_outliers());
    }
}
