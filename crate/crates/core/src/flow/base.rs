//! Base (latent) distributions: isotropic standard Laplace or Gaussian.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::sample_laplace;

const LN_2: f64 = std::f64::consts::LN_2;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseDistribution {
    Laplace,
    Gaussian,
}

impl BaseDistribution {
    /// Joint log-density of an isotropic vector.
    pub fn log_density(self, z: &[f64]) -> f64 {
        match self {
            BaseDistribution::Laplace => z.iter().map(|v| -LN_2 - v.abs()).sum(),
            BaseDistribution::Gaussian => {
                z.iter().map(|v| -HALF_LN_2PI - 0.5 * v * v).sum()
            }
        }
    }

    /// d log p / d z for one coordinate.
    #[inline]
    pub fn score(self, z: f64) -> f64 {
        match self {
            BaseDistribution::Laplace => {
                if z > 0.0 {
                    -1.0
                } else if z < 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            BaseDistribution::Gaussian => -z,
        }
    }

    pub fn sample_into<R: Rng>(self, rng: &mut R, out: &mut [f64]) {
        match self {
            BaseDistribution::Laplace => {
                for v in out {
                    *v = sample_laplace(rng);
                }
            }
            BaseDistribution::Gaussian => {
                for v in out {
                    *v = rng.sample(StandardNormal);
                }
            }
        }
    }

    /// Differential entropy per coordinate.
    pub fn entropy(self) -> f64 {
        match self {
            BaseDistribution::Laplace => 1.0 + LN_2,
            BaseDistribution::Gaussian => 0.5 + HALF_LN_2PI,
        }
    }
}
