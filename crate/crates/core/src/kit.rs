//! Scaled chi-square laws `c * chi2(k)`: the squared feature `a^2`, the batch
//! sum `sum_j a_j^2` and the batch mean `(1/b) sum_j a_j^2` of Gaussian features.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erf_inv, erfc};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::synthdata::normal;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledChiSquare {
    pub dof: f64,
    pub scale: f64,
}

impl ScaledChiSquare {
    pub fn new(dof: f64, scale: f64) -> ScaledChiSquare {
        assert!(
            dof > 0.0 && scale > 0.0,
            "chi-square needs positive dof and scale"
        );
        ScaledChiSquare { dof, scale }
    }

    /// Law of `a^2` with `a ~ N(0, sigma^2)`.
    pub fn squared_feature(sigma: f64) -> Self {
        Self::new(1.0, sigma * sigma)
    }

    /// Law of `sum_{j<=b} a_j^2`.
    pub fn batch_sum(b: usize, sigma: f64) -> Self {
        Self::new(b as f64, sigma * sigma)
    }

    /// Law of `(1/b) sum_{j<=b} a_j^2`.
    pub fn batch_mean(b: usize, sigma: f64) -> Self {
        Self::new(b as f64, sigma * sigma / b as f64)
    }

    pub fn mean(&self) -> f64 {
        self.dof * self.scale
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return if x == 0.0 && self.dof == 2.0 {
                0.5 / self.scale
            } else {
                0.0
            };
        }
        let k2 = 0.5 * self.dof;
        let ln = (k2 - 1.0) * x.ln()
            - x / (2.0 * self.scale)
            - k2 * (2.0 * self.scale).ln()
            - ln_gamma(k2);
        ln.exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if !x.is_finite() {
            return 1.0;
        }
        if self.dof == 1.0 {
            erf((x / (2.0 * self.scale)).sqrt())
        } else {
            gamma_lr(0.5 * self.dof, x / (2.0 * self.scale))
        }
    }

    /// Survival function `1 - cdf`, accurate in the far tail.
    pub fn sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        if !x.is_finite() {
            return 0.0;
        }
        if self.dof == 1.0 {
            erfc((x / (2.0 * self.scale)).sqrt())
        } else {
            gamma_ur(0.5 * self.dof, x / (2.0 * self.scale))
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        if p >= 1.0 {
            return f64::INFINITY;
        }
        if self.dof == 1.0 {
            let e = erf_inv(p);
            return 2.0 * self.scale * e * e;
        }
        let mut hi = self.mean().max(1e-300);
        while self.cdf(hi) < p {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Draw by summing squared normals (exact for integer dof).
    pub fn sample<R: Rng + ?Sized>(&self, r: &mut R) -> f64 {
        let k = self.dof.round() as usize;
        let s: f64 = (0..k).map(|_| normal(r).powi(2)).sum();
        self.scale * s
    }
}

/// `(1/eta) (erf^-1(2^(-1/N)))^-2`: the feature variance above which the
/// network makes the tail heavier to first order (unit-batch Gaussian case).
pub fn sigma2_threshold(eta: f64, n: usize) -> f64 {
    let e = erf_inv(2f64.powf(-1.0 / n as f64));
    1.0 / (eta * e * e)
}
