//! Log-moment estimator of the index of a symmetric alpha-stable sample.
//!
//! With `K = K1 K2` samples `X_i` and block sums `Y_j` of `K1` consecutive
//! samples, `1/alpha = (mean log|Y| - mean log|X|) / log K1`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recursion::IterateEnsemble;
use crate::stats::median;

/// Default lower bound on the pooled per-node sample count.
pub const MIN_SAMPLES: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarEstimate {
    /// Estimate clipped to `(0, 2]`.
    pub alpha: f64,
    /// Unclipped value (`+inf` when the log-moment difference is not positive).
    pub raw: f64,
    pub clipped: bool,
    pub k1: usize,
    pub k2: usize,
}

/// `K1 = K2 = floor(sqrt(n))`.
pub fn default_blocks(n: usize) -> (usize, usize) {
    let k = (n as f64).sqrt().floor() as usize;
    (k, k)
}

/// Zero samples are dropped before blocking; zero block sums are dropped from
/// the block average.
pub fn estimate_alpha_scalar(samples: &[f64], k1: usize, k2: usize) -> Result<ScalarEstimate> {
    if k1 < 2 || k2 < 2 {
        return Err(Error::InvalidParameter(format!(
            "need K1, K2 >= 2, got {k1}, {k2}"
        )));
    }
    let nonzero: Vec<f64> = samples
        .iter()
        .copied()
        .filter(|v| *v != 0.0 && v.is_finite())
        .collect();
    let k = k1 * k2;
    if nonzero.len() < k {
        return Err(if samples.iter().all(|v| *v == 0.0) {
            Error::Degenerate("all samples are zero".into())
        } else {
            Error::InsufficientSamples {
                have: nonzero.len(),
                need: k,
            }
        });
    }
    let x = &nonzero[..k];
    // Logs are split into a mantissa part and an integer binary exponent so
    // that rescaling by a power of two leaves the estimate bit-identical.
    let (mant_x, exp_x) = x.iter().fold((0.0, 0i64), |(m, e), v| {
        let (lm, le) = split_log(*v);
        (m + lm, e + le)
    });
    let (mut mant_y, mut exp_y, mut n_blocks) = (0.0, 0i64, 0usize);
    for block in x.chunks(k1) {
        let y: f64 = block.iter().sum();
        if y != 0.0 {
            let (lm, le) = split_log(y);
            mant_y += lm;
            exp_y += le;
            n_blocks += 1;
        }
    }
    if n_blocks == 0 {
        return Err(Error::Degenerate("every block sum is zero".into()));
    }
    let exp_part =
        (exp_y * k as i64 - exp_x * n_blocks as i64) as f64 / (k as f64 * n_blocks as f64);
    let log_diff = mant_y / n_blocks as f64 - mant_x / k as f64 + exp_part * std::f64::consts::LN_2;
    let inv_alpha = log_diff / (k1 as f64).ln();
    let raw = if inv_alpha > 0.0 {
        1.0 / inv_alpha
    } else {
        f64::INFINITY
    };
    let clipped = raw > 2.0;
    Ok(ScalarEstimate {
        alpha: raw.min(2.0),
        raw,
        clipped,
        k1,
        k2,
    })
}

/// `ln|v| = ln m + e ln 2` with `m` in `[0.5, 1)`.
fn split_log(v: f64) -> (f64, i64) {
    let a = v.abs();
    let (a, shift) = if a < f64::MIN_POSITIVE {
        (a * 2f64.powi(64), -64)
    } else {
        (a, 0)
    };
    let bits = a.to_bits();
    let e = ((bits >> 52) & 0x7ff) as i64 - 1022;
    let m = f64::from_bits((bits & !(0x7ffu64 << 52)) | (1022u64 << 52));
    (m.ln(), e + shift)
}

pub fn estimate_alpha(samples: &[f64]) -> Result<ScalarEstimate> {
    let (k1, k2) = default_blocks(samples.len());
    estimate_alpha_scalar(samples, k1, k2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailIndexEstimate {
    /// Median of the per-node estimates.
    pub alpha_hat: f64,
    pub alpha_raw: f64,
    pub per_node_alphas: Vec<f64>,
    pub per_node_raw: Vec<f64>,
    pub n_samples: usize,
    pub k1: usize,
    pub k2: usize,
    pub clipped: bool,
}

/// Per node: pool the node's coordinates of the tail averages over the
/// non-diverged runs, estimate, and take the median over nodes.
pub fn estimate_ensemble(ens: &IterateEnsemble, min_samples: usize) -> Result<TailIndexEstimate> {
    let mut alphas = Vec::with_capacity(ens.n_nodes);
    let mut raws = Vec::with_capacity(ens.n_nodes);
    let mut meta = (0, 0, 0);
    for i in 0..ens.n_nodes {
        let s = ens.node_samples(i);
        if s.len() < min_samples.max(4) {
            return Err(Error::InsufficientSamples {
                have: s.len(),
                need: min_samples.max(4),
            });
        }
        let (k1, k2) = default_blocks(s.len());
        let e = estimate_alpha_scalar(&s, k1, k2)?;
        meta = (s.len(), k1, k2);
        alphas.push(e.alpha);
        raws.push(e.raw);
    }
    let alpha_hat = median(&alphas);
    let alpha_raw = median(&raws);
    Ok(TailIndexEstimate {
        alpha_hat,
        alpha_raw,
        per_node_alphas: alphas,
        per_node_raw: raws,
        n_samples: meta.0,
        k1: meta.1,
        k2: meta.2,
        clipped: alpha_raw > 2.0,
    })
}

/// Symmetric alpha-stable variate (unit scale) by the Chambers-Mallows-Stuck
/// construction.
pub fn sample_stable<R: Rng + ?Sized>(alpha: f64, r: &mut R) -> f64 {
    if (alpha - 2.0).abs() < 1e-12 {
        return std::f64::consts::SQRT_2 * r.sample::<f64, _>(StandardNormal);
    }
    let v = PI * (r.random::<f64>() - 0.5);
    if (alpha - 1.0).abs() < 1e-12 {
        return v.tan();
    }
    let w: f64 = r.sample(Exp1);
    let t = (alpha * v).sin() / v.cos().powf(1.0 / alpha);
    t * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Symmetrized Pareto variate with `P(|X| > t) = t^-alpha` for `t >= 1`.
pub fn sample_pareto_sym<R: Rng + ?Sized>(alpha: f64, r: &mut R) -> f64 {
    let u: f64 = 1.0 - r.random::<f64>();
    let m = u.powf(-1.0 / alpha);
    if r.random::<bool>() {
        m
    } else {
        -m
    }
}
