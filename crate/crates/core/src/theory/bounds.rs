//! Moment bounds on the iterates, the Wasserstein contraction rate and the
//! normalizing sequences of the generalized central limit theorem.

use serde::{Deserialize, Serialize};

use super::moments::MomentFunction;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundCase {
    /// `p <= 1`: subadditivity of `t -> t^p`.
    Subadditive,
    /// `p > 1`: `(u + v)^p <= (1+eps) u^p + c(eps) v^p`.
    Weighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentBound {
    pub case: BoundCase,
    pub bound: f64,
    /// The `k -> infinity` value.
    pub limit: f64,
    pub epsilon: Option<f64>,
    pub h_p: f64,
}

const EPS_GRID: usize = 20;

fn weighted_constant(eps: f64, p: f64) -> f64 {
    let a = 1.0 + eps;
    (a.powf(p / (p - 1.0)) - a) / (a.powf(1.0 / (p - 1.0)) - 1.0).powf(p)
}

/// `r^k e0 + (1 - r^k)/(1 - r) c eq1`.
fn geometric(r: f64, k: usize, e0: f64, c_eq1: f64) -> f64 {
    let rk = r.powi(k as i32);
    rk * e0 + (1.0 - rk) / (1.0 - r) * c_eq1
}

/// Upper bound on `E |x_k|^p` from `h(p)`, `E |x_0|^p = e0` and
/// `E |q_1|^p = eq1`. Requires `p < alpha_hat`.
pub fn moment_bound_from_h(
    h_p: f64,
    alpha_hat: f64,
    p: f64,
    k: usize,
    e0: f64,
    eq1: f64,
) -> Result<MomentBound> {
    if !(p > 0.0) || p >= alpha_hat {
        return Err(Error::InvalidParameter(format!(
            "p = {p} must lie in (0, alpha_hat = {alpha_hat})"
        )));
    }
    if !(h_p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "h(p) = {h_p} is not below one"
        )));
    }
    if p <= 1.0 {
        return Ok(MomentBound {
            case: BoundCase::Subadditive,
            bound: geometric(h_p, k, e0, eq1),
            limit: eq1 / (1.0 - h_p),
            epsilon: None,
            h_p,
        });
    }
    let eps_max = 1.0 / h_p - 1.0;
    let mut best: Option<MomentBound> = None;
    for j in 1..=EPS_GRID {
        // Log grid strictly inside (0, eps_max).
        let eps =
            eps_max * 10f64.powf(-3.0 * (EPS_GRID - j) as f64 / (EPS_GRID - 1) as f64) * 0.999;
        let r = (1.0 + eps) * h_p;
        let c = weighted_constant(eps, p);
        let bound = geometric(r, k, e0, c * eq1);
        if best.is_none_or(|b| bound < b.bound) {
            best = Some(MomentBound {
                case: BoundCase::Weighted,
                bound,
                limit: c * eq1 / (1.0 - r),
                epsilon: Some(eps),
                h_p,
            });
        }
    }
    Ok(best.expect("grid is nonempty"))
}

pub fn moment_bound(
    mf: &MomentFunction,
    alpha_hat: f64,
    p: f64,
    k: usize,
    e0: f64,
    eq1: f64,
) -> Result<MomentBound> {
    if !(p > 0.0) || p >= alpha_hat {
        return Err(Error::InvalidParameter(format!(
            "p = {p} must lie in (0, alpha_hat = {alpha_hat})"
        )));
    }
    moment_bound_from_h(mf.h(p).value, alpha_hat, p, k, e0, eq1)
}

/// Contraction factor `h(p)^(1/p)` of the `p`-Wasserstein distance per step.
pub fn wasserstein_rate(mf: &MomentFunction, alpha_hat: f64, p: f64) -> Result<f64> {
    if p < 1.0 || p >= alpha_hat {
        return Err(Error::InvalidParameter(format!(
            "p = {p} must lie in [1, alpha_hat = {alpha_hat})"
        )));
    }
    Ok(mf.h(p).value.powf(1.0 / p))
}

/// Normalizing `(a_K, d_K)` with `a_K (sum_k x_k - d_K)` converging in law.
pub fn gclt_scaling(alpha: f64, k: usize, x_bar: &[f64]) -> Result<(f64, Vec<f64>)> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter("alpha must be positive".into()));
    }
    if alpha == 1.0 {
        return Err(Error::InvalidParameter(
            "alpha = 1 has no normalization formula here".into(),
        ));
    }
    if k < 2 {
        return Err(Error::InvalidParameter("K must be at least 2".into()));
    }
    let kf = k as f64;
    let (a, shift) = if alpha < 1.0 {
        (kf.powf(-1.0 / alpha), 0.0)
    } else if alpha < 2.0 {
        (kf.powf(-1.0 / alpha), kf.powf(1.0 - 1.0 / alpha))
    } else if alpha == 2.0 {
        ((kf * kf.ln()).powf(-0.5), kf)
    } else {
        (kf.powf(-0.5), kf)
    };
    Ok((a, x_bar.iter().map(|x| shift * x).collect()))
}
