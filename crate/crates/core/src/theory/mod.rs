//! Theoretical tail-index quantities: moment functions and their roots,
//! first-order network expansions, thresholds, contours and moment bounds.

pub mod bounds;
pub mod closed;
pub mod expansion;
pub mod moments;
pub mod report;
pub mod spectral;
pub mod thresholds;

use serde::{Deserialize, Serialize};

pub use bounds::{
    gclt_scaling, moment_bound, moment_bound_from_h, wasserstein_rate, BoundCase, MomentBound,
};
pub use closed::{denominator_expectation, e_term, MaxAbsLaw};
pub use expansion::{
    expansion_d1, expansion_general_b, expansion_general_d_mc, expansion_heterogeneous,
    perturbation_check, perturbation_trial, ExpansionReport, PerturbationResult, Regime,
};
pub use moments::{
    alpha_hat_root, alpha_hat_root_tol, h_finite_k_mc, h_hat_mc, lyapunov_mc, rho_hat_mc,
    AlphaRoot, DrawEngine, MomentFunction,
};
pub use report::{Method, Quantity, TheoryReport};
pub use thresholds::{
    contour_grid, eta_crit_node, thresholds, Case, ContourEngine, ContourGrid, ThresholdReport,
};

/// A Monte-Carlo (or deterministic, `stderr = 0`) estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Estimate {
        Estimate { value, stderr: 0.0 }
    }
}

/// Probe limit for the root of `h(s) = 1`.
pub const S_MAX: f64 = 64.0;

/// Root of a function that is `<= 0` at `lo` and `> 0` at `hi`, by bisection
/// down to a bracket of width `tol`.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Positive root of a convex moment function with `h(0) = 1`, `h'(0) < 0`.
/// Returns `None` when `h` stays `<= 1` up to [`S_MAX`].
pub fn moment_root<F: FnMut(f64) -> f64>(mut h: F, tol: f64) -> Option<f64> {
    let mut lo = 0.0;
    let mut s = 0.125;
    loop {
        if h(s) > 1.0 {
            return Some(bisect(|t| h(t) - 1.0, lo, s, tol));
        }
        if s >= S_MAX {
            return None;
        }
        lo = s;
        s = (2.0 * s).min(S_MAX);
    }
}
