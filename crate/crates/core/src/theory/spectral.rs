//! Extreme eigenvalues of Gaussian sample covariances without forming them.
//!
//! For `A` a `d x b` matrix of independent standard normals, the nonzero
//! eigenvalues of `A A^T` coincide in law with those of `B B^T`, where `B` is
//! the `m x m` lower bidiagonal matrix (`m = min(d, b)`, `n = max(d, b)`)
//! with diagonal `chi_n, chi_{n-1}, ..., chi_{n-m+1}` and subdiagonal
//! `chi_{m-1}, ..., chi_1`. The extremes of the tridiagonal `B B^T` are found
//! by Sturm-sequence bisection.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution};

use crate::synthdata::normal;

fn chi_sq<R: Rng + ?Sized>(k: usize, r: &mut R) -> f64 {
    if k <= 8 {
        (0..k).map(|_| normal(r).powi(2)).sum()
    } else {
        ChiSquared::new(k as f64).expect("positive dof").sample(r)
    }
}

/// Number of eigenvalues of the symmetric tridiagonal `(a, e)` below `x`.
fn sturm_count(a: &[f64], e2: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = a[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..a.len() {
        let prev = if q == 0.0 {
            f64::EPSILON * (a[i - 1].abs() + 1.0)
        } else {
            q
        };
        q = a[i] - x - e2[i - 1] / prev;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Smallest and largest eigenvalue of a symmetric tridiagonal matrix with
/// diagonal `a` and squared off-diagonal `e2`.
pub fn tridiagonal_extremes(a: &[f64], e2: &[f64]) -> (f64, f64) {
    let m = a.len();
    if m == 1 {
        return (a[0], a[0]);
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..m {
        let r =
            if i > 0 { e2[i - 1].sqrt() } else { 0.0 } + if i + 1 < m { e2[i].sqrt() } else { 0.0 };
        lo = lo.min(a[i] - r);
        hi = hi.max(a[i] + r);
    }
    let tol = 4.0 * f64::EPSILON * hi.abs().max(lo.abs()).max(1e-300);
    let bisect = |target: usize, mut l: f64, mut h: f64| {
        // Find the smallest x with count(x) >= target.
        while h - l > tol {
            let mid = 0.5 * (l + h);
            if mid <= l || mid >= h {
                break;
            }
            if sturm_count(a, e2, mid) >= target {
                h = mid;
            } else {
                l = mid;
            }
        }
        0.5 * (l + h)
    };
    (bisect(1, lo, hi), bisect(m, lo, hi))
}

/// `(lambda_min, lambda_max)` of `H = (sigma^2 / b) sum_{j<=b} z_j z_j^T` in
/// dimension `d`; `lambda_min = 0` when `b < d`.
pub fn covariance_extremes<R: Rng + ?Sized>(
    d: usize,
    b: usize,
    sigma: f64,
    r: &mut R,
) -> (f64, f64) {
    let scale = sigma * sigma / b as f64;
    let m = d.min(b);
    let n = d.max(b);
    if m == 1 {
        let v = scale * chi_sq(n, r);
        return if d == 1 { (v, v) } else { (0.0, v) };
    }
    // B^T B: diagonal c_i^2 + s_i^2, off-diagonal s_i c_{i+1}.
    let c2: Vec<f64> = (0..m).map(|i| chi_sq(n - i, r)).collect();
    let s2: Vec<f64> = (0..m - 1).map(|i| chi_sq(m - 1 - i, r)).collect();
    let a: Vec<f64> = (0..m)
        .map(|i| c2[i] + if i + 1 < m { s2[i] } else { 0.0 })
        .collect();
    let e2: Vec<f64> = (0..m - 1).map(|i| s2[i] * c2[i + 1]).collect();
    let (lmin, lmax) = tridiagonal_extremes(&a, &e2);
    let lmin = if b < d { 0.0 } else { lmin.max(0.0) };
    (scale * lmin, scale * lmax)
}
