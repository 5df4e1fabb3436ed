//! Monte-Carlo moment functions `h(s) = E |W - eta H|^s`, their roots, and the
//! finite-product and Lyapunov counterparts.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::spectral::covariance_extremes;
use super::{moment_root, Estimate};
use crate::error::{Error, Result};
use crate::recursion::lyapunov_chain;
use crate::rng;
use crate::stats::mean_stderr;
use crate::synthdata::{normal, operator_norm, ProblemSpec, Sampler};
use crate::topology::MixingMatrix;

/// Largest `N d` for which the dense eigen-solver engine is used.
pub const THEORY_DENSE_CAP: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DrawEngine {
    /// Per-node extreme eigenvalues; valid when `W = I`.
    Spectral,
    /// Dense `W (x) I - eta blkdiag(H)` and a symmetric eigen-solve.
    Dense,
    /// `|(I - eta H) u|` for a fixed unit `u`: the exact per-node growth law
    /// under rotation invariance.
    Isotropic,
}

/// Batch means `X_i = (sigma^2/b_i) sum_j z_j^2` of a one-dimensional problem.
fn node_means<R: Rng + ?Sized>(spec: &ProblemSpec, r: &mut R) -> Vec<f64> {
    spec.batch_sizes
        .iter()
        .map(|&b| {
            spec.sigma * spec.sigma / b as f64 * (0..b).map(|_| normal(r).powi(2)).sum::<f64>()
        })
        .collect()
}

fn node_covariance<R: Rng + ?Sized>(d: usize, b: usize, sigma: f64, r: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, b, |_, _| sigma * normal(r));
    (&a * a.transpose()) / b as f64
}

/// Dense draw of `M = W (x) I_d - eta blkdiag(H_i)` keyed by `seed`.
pub fn draw_dense_m(spec: &ProblemSpec, mixing: &MixingMatrix, seed: u64) -> DMatrix<f64> {
    let mut r = rng::stream(seed);
    let d = spec.d;
    if d == 1 {
        let x = node_means(spec, &mut r);
        let mut m = mixing.matrix().clone();
        for (i, xi) in x.iter().enumerate() {
            m[(i, i)] -= spec.eta * xi;
        }
        return m;
    }
    let mut m = mixing.matrix().kronecker(&DMatrix::<f64>::identity(d, d));
    for (i, &b) in spec.batch_sizes.iter().enumerate() {
        let h = node_covariance(d, b, spec.sigma, &mut r);
        let mut blk = m.view_mut((i * d, i * d), (d, d));
        blk -= h * spec.eta;
    }
    m
}

/// Per-node `(lambda_min, lambda_max)` of `H_i`, keyed by `seed`. For `d = 1`
/// both entries are the batch mean `X_i`.
pub fn node_spectra(spec: &ProblemSpec, seed: u64) -> Vec<(f64, f64)> {
    let mut r = rng::stream(seed);
    if spec.d == 1 {
        node_means(spec, &mut r)
            .into_iter()
            .map(|x| (x, x))
            .collect()
    } else {
        spec.batch_sizes
            .iter()
            .map(|&b| covariance_extremes(spec.d, b, spec.sigma, &mut r))
            .collect()
    }
}

/// `max_i max(|1 - eta lambda_min|, |1 - eta lambda_max|)`, with the
/// maximizing node and extreme (`true` for `lambda_max`). Ties go to the
/// lowest index.
pub fn spectral_max(spectra: &[(f64, f64)], eta: f64) -> (f64, usize, bool) {
    let mut best = (-1.0, 0, false);
    for (i, &(lo, hi)) in spectra.iter().enumerate() {
        let a = (1.0 - eta * lo).abs();
        let b = (1.0 - eta * hi).abs();
        let (g, top) = if b > a { (b, true) } else { (a, false) };
        if g > best.0 {
            best = (g, i, top);
        }
    }
    best
}

fn draw_spectral_log_norm(spec: &ProblemSpec, seed: u64) -> f64 {
    let (g, _, _) = spectral_max(&node_spectra(spec, seed), spec.eta);
    g.max(f64::MIN_POSITIVE).ln()
}

/// `log |(I - eta H) u|` for one node with batch `b`.
fn draw_isotropic_log_norm(d: usize, b: usize, eta: f64, sigma: f64, seed: u64) -> f64 {
    let mut r = rng::stream(seed);
    let s: f64 = (0..b).map(|_| normal(&mut r).powi(2)).sum();
    let t: f64 = (0..d - 1).map(|_| normal(&mut r).powi(2)).sum();
    let c = eta * sigma * sigma / b as f64;
    let r2 = (1.0 - c * s).powi(2) + c * c * s * t;
    0.5 * r2.max(f64::MIN_POSITIVE).ln()
}

/// Cached draws of `log |W - eta H|` shared by every evaluation of `h(s)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentFunction {
    log_norms: Vec<f64>,
    pub engine: DrawEngine,
    pub digest: String,
}

fn digest_of(
    spec: &ProblemSpec,
    mixing: Option<&MixingMatrix>,
    engine: DrawEngine,
    n_mc: usize,
    seed: u64,
) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(spec).expect("serializable"));
    if let Some(w) = mixing {
        for v in w.matrix().iter() {
            h.update(v.to_le_bytes());
        }
    }
    h.update(format!("{engine:?}").as_bytes());
    h.update((n_mc as u64).to_le_bytes());
    h.update(seed.to_le_bytes());
    h.finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl MomentFunction {
    /// Picks the spectral engine for `W = I` and the dense engine otherwise.
    pub fn new(
        spec: &ProblemSpec,
        mixing: &MixingMatrix,
        n_mc: usize,
        seed: u64,
    ) -> Result<MomentFunction> {
        let engine = if mixing.is_identity() {
            DrawEngine::Spectral
        } else {
            DrawEngine::Dense
        };
        Self::with_engine(spec, mixing, engine, n_mc, seed)
    }

    pub fn with_engine(
        spec: &ProblemSpec,
        mixing: &MixingMatrix,
        engine: DrawEngine,
        n_mc: usize,
        seed: u64,
    ) -> Result<MomentFunction> {
        spec.validate()?;
        if mixing.n_nodes() != spec.n_nodes {
            return Err(Error::DimensionMismatch(
                "mixing and spec node counts differ".into(),
            ));
        }
        if n_mc < 2 {
            return Err(Error::InvalidParameter("n_mc must be at least 2".into()));
        }
        let log_norms: Vec<f64> = match engine {
            // |W| = 1 for every admissible mixing matrix.
            _ if spec.eta == 0.0 => vec![0.0; n_mc],
            DrawEngine::Spectral => {
                if !mixing.is_identity() {
                    return Err(Error::Precondition("spectral engine needs W = I".into()));
                }
                (0..n_mc)
                    .into_par_iter()
                    .map(|j| draw_spectral_log_norm(spec, rng::derive(seed, j as u64)))
                    .collect()
            }
            DrawEngine::Dense => {
                if spec.dim() > THEORY_DENSE_CAP {
                    return Err(Error::TooLarge(format!(
                        "N d = {} exceeds {}",
                        spec.dim(),
                        THEORY_DENSE_CAP
                    )));
                }
                (0..n_mc)
                    .into_par_iter()
                    .map(|j| {
                        operator_norm(&draw_dense_m(spec, mixing, rng::derive(seed, j as u64)))
                            .max(f64::MIN_POSITIVE)
                            .ln()
                    })
                    .collect()
            }
            DrawEngine::Isotropic => {
                if spec.n_nodes != 1 {
                    return Err(Error::Precondition(
                        "isotropic engine describes a single node".into(),
                    ));
                }
                let b = spec.batch_sizes[0];
                (0..n_mc)
                    .into_par_iter()
                    .map(|j| {
                        draw_isotropic_log_norm(
                            spec.d,
                            b,
                            spec.eta,
                            spec.sigma,
                            rng::derive(seed, j as u64),
                        )
                    })
                    .collect()
            }
        };
        Ok(MomentFunction {
            log_norms,
            engine,
            digest: digest_of(spec, Some(mixing), engine, n_mc, seed),
        })
    }

    /// Exact per-node law of `|(I - eta H) u|` (see [`DrawEngine::Isotropic`]).
    pub fn isotropic_node(
        d: usize,
        b: usize,
        eta: f64,
        sigma: f64,
        n_mc: usize,
        seed: u64,
    ) -> Result<MomentFunction> {
        let spec = ProblemSpec::homogeneous(d, 1, b, eta, sigma, 1.0);
        Self::with_engine(
            &spec,
            &MixingMatrix::identity(1),
            DrawEngine::Isotropic,
            n_mc,
            seed,
        )
    }

    pub fn from_log_norms(
        log_norms: Vec<f64>,
        engine: DrawEngine,
        digest: String,
    ) -> MomentFunction {
        MomentFunction {
            log_norms,
            engine,
            digest,
        }
    }

    pub fn n_mc(&self) -> usize {
        self.log_norms.len()
    }

    pub fn log_norms(&self) -> &[f64] {
        &self.log_norms
    }

    /// `h(s) = E g^s`.
    pub fn h(&self, s: f64) -> Estimate {
        if s == 0.0 {
            return Estimate::exact(1.0);
        }
        let v: Vec<f64> = self.log_norms.iter().map(|l| (s * l).exp()).collect();
        let (value, stderr) = mean_stderr(&v);
        Estimate { value, stderr }
    }

    /// `rho = E log g`.
    pub fn rho(&self) -> Estimate {
        let (value, stderr) = mean_stderr(&self.log_norms);
        Estimate { value, stderr }
    }

    /// `E[log g * g^s]`, the derivative of `h` at `s`.
    pub fn log_weighted(&self, s: f64) -> Estimate {
        let v: Vec<f64> = self.log_norms.iter().map(|l| l * (s * l).exp()).collect();
        let (value, stderr) = mean_stderr(&v);
        Estimate { value, stderr }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaRoot {
    pub alpha: f64,
    /// Roots of `h +- stderr = 1`; `alpha_hi` may be `+inf`.
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub rho_hat: Estimate,
}

impl AlphaRoot {
    /// Half-width of the stderr-induced interval.
    pub fn uncertainty(&self) -> f64 {
        0.5 * (self.alpha_hi - self.alpha_lo)
    }
}

pub const ROOT_TOL: f64 = 1e-4;

pub fn alpha_hat_root(mf: &MomentFunction) -> Result<AlphaRoot> {
    alpha_hat_root_tol(mf, ROOT_TOL)
}

/// [`alpha_hat_root`] with a caller-chosen bracket width.
pub fn alpha_hat_root_tol(mf: &MomentFunction, tol: f64) -> Result<AlphaRoot> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let rho_hat = mf.rho();
    if rho_hat.value >= 0.0 {
        return Err(Error::NoRootUnstable {
            rho_hat: rho_hat.value,
        });
    }
    let alpha = moment_root(|s| mf.h(s).value, tol).ok_or(Error::NoRootLight {
        s_max: super::S_MAX,
    })?;
    let alpha_lo = moment_root(
        |s| {
            let e = mf.h(s);
            e.value + e.stderr
        },
        tol,
    )
    .unwrap_or(alpha);
    let alpha_hi = moment_root(
        |s| {
            let e = mf.h(s);
            e.value - e.stderr
        },
        tol,
    )
    .unwrap_or(f64::INFINITY);
    Ok(AlphaRoot {
        alpha,
        alpha_lo: alpha_lo.min(alpha),
        alpha_hi: alpha_hi.max(alpha),
        rho_hat,
    })
}

pub fn rho_hat_mc(
    spec: &ProblemSpec,
    mixing: &MixingMatrix,
    n_mc: usize,
    seed: u64,
) -> Result<Estimate> {
    Ok(MomentFunction::new(spec, mixing, n_mc, seed)?.rho())
}

pub fn h_hat_mc(
    spec: &ProblemSpec,
    mixing: &MixingMatrix,
    s: f64,
    n_mc: usize,
    seed: u64,
) -> Result<Estimate> {
    if s < 0.0 {
        return Err(Error::InvalidParameter("s must be nonnegative".into()));
    }
    Ok(MomentFunction::new(spec, mixing, n_mc, seed)?.h(s))
}

/// `(E |M_k ... M_1|^s)^(1/k)` over `n_mc` independent products. Chain `j`
/// step `t` uses the draw keyed `derive(seed, j k + t)`, so `k = 1`
/// reproduces the dense-engine draws of [`MomentFunction`].
pub fn h_finite_k_mc(
    spec: &ProblemSpec,
    mixing: &MixingMatrix,
    s: f64,
    k: usize,
    n_mc: usize,
    seed: u64,
) -> Result<Estimate> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if spec.dim() > THEORY_DENSE_CAP {
        return Err(Error::TooLarge(format!("N d = {}", spec.dim())));
    }
    let logs: Vec<f64> = (0..n_mc)
        .into_par_iter()
        .map(|j| {
            let mut p = draw_dense_m(spec, mixing, rng::derive(seed, (j * k) as u64));
            let mut log_scale = 0.0;
            for t in 1..k {
                let m = draw_dense_m(spec, mixing, rng::derive(seed, (j * k + t) as u64));
                p = m * p;
                let f = p.norm();
                if f > 0.0 {
                    log_scale += f.ln();
                    p /= f;
                }
            }
            largest_singular(&p).max(f64::MIN_POSITIVE).ln() + log_scale
        })
        .collect();
    // Mean of exp(s L) computed relative to the largest term.
    let top = logs.iter().fold(f64::NEG_INFINITY, |a, &l| a.max(s * l));
    let scaled: Vec<f64> = logs.iter().map(|l| (s * l - top).exp()).collect();
    let (m, se) = mean_stderr(&scaled);
    let log_mean = m.ln() + top;
    let value = (log_mean / k as f64).exp();
    let stderr = value / k as f64 * se / m;
    Ok(Estimate { value, stderr })
}

fn largest_singular(p: &DMatrix<f64>) -> f64 {
    if p.nrows() == 1 {
        return p[(0, 0)].abs();
    }
    // Products of symmetric matrices are not symmetric.
    let g = p.transpose() * p;
    g.symmetric_eigenvalues().max().max(0.0).sqrt()
}

/// Top Lyapunov exponent by normalized vector iteration over `k` steps,
/// averaged over `n_mc` chains.
pub fn lyapunov_mc(
    spec: &ProblemSpec,
    mixing: &MixingMatrix,
    k: usize,
    n_mc: usize,
    seed: u64,
) -> Result<Estimate> {
    spec.validate()?;
    if k == 0 || n_mc < 2 {
        return Err(Error::InvalidParameter("need k >= 1 and n_mc >= 2".into()));
    }
    let v: Vec<f64> = (0..n_mc)
        .into_par_iter()
        .map(|j| lyapunov_chain(spec, mixing, Sampler::Auto, rng::derive(seed, j as u64), k))
        .collect();
    let (value, stderr) = mean_stderr(&v);
    Ok(Estimate { value, stderr })
}
