//! Stepsize thresholds (sign flip, infinite-variance onset, stability) and
//! the `(eta, N)` contour fields.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bisect;
use super::closed::{prob_min_max, MaxAbsLaw};
use super::moments::{node_spectra, spectral_max};
use crate::error::{Error, Result};
use crate::kit::{sigma2_threshold, ScaledChiSquare};
use crate::rng;
use crate::stats::quantile;
use crate::synthdata::{normal, ProblemSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    /// `tau < eta_crit < eta_max`
    I,
    /// `eta_crit < tau < eta_max`
    II,
    /// `eta_crit < eta_max < tau`
    III,
    Unclassified,
}

impl Case {
    pub fn classify(tau: f64, eta_crit: Option<f64>, eta_max: Option<f64>) -> Case {
        match (eta_crit, eta_max) {
            (Some(c), Some(m)) if c < m => {
                if tau < c {
                    Case::I
                } else if tau < m {
                    Case::II
                } else {
                    Case::III
                }
            }
            _ => Case::Unclassified,
        }
    }
}

/// Thresholds for a homogeneous template. Fields without a suffix follow the
/// single-draw bound `|I - eta H|` of the disconnected recursion; the `_node`
/// fields use the exact per-node law, which is what the simulated iterates
/// follow.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub n_nodes: usize,
    pub d: usize,
    pub b: usize,
    pub sigma: f64,
    /// `2 / F_a^-1(2^(-1/N))` with `a^2 ~ sigma^2 chi2(1)`.
    pub tau: f64,
    /// `2 / Q(2^(-1/N))` for the law of `lambda_max(H_i)`.
    pub tau_general: f64,
    /// Root of the sign term.
    pub tau_sign: Option<f64>,
    pub eta_max: Option<f64>,
    pub eta_crit: Option<f64>,
    pub eta_max_node: Option<f64>,
    pub eta_crit_node: f64,
    /// Ordering of `tau` against the per-node thresholds.
    pub case: Case,
    /// Ordering of `tau` against the bound thresholds.
    pub case_bound: Case,
    pub eta: f64,
    pub sigma2_threshold: f64,
    pub method: String,
    pub notes: Vec<String>,
}

/// Draws shared across every `eta` so that threshold curves are smooth.
struct Pool {
    /// Per-draw node spectra at the template's `sigma`.
    spectra: Vec<Vec<(f64, f64)>>,
    /// Per-draw `(S, T)` with `S ~ chi2(b)`, `T ~ chi2(d-1)`.
    iso: Vec<(f64, f64)>,
}

impl Pool {
    fn new(spec: &ProblemSpec, n_mc: usize, seed: u64, need_spectra: bool) -> Pool {
        let b = spec.batch_sizes[0];
        let d = spec.d;
        let spectra = if need_spectra {
            (0..n_mc)
                .into_par_iter()
                .map(|j| node_spectra(spec, rng::derive(seed, j as u64)))
                .collect()
        } else {
            Vec::new()
        };
        let iso_seed = rng::derive(seed, rng::TAG_INIT);
        let iso = (0..n_mc)
            .into_par_iter()
            .map(|j| {
                let mut r = rng::stream(rng::derive(iso_seed, j as u64));
                let s: f64 = (0..b).map(|_| normal(&mut r).powi(2)).sum();
                let t: f64 = (0..d - 1).map(|_| normal(&mut r).powi(2)).sum();
                (s, t)
            })
            .collect();
        Pool { spectra, iso }
    }

    fn rho(&self, eta: f64) -> f64 {
        self.spectra
            .iter()
            .map(|sp| spectral_max(sp, eta).0.max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / self.spectra.len() as f64
    }

    fn h2(&self, eta: f64) -> f64 {
        self.spectra
            .iter()
            .map(|sp| spectral_max(sp, eta).0.powi(2))
            .sum::<f64>()
            / self.spectra.len() as f64
    }

    fn sign(&self, eta: f64) -> f64 {
        self.spectra
            .iter()
            .map(|sp| {
                let (_, i, top) = spectral_max(sp, eta);
                let lam = if top { sp[i].1 } else { sp[i].0 };
                if lam < 1.0 / eta {
                    -1.0
                } else {
                    1.0
                }
            })
            .sum::<f64>()
            / self.spectra.len() as f64
    }

    fn node_rho(&self, eta: f64, b: usize, sigma: f64) -> f64 {
        let c = eta * sigma * sigma / b as f64;
        self.iso
            .iter()
            .map(|&(s, t)| {
                0.5 * ((1.0 - c * s).powi(2) + c * c * s * t)
                    .max(f64::MIN_POSITIVE)
                    .ln()
            })
            .sum::<f64>()
            / self.iso.len() as f64
    }
}

const SCAN_POINTS: usize = 96;
const ETA_TOL: f64 = 1e-6;

/// First upward zero crossing of `f` on a log grid over `range`, refined by
/// bisection.
fn first_crossing<F: Fn(f64) -> f64>(f: F, range: (f64, f64)) -> Option<f64> {
    let (lo, hi) = range;
    let step = (hi / lo).ln() / (SCAN_POINTS - 1) as f64;
    if f(lo) > 0.0 {
        return None;
    }
    let mut prev = lo;
    for k in 1..SCAN_POINTS {
        let x = lo * (step * k as f64).exp();
        if f(x) > 0.0 {
            return Some(bisect(&f, prev, x, ETA_TOL * x));
        }
        prev = x;
    }
    None
}

/// Per-node second-moment threshold `2 / (sigma^2 (1 + (d+1)/b))`.
pub fn eta_crit_node(d: usize, b: usize, sigma: f64) -> f64 {
    2.0 / (sigma * sigma * (1.0 + (d as f64 + 1.0) / b as f64))
}

pub fn thresholds(
    spec: &ProblemSpec,
    eta_range: (f64, f64),
    n_mc: usize,
    seed: u64,
) -> Result<ThresholdReport> {
    spec.validate()?;
    if !spec.is_homogeneous() {
        return Err(Error::Precondition(
            "thresholds need a homogeneous template".into(),
        ));
    }
    if !(eta_range.0 > 0.0 && eta_range.1 > eta_range.0) {
        return Err(Error::InvalidParameter(
            "eta range must satisfy 0 < lo < hi".into(),
        ));
    }
    let (n, d, b, sigma) = (spec.n_nodes, spec.d, spec.batch_sizes[0], spec.sigma);
    let level = 2f64.powf(-1.0 / n as f64);
    let tau = 2.0 / ScaledChiSquare::squared_feature(sigma).quantile(level);
    let mut notes = Vec::new();
    let pool = Pool::new(spec, n_mc.max(2), seed, d > 1);
    let (tau_general, mut tau_sign, mut eta_max, mut eta_crit, method) = if d == 1 {
        let kit = ScaledChiSquare::batch_mean(b, sigma);
        let rho = |eta: f64| {
            MaxAbsLaw::homogeneous(eta, n, b, sigma)
                .and_then(|l| l.rho())
                .unwrap_or(f64::NAN)
        };
        let h2 = |eta: f64| {
            MaxAbsLaw::homogeneous(eta, n, b, sigma)
                .and_then(|l| l.h(2.0))
                .unwrap_or(f64::NAN)
                - 1.0
        };
        let e = |eta: f64| 1.0 - 2.0 * prob_min_max(2.0 / eta, n, &kit).unwrap_or(f64::NAN);
        (
            2.0 / kit.quantile(level),
            first_crossing(e, eta_range),
            first_crossing(rho, eta_range),
            first_crossing(h2, eta_range),
            "quadrature",
        )
    } else {
        let tops: Vec<f64> = pool
            .spectra
            .iter()
            .flat_map(|sp| sp.iter().map(|p| p.1))
            .collect();
        (
            2.0 / quantile(&tops, level),
            first_crossing(|e| pool.sign(e), eta_range),
            first_crossing(|e| pool.rho(e), eta_range),
            first_crossing(|e| pool.h2(e) - 1.0, eta_range),
            "mc",
        )
    };
    if b < d {
        notes.push(
            "batch below dimension: |I - eta H| >= 1 for every draw, bound thresholds are vacuous"
                .into(),
        );
        (tau_sign, eta_max, eta_crit) = (None, None, None);
    } else if eta_max.is_none() {
        notes.push(if pool_rho_at(spec, &pool, eta_range.0) >= 0.0 {
            "eta_max: bound is unstable over the whole range".to_string()
        } else {
            "eta_max: no crossing in range".to_string()
        });
    }
    if b >= d && eta_crit.is_none() {
        notes.push("eta_crit: no crossing in range".into());
    }
    if b >= d && tau_sign.is_none() {
        notes.push("tau_sign: no crossing in range".into());
    }
    let eta_max_node = first_crossing(|e| pool.node_rho(e, b, sigma), eta_range);
    let crit_node = eta_crit_node(d, b, sigma);
    Ok(ThresholdReport {
        n_nodes: n,
        d,
        b,
        sigma,
        tau,
        tau_general,
        tau_sign,
        eta_max,
        eta_crit,
        eta_max_node,
        eta_crit_node: crit_node,
        case: Case::classify(tau, Some(crit_node), eta_max_node),
        case_bound: Case::classify(tau, eta_crit, eta_max),
        eta: spec.eta,
        sigma2_threshold: sigma2_threshold(spec.eta, n),
        method: method.into(),
        notes,
    })
}

fn pool_rho_at(spec: &ProblemSpec, pool: &Pool, eta: f64) -> f64 {
    if spec.d == 1 {
        MaxAbsLaw::homogeneous(eta, spec.n_nodes, spec.batch_sizes[0], spec.sigma)
            .and_then(|l| l.rho())
            .unwrap_or(f64::NAN)
    } else {
        pool.rho(eta)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum ContourEngine {
    /// Quadrature of the sign term for `d = 1`.
    OneDim { b: usize, sigma: f64 },
    /// Monte-Carlo sign and stability fields from per-node spectra.
    GeneralD {
        d: usize,
        b: usize,
        sigma: f64,
        n_mc: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContourGrid {
    pub etas: Vec<f64>,
    pub ns: Vec<usize>,
    /// `values[row][col]` for `N = ns[row]`, `eta = etas[col]`.
    pub values: Vec<Vec<f64>>,
    /// `rho_dis` on the same grid (general `d` only).
    pub instability: Option<Vec<Vec<f64>>>,
    /// `(eta, N)` points where `values` crosses zero.
    pub zero_curve: Vec<(f64, f64)>,
    /// `(eta, N)` points where `instability` crosses zero.
    pub instability_curve: Vec<(f64, f64)>,
}

/// First sign change along each row, by linear interpolation in `eta`.
pub fn zero_level(etas: &[f64], ns: &[usize], field: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (row, &n) in field.iter().zip(ns) {
        for c in 1..etas.len() {
            let (a, b) = (row[c - 1], row[c]);
            if (a <= 0.0 && b > 0.0) || (a > 0.0 && b <= 0.0) {
                let t = if b == a { 0.0 } else { a / (a - b) };
                out.push((etas[c - 1] + t * (etas[c] - etas[c - 1]), n as f64));
                break;
            }
        }
    }
    out
}

pub fn contour_grid(etas: &[f64], ns: &[usize], engine: &ContourEngine) -> Result<ContourGrid> {
    if etas.is_empty() || ns.is_empty() {
        return Err(Error::InvalidParameter(
            "contour grids must be nonempty".into(),
        ));
    }
    if etas.iter().any(|e| !(*e > 0.0)) || ns.contains(&0) {
        return Err(Error::InvalidParameter(
            "grid values must be positive".into(),
        ));
    }
    let (values, instability) = match *engine {
        ContourEngine::OneDim { b, sigma } => {
            let kit = ScaledChiSquare::batch_mean(b, sigma);
            let values: Result<Vec<Vec<f64>>> = ns
                .par_iter()
                .map(|&n| {
                    etas.iter()
                        .map(|&eta| prob_min_max(2.0 / eta, n, &kit).map(|p| 1.0 - 2.0 * p))
                        .collect()
                })
                .collect();
            (values?, None)
        }
        ContourEngine::GeneralD {
            d,
            b,
            sigma,
            n_mc,
            seed,
        } => {
            let n_max = *ns.iter().max().expect("nonempty");
            let spec = ProblemSpec::homogeneous(d, n_max, b, 1.0, sigma, 1.0);
            spec.validate()?;
            let spectra: Vec<Vec<(f64, f64)>> = (0..n_mc.max(2))
                .into_par_iter()
                .map(|j| node_spectra(&spec, rng::derive(seed, j as u64)))
                .collect();
            let cells: Vec<(Vec<f64>, Vec<f64>)> = ns
                .par_iter()
                .map(|&n| {
                    let pool = Pool {
                        spectra: spectra.iter().map(|sp| sp[..n].to_vec()).collect(),
                        iso: Vec::new(),
                    };
                    etas.iter()
                        .map(|&eta| (pool.sign(eta), pool.rho(eta)))
                        .unzip()
                })
                .collect();
            let (v, r): (Vec<_>, Vec<_>) = cells.into_iter().unzip();
            (v, Some(r))
        }
    };
    let zero_curve = zero_level(etas, ns, &values);
    let instability_curve = instability
        .as_ref()
        .map(|r| zero_level(etas, ns, r))
        .unwrap_or_default();
    Ok(ContourGrid {
        etas: etas.to_vec(),
        ns: ns.to_vec(),
        values,
        instability,
        zero_curve,
        instability_curve,
    })
}
