//! First-order behaviour of the tail-index bound in the mixing weight `delta`
//! for `W = I - delta L`, around the disconnected recursion.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::closed::{denominator_expectation, prob_min_max, sign_probabilities, MaxAbsLaw};
use super::moments::{alpha_hat_root, node_spectra, spectral_max, DrawEngine, MomentFunction};
use super::Estimate;
use crate::error::{Error, Result};
use crate::kit::ScaledChiSquare;
use crate::rng;
use crate::stats::mean_stderr;
use crate::synthdata::{sample_step, ProblemSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// Links raise the tail index (`correction < 0`).
    NetworkLightens,
    /// Links lower the tail index (`correction > 0`).
    NetworkHeaviens,
    Boundary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub alpha_dis: f64,
    /// Point at which the expansion is evaluated (`alpha_dis`).
    pub s: f64,
    /// Coefficient `c` in `alpha(delta) = alpha_dis - c delta`.
    pub correction: f64,
    pub correction_stderr: f64,
    /// Probability that the dominant extreme satisfies `1 - eta lambda > 0`.
    pub numerator_prob: f64,
    /// `1 - 2 numerator_prob` with `L`-weighting for heterogeneous nodes.
    pub sign_term: f64,
    pub sign_term_stderr: f64,
    pub denominator_expectation: f64,
    pub regime: Regime,
    /// Same coefficient with the `G^(s-1)` weight kept inside the expectation.
    pub correction_exact: Option<Estimate>,
    pub method: String,
}

impl ExpansionReport {
    pub fn alpha_of_delta(&self, delta: f64) -> f64 {
        self.alpha_dis - self.correction * delta
    }
}

const BOUNDARY_TOL: f64 = 1e-9;

fn regime(sign_term: f64, tol: f64) -> Regime {
    if sign_term.abs() <= tol {
        Regime::Boundary
    } else if sign_term > 0.0 {
        Regime::NetworkHeaviens
    } else {
        Regime::NetworkLightens
    }
}

fn check_diag(l_diag: &[f64], n: usize) -> Result<()> {
    if l_diag.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} Laplacian diagonal entries for {n} nodes",
            l_diag.len()
        )));
    }
    Ok(())
}

fn base_alpha(law: &MaxAbsLaw, alpha_dis: Option<f64>) -> Result<f64> {
    let rho = law.rho()?;
    if rho >= 0.0 {
        return Err(Error::NoRootUnstable { rho_hat: rho });
    }
    match alpha_dis {
        Some(a) => Ok(a),
        None => law.alpha(),
    }
}

/// Unit batches: `X_i = a_i^2`.
pub fn expansion_d1(
    eta: f64,
    sigma: f64,
    l_diag: &[f64],
    alpha_dis: Option<f64>,
) -> Result<ExpansionReport> {
    expansion_general_b(eta, 1, sigma, l_diag, alpha_dis)
}

/// Homogeneous batch `b`: `X_i` is a mean of `b` squared features.
pub fn expansion_general_b(
    eta: f64,
    b: usize,
    sigma: f64,
    l_diag: &[f64],
    alpha_dis: Option<f64>,
) -> Result<ExpansionReport> {
    let n = l_diag.len();
    let law = MaxAbsLaw::homogeneous(eta, n, b, sigma)?;
    let alpha = base_alpha(&law, alpha_dis)?;
    let den = denominator_expectation(&law, alpha)?;
    let p = prob_min_max(2.0 / eta, n, &ScaledChiSquare::batch_mean(b, sigma))?;
    let e = 1.0 - 2.0 * p;
    let weight = l_diag.iter().sum::<f64>() / n as f64;
    Ok(ExpansionReport {
        alpha_dis: alpha,
        s: alpha,
        correction: alpha * weight * e / den,
        correction_stderr: 0.0,
        numerator_prob: p,
        sign_term: e,
        sign_term_stderr: 0.0,
        denominator_expectation: den,
        regime: regime(e, BOUNDARY_TOL),
        correction_exact: None,
        method: "quadrature".into(),
    })
}

/// Per-node batch sizes and feature scales.
pub fn expansion_heterogeneous(
    eta: f64,
    b_list: &[usize],
    sigma_list: &[f64],
    l_diag: &[f64],
    alpha_dis: Option<f64>,
) -> Result<ExpansionReport> {
    let n = b_list.len();
    if sigma_list.len() != n {
        return Err(Error::DimensionMismatch(
            "batch and sigma lists differ in length".into(),
        ));
    }
    check_diag(l_diag, n)?;
    let kits = b_list
        .iter()
        .zip(sigma_list)
        .map(|(&b, &s)| ScaledChiSquare::batch_mean(b, s))
        .collect();
    let law = MaxAbsLaw::new(eta, kits)?;
    let alpha = base_alpha(&law, alpha_dis)?;
    let den = denominator_expectation(&law, alpha)?;
    let sp = sign_probabilities(&law)?;
    let l_sum: f64 = l_diag.iter().sum();
    let weighted: f64 = (0..n).map(|i| l_diag[i] * (sp.t2[i] - sp.t1[i])).sum();
    let sign_term = if l_sum > 0.0 {
        n as f64 * weighted / l_sum
    } else {
        (0..n).map(|i| sp.t2[i] - sp.t1[i]).sum()
    };
    Ok(ExpansionReport {
        alpha_dis: alpha,
        s: alpha,
        correction: alpha * weighted / den,
        correction_stderr: 0.0,
        numerator_prob: sp.t1.iter().sum(),
        sign_term,
        sign_term_stderr: 0.0,
        denominator_expectation: den,
        regime: regime(sign_term, BOUNDARY_TOL),
        correction_exact: None,
        method: "quadrature".into(),
    })
}

/// Monte-Carlo version for any `d`, from per-node extreme eigenvalues. Uses
/// the draws of the spectral [`MomentFunction`] with the same `seed`.
pub fn expansion_general_d_mc(
    spec: &ProblemSpec,
    l_diag: &[f64],
    alpha_dis: Option<f64>,
    n_mc: usize,
    seed: u64,
) -> Result<ExpansionReport> {
    spec.validate()?;
    check_diag(l_diag, spec.n_nodes)?;
    if !spec.is_homogeneous() {
        return Err(Error::Precondition(
            "general-d expansion needs homogeneous batches".into(),
        ));
    }
    if spec.batch_sizes[0] < spec.d {
        return Err(Error::Precondition(format!(
            "batch {} below dimension {}",
            spec.batch_sizes[0], spec.d
        )));
    }
    let eta = spec.eta;
    let draws: Vec<(f64, usize, bool, f64)> = (0..n_mc)
        .into_par_iter()
        .map(|j| {
            let sp = node_spectra(spec, rng::derive(seed, j as u64));
            let (g, i, top) = spectral_max(&sp, eta);
            let lam = if top { sp[i].1 } else { sp[i].0 };
            (g, i, top, lam)
        })
        .collect();
    let logs: Vec<f64> = draws
        .iter()
        .map(|d| d.0.max(f64::MIN_POSITIVE).ln())
        .collect();
    let mf = MomentFunction::from_log_norms(logs, DrawEngine::Spectral, String::new());
    let alpha = match alpha_dis {
        Some(a) => {
            let rho = mf.rho().value;
            if rho >= 0.0 {
                return Err(Error::NoRootUnstable { rho_hat: rho });
            }
            a
        }
        None => alpha_hat_root(&mf)?.alpha,
    };
    let den = mf.log_weighted(alpha);
    if !(den.value > 0.0) {
        return Err(Error::Degenerate(format!(
            "denominator {} is not positive",
            den.value
        )));
    }
    let sign: Vec<f64> = draws
        .iter()
        .map(|&(_, _, _, lam)| if lam < 1.0 / eta { -1.0 } else { 1.0 })
        .collect();
    let weighted: Vec<f64> = draws
        .iter()
        .zip(&sign)
        .map(|(d, s)| l_diag[d.1] * s)
        .collect();
    let exact: Vec<f64> = draws
        .iter()
        .zip(&weighted)
        .map(|(d, w)| d.0.powf(alpha - 1.0) * w)
        .collect();
    let (e, e_se) = mean_stderr(&sign);
    let (wm, w_se) = mean_stderr(&weighted);
    let (xm, x_se) = mean_stderr(&exact);
    let k = alpha / den.value;
    // Delta method over the sign average and the denominator.
    let rel_den = den.stderr / den.value;
    let spread = |m: f64, se: f64| (se * se + (m * rel_den).powi(2)).sqrt();
    let tol = 3.0 * e_se;
    Ok(ExpansionReport {
        alpha_dis: alpha,
        s: alpha,
        correction: k * wm,
        correction_stderr: k * spread(wm, w_se),
        numerator_prob: 0.5 * (1.0 - e),
        sign_term: e,
        sign_term_stderr: e_se,
        denominator_expectation: den.value,
        regime: regime(e, tol),
        correction_exact: Some(Estimate {
            value: k * xm,
            stderr: k * spread(xm, x_se),
        }),
        method: "mc".into(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationResult {
    pub deltas: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `residual / delta` per entry.
    pub ratios: Vec<f64>,
    pub base_norm: f64,
    pub sign: f64,
    pub l_star: f64,
    pub node_star: usize,
}

/// Residuals below this are at rounding level and count as decayed.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

impl PerturbationResult {
    /// Whether `residual / delta` shrinks by at least `factor` per step of
    /// the (decreasing) delta list.
    pub fn decays(&self, factor: f64) -> bool {
        self.ratios
            .windows(2)
            .zip(self.residuals.windows(2))
            .all(|(r, res)| res[1] <= RESIDUAL_FLOOR || r[0] >= factor * r[1])
    }
}

fn top_abs_eigen(m: &DMatrix<f64>) -> (f64, f64, Vec<f64>, f64) {
    let eig = m.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .abs()
            .total_cmp(&eig.eigenvalues[a].abs())
    });
    let top = eig.eigenvalues[idx[0]];
    let second = idx.get(1).map_or(0.0, |&k| eig.eigenvalues[k].abs());
    (
        top.abs(),
        top.signum(),
        eig.eigenvectors.column(idx[0]).iter().copied().collect(),
        second,
    )
}

/// Compare `|I - eta H - delta L (x) I|^s` with its first-order expansion
/// `g^s - s delta g^(s-1) sign L_{i* i*}` along `deltas`.
pub fn perturbation_check(
    eta: f64,
    h_blocks: &[DMatrix<f64>],
    laplacian: &DMatrix<f64>,
    deltas: &[f64],
    s: f64,
) -> Result<PerturbationResult> {
    let n = h_blocks.len();
    if laplacian.nrows() != n || n == 0 {
        return Err(Error::DimensionMismatch(
            "Laplacian and draw sizes differ".into(),
        ));
    }
    let d = h_blocks[0].nrows();
    let id = DMatrix::<f64>::identity(d, d);
    let mut base = DMatrix::<f64>::identity(n * d, n * d);
    for (i, h) in h_blocks.iter().enumerate() {
        let mut blk = base.view_mut((i * d, i * d), (d, d));
        blk -= h * eta;
    }
    let (g0, sign, v, second) = top_abs_eigen(&base);
    let l_norm = laplacian
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |a, x| a.max(x.abs()));
    let d_max = deltas.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if g0 - second < 4.0 * d_max * l_norm {
        return Err(Error::Degenerate(format!(
            "spectral gap {} too small",
            g0 - second
        )));
    }
    let node_star = (0..n)
        .max_by(|&a, &b| {
            let na: f64 = v[a * d..(a + 1) * d].iter().map(|x| x * x).sum();
            let nb: f64 = v[b * d..(b + 1) * d].iter().map(|x| x * x).sum();
            na.total_cmp(&nb)
        })
        .unwrap_or(0);
    let l_star = laplacian[(node_star, node_star)];
    let lifted = laplacian.kronecker(&id);
    let mut residuals = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let m = &base - &lifted * delta;
        let (g, _, _, _) = top_abs_eigen(&m);
        let approx = g0.powf(s) - s * delta * g0.powf(s - 1.0) * sign * l_star;
        residuals.push((g.powf(s) - approx).abs());
    }
    let ratios = residuals
        .iter()
        .zip(deltas)
        .map(|(r, d)| if *d == 0.0 { 0.0 } else { r / d })
        .collect();
    Ok(PerturbationResult {
        deltas: deltas.to_vec(),
        residuals,
        ratios,
        base_norm: g0,
        sign,
        l_star,
        node_star,
    })
}

/// [`perturbation_check`] on a fresh draw of `spec`, redrawing while the top
/// singular value is too close to the next one. Returns the result and the
/// number of draws used.
pub fn perturbation_trial(
    spec: &ProblemSpec,
    laplacian: &DMatrix<f64>,
    deltas: &[f64],
    s: f64,
    seed: u64,
) -> Result<(PerturbationResult, usize)> {
    const MAX_ATTEMPTS: usize = 1000;
    for attempt in 0..MAX_ATTEMPTS {
        let mut r = rng::stream(rng::derive(seed, attempt as u64));
        let draw = sample_step(spec, &mut r);
        match perturbation_check(spec.eta, &draw.h_blocks, laplacian, deltas, s) {
            Ok(res) => return Ok((res, attempt + 1)),
            Err(Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Degenerate(format!(
        "no draw with a clear spectral gap in {MAX_ATTEMPTS} attempts"
    )))
}
