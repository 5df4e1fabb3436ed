//! Quadrature for the one-dimensional disconnected recursion, where
//! `|I - eta H| = G = max_i |1 - eta X_i|` with independent scaled chi-square
//! batch means `X_i`.

use serde::{Deserialize, Serialize};

use super::{moment_root, Estimate};
use crate::error::{Error, Result};
use crate::kit::ScaledChiSquare;
use crate::quad::{integrate, integrate_pts, integrate_to_inf_pts, ABS_TOL, REL_TOL};

/// Law of `G = max_i |1 - eta X_i|`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaxAbsLaw {
    pub eta: f64,
    pub kits: Vec<ScaledChiSquare>,
}

impl MaxAbsLaw {
    pub fn new(eta: f64, kits: Vec<ScaledChiSquare>) -> Result<MaxAbsLaw> {
        if !(eta > 0.0) || kits.is_empty() {
            return Err(Error::InvalidParameter(
                "need eta > 0 and at least one node".into(),
            ));
        }
        Ok(MaxAbsLaw { eta, kits })
    }

    /// `N` identical nodes with batch `b` and feature scale `sigma`.
    pub fn homogeneous(eta: f64, n: usize, b: usize, sigma: f64) -> Result<MaxAbsLaw> {
        Self::new(eta, vec![ScaledChiSquare::batch_mean(b, sigma); n])
    }

    pub fn n_nodes(&self) -> usize {
        self.kits.len()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let hi = (1.0 + x) / self.eta;
        let lo = ((1.0 - x) / self.eta).max(0.0);
        self.kits
            .iter()
            .map(|k| (k.cdf(hi) - k.cdf(lo)).max(0.0))
            .product()
    }

    /// `P(G > x)`, computed from per-node survival terms above `x = 1`.
    pub fn sf(&self, x: f64) -> f64 {
        if x < 1.0 {
            return 1.0 - self.cdf(x);
        }
        let hi = (1.0 + x) / self.eta;
        let log_cdf: f64 = self.kits.iter().map(|k| (-k.sf(hi)).ln_1p()).sum();
        -log_cdf.exp_m1()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let e = self.eta;
        let hi = (1.0 + x) / e;
        let lo = (1.0 - x) / e;
        let n = self.kits.len();
        (0..n)
            .map(|i| {
                let ki = &self.kits[i];
                let (dens, others): (f64, f64) = if x < 1.0 {
                    (
                        (ki.pdf(hi) + ki.pdf(lo)) / e,
                        (0..n)
                            .filter(|&k| k != i)
                            .map(|k| self.kits[k].cdf(hi) - self.kits[k].cdf(lo))
                            .product(),
                    )
                } else {
                    (
                        ki.pdf(hi) / e,
                        (0..n)
                            .filter(|&k| k != i)
                            .map(|k| self.kits[k].cdf(hi))
                            .product(),
                    )
                };
                dens * others
            })
            .sum()
    }

    /// `E phi(G)` given `phi(1)` and the derivative `dphi`, by integrating
    /// `dphi` against the distribution (below 1) and survival (above 1) functions.
    pub fn expect<D: Fn(f64) -> f64>(&self, phi_one: f64, dphi: D) -> Result<f64> {
        let below = integrate(|x| dphi(x) * self.cdf(x), 0.0, 1.0, ABS_TOL, REL_TOL)?;
        let knee: Vec<f64> = self
            .kits
            .iter()
            .map(|k| self.eta * k.mean() - 1.0)
            .filter(|&x| x > 1.0)
            .collect();
        let above = integrate_to_inf_pts(|x| dphi(x) * self.sf(x), 1.0, &knee, ABS_TOL, REL_TOL)?;
        Ok(phi_one - below.value + above.value)
    }

    /// `h_dis(s) = E G^s`.
    pub fn h(&self, s: f64) -> Result<f64> {
        if s == 0.0 {
            return Ok(1.0);
        }
        self.expect(1.0, |x| s * x.powf(s - 1.0))
    }

    /// `rho_dis = E log G`.
    pub fn rho(&self) -> Result<f64> {
        self.expect(0.0, |x| 1.0 / x)
    }

    /// `E[log G * G^s]`.
    pub fn log_weighted(&self, s: f64) -> Result<f64> {
        self.expect(0.0, |x| x.powf(s - 1.0) * (s * x.ln() + 1.0))
    }

    /// Root of `E G^s = 1`.
    pub fn alpha(&self) -> Result<f64> {
        let rho = self.rho()?;
        if rho >= 0.0 {
            return Err(Error::NoRootUnstable { rho_hat: rho });
        }
        let mut failure = None;
        let root = moment_root(
            |s| match self.h(s) {
                Ok(v) => v,
                Err(e) => {
                    failure = Some(e);
                    f64::INFINITY
                }
            },
            super::moments::ROOT_TOL,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        root.ok_or(Error::NoRootLight {
            s_max: super::S_MAX,
        })
    }
}

/// `P(min_i X_i + max_i X_i < c)` for `N` i.i.d. copies of `kit`.
pub fn prob_min_max(c: f64, n: usize, kit: &ScaledChiSquare) -> Result<f64> {
    if c <= 0.0 {
        return Ok(0.0);
    }
    if n == 1 {
        return Ok(kit.cdf(0.5 * c));
    }
    let head = kit.cdf(c).powi(n as i32);
    let nf = n as f64;
    let tail = integrate(
        |y| nf * (kit.cdf(y) - kit.cdf(c - y)).max(0.0).powi(n as i32 - 1) * kit.pdf(y),
        0.5 * c,
        c,
        ABS_TOL * 1e-2,
        REL_TOL,
    )?;
    Ok((head - tail.value).clamp(0.0, 1.0))
}

/// The sign term `e = 1 - 2 P(min + max < 2/eta)` for batch-mean laws `kit`.
pub fn e_term(eta: f64, n: usize, kit: &ScaledChiSquare) -> Result<f64> {
    if !(eta > 0.0) || n == 0 {
        return Err(Error::InvalidParameter("need eta > 0 and N >= 1".into()));
    }
    Ok(1.0 - 2.0 * prob_min_max(2.0 / eta, n, kit)?)
}

/// `E[log G * G^s]`; must be positive at `s = alpha_dis`.
pub fn denominator_expectation(law: &MaxAbsLaw, alpha_dis: f64) -> Result<f64> {
    let v = law.log_weighted(alpha_dis)?;
    if !(v > 0.0) {
        return Err(Error::Degenerate(format!(
            "denominator {v} is not positive; alpha_dis inconsistent"
        )));
    }
    Ok(v)
}

/// Per-node probabilities that node `i` attains `G` with `1 - eta X_i > 0`
/// (`t1`) or `< 0` (`t2`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SignProbabilities {
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
}

pub fn sign_probabilities(law: &MaxAbsLaw) -> Result<SignProbabilities> {
    let n = law.n_nodes();
    let e = law.eta;
    let c = 2.0 / e;
    let mut t1 = Vec::with_capacity(n);
    let mut t2 = Vec::with_capacity(n);
    for i in 0..n {
        let ki = &law.kits[i];
        let others = |lo: f64, hi: f64| -> f64 {
            (0..n)
                .filter(|&k| k != i)
                .map(|k| (law.kits[k].cdf(hi) - law.kits[k].cdf(lo)).max(0.0))
                .product()
        };
        let a = integrate(
            |z| ki.pdf(z) * others(z, c - z),
            0.0,
            1.0 / e,
            ABS_TOL * 1e-2,
            REL_TOL,
        )?;
        let b = integrate_to_inf_pts(
            |z| ki.pdf(z) * others((c - z).max(0.0), z),
            1.0 / e,
            &[c],
            ABS_TOL * 1e-2,
            REL_TOL,
        )?;
        t1.push(a.value.clamp(0.0, 1.0));
        t2.push(b.value.clamp(0.0, 1.0));
    }
    Ok(SignProbabilities { t1, t2 })
}

/// `E log|1 - eta a^2|` for a single Gaussian feature: an independent
/// one-variable check of [`MaxAbsLaw::rho`] with `N = b = 1`.
pub fn scalar_log_moment(eta: f64, sigma: f64) -> Result<Estimate> {
    let kit = ScaledChiSquare::squared_feature(sigma);
    let f = |x: f64| (1.0 - eta * x).abs().ln() * kit.pdf(x);
    let pole = 1.0 / eta;
    let a = integrate_pts(f, 0.0, 2.0 * pole, &[pole], ABS_TOL, REL_TOL)?;
    let b = integrate_to_inf_pts(f, 2.0 * pole, &[], ABS_TOL, REL_TOL)?;
    Ok(Estimate {
        value: a.value + b.value,
        stderr: 0.0,
    })
}
