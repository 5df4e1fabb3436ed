//! Synthetic Gaussian least squares and the random objects `H_i`, `q_i`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::topology::{lift_to_blocks, BlockOperator, MixingMatrix, DENSE_CAP};

/// Data law `a ~ N(0, sigma^2 I_d)`, `y = x_true . a + N(0, sigma_y^2)` with
/// per-node batch sizes and a common stepsize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub d: usize,
    pub n_nodes: usize,
    pub batch_sizes: Vec<usize>,
    pub eta: f64,
    pub sigma: f64,
    pub sigma_y: f64,
    pub x_true: Vec<f64>,
}

impl ProblemSpec {
    pub fn homogeneous(
        d: usize,
        n_nodes: usize,
        b: usize,
        eta: f64,
        sigma: f64,
        sigma_y: f64,
    ) -> ProblemSpec {
        ProblemSpec {
            d,
            n_nodes,
            batch_sizes: vec![b; n_nodes],
            eta,
            sigma,
            sigma_y,
            x_true: vec![0.0; d],
        }
    }

    pub fn with_x_true(mut self, x_true: Vec<f64>) -> ProblemSpec {
        self.x_true = x_true;
        self
    }

    pub fn with_eta(&self, eta: f64) -> ProblemSpec {
        ProblemSpec {
            eta,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_nodes == 0 {
            return Err(Error::InvalidParameter("d and N must be positive".into()));
        }
        if self.batch_sizes.len() != self.n_nodes {
            return Err(Error::DimensionMismatch(format!(
                "{} batch sizes for {} nodes",
                self.batch_sizes.len(),
                self.n_nodes
            )));
        }
        if self.batch_sizes.iter().any(|&b| b == 0) {
            return Err(Error::InvalidParameter("batch sizes must be >= 1".into()));
        }
        // eta = 0 is kept as the deterministic consensus limit.
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "eta must be nonnegative, got {}",
                self.eta
            )));
        }
        if !(self.sigma > 0.0) || !(self.sigma_y > 0.0) {
            return Err(Error::InvalidParameter(
                "sigma and sigma_y must be positive".into(),
            ));
        }
        if self.x_true.len() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "x_true has length {}, d = {}",
                self.x_true.len(),
                self.d
            )));
        }
        Ok(())
    }

    pub fn is_homogeneous(&self) -> bool {
        self.batch_sizes.windows(2).all(|w| w[0] == w[1])
    }

    pub fn dim(&self) -> usize {
        self.n_nodes * self.d
    }

    pub fn total_batch(&self) -> usize {
        self.batch_sizes.iter().sum()
    }

    /// The single-node problem with the pooled batch size.
    pub fn centralized(&self) -> ProblemSpec {
        ProblemSpec {
            n_nodes: 1,
            batch_sizes: vec![self.total_batch()],
            ..self.clone()
        }
    }

    /// Node relabeling: node `i` of the result is node `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> ProblemSpec {
        ProblemSpec {
            batch_sizes: perm.iter().map(|&p| self.batch_sizes[p]).collect(),
            ..self.clone()
        }
    }
}

/// One iteration's worth of `H_i = (1/b_i) sum a a^T` and `q_i = (eta/b_i) sum a y`.
#[derive(Clone, Debug)]
pub struct StepDraw {
    pub h_blocks: Vec<DMatrix<f64>>,
    pub q_blocks: Vec<DVector<f64>>,
}

#[inline]
pub(crate) fn normal<R: Rng + ?Sized>(r: &mut R) -> f64 {
    r.sample::<f64, _>(StandardNormal)
}

/// Draw `(H_i, q_i)` for node `i`. The stream is consumed as
/// `[a_1 (d values), eps_1, a_2, eps_2, ...]`.
pub fn sample_node<R: Rng + ?Sized>(
    spec: &ProblemSpec,
    i: usize,
    r: &mut R,
) -> (DMatrix<f64>, DVector<f64>) {
    let d = spec.d;
    let b = spec.batch_sizes[i];
    let mut h = DMatrix::zeros(d, d);
    let mut q = DVector::zeros(d);
    let mut a = DVector::zeros(d);
    for _ in 0..b {
        for v in a.iter_mut() {
            *v = spec.sigma * normal(r);
        }
        let y = spec
            .x_true
            .iter()
            .zip(a.iter())
            .map(|(x, a)| x * a)
            .sum::<f64>()
            + spec.sigma_y * normal(r);
        h.ger(1.0, &a, &a, 1.0);
        q.axpy(y, &a, 1.0);
    }
    h /= b as f64;
    q *= spec.eta / b as f64;
    (h, q)
}

/// Draw all nodes sequentially from one stream.
pub fn sample_step<R: Rng + ?Sized>(spec: &ProblemSpec, r: &mut R) -> StepDraw {
    let (h_blocks, q_blocks) = (0..spec.n_nodes).map(|i| sample_node(spec, i, r)).unzip();
    StepDraw { h_blocks, q_blocks }
}

/// Draw all nodes from per-node streams keyed by `labels`, the layout used by
/// the recursion.
pub fn sample_step_keyed(spec: &ProblemSpec, step_seed: u64, labels: &[u64]) -> StepDraw {
    let (h_blocks, q_blocks) = (0..spec.n_nodes)
        .map(|i| sample_node(spec, i, &mut rng::stream(rng::derive(step_seed, labels[i]))))
        .unzip();
    StepDraw { h_blocks, q_blocks }
}

/// The random matrix `M = W (x) I_d - eta blkdiag(H_i)`.
#[derive(Clone, Debug)]
pub struct MOperator {
    pub w: BlockOperator,
    pub eta: f64,
    pub h_blocks: Vec<DMatrix<f64>>,
}

impl MOperator {
    pub fn dim(&self) -> usize {
        self.w.dim()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.w.apply(x, out);
        let d = self.w.block_dim();
        for (i, h) in self.h_blocks.iter().enumerate() {
            let xi = &x[i * d..(i + 1) * d];
            for r in 0..d {
                let s: f64 = (0..d).map(|c| h[(r, c)] * xi[c]).sum();
                out[i * d + r] -= self.eta * s;
            }
        }
    }

    /// Dense symmetric form, only when `N d <= DENSE_CAP`.
    pub fn dense(&self) -> Option<DMatrix<f64>> {
        let w = self.w.dense()?;
        let d = self.w.block_dim();
        let mut m = w.clone();
        for (i, h) in self.h_blocks.iter().enumerate() {
            let mut blk = m.view_mut((i * d, i * d), (d, d));
            blk -= h * self.eta;
        }
        Some(m)
    }
}

pub fn sample_m<R: Rng + ?Sized>(
    spec: &ProblemSpec,
    mixing: &MixingMatrix,
    r: &mut R,
) -> Result<MOperator> {
    if mixing.n_nodes() != spec.n_nodes {
        return Err(Error::DimensionMismatch(format!(
            "mixing matrix has {} nodes, spec has {}",
            mixing.n_nodes(),
            spec.n_nodes
        )));
    }
    let draw = sample_step(spec, r);
    Ok(MOperator {
        w: lift_to_blocks(mixing, spec.d),
        eta: spec.eta,
        h_blocks: draw.h_blocks,
    })
}

/// Dense `W (x) I_d - eta blkdiag(H_i)` assembled from an explicit draw.
pub fn dense_m(mixing: &MixingMatrix, eta: f64, h_blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let d = h_blocks[0].nrows();
    let n = mixing.n_nodes();
    assert!(n * d <= DENSE_CAP, "dense M requested above the cap");
    let mut m = mixing.matrix().kronecker(&DMatrix::<f64>::identity(d, d));
    for (i, h) in h_blocks.iter().enumerate() {
        let mut blk = m.view_mut((i * d, i * d), (d, d));
        blk -= h * eta;
    }
    m
}

/// Spectral norm of a symmetric matrix: the largest absolute eigenvalue.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)].abs();
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// How the recursion draws `(eta H_i x_i, q_i)` at each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    /// Pick the cheaper of the two exact samplers.
    #[default]
    Auto,
    /// Draw every `a_{i,j}` explicitly.
    Explicit,
    /// Draw only the projections needed for one vector (same law, `O(b + d)`).
    Projected,
}

impl Sampler {
    pub fn resolve(self, d: usize, b: usize) -> Sampler {
        match self {
            Sampler::Auto => {
                if d >= 2 && b * (d + 1) > 3 * b + 6 * d {
                    Sampler::Projected
                } else {
                    Sampler::Explicit
                }
            }
            s => s,
        }
    }
}

/// Explicit draw applied to one block: returns `(H x, q)` written into the
/// output slices, consuming the stream exactly like [`sample_node`].
pub(crate) fn node_explicit<R: Rng + ?Sized>(
    spec: &ProblemSpec,
    b: usize,
    r: &mut R,
    x: &[f64],
    hx: &mut [f64],
    q: &mut [f64],
    a: &mut [f64],
) {
    hx.fill(0.0);
    q.fill(0.0);
    for _ in 0..b {
        for v in a.iter_mut() {
            *v = spec.sigma * normal(r);
        }
        let mut ax = 0.0;
        let mut y = 0.0;
        for k in 0..a.len() {
            ax += a[k] * x[k];
            y += spec.x_true[k] * a[k];
        }
        y += spec.sigma_y * normal(r);
        for k in 0..a.len() {
            hx[k] += a[k] * ax;
            q[k] += a[k] * y;
        }
    }
    let inv_b = 1.0 / b as f64;
    for v in hx.iter_mut() {
        *v *= inv_b;
    }
    let s = spec.eta * inv_b;
    for v in q.iter_mut() {
        *v *= s;
    }
}

/// Explicit draw applied to two blocks at once (synchronous coupling).
pub(crate) fn node_explicit_pair<R: Rng + ?Sized>(
    spec: &ProblemSpec,
    b: usize,
    r: &mut R,
    x: &[f64],
    x2: &[f64],
    hx: &mut [f64],
    hx2: &mut [f64],
    q: &mut [f64],
    a: &mut [f64],
) {
    hx.fill(0.0);
    hx2.fill(0.0);
    q.fill(0.0);
    for _ in 0..b {
        for v in a.iter_mut() {
            *v = spec.sigma * normal(r);
        }
        let (mut ax, mut ax2, mut y) = (0.0, 0.0, 0.0);
        for k in 0..a.len() {
            ax += a[k] * x[k];
            ax2 += a[k] * x2[k];
            y += spec.x_true[k] * a[k];
        }
        y += spec.sigma_y * normal(r);
        for k in 0..a.len() {
            hx[k] += a[k] * ax;
            hx2[k] += a[k] * ax2;
            q[k] += a[k] * y;
        }
    }
    let inv_b = 1.0 / b as f64;
    hx.iter_mut()
        .chain(hx2.iter_mut())
        .for_each(|v| *v *= inv_b);
    let s = spec.eta * inv_b;
    q.iter_mut().for_each(|v| *v *= s);
}

/// Projected draw. By rotation invariance of `a`, only the coordinates of each
/// `a_j` along `u = x/|x|` and along the part of `x_true` orthogonal to `u`
/// are needed explicitly; the remaining components enter `H x` and `q` through
/// two correlated Gaussian vectors in the orthogonal complement.
pub(crate) fn node_projected<R: Rng + ?Sized>(
    spec: &ProblemSpec,
    b: usize,
    r: &mut R,
    x: &[f64],
    hx: &mut [f64],
    q: &mut [f64],
    scratch: &mut [f64],
) {
    let d = x.len();
    let norm_x = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    // u: first basis vector (stored in hx temporarily), v: second (in q).
    let u = hx;
    if norm_x > 0.0 {
        for k in 0..d {
            u[k] = x[k] / norm_x;
        }
    } else {
        u.fill(0.0);
        u[0] = 1.0;
    }
    let c_u: f64 = spec.x_true.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
    let v = q;
    let mut rho = 0.0;
    for k in 0..d {
        v[k] = spec.x_true[k] - c_u * u[k];
        rho += v[k] * v[k];
    }
    rho = rho.sqrt();
    let has_v = d >= 2 && rho > 1e-14 * (1.0 + c_u.abs());
    if has_v {
        v.iter_mut().for_each(|t| *t /= rho);
    } else {
        rho = 0.0;
        v.fill(0.0);
    }
    let sigma = spec.sigma;
    let (mut sgg, mut sgh, mut sgy, mut shy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..b {
        let g = sigma * normal(r);
        let h = if has_v { sigma * normal(r) } else { 0.0 };
        let y = c_u * g + rho * h + spec.sigma_y * normal(r);
        sgg += g * g;
        sgh += g * h;
        sgy += g * y;
        shy += h * y;
        syy += y * y;
    }
    let rank = 1 + usize::from(has_v);
    // Gaussian parts living in the complement of span{u, v}.
    let (z1, z2) = scratch.split_at_mut(d);
    if d > rank {
        for k in 0..d {
            z1[k] = normal(r);
            z2[k] = normal(r);
        }
        for z in [&mut *z1, &mut *z2] {
            let pu: f64 = z.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
            let pv: f64 = if has_v {
                z.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
            } else {
                0.0
            };
            for k in 0..d {
                z[k] -= pu * u[k] + pv * v[k];
            }
        }
    } else {
        z1.fill(0.0);
        z2.fill(0.0);
    }
    let c11 = sgg.sqrt();
    let (c21, c22) = if c11 > 0.0 {
        let c21 = sgy / c11;
        (c21, (syy - c21 * c21).max(0.0).sqrt())
    } else {
        (0.0, syy.sqrt())
    };
    let inv_b = 1.0 / b as f64;
    let eta = spec.eta;
    for k in 0..d {
        let w1 = sigma * c11 * z1[k];
        let w2 = sigma * (c21 * z1[k] + c22 * z2[k]);
        let uk = u[k];
        let vk = v[k];
        u[k] = norm_x * inv_b * (sgg * uk + sgh * vk + w1);
        v[k] = eta * inv_b * (sgy * uk + shy * vk + w2);
    }
}
