//! DE-SGD, Dis-SGD and C-SGD as the recursion `x_{k+1} = M_{k+1} x_k + q_{k+1}`.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, TAG_INIT, TAG_STEP};
use crate::synthdata::{
    node_explicit, node_explicit_pair, node_projected, ProblemSpec, Sampler, StepDraw,
};
use crate::topology::{lift_to_blocks, BlockOperator, MixingMatrix};

/// Runs are flagged as diverged once `|x|_inf` exceeds this value.
pub const DIVERGENCE_GUARD: f64 = 1e100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    De,
    Dis,
    C,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::De => "de",
            Mode::Dis => "dis",
            Mode::C => "c",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "de" | "de-sgd" => Ok(Mode::De),
            "dis" | "dis-sgd" => Ok(Mode::Dis),
            "c" | "c-sgd" => Ok(Mode::C),
            o => Err(Error::InvalidParameter(format!("unknown mode `{o}`"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    /// Effective problem (for mode C: one node with the pooled batch).
    pub spec: ProblemSpec,
    pub mixing: MixingMatrix,
    pub mode: Mode,
    pub k_total: usize,
    pub burn_in: usize,
    pub runs: usize,
    pub master_seed: u64,
    /// Initial entries are uniform on `(-init_half_width, init_half_width)`.
    pub init_half_width: f64,
    pub sampler: Sampler,
    /// Record `|x_k|_2` for `k = 0..=trace_len`.
    pub trace_len: usize,
    /// Stream keys of the nodes; defaults to `0..N`.
    pub node_labels: Vec<u64>,
}

impl RunConfig {
    /// Validates and normalizes: `Dis` forces `W = I`, `C` collapses to one
    /// node with batch `sum b_i`.
    pub fn new(
        spec: ProblemSpec,
        mixing: Option<MixingMatrix>,
        mode: Mode,
        k_total: usize,
        burn_in: usize,
        runs: usize,
        master_seed: u64,
    ) -> Result<RunConfig> {
        spec.validate()?;
        if k_total <= burn_in {
            return Err(Error::InvalidParameter(format!(
                "need K > K0, got K = {k_total}, K0 = {burn_in}"
            )));
        }
        if runs == 0 {
            return Err(Error::InvalidParameter("need R >= 1".into()));
        }
        let (spec, mixing) = match mode {
            Mode::C => (spec.centralized(), MixingMatrix::identity(1)),
            Mode::Dis => {
                let n = spec.n_nodes;
                (spec, MixingMatrix::identity(n))
            }
            Mode::De => {
                let w = mixing.unwrap_or_else(|| MixingMatrix::identity(spec.n_nodes));
                if w.n_nodes() != spec.n_nodes {
                    return Err(Error::DimensionMismatch(format!(
                        "mixing matrix has {} nodes, spec has {}",
                        w.n_nodes(),
                        spec.n_nodes
                    )));
                }
                (spec, w)
            }
        };
        let node_labels = (0..spec.n_nodes as u64).collect();
        Ok(RunConfig {
            spec,
            mixing,
            mode,
            k_total,
            burn_in,
            runs,
            master_seed,
            init_half_width: 10.0,
            sampler: Sampler::Auto,
            trace_len: 0,
            node_labels,
        })
    }

    pub fn with_trace(mut self, len: usize) -> Self {
        self.trace_len = len;
        self
    }

    pub fn with_sampler(mut self, s: Sampler) -> Self {
        self.sampler = s;
        self
    }

    /// Short hash of everything that determines the output.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.spec).expect("serializable"));
        for v in self.mixing.matrix().iter() {
            h.update(v.to_le_bytes());
        }
        h.update(self.mode.name().as_bytes());
        for v in [
            self.k_total as u64,
            self.burn_in as u64,
            self.runs as u64,
            self.master_seed,
            self.trace_len as u64,
        ] {
            h.update(v.to_le_bytes());
        }
        h.update(self.init_half_width.to_le_bytes());
        h.update(format!("{:?}", self.sampler).as_bytes());
        for l in &self.node_labels {
            h.update(l.to_le_bytes());
        }
        h.finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Stationary center of symmetry `1 (x) x_true`.
    pub fn center(&self) -> Vec<f64> {
        self.spec
            .x_true
            .iter()
            .copied()
            .cycle()
            .take(self.spec.dim())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// `(1/(K-K0)) sum_{k>K0} (x_k - 1 (x) x_true)`.
    pub tail_average: Vec<f64>,
    pub final_iterate: Vec<f64>,
    pub diverged: bool,
    pub diverged_at: Option<usize>,
    /// `|x_k|_2` for `k = 0..=trace_len` (shorter if the run diverged).
    pub norm_trace: Vec<f64>,
}

fn initial_point(cfg: &RunConfig, run_seed: u64, tag: u64) -> Vec<f64> {
    let d = cfg.spec.d;
    let init_seed = rng::derive(run_seed, tag);
    let h = cfg.init_half_width;
    let mut x = vec![0.0; cfg.spec.dim()];
    for (i, &label) in cfg.node_labels.iter().enumerate() {
        let mut r = rng::stream(rng::derive(init_seed, label));
        for v in &mut x[i * d..(i + 1) * d] {
            *v = if h > 0.0 { r.random_range(-h..h) } else { 0.0 };
        }
    }
    x
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Per-thread buffers for one step of the recursion.
pub(crate) struct StepKernel<'a> {
    spec: &'a ProblemSpec,
    labels: &'a [u64],
    w: BlockOperator,
    samplers: Vec<Sampler>,
    hx: Vec<f64>,
    q: Vec<f64>,
    scratch: Vec<f64>,
    mixed: Vec<f64>,
}

impl<'a> StepKernel<'a> {
    pub(crate) fn new(
        spec: &'a ProblemSpec,
        mixing: &MixingMatrix,
        sampler: Sampler,
        labels: &'a [u64],
    ) -> Self {
        let d = spec.d;
        let samplers = spec
            .batch_sizes
            .iter()
            .map(|&b| sampler.resolve(d, b))
            .collect();
        StepKernel {
            spec,
            labels,
            w: lift_to_blocks(mixing, d),
            samplers,
            hx: vec![0.0; d],
            q: vec![0.0; d],
            scratch: vec![0.0; 2 * d],
            mixed: vec![0.0; spec.dim()],
        }
    }

    /// `x <- M x + q` (or `x <- M x` when `with_q` is false), in place.
    pub(crate) fn step(&mut self, x: &mut [f64], step_seed: u64, with_q: bool) {
        let spec = self.spec;
        let d = spec.d;
        self.w.apply(x, &mut self.mixed);
        for i in 0..spec.n_nodes {
            let mut r = rng::stream(rng::derive(step_seed, self.labels[i]));
            let xi = &x[i * d..(i + 1) * d];
            let b = spec.batch_sizes[i];
            match self.samplers[i] {
                Sampler::Projected => node_projected(
                    spec,
                    b,
                    &mut r,
                    xi,
                    &mut self.hx,
                    &mut self.q,
                    &mut self.scratch,
                ),
                _ => node_explicit(
                    spec,
                    b,
                    &mut r,
                    xi,
                    &mut self.hx,
                    &mut self.q,
                    &mut self.scratch[..d],
                ),
            }
            let out = &mut self.mixed[i * d..(i + 1) * d];
            for k in 0..d {
                out[k] -= spec.eta * self.hx[k];
                if with_q {
                    out[k] += self.q[k];
                }
            }
        }
        x.copy_from_slice(&self.mixed);
    }
}

/// One power-iteration chain for the top Lyapunov exponent: returns
/// `(1/k) sum_t log |M_t v_{t-1}|` with `v` renormalized after each step.
pub fn lyapunov_chain(
    spec: &ProblemSpec,
    mixing: &MixingMatrix,
    sampler: Sampler,
    seed: u64,
    k: usize,
) -> f64 {
    let labels: Vec<u64> = (0..spec.n_nodes as u64).collect();
    let mut kernel = StepKernel::new(spec, mixing, sampler, &labels);
    let mut r = rng::stream(rng::derive(seed, TAG_INIT));
    let mut v: Vec<f64> = (0..spec.dim())
        .map(|_| crate::synthdata::normal(&mut r))
        .collect();
    let n0 = norm2(&v);
    v.iter_mut().for_each(|t| *t /= n0);
    let mut acc = 0.0;
    for t in 1..=k {
        kernel.step(&mut v, step_seed(seed, t), false);
        let nv = norm2(&v);
        if nv == 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += nv.ln();
        v.iter_mut().for_each(|x| *x /= nv);
    }
    acc / k as f64
}

fn step_seed(run_seed: u64, k: usize) -> u64 {
    rng::derive(rng::derive(run_seed, TAG_STEP), k as u64)
}

pub fn run_seed(cfg: &RunConfig, run: usize) -> u64 {
    rng::derive(cfg.master_seed, run as u64)
}

pub fn run_single(cfg: &RunConfig, run: usize) -> RunSummary {
    let seed = run_seed(cfg, run);
    let mut x = initial_point(cfg, seed, TAG_INIT);
    let center = cfg.center();
    let mut kernel = StepKernel::new(&cfg.spec, &cfg.mixing, cfg.sampler, &cfg.node_labels);
    let mut acc = vec![0.0; x.len()];
    let mut trace = Vec::with_capacity(cfg.trace_len + 1);
    trace.push(norm2(&x));
    let mut diverged_at = None;
    for k in 1..=cfg.k_total {
        kernel.step(&mut x, step_seed(seed, k), true);
        if x.iter().any(|v| !(v.abs() <= DIVERGENCE_GUARD)) {
            diverged_at = Some(k);
            break;
        }
        if k <= cfg.trace_len {
            trace.push(norm2(&x));
        }
        if k > cfg.burn_in {
            for ((a, v), c) in acc.iter_mut().zip(&x).zip(&center) {
                *a += v - c;
            }
        }
    }
    let scale = 1.0 / (cfg.k_total - cfg.burn_in) as f64;
    acc.iter_mut().for_each(|a| *a *= scale);
    RunSummary {
        tail_average: acc,
        final_iterate: x,
        diverged: diverged_at.is_some(),
        diverged_at,
        norm_trace: trace,
    }
}

/// The explicit draw used by run `run` at step `k` (for cross-checks against
/// the dense `M x + q` form; only meaningful with the explicit sampler).
pub fn step_draw(cfg: &RunConfig, run: usize, k: usize) -> StepDraw {
    crate::synthdata::sample_step_keyed(
        &cfg.spec,
        step_seed(run_seed(cfg, run), k),
        &cfg.node_labels,
    )
}

/// Initial point of run `run`.
pub fn initial_iterate(cfg: &RunConfig, run: usize) -> Vec<f64> {
    initial_point(cfg, run_seed(cfg, run), TAG_INIT)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterateEnsemble {
    pub runs: Vec<RunSummary>,
    pub n_nodes: usize,
    pub d: usize,
    pub mode: Mode,
    pub digest: String,
}

impl IterateEnsemble {
    pub fn divergence_fraction(&self) -> f64 {
        self.runs.iter().filter(|r| r.diverged).count() as f64 / self.runs.len() as f64
    }

    pub fn stable_runs(&self) -> impl Iterator<Item = &RunSummary> {
        self.runs.iter().filter(|r| !r.diverged)
    }

    /// All coordinates of node `i` (0-based) pooled over non-diverged runs.
    pub fn node_samples(&self, i: usize) -> Vec<f64> {
        let d = self.d;
        self.stable_runs()
            .flat_map(|r| r.tail_average[i * d..(i + 1) * d].iter().copied())
            .collect()
    }

    /// Mean of `|x_k|^p` over non-diverged runs with its standard error, for
    /// each recorded `k`.
    pub fn trace_moments(&self, p: f64) -> Vec<(f64, f64)> {
        let len = self
            .stable_runs()
            .map(|r| r.norm_trace.len())
            .min()
            .unwrap_or(0);
        (0..len)
            .map(|k| {
                let vals: Vec<f64> = self
                    .stable_runs()
                    .map(|r| r.norm_trace[k].powf(p))
                    .collect();
                crate::stats::mean_stderr(&vals)
            })
            .collect()
    }

    /// CSV with columns run_id, node_id, coord, tail_avg_value, final_value, diverged.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "run_id",
            "node_id",
            "coord",
            "tail_avg_value",
            "final_value",
            "diverged",
        ])?;
        for (r, run) in self.runs.iter().enumerate() {
            for i in 0..self.n_nodes {
                for c in 0..self.d {
                    let idx = i * self.d + c;
                    w.write_record([
                        r.to_string(),
                        (i + 1).to_string(),
                        (c + 1).to_string(),
                        format!("{:.16e}", run.tail_average[idx]),
                        format!("{:.16e}", run.final_iterate[idx]),
                        run.diverged.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `R` independent runs in parallel; output is independent of the worker count.
pub fn run_ensemble(cfg: &RunConfig) -> IterateEnsemble {
    let runs = (0..cfg.runs)
        .into_par_iter()
        .map(|r| run_single(cfg, r))
        .collect();
    IterateEnsemble {
        runs,
        n_nodes: cfg.spec.n_nodes,
        d: cfg.spec.d,
        mode: cfg.mode,
        digest: cfg.digest(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoupledTrace {
    pub p: f64,
    /// `E |x_k - x~_k|^p` for `k = 0..=K`, with standard errors.
    pub moments: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Per-step ratio `sum_r |D_{k+1}|^p / sum_r |D_k|^p` and its standard error.
    pub ratios: Vec<f64>,
    pub ratio_stderr: Vec<f64>,
    /// Kish effective sample size `(sum w)^2 / sum w^2` of the step-`k`
    /// weights `w = |D_k|^p`. The ratio stderr is unreliable when it is small.
    pub ratio_ess: Vec<f64>,
}

/// Synchronous coupling: two chains from different initial points driven by
/// the same `(M_k, q_k)`. Uses the explicit sampler.
pub fn run_coupled(cfg: &RunConfig, p: f64) -> Result<CoupledTrace> {
    if !(p > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "p must be positive, got {p}"
        )));
    }
    let k_total = cfg.k_total;
    let per_run: Vec<Vec<f64>> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| {
            let seed = run_seed(cfg, run);
            let mut x = initial_point(cfg, seed, TAG_INIT);
            let mut y = initial_point(cfg, seed, rng::TAG_CHAIN);
            coupled_chain(cfg, seed, &mut x, &mut y, p)
        })
        .collect();
    let mut moments = Vec::with_capacity(k_total + 1);
    let mut stderr = Vec::with_capacity(k_total + 1);
    for k in 0..=k_total {
        let vals: Vec<f64> = per_run.iter().map(|v| v[k]).collect();
        let (m, s) = crate::stats::mean_stderr(&vals);
        moments.push(m);
        stderr.push(s);
    }
    let mut ratios = Vec::with_capacity(k_total);
    let mut ratio_stderr = Vec::with_capacity(k_total);
    let mut ratio_ess = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let sq: f64 = per_run.iter().map(|v| v[k] * v[k]).sum();
        let den: f64 = per_run.iter().map(|v| v[k]).sum();
        let num: f64 = per_run.iter().map(|v| v[k + 1]).sum();
        if den <= 0.0 {
            ratios.push(f64::NAN);
            ratio_stderr.push(f64::NAN);
            ratio_ess.push(0.0);
            continue;
        }
        ratio_ess.push(den * den / sq);
        let ratio = num / den;
        // Weighted mean of per-run ratios with weights |D_k|^p.
        let var: f64 = per_run
            .iter()
            .filter(|v| v[k] > 0.0)
            .map(|v| {
                let w = v[k];
                let rr = v[k + 1] / v[k];
                (w * (rr - ratio)).powi(2)
            })
            .sum();
        ratios.push(ratio);
        ratio_stderr.push(var.sqrt() / den);
    }
    Ok(CoupledTrace {
        p,
        moments,
        stderr,
        ratios,
        ratio_stderr,
        ratio_ess,
    })
}

/// Tracks `x` and the difference `D = y - x` directly. The shared draw makes
/// `D_{k+1} = M_k D_k` exact, which keeps `|D|` accurate far below the
/// rounding level of `x`.
fn coupled_chain(cfg: &RunConfig, seed: u64, x: &mut [f64], y: &mut [f64], p: f64) -> Vec<f64> {
    let spec = &cfg.spec;
    let d = spec.d;
    let w = lift_to_blocks(&cfg.mixing, d);
    let (mut hx, mut hd, mut q, mut a) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut diff: Vec<f64> = y.iter().zip(x.iter()).map(|(b, a)| b - a).collect();
    let mut mx = vec![0.0; x.len()];
    let mut md = vec![0.0; x.len()];
    let norm_p = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>().sqrt().powf(p);
    let mut out = Vec::with_capacity(cfg.k_total + 1);
    out.push(norm_p(&diff));
    for k in 1..=cfg.k_total {
        let ss = step_seed(seed, k);
        w.apply(x, &mut mx);
        w.apply(&diff, &mut md);
        for i in 0..spec.n_nodes {
            let mut r = rng::stream(rng::derive(ss, cfg.node_labels[i]));
            let sl = i * d..(i + 1) * d;
            node_explicit_pair(
                spec,
                spec.batch_sizes[i],
                &mut r,
                &x[sl.clone()],
                &diff[sl.clone()],
                &mut hx,
                &mut hd,
                &mut q,
                &mut a,
            );
            for c in 0..d {
                mx[i * d + c] += q[c] - spec.eta * hx[c];
                md[i * d + c] -= spec.eta * hd[c];
            }
        }
        x.copy_from_slice(&mx);
        diff.copy_from_slice(&md);
        out.push(norm_p(&diff));
    }
    for (yc, (xc, dc)) in y.iter_mut().zip(x.iter().zip(&diff)) {
        *yc = xc + dc;
    }
    out
}

/// Largest absolute difference between the DE step `W x - eta grad F(x)` and
/// the centralized view `x - eta grad F_W(x)` with
/// `grad F_W(x) = grad F(x) + (1/eta)(I - W) x`, on the same draw.
pub fn fw_gradient_check(
    spec: &ProblemSpec,
    mixing: &MixingMatrix,
    x: &[f64],
    draw: &StepDraw,
) -> Result<f64> {
    let d = spec.d;
    if x.len() != spec.dim()
        || mixing.n_nodes() != spec.n_nodes
        || draw.h_blocks.len() != spec.n_nodes
    {
        return Err(Error::DimensionMismatch(
            "fw_gradient_check inputs disagree".into(),
        ));
    }
    let w = lift_to_blocks(mixing, d);
    let mut wx = vec![0.0; x.len()];
    w.apply(x, &mut wx);
    // Stochastic gradient blocks: H_i x_i - q_i / eta.
    let mut grad = vec![0.0; x.len()];
    for i in 0..spec.n_nodes {
        let xi = nalgebra::DVector::from_column_slice(&x[i * d..(i + 1) * d]);
        let g = &draw.h_blocks[i] * xi - &draw.q_blocks[i] / spec.eta;
        grad[i * d..(i + 1) * d].copy_from_slice(g.as_slice());
    }
    let mut res = 0.0f64;
    for k in 0..x.len() {
        let de = wx[k] - spec.eta * grad[k];
        let grad_fw = grad[k] + (x[k] - wx[k]) / spec.eta;
        let cv = x[k] - spec.eta * grad_fw;
        res = res.max((de - cv).abs());
    }
    Ok(res)
}
