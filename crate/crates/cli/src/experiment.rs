//! Scenario execution: ensembles, tail-index estimates and theory per sweep point.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use dsgd_tails::recursion::{run_ensemble, IterateEnsemble, Mode, RunConfig};
use dsgd_tails::stats::median;
use dsgd_tails::synthdata::ProblemSpec;
use dsgd_tails::tailest::{estimate_alpha_scalar, estimate_ensemble, MIN_SAMPLES};
use dsgd_tails::theory::{
    alpha_hat_root_tol, expansion_general_b, thresholds, MaxAbsLaw, Method, MomentFunction,
    TheoryReport, ThresholdReport,
};
use dsgd_tails::topology::{build_mixing, MixingMatrix};
use dsgd_tails::Error;

use crate::error::{CliError, CliResult};
use crate::rows::{write_rows, Cell, ResultRow, Tag};
use crate::scenario::{Point, Scenario, SweepField};
use crate::svg::{line_plot, Series};

/// Overrides applied on top of a scenario file.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seeds: Option<Vec<u64>>,
    pub n_mc: Option<usize>,
    pub tol: Option<f64>,
    pub paper_scale: bool,
    /// Skip the theory engine (rows carry `skipped`).
    pub no_theory: bool,
}

#[derive(Clone, Debug)]
pub struct PointTheory {
    pub alpha: Cell,
    pub rho: Cell,
    pub report: TheoryReport,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub points: Vec<Point>,
    pub rows: Vec<ResultRow>,
    /// `(point index, mode, report)` in sweep order.
    pub reports: Vec<(usize, Mode, TheoryReport)>,
    pub thresholds: Vec<ThresholdReport>,
}

pub fn default_n_mc(d: usize) -> usize {
    if d == 1 {
        200_000
    } else {
        20_000
    }
}

fn topology_label(sc: &Scenario, mode: Mode) -> String {
    match mode {
        Mode::De => sc.topology.kind.name().to_string(),
        Mode::Dis => "disconnected".into(),
        Mode::C => "centralized".into(),
    }
}

/// The effective problem and mixing matrix of one mode.
fn mode_system(
    spec: &ProblemSpec,
    mixing: &MixingMatrix,
    mode: Mode,
) -> (ProblemSpec, MixingMatrix) {
    match mode {
        Mode::De => (spec.clone(), mixing.clone()),
        Mode::Dis => (spec.clone(), MixingMatrix::identity(spec.n_nodes)),
        Mode::C => (spec.centralized(), MixingMatrix::identity(1)),
    }
}

/// Theory for one `(point, mode)`: `rho_hat`, the root `alpha_hat` and a report.
pub fn point_theory(
    spec: &ProblemSpec,
    mixing: &MixingMatrix,
    mode: Mode,
    n_mc: usize,
    seed: u64,
    tol: f64,
) -> CliResult<PointTheory> {
    let (eff, w) = mode_system(spec, mixing, mode);
    let mf = match MomentFunction::new(&eff, &w, n_mc, seed) {
        Ok(mf) => mf,
        Err(Error::TooLarge(msg)) => {
            let mut report = TheoryReport::new("");
            report.note(format!("moment function skipped: {msg}"));
            return Ok(PointTheory {
                alpha: Cell::Tag(Tag::Skipped),
                rho: Cell::Tag(Tag::Skipped),
                report,
            });
        }
        Err(e) => return Err(e.into()),
    };
    let mut report = TheoryReport::new(mf.digest.clone());
    report.note(format!("engine: {:?}, n_mc = {n_mc}", mf.engine));
    let rho = mf.rho();
    report.estimate("rho_hat", rho);
    report.estimate("h_2", mf.h(2.0));
    let (alpha, rho_cell) = match alpha_hat_root_tol(&mf, tol) {
        Ok(root) => {
            report.exact("alpha_hat", root.alpha, Method::Mc);
            report.exact("alpha_lo", root.alpha_lo, Method::Mc);
            report.exact("alpha_hi", root.alpha_hi, Method::Mc);
            (Cell::Value(root.alpha), Cell::Value(rho.value))
        }
        Err(Error::NoRootUnstable { .. }) => {
            report.note("no root: rho_hat >= 0");
            (Cell::Tag(Tag::NoRootUnstable), Cell::Value(rho.value))
        }
        Err(Error::NoRootLight { s_max }) => {
            report.note(format!("no root: h(s) <= 1 up to s = {s_max}"));
            (Cell::Tag(Tag::NoRootLight), Cell::Value(rho.value))
        }
        Err(e) => return Err(e.into()),
    };
    if spec.d == 1 && spec.is_homogeneous() && spec.eta > 0.0 {
        let b = spec.batch_sizes[0];
        let law = match mode {
            Mode::C => MaxAbsLaw::homogeneous(spec.eta, 1, spec.total_batch(), spec.sigma),
            _ => MaxAbsLaw::homogeneous(spec.eta, spec.n_nodes, b, spec.sigma),
        }?;
        if let Ok(a) = law.alpha() {
            report.exact("alpha_quadrature", a, Method::Quadrature);
        }
        if mode == Mode::De && !mixing.is_identity() {
            if let Ok(x) =
                expansion_general_b(spec.eta, b, spec.sigma, mixing.laplacian_diag(), None)
            {
                report.exact("sign_term", x.sign_term, Method::Quadrature);
                report.exact("correction", x.correction, Method::Quadrature);
                report.exact(
                    "alpha_first_order",
                    x.alpha_of_delta(mixing.delta()),
                    Method::Quadrature,
                );
                report.note(format!("expansion regime: {:?}", x.regime));
            }
        }
    }
    Ok(PointTheory {
        alpha,
        rho: rho_cell,
        report,
    })
}

/// Tail-index estimate of one ensemble, honoring explicit block sizes.
pub fn empirical_alpha(ens: &IterateEnsemble, blocks: Option<(usize, usize)>) -> CliResult<Cell> {
    let div = ens.divergence_fraction();
    if div >= 1.0 {
        return Ok(Cell::Tag(Tag::Diverged));
    }
    let short = |have: usize| {
        if have < ens.runs.len() * ens.d && div > 0.0 {
            Tag::Diverged
        } else {
            Tag::Insufficient
        }
    };
    match blocks {
        None => match estimate_ensemble(ens, MIN_SAMPLES) {
            Ok(e) => Ok(Cell::Value(e.alpha_hat)),
            Err(Error::InsufficientSamples { have, .. }) => Ok(Cell::Tag(short(have))),
            Err(e) => Err(e.into()),
        },
        Some((k1, k2)) => {
            let mut alphas = Vec::with_capacity(ens.n_nodes);
            for i in 0..ens.n_nodes {
                let s = ens.node_samples(i);
                if s.len() < k1 * k2 {
                    return Ok(Cell::Tag(short(s.len())));
                }
                alphas.push(estimate_alpha_scalar(&s[..k1 * k2], k1, k2)?.alpha);
            }
            Ok(Cell::Value(median(&alphas)))
        }
    }
}

fn sweep_value(sc: &Scenario, p: &Point) -> f64 {
    match sc.sweep.field {
        SweepField::Eta => p.spec.eta,
        SweepField::B => p.spec.batch_sizes[0] as f64,
        SweepField::Delta => p.delta,
        SweepField::None => p.index as f64,
    }
}

/// Runs every sweep point x mode x seed. Output does not depend on the
/// worker count.
pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> CliResult<RunOutput> {
    let mut sc = sc.clone();
    if opts.paper_scale {
        sc.paper_scale();
    }
    if let Some(seeds) = &opts.seeds {
        sc.seeds = seeds.clone();
    }
    sc.validate()?;
    let points = sc.points()?;
    let tol = opts.tol.unwrap_or(1e-4);
    let mixings: Vec<MixingMatrix> = points
        .iter()
        .map(|p| build_mixing(sc.topology.kind, p.spec.n_nodes, p.delta))
        .collect::<Result<_, _>>()?;

    let theory_jobs: Vec<(usize, Mode)> = points
        .iter()
        .flat_map(|p| sc.modes.iter().map(move |&m| (p.index, m)))
        .collect();
    let theory: Vec<PointTheory> = theory_jobs
        .par_iter()
        .map(|&(i, mode)| {
            let spec = &points[i].spec;
            if opts.no_theory || !sc.theory.enabled {
                let mut report = TheoryReport::new("");
                report.note("theory disabled");
                return Ok(PointTheory {
                    alpha: Cell::Tag(Tag::Skipped),
                    rho: Cell::Tag(Tag::Skipped),
                    report,
                });
            }
            let n_mc = opts
                .n_mc
                .or(sc.theory.n_mc)
                .unwrap_or_else(|| default_n_mc(spec.d));
            point_theory(spec, &mixings[i], mode, n_mc, sc.theory.seed, tol)
        })
        .collect::<CliResult<_>>()?;

    let e = sc.estimation.clone();
    let blocks = e.k1.zip(e.k2);
    let run_jobs: Vec<(usize, usize, u64)> = theory_jobs
        .iter()
        .enumerate()
        .flat_map(|(t, &(i, _))| sc.seeds.iter().map(move |&s| (t, i, s)))
        .collect();
    let rows: Vec<ResultRow> = run_jobs
        .par_iter()
        .map(|&(t, i, seed)| {
            let mode = theory_jobs[t].1;
            let p = &points[i];
            let start = Instant::now();
            let cfg = RunConfig::new(
                p.spec.clone(),
                Some(mixings[i].clone()),
                mode,
                e.k,
                e.k0,
                e.r,
                seed,
            )?;
            let ens = run_ensemble(&cfg);
            let alpha = empirical_alpha(&ens, blocks)?;
            Ok(ResultRow {
                scenario: sc.name.clone(),
                mode: mode.name().into(),
                topology: topology_label(&sc, mode),
                n: p.spec.n_nodes,
                d: p.spec.d,
                b: p.spec.batch_sizes[0],
                eta: p.spec.eta,
                delta: if mode == Mode::De { p.delta } else { 0.0 },
                seed,
                alpha_hat_empirical: alpha,
                alpha_hat_theory: theory[t].alpha.clone(),
                rho_hat: theory[t].rho.clone(),
                divergence_fraction: ens.divergence_fraction(),
                runtime_ms: start.elapsed().as_millis() as u64,
            })
        })
        .collect::<CliResult<_>>()?;

    let reports = theory_jobs
        .iter()
        .zip(theory)
        .map(|(&(i, m), t)| (i, m, t.report))
        .collect();
    let thresholds = if opts.no_theory || !sc.theory.enabled {
        Vec::new()
    } else {
        point_thresholds(&sc, &points, opts.n_mc)?
    };
    Ok(RunOutput {
        scenario: sc,
        points,
        rows,
        reports,
        thresholds,
    })
}

/// One threshold report per sweep point; draws are shared between points
/// with the same batch size.
fn point_thresholds(
    sc: &Scenario,
    points: &[Point],
    n_mc: Option<usize>,
) -> CliResult<Vec<ThresholdReport>> {
    let mut cache: Vec<(usize, ThresholdReport)> = Vec::new();
    let mut out = Vec::new();
    for p in points {
        if !p.spec.is_homogeneous() {
            continue;
        }
        let b = p.spec.batch_sizes[0];
        if !cache.iter().any(|(cb, _)| *cb == b) {
            let n_mc = n_mc
                .or(sc.theory.n_mc)
                .unwrap_or_else(|| default_n_mc(p.spec.d))
                .min(20_000);
            let t = thresholds(&p.spec, (1e-3, 20.0), n_mc, sc.theory.seed)?;
            cache.push((b, t));
        }
        let mut t = cache
            .iter()
            .find(|(cb, _)| *cb == b)
            .expect("cached")
            .1
            .clone();
        t.eta = p.spec.eta;
        t.sigma2_threshold = dsgd_tails::kit::sigma2_threshold(p.spec.eta, p.spec.n_nodes);
        out.push(t);
    }
    Ok(out)
}

/// Writes `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Per `(point, mode)` mean, min and max of the empirical estimates over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub point: usize,
    pub x: f64,
    pub mode: String,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub theory: Option<f64>,
}

pub fn summarize(out: &RunOutput) -> Vec<Summary> {
    let mut res = Vec::new();
    for p in &out.points {
        for mode in &out.scenario.modes {
            let rows: Vec<&ResultRow> = out
                .rows
                .iter()
                .zip(row_points(out))
                .filter(|(r, i)| *i == p.index && r.mode == mode.name())
                .map(|(r, _)| r)
                .collect();
            let vals: Vec<f64> = rows
                .iter()
                .filter_map(|r| r.alpha_hat_empirical.value())
                .collect();
            let (mean, min, max) = if vals.is_empty() {
                (None, None, None)
            } else {
                (
                    Some(vals.iter().sum::<f64>() / vals.len() as f64),
                    vals.iter().copied().reduce(f64::min),
                    vals.iter().copied().reduce(f64::max),
                )
            };
            res.push(Summary {
                point: p.index,
                x: sweep_value(&out.scenario, p),
                mode: mode.name().into(),
                mean,
                min,
                max,
                theory: rows.first().and_then(|r| r.alpha_hat_theory.value()),
            });
        }
    }
    res
}

/// Sweep-point index of every row (rows are emitted point-major).
pub fn row_points(out: &RunOutput) -> Vec<usize> {
    let per_point = out.scenario.modes.len() * out.scenario.seeds.len();
    (0..out.rows.len()).map(|k| k / per_point).collect()
}

fn mode_color(mode: &str) -> &'static str {
    match mode {
        "de" => "#1f77b4",
        "dis" => "#d62728",
        _ => "#2ca02c",
    }
}

pub fn write_outputs(out: &RunOutput, dir: &Path) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(dir.join("theory"))?;
    let mut written = Vec::new();
    let mut put = |name: PathBuf, bytes: Vec<u8>| -> CliResult<()> {
        write_atomic(&name, &bytes)?;
        written.push(name);
        Ok(())
    };
    let mut buf = Vec::new();
    write_rows(&out.rows, &mut buf)?;
    put(dir.join("results.csv"), buf)?;
    for (i, mode, report) in &out.reports {
        put(
            dir.join("theory")
                .join(format!("point{i:03}_{}.json", mode.name())),
            report.to_json().into_bytes(),
        )?;
    }
    if !out.thresholds.is_empty() {
        put(
            dir.join("thresholds.json"),
            serde_json::to_vec_pretty(&out.thresholds)?,
        )?;
    }
    let summary = summarize(out);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "point",
        "x",
        "mode",
        "alpha_mean",
        "alpha_min",
        "alpha_max",
        "alpha_theory",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in &summary {
        w.write_record([
            s.point.to_string(),
            s.x.to_string(),
            s.mode.clone(),
            opt(s.mean),
            opt(s.min),
            opt(s.max),
            opt(s.theory),
        ])?;
    }
    put(
        dir.join("alpha_summary.csv"),
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))?,
    )?;
    let mut series = Vec::new();
    for mode in &out.scenario.modes {
        let name = mode.name();
        let pick = |f: fn(&Summary) -> Option<f64>| -> Vec<(f64, f64)> {
            summary
                .iter()
                .filter(|s| s.mode == name)
                .filter_map(|s| f(s).map(|v| (s.x, v)))
                .collect()
        };
        series.push(Series {
            name: format!("{name} empirical"),
            color: mode_color(name),
            dashed: false,
            points: pick(|s| s.mean),
        });
        series.push(Series {
            name: format!("{name} theory"),
            color: mode_color(name),
            dashed: true,
            points: pick(|s| s.theory),
        });
    }
    let xlabel = match out.scenario.sweep.field {
        SweepField::Eta => "step size",
        SweepField::B => "batch size",
        SweepField::Delta => "mixing weight",
        SweepField::None => "point",
    };
    let svg = line_plot(
        &format!("{}: tail index", out.scenario.name),
        xlabel,
        "alpha",
        &series,
    );
    put(dir.join("alpha.svg"), svg.into_bytes())?;
    Ok(written)
}
