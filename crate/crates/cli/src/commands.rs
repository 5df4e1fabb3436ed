//! Subcommands and their argument parsing.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use dsgd_tails::recursion::{run_coupled, Mode, RunConfig};
use dsgd_tails::rng;
use dsgd_tails::synthdata::{ProblemSpec, Sampler};
use dsgd_tails::tailest::{estimate_alpha, sample_stable};
use dsgd_tails::theory::{
    alpha_hat_root_tol, contour_grid, thresholds, ContourEngine, ContourGrid, Method,
    MomentFunction, TheoryReport, ThresholdReport,
};
use dsgd_tails::topology::{
    build_graph, build_mixing, laplacian, max_delta, mixing_matrix, write_matrix_csv, GraphKind,
    MixingMatrix,
};

use crate::error::{CliError, CliResult};
use crate::experiment::{
    default_n_mc, run_scenario, summarize, write_atomic, write_outputs, RunOptions,
};
use crate::scenario::{
    preset, preset_names, preset_text, ContourKind, ContourScenario, Grid, Scenario,
};
use crate::svg::contour_plot;

#[derive(Parser, Debug)]
#[command(
    name = "dsgd-tails",
    version,
    about = "Stationary tails of decentralized SGD on Gaussian least squares"
)]
pub struct Cli {
    /// Master seed (overrides the scenario's seed list for `run`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Full ensemble protocol: R = 1600, K = 5000, K0 = 500.
    #[arg(long, global = true)]
    pub paper_scale: bool,
    /// Monte-Carlo draws for theory quantities.
    #[arg(long, global = true)]
    pub n_mc: Option<usize>,
    /// Bracket width of the moment-function root.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print a mixing matrix, its Laplacian spectrum and the largest admissible delta.
    Topology(TopologyArgs),
    /// Run a scenario file or an embedded preset.
    Run(RunArgs),
    /// Sign-term contour over (eta, N).
    Contour(ContourArgs),
    /// Stepsize thresholds and the case classification.
    Thresholds(ThresholdArgs),
    /// Ad-hoc moment-function queries.
    Theory(TheoryArgs),
    /// Synchronously coupled runs against the per-step contraction factor.
    Couple(CoupleArgs),
    /// Estimator calibration on stable samples.
    Calibrate(CalibrateArgs),
    /// List presets, or print one.
    Preset { name: Option<String> },
}

#[derive(Args, Debug)]
pub struct TopologyArgs {
    pub kind: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Scenario TOML file.
    pub file: Option<PathBuf>,
    #[arg(long, conflicts_with = "file")]
    pub preset: Option<String>,
    /// Skip the theory engine.
    #[arg(long)]
    pub no_theory: bool,
}

#[derive(Args, Debug)]
pub struct ContourArgs {
    /// Contour scenario TOML file.
    pub file: Option<PathBuf>,
    #[arg(long, conflicts_with = "file")]
    pub preset: Option<String>,
    #[arg(long, value_parser = ["d1", "general"], default_value = "d1")]
    pub engine: String,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 1)]
    pub b: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.75)]
    pub eta_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub eta_max: f64,
    #[arg(long, default_value_t = 40)]
    pub eta_points: usize,
    /// Log-spaced step sizes.
    #[arg(long)]
    pub log: bool,
    #[arg(long, default_value_t = 1)]
    pub n_min: usize,
    #[arg(long, default_value_t = 50)]
    pub n_max: usize,
}

#[derive(Args, Debug, Clone)]
pub struct ProblemArgs {
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub b: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_y: f64,
}

impl ProblemArgs {
    fn spec(&self, eta: f64) -> ProblemSpec {
        ProblemSpec::homogeneous(self.d, self.n, self.b, eta, self.sigma, self.sigma_y)
    }
}

#[derive(Args, Debug)]
pub struct ThresholdArgs {
    /// Take the problem from a run preset (first sweep point).
    #[arg(long)]
    pub preset: Option<String>,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub eta_lo: f64,
    #[arg(long, default_value_t = 20.0)]
    pub eta_hi: f64,
}

#[derive(Args, Debug)]
pub struct TheoryArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub eta: f64,
    #[arg(long, default_value = "de")]
    pub mode: String,
    #[arg(long, default_value = "complete")]
    pub kind: String,
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    /// Exponents at which to report h(s).
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0])]
    pub s: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct CoupleArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub eta: f64,
    #[arg(long, default_value = "complete")]
    pub kind: String,
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    #[arg(long, default_value_t = 200)]
    pub k: usize,
    #[arg(long, default_value_t = 400)]
    pub r: usize,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Samples per index.
    #[arg(long, default_value_t = 1_000_000)]
    pub k: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 1.2, 1.5, 1.8, 2.0])]
    pub alphas: Vec<f64>,
}

fn kind(s: &str) -> CliResult<GraphKind> {
    s.parse::<GraphKind>()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn mode(s: &str) -> CliResult<Mode> {
    s.parse::<Mode>()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn mixing_for(
    spec: &ProblemSpec,
    mode: Mode,
    kind_name: &str,
    delta: f64,
) -> CliResult<MixingMatrix> {
    if mode == Mode::De && delta > 0.0 && spec.n_nodes > 1 {
        Ok(build_mixing(kind(kind_name)?, spec.n_nodes, delta)?)
    } else {
        Ok(MixingMatrix::identity(spec.n_nodes))
    }
}

fn out_dir(cli: &Cli) -> Option<&Path> {
    cli.out.as_deref()
}

fn prepare(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_csv_file(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Parses `args` and runs the command, writing human-readable output to `out`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                write!(out, "{e}")?;
                return Ok(());
            }
            return Err(CliError::Config(e.to_string()));
        }
    };
    match cli.jobs {
        Some(j) if j > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build()
                .map_err(|e| CliError::Config(e.to_string()))?;
            let mut buf = Vec::new();
            let res = pool.install(|| execute(&cli, &mut buf));
            out.write_all(&buf)?;
            res
        }
        Some(_) => Err(CliError::Config("--jobs must be at least 1".into())),
        None => execute(&cli, out),
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::Topology(a) => cmd_topology(cli, a, out),
        Command::Run(a) => cmd_run(cli, a, out),
        Command::Contour(a) => cmd_contour(cli, a, out),
        Command::Thresholds(a) => cmd_thresholds(cli, a, out),
        Command::Theory(a) => cmd_theory(cli, a, out),
        Command::Couple(a) => cmd_couple(cli, a, out),
        Command::Calibrate(a) => cmd_calibrate(cli, a, out),
        Command::Preset { name } => match name {
            Some(n) => Ok(write!(out, "{}", preset_text(n)?)?),
            None => {
                for n in preset_names() {
                    writeln!(out, "{n}")?;
                }
                Ok(())
            }
        },
    }
}

fn cmd_topology(cli: &Cli, a: &TopologyArgs, out: &mut dyn Write) -> CliResult<()> {
    let g = build_graph(kind(&a.kind)?, a.n)?;
    let l = laplacian(&g);
    let w = mixing_matrix(&l, a.delta)?;
    writeln!(
        out,
        "# W = I - delta L for {} on {} nodes, delta = {}",
        a.kind, a.n, a.delta
    )?;
    let m = w.matrix();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| format!("{:>10.6}", m[(i, j)]))
            .collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    let spec: Vec<String> = l
        .eigenvalues()
        .iter()
        .map(|&v| format!("{:.6}", if v.abs() < 1e-12 { 0.0 } else { v }))
        .collect();
    writeln!(out, "laplacian spectrum: {}", spec.join(" "))?;
    writeln!(out, "max_delta: {:.6}", max_delta(&l))?;
    if let Some(dir) = out_dir(cli) {
        prepare(dir)?;
        let mut buf = Vec::new();
        w.write_csv(&mut buf)?;
        write_atomic(&dir.join("mixing.csv"), &buf)?;
        buf.clear();
        write_matrix_csv(l.matrix(), &mut buf)?;
        write_atomic(&dir.join("laplacian.csv"), &buf)?;
    }
    Ok(())
}

fn load_scenario(file: &Option<PathBuf>, preset_name: &Option<String>) -> CliResult<Scenario> {
    match (file, preset_name) {
        (Some(f), _) => {
            let text = fs::read_to_string(f)
                .map_err(|e| CliError::Config(format!("{}: {e}", f.display())))?;
            Scenario::from_toml(&text).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", f.display())),
                other => other,
            })
        }
        (None, Some(p)) => preset(p),
        (None, None) => Err(CliError::Config("give a scenario file or --preset".into())),
    }
}

fn cmd_run(cli: &Cli, a: &RunArgs, out: &mut dyn Write) -> CliResult<()> {
    let sc = load_scenario(&a.file, &a.preset)?;
    let opts = RunOptions {
        seeds: cli.seed.map(|s| vec![s]),
        n_mc: cli.n_mc,
        tol: cli.tol,
        paper_scale: cli.paper_scale,
        no_theory: a.no_theory,
    };
    let res = run_scenario(&sc, &opts)?;
    writeln!(
        out,
        "{:>5} {:>10} {:>5} {:>10} {:>10} {:>10} {:>10}",
        "point", "x", "mode", "alpha", "min", "max", "theory"
    )?;
    let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    for s in summarize(&res) {
        writeln!(
            out,
            "{:>5} {:>10.4} {:>5} {:>10} {:>10} {:>10} {:>10}",
            s.point,
            s.x,
            s.mode,
            f(s.mean),
            f(s.min),
            f(s.max),
            f(s.theory)
        )?;
    }
    let dir = cli
        .out
        .clone()
        .or_else(|| sc.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(&sc.name));
    let files = write_outputs(&res, &dir)?;
    writeln!(out, "wrote {} files to {}", files.len(), dir.display())?;
    Ok(())
}

pub fn load_contour(
    a: &ContourArgs,
    seed: Option<u64>,
    n_mc: Option<usize>,
) -> CliResult<ContourScenario> {
    let mut sc = if let Some(f) = &a.file {
        ContourScenario::from_toml(&fs::read_to_string(f)?)?
    } else if let Some(p) = &a.preset {
        ContourScenario::from_toml(preset_text(p)?)?
    } else {
        if a.n_min == 0 || a.n_max < a.n_min {
            return Err(CliError::Config("need 1 <= n-min <= n-max".into()));
        }
        let spec = crate::scenario::ContourSpec {
            engine: if a.engine == "d1" {
                ContourKind::D1
            } else {
                ContourKind::General
            },
            d: a.d,
            b: a.b,
            sigma: a.sigma,
            eta: Grid::Range {
                min: a.eta_min,
                max: a.eta_max,
                points: a.eta_points,
                log: a.log,
            },
            n: Grid::List((a.n_min..=a.n_max).map(|n| n as f64).collect()),
            n_mc: 20_000,
            seed: 7,
        };
        let text = toml::to_string(&ContourScenario {
            name: "contour".into(),
            out: None,
            contour: spec,
        })
        .map_err(|e| CliError::Config(e.to_string()))?;
        ContourScenario::from_toml(&text)?
    };
    if let Some(s) = seed {
        sc.contour.seed = s;
    }
    if let Some(m) = n_mc {
        sc.contour.n_mc = m;
    }
    Ok(sc)
}

pub fn compute_contour(sc: &ContourScenario) -> CliResult<ContourGrid> {
    let c = &sc.contour;
    if c.engine == ContourKind::D1 && c.d != 1 {
        return Err(CliError::Config(
            "field `contour.d`: the d1 engine needs d = 1".into(),
        ));
    }
    let engine = match c.engine {
        ContourKind::D1 => ContourEngine::OneDim {
            b: c.b,
            sigma: c.sigma,
        },
        ContourKind::General => ContourEngine::GeneralD {
            d: c.d,
            b: c.b,
            sigma: c.sigma,
            n_mc: c.n_mc,
            seed: c.seed,
        },
    };
    Ok(contour_grid(&sc.etas(), &sc.ns(), &engine)?)
}

/// Writes `contour.csv`, `zero_curve.csv` and `contour.svg` into `dir`.
pub fn write_contour(sc: &ContourScenario, grid: &ContourGrid, dir: &Path) -> CliResult<()> {
    prepare(dir)?;
    let mut rows = Vec::new();
    for (r, &n) in grid.ns.iter().enumerate() {
        for (c, &eta) in grid.etas.iter().enumerate() {
            let inst = grid
                .instability
                .as_ref()
                .map(|m| m[r][c].to_string())
                .unwrap_or_default();
            rows.push(vec![
                n.to_string(),
                eta.to_string(),
                grid.values[r][c].to_string(),
                inst,
            ]);
        }
    }
    write_csv_file(
        &dir.join("contour.csv"),
        &["N", "eta", "value", "rho_dis"],
        &rows,
    )?;
    let mut curves = Vec::new();
    for &(eta, n) in &grid.zero_curve {
        curves.push(vec!["sign".to_string(), eta.to_string(), n.to_string()]);
    }
    for &(eta, n) in &grid.instability_curve {
        curves.push(vec![
            "instability".to_string(),
            eta.to_string(),
            n.to_string(),
        ]);
    }
    write_csv_file(&dir.join("zero_curve.csv"), &["curve", "eta", "N"], &curves)?;
    let log = matches!(sc.contour.eta, Grid::Range { log: true, .. });
    write_atomic(
        &dir.join("contour.svg"),
        contour_plot(&sc.name, grid, log).as_bytes(),
    )
}

fn cmd_contour(cli: &Cli, a: &ContourArgs, out: &mut dyn Write) -> CliResult<()> {
    let sc = load_contour(a, cli.seed, cli.n_mc)?;
    let grid = compute_contour(&sc)?;
    writeln!(
        out,
        "grid: {} step sizes x {} node counts",
        grid.etas.len(),
        grid.ns.len()
    )?;
    writeln!(out, "zero curve points: {}", grid.zero_curve.len())?;
    for &(eta, n) in &grid.zero_curve {
        writeln!(out, "  N = {n:>3}  eta = {eta:.5}")?;
    }
    if grid.instability.is_some() {
        writeln!(
            out,
            "instability curve points: {}",
            grid.instability_curve.len()
        )?;
        for &(eta, n) in &grid.instability_curve {
            writeln!(out, "  N = {n:>3}  eta = {eta:.5}")?;
        }
    }
    let dir = cli
        .out
        .clone()
        .or_else(|| sc.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(&sc.name));
    write_contour(&sc, &grid, &dir)?;
    writeln!(
        out,
        "wrote contour.csv, zero_curve.csv, contour.svg to {}",
        dir.display()
    )?;
    Ok(())
}

pub fn threshold_report(
    a: &ThresholdArgs,
    n_mc: Option<usize>,
    seed: Option<u64>,
) -> CliResult<ThresholdReport> {
    let spec = match &a.preset {
        Some(p) => preset(p)?.points()?.remove(0).spec,
        None => a.problem.spec(a.eta),
    };
    let n_mc = n_mc.unwrap_or_else(|| default_n_mc(spec.d));
    Ok(thresholds(
        &spec,
        (a.eta_lo, a.eta_hi),
        n_mc,
        seed.unwrap_or(7),
    )?)
}

fn cmd_thresholds(cli: &Cli, a: &ThresholdArgs, out: &mut dyn Write) -> CliResult<()> {
    let t = threshold_report(a, cli.n_mc, cli.seed)?;
    let f = |v: Option<f64>| {
        v.map(|x| format!("{x:.6}"))
            .unwrap_or_else(|| "none".into())
    };
    writeln!(
        out,
        "N = {}, d = {}, b = {}, sigma = {}",
        t.n_nodes, t.d, t.b, t.sigma
    )?;
    writeln!(out, "tau           {:.6}", t.tau)?;
    writeln!(out, "tau_general   {:.6}", t.tau_general)?;
    writeln!(out, "tau_sign      {}", f(t.tau_sign))?;
    writeln!(out, "eta_crit      {}", f(t.eta_crit))?;
    writeln!(out, "eta_max       {}", f(t.eta_max))?;
    writeln!(out, "eta_crit_node {:.6}", t.eta_crit_node)?;
    writeln!(out, "eta_max_node  {}", f(t.eta_max_node))?;
    writeln!(
        out,
        "sigma2 threshold at eta = {}: {:.6}",
        t.eta, t.sigma2_threshold
    )?;
    writeln!(out, "case {:?} (bound: {:?})", t.case, t.case_bound)?;
    for n in &t.notes {
        writeln!(out, "note: {n}")?;
    }
    if let Some(dir) = out_dir(cli) {
        prepare(dir)?;
        write_atomic(
            &dir.join("thresholds.json"),
            &serde_json::to_vec_pretty(&t)?,
        )?;
    }
    Ok(())
}

fn cmd_theory(cli: &Cli, a: &TheoryArgs, out: &mut dyn Write) -> CliResult<()> {
    let m = mode(&a.mode)?;
    let spec = a.problem.spec(a.eta);
    spec.validate()?;
    let w = mixing_for(&spec, m, &a.kind, a.delta)?;
    let (eff, w) = match m {
        Mode::C => (spec.centralized(), MixingMatrix::identity(1)),
        Mode::Dis => (spec.clone(), MixingMatrix::identity(spec.n_nodes)),
        Mode::De => (spec.clone(), w),
    };
    let n_mc = cli.n_mc.unwrap_or_else(|| default_n_mc(spec.d));
    let mf = MomentFunction::new(&eff, &w, n_mc, cli.seed.unwrap_or(7))?;
    let mut report = TheoryReport::new(mf.digest.clone());
    let rho = mf.rho();
    report.estimate("rho_hat", rho);
    writeln!(out, "engine {:?}, n_mc = {n_mc}", mf.engine)?;
    writeln!(out, "rho_hat  = {:.6} +- {:.2e}", rho.value, rho.stderr)?;
    for &s in &a.s {
        let h = mf.h(s);
        report.estimate(&format!("h_{s}"), h);
        writeln!(out, "h({s})   = {:.6} +- {:.2e}", h.value, h.stderr)?;
    }
    let root = alpha_hat_root_tol(&mf, cli.tol.unwrap_or(1e-4));
    if let Ok(r) = &root {
        report.exact("alpha_hat", r.alpha, Method::Mc);
        report.exact("alpha_lo", r.alpha_lo, Method::Mc);
        report.exact("alpha_hi", r.alpha_hi, Method::Mc);
        writeln!(
            out,
            "alpha_hat = {:.6} in [{:.6}, {:.6}]",
            r.alpha, r.alpha_lo, r.alpha_hi
        )?;
    }
    if let Some(dir) = out_dir(cli) {
        prepare(dir)?;
        write_atomic(&dir.join("theory.json"), report.to_json().as_bytes())?;
    }
    root.map(|_| ()).map_err(CliError::from)
}

/// Steps whose weights are concentrated on fewer runs than this are not
/// judged against the bound.
const MIN_RATIO_ESS: f64 = 50.0;

fn cmd_couple(cli: &Cli, a: &CoupleArgs, out: &mut dyn Write) -> CliResult<()> {
    let spec = a.problem.spec(a.eta);
    spec.validate()?;
    let w = mixing_for(&spec, Mode::De, &a.kind, a.delta)?;
    let seed = cli.seed.unwrap_or(0);
    let cfg = RunConfig::new(
        spec.clone(),
        Some(w.clone()),
        Mode::De,
        a.k.max(1),
        0,
        a.r,
        seed,
    )?
    .with_sampler(Sampler::Explicit);
    let trace = run_coupled(&cfg, a.p)?;
    let n_mc = cli.n_mc.unwrap_or_else(|| default_n_mc(spec.d));
    let h = MomentFunction::new(&spec, &w, n_mc, rng::derive(seed, 1))?.h(a.p);
    let limit = h.value + 3.0 * h.stderr;
    let usable: Vec<usize> = (0..trace.ratios.len())
        .filter(|&k| trace.ratios[k].is_finite() && trace.ratio_ess[k] >= MIN_RATIO_ESS)
        .collect();
    let worst = usable
        .iter()
        .map(|&k| trace.ratios[k] - 3.0 * trace.ratio_stderr[k])
        .fold(f64::NEG_INFINITY, f64::max);
    writeln!(out, "h({}) = {:.6} +- {:.2e}", a.p, h.value, h.stderr)?;
    writeln!(
        out,
        "steps with effective sample size >= {MIN_RATIO_ESS}: {} of {}",
        usable.len(),
        trace.ratios.len()
    )?;
    writeln!(out, "largest per-step ratio (minus 3 stderr): {worst:.6}")?;
    writeln!(out, "contraction within bound: {}", worst <= limit)?;
    if let Some(dir) = out_dir(cli) {
        prepare(dir)?;
        let rows: Vec<Vec<String>> = (0..trace.moments.len())
            .map(|k| {
                let (r, rs, ess) = if k < trace.ratios.len() {
                    (
                        trace.ratios[k].to_string(),
                        trace.ratio_stderr[k].to_string(),
                        trace.ratio_ess[k].to_string(),
                    )
                } else {
                    (String::new(), String::new(), String::new())
                };
                vec![
                    k.to_string(),
                    trace.moments[k].to_string(),
                    trace.stderr[k].to_string(),
                    r,
                    rs,
                    ess,
                ]
            })
            .collect();
        write_csv_file(
            &dir.join("coupling.csv"),
            &[
                "k",
                "moment",
                "stderr",
                "ratio",
                "ratio_stderr",
                "ratio_ess",
            ],
            &rows,
        )?;
    }
    Ok(())
}

fn cmd_calibrate(cli: &Cli, a: &CalibrateArgs, out: &mut dyn Write) -> CliResult<()> {
    use rayon::prelude::*;
    if a.k < 16 {
        return Err(CliError::Config("--k must be at least 16".into()));
    }
    let seed = cli.seed.unwrap_or(0);
    let results: Vec<(f64, f64)> = a
        .alphas
        .par_iter()
        .enumerate()
        .map(|(j, &alpha)| {
            if !(alpha > 0.0 && alpha <= 2.0) {
                return Err(CliError::Config(format!(
                    "stable index {alpha} outside (0, 2]"
                )));
            }
            let mut r = rng::stream(rng::derive(seed, j as u64));
            let xs: Vec<f64> = (0..a.k).map(|_| sample_stable(alpha, &mut r)).collect();
            Ok((alpha, estimate_alpha(&xs)?.alpha))
        })
        .collect::<CliResult<_>>()?;
    writeln!(out, "{:>8} {:>10} {:>10}", "alpha", "estimate", "error")?;
    for &(alpha, est) in &results {
        writeln!(out, "{alpha:>8.3} {est:>10.4} {:>10.4}", est - alpha)?;
    }
    if let Some(dir) = out_dir(cli) {
        prepare(dir)?;
        let rows: Vec<Vec<String>> = results
            .iter()
            .map(|(a, e)| vec![a.to_string(), e.to_string()])
            .collect();
        write_csv_file(&dir.join("calibration.csv"), &["alpha", "estimate"], &rows)?;
    }
    Ok(())
}
