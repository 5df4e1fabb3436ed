//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Set `ACCEPTANCE_ONLY=3,7` to
//! run a subset. The process exits with status 0 either way so that failing
//! criteria are reported rather than hidden behind a test-runner abort.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use rand_distr::{Distribution, Exp1, StandardNormal, Uniform};

use dsgd_tails::kit::ScaledChiSquare;
use dsgd_tails::recursion::{run_coupled, run_ensemble, IterateEnsemble, Mode, RunConfig};
use dsgd_tails::rng;
use dsgd_tails::stats::mean_stderr;
use dsgd_tails::synthdata::{ProblemSpec, Sampler};
use dsgd_tails::tailest::{estimate_alpha, estimate_ensemble, MIN_SAMPLES};
use dsgd_tails::theory::closed::{prob_min_max, scalar_log_moment, sign_probabilities};
use dsgd_tails::theory::*;
use dsgd_tails::topology::*;

use dsgd_tails_cli::commands::compute_contour;
use dsgd_tails_cli::experiment::{run_scenario, RunOptions};
use dsgd_tails_cli::rows::ResultRow;
use dsgd_tails_cli::scenario::{preset, preset_text, ContourScenario};

struct Outcome {
    pass: bool,
    lines: Vec<String>,
}

impl Outcome {
    fn new() -> Outcome {
        Outcome {
            pass: true,
            lines: Vec::new(),
        }
    }

    /// Records one sub-check.
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        self.lines
            .push(format!("{} {what}", if ok { "ok  " } else { "FAIL" }));
        self.pass &= ok;
    }

    fn info(&mut self, what: impl Into<String>) {
        self.lines.push(format!("     {}", what.into()));
    }
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(usize, &str, f64, fn() -> Outcome); 10] = [
        (1, "topology exactness", 1.0, c1_topology),
        (2, "estimator calibration", 30.0, c2_calibration),
        (3, "theory cross-validation", 300.0, c3_theory),
        (4, "monotonicity", 300.0, c4_monotonicity),
        (5, "ordering claims", 1200.0, c5_orderings),
        (6, "case reproduction", 1800.0, c6_cases),
        (7, "contours", 600.0, c7_contours),
        (8, "moment bounds and contraction", 300.0, c8_moment_bounds),
        (9, "perturbation expansion", 60.0, c9_perturbation),
        (10, "sandwich bounds", 300.0, c10_sandwich),
    ];
    let mut summary = Vec::new();
    for (id, name, budget, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let mut out = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(o) => o,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                let mut o = Outcome::new();
                o.check(false, format!("panicked: {msg}"));
                o
            }
        };
        let secs = start.elapsed().as_secs_f64();
        out.check(
            secs < budget,
            format!("runtime {secs:.1}s within {budget}s"),
        );
        for l in &out.lines {
            println!("    [{id}] {l}");
        }
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        let line = format!("criterion {id:>2} ({name}): {verdict} [{secs:.1}s]");
        println!("{line}");
        summary.push(line);
    }
    println!();
    println!("acceptance summary");
    for l in &summary {
        println!("{l}");
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn normals(seed: u64, n: usize, k: usize) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed);
    (0..n)
        .map(|_| (0..k).map(|_| StandardNormal.sample(&mut r)).collect())
        .collect()
}

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        acc += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// `E |1 - eta a^2|^s` for `a ~ N(0,1)`, Simpson in `|a|` split at the kink.
fn scalar_h_oracle(eta: f64, s: f64) -> f64 {
    let z0 = 1.0 / eta.sqrt();
    let f = |z: f64| {
        (1.0 - eta * z * z).abs().powf(s)
            * (-0.5 * z * z).exp()
            * (2.0 / std::f64::consts::PI).sqrt()
    };
    simpson(&f, 0.0, z0, 20_000) + simpson(&f, z0, z0 + 40.0, 200_000)
}

fn oracle_root(eta: f64) -> f64 {
    let (mut lo, mut hi) = (1e-3, 64.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if scalar_h_oracle(eta, mid) > 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn root(spec: &ProblemSpec, w: &MixingMatrix, n_mc: usize, seed: u64) -> AlphaRoot {
    let mf = MomentFunction::new(spec, w, n_mc, seed).expect("moment function");
    alpha_hat_root(&mf)
        .unwrap_or_else(|e| panic!("root for b={:?} eta={}: {e}", spec.batch_sizes, spec.eta))
}

/// Empirical tail index per seed for one configuration, cached across criteria.
fn empirical(
    spec: &ProblemSpec,
    w: Option<&MixingMatrix>,
    mode: Mode,
    runs: usize,
    seeds: &[u64],
) -> Vec<f64> {
    static CACHE: OnceLock<std::sync::Mutex<HashMap<String, Vec<f64>>>> = OnceLock::new();
    let key = format!(
        "{spec:?}|{:?}|{mode:?}|{runs}|{seeds:?}",
        w.map(|m| m.matrix().as_slice().to_vec())
    );
    let cache = CACHE.get_or_init(Default::default);
    if let Some(v) = cache.lock().unwrap().get(&key) {
        return v.clone();
    }
    let v: Vec<f64> = seeds
        .iter()
        .map(|&s| {
            let cfg = RunConfig::new(spec.clone(), w.cloned(), mode, 2000, 400, runs, s).unwrap();
            estimate_ensemble(&run_ensemble(&cfg), MIN_SAMPLES)
                .map(|e| e.alpha_hat)
                .unwrap_or(f64::NAN)
        })
        .collect();
    cache.lock().unwrap().insert(key, v.clone());
    v
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

// ---------------------------------------------------------------------------
// 1. Topology
// ---------------------------------------------------------------------------

/// Laplacian entries family by family, from 1-based formulas.
fn closed_form(kind: GraphKind, n: usize, i: i64, j: i64) -> i64 {
    let nn = n as i64;
    let h = nn / 2;
    match kind {
        GraphKind::Complete => {
            if i == j {
                nn - 1
            } else {
                -1
            }
        }
        GraphKind::Star => match (i, j) {
            (1, 1) => nn - 1,
            (1, _) | (_, 1) => -1,
            _ if i == j => 1,
            _ => 0,
        },
        GraphKind::Cycle => {
            let gap = (i - j).abs();
            if i == j {
                2
            } else if gap == 1 || gap == nn - 1 {
                -1
            } else {
                0
            }
        }
        GraphKind::Bipartite => {
            if i == j {
                h
            } else if (i <= h) != (j <= h) {
                -1
            } else {
                0
            }
        }
        GraphKind::Barbell => {
            if i == j {
                if i == 1 || i == h + 1 {
                    h
                } else {
                    h - 1
                }
            } else if (i <= h) == (j <= h) || (i.min(j) == 1 && i.max(j) == h + 1) {
                -1
            } else {
                0
            }
        }
        GraphKind::Path => {
            if i == j {
                if i == 1 || i == nn {
                    1
                } else {
                    2
                }
            } else if (i - j).abs() == 1 {
                -1
            } else {
                0
            }
        }
        _ => unreachable!(),
    }
}

fn c1_topology() -> Outcome {
    let mut o = Outcome::new();
    let families = [
        GraphKind::Complete,
        GraphKind::Star,
        GraphKind::Cycle,
        GraphKind::Bipartite,
        GraphKind::Barbell,
        GraphKind::Path,
    ];
    for kind in families {
        let mut checked = 0;
        let mut mismatches = 0;
        for n in 2..=16 {
            if !kind.accepts(n) {
                continue;
            }
            let l = integer_laplacian(&build_graph(kind, n).unwrap());
            for i in 0..n {
                for j in 0..n {
                    if l[i][j] != closed_form(kind, n, i as i64 + 1, j as i64 + 1) {
                        mismatches += 1;
                    }
                }
            }
            checked += 1;
        }
        o.check(
            mismatches == 0,
            format!("{kind}: {checked} node counts, {mismatches} mismatched entries"),
        );
    }
    let mut expected: Vec<Vec<i64>> = vec![vec![1, -1], vec![-1, 1]];
    let mut ok = true;
    for dim in 1..=4 {
        let n = 1usize << dim;
        ok &= integer_laplacian(&build_graph(GraphKind::Hypercube, n).unwrap()) == expected;
        let m = expected.len();
        let mut next = vec![vec![0i64; 2 * m]; 2 * m];
        for i in 0..m {
            for j in 0..m {
                let v = expected[i][j] + i64::from(i == j);
                next[i][j] = v;
                next[i + m][j + m] = v;
            }
            next[i][i + m] = -1;
            next[i + m][i] = -1;
        }
        expected = next;
    }
    o.check(ok, "hypercube block recursion for dimensions 1..4");
    o
}

// ---------------------------------------------------------------------------
// 2. Estimator calibration
// ---------------------------------------------------------------------------

/// Chambers-Mallows-Stuck draw of a standard symmetric stable variate.
fn cms(alpha: f64, u: f64, w: f64) -> f64 {
    (alpha * u).sin() / u.cos().powf(1.0 / alpha)
        * (((1.0 - alpha) * u).cos() / w).powf((1.0 - alpha) / alpha)
}

fn c2_calibration() -> Outcome {
    let mut o = Outcome::new();
    let k = 1_000_000;
    let half = std::f64::consts::FRAC_PI_2;
    let unif = Uniform::new(-half, half).unwrap();
    let mut first = Vec::new();
    for (j, alpha) in [0.8, 1.2, 1.5, 1.8, 2.0].into_iter().enumerate() {
        let mut r = rng::stream(rng::derive(2024, j as u64));
        let xs: Vec<f64> = (0..k)
            .map(|_| {
                let u: f64 = unif.sample(&mut r);
                let w: f64 = Exp1.sample(&mut r);
                cms(alpha, u, w)
            })
            .collect();
        let e = estimate_alpha(&xs).unwrap();
        o.check(
            (e.alpha - alpha).abs() <= 0.1,
            format!("alpha {alpha}: estimate {:.4}", e.alpha),
        );
        if j == 0 {
            first = xs;
        }
    }
    let base = estimate_alpha(&first).unwrap();
    for c in [2.0, 0.25, 1024.0, 2f64.powi(-30)] {
        let y: Vec<f64> = first.iter().map(|x| c * x).collect();
        let e = estimate_alpha(&y).unwrap();
        o.check(
            e.alpha == base.alpha && e.raw == base.raw,
            format!("scale {c:e}: bit-identical estimate"),
        );
    }
    for c in [3.7, 1e-3, 1e5] {
        let y: Vec<f64> = first.iter().map(|x| c * x).collect();
        let e = estimate_alpha(&y).unwrap();
        let diff = (e.raw - base.raw).abs();
        o.check(
            diff <= 1e-10,
            format!("scale {c:e}: |difference| = {diff:.1e}"),
        );
    }
    o
}

// ---------------------------------------------------------------------------
// 3. Theory cross-validation
// ---------------------------------------------------------------------------

fn within(o: &mut Outcome, name: &str, closed: f64, mc: f64, se: f64) {
    let z = (closed - mc).abs() / se;
    o.check(
        z <= 3.0,
        format!("{name}: closed {closed:.6} vs MC {mc:.6} ({z:.2} stderr)"),
    );
}

/// Batch means `X_i` of one draw, from standard normals.
fn batch_means(row: &[f64], batches: &[usize]) -> Vec<f64> {
    let mut at = 0;
    batches
        .iter()
        .map(|&b| {
            let x = row[at..at + b].iter().map(|v| v * v).sum::<f64>() / b as f64;
            at += b;
            x
        })
        .collect()
}

fn c3_theory() -> Outcome {
    let mut o = Outcome::new();
    let id = MixingMatrix::identity(1);
    for i in 0..10 {
        let eta = 0.5 + 0.15 * i as f64;
        let spec = ProblemSpec::homogeneous(1, 1, 1, eta, 1.0, 1.0);
        let a = root(&spec, &id, 1_000_000, 300 + i);
        let want = oracle_root(eta);
        o.check(
            (a.alpha - want).abs() < 0.05,
            format!(
                "eta {eta:.2}: MC root {:.4} vs quadrature {want:.4}",
                a.alpha
            ),
        );
    }

    let m = 400_000;
    for (n, b, eta, seed) in [
        (1usize, 1usize, 1.0, 11u64),
        (4, 1, 0.7, 12),
        (10, 1, 2.0, 13),
        (6, 3, 1.4, 14),
    ] {
        let kit = ScaledChiSquare::batch_mean(b, 1.0);
        let p = prob_min_max(2.0 / eta, n, &kit).unwrap();
        let e = e_term(eta, n, &kit).unwrap();
        let z = normals(seed, m, n * b);
        let hits: Vec<f64> = z
            .iter()
            .map(|row| {
                let xs = batch_means(row, &vec![b; n]);
                let lo = min(&xs);
                let hi = max(&xs);
                f64::from(lo + hi < 2.0 / eta)
            })
            .collect();
        let (mc, se) = mean_stderr(&hits);
        within(
            &mut o,
            &format!("P(min + max < 2/eta) N={n} b={b} eta={eta}"),
            p,
            mc,
            se.max(1e-4),
        );
        let signs: Vec<f64> = hits.iter().map(|h| 1.0 - 2.0 * h).collect();
        let (mc, se) = mean_stderr(&signs);
        within(
            &mut o,
            &format!("sign term N={n} b={b} eta={eta}"),
            e,
            mc,
            se.max(2e-4),
        );
    }

    for (n, b, eta, seed) in [
        (1usize, 1usize, 0.8, 21u64),
        (3, 1, 0.5, 22),
        (8, 4, 0.6, 23),
    ] {
        let law = MaxAbsLaw::homogeneous(eta, n, b, 1.0).unwrap();
        let alpha = law.alpha().unwrap();
        let den = denominator_expectation(&law, alpha).unwrap();
        let z = normals(seed, m, n * b);
        let g: Vec<f64> = z
            .iter()
            .map(|row| {
                batch_means(row, &vec![b; n])
                    .iter()
                    .map(|x| (1.0 - eta * x).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        let v: Vec<f64> = g.iter().map(|g| g.ln() * g.powf(alpha)).collect();
        let (mc, se) = mean_stderr(&v);
        within(
            &mut o,
            &format!("E[log G G^alpha] N={n} b={b} eta={eta}"),
            den,
            mc,
            se,
        );
        let v: Vec<f64> = g.iter().map(|g| g.ln()).collect();
        let (mc, se) = mean_stderr(&v);
        within(
            &mut o,
            &format!("E log G N={n} b={b} eta={eta}"),
            law.rho().unwrap(),
            mc,
            se,
        );
        let v: Vec<f64> = g.iter().map(|g| g.powf(1.3)).collect();
        let (mc, se) = mean_stderr(&v);
        within(
            &mut o,
            &format!("E G^1.3 N={n} b={b} eta={eta}"),
            law.h(1.3).unwrap(),
            mc,
            se,
        );
    }

    let z = normals(31, m, 1);
    for eta in [0.4, 1.2] {
        let v: Vec<f64> = z
            .iter()
            .map(|r| (1.0 - eta * r[0] * r[0]).abs().ln())
            .collect();
        let (mc, se) = mean_stderr(&v);
        within(
            &mut o,
            &format!("E log|1 - eta a^2| eta={eta}"),
            scalar_log_moment(eta, 1.0).unwrap().value,
            mc,
            se,
        );
    }

    // Heterogeneous batches: which node attains G, and on which side of 1/eta.
    let batches = [1usize, 3, 2];
    let eta = 0.9;
    let kits: Vec<ScaledChiSquare> = batches
        .iter()
        .map(|&b| ScaledChiSquare::batch_mean(b, 1.0))
        .collect();
    let sp = sign_probabilities(&MaxAbsLaw::new(eta, kits).unwrap()).unwrap();
    let z = normals(41, m, batches.iter().sum());
    let mut t1 = vec![vec![0.0; m]; 3];
    let mut t2 = vec![vec![0.0; m]; 3];
    for (r, row) in z.iter().enumerate() {
        let xs = batch_means(row, &batches);
        let (i, _) =
            xs.iter()
                .map(|x| (1.0 - eta * x).abs())
                .enumerate()
                .fold(
                    (0, -1.0),
                    |acc, (i, g)| if g > acc.1 { (i, g) } else { acc },
                );
        if 1.0 - eta * xs[i] > 0.0 {
            t1[i][r] = 1.0;
        } else {
            t2[i][r] = 1.0;
        }
    }
    for i in 0..3 {
        let (mc, se) = mean_stderr(&t1[i]);
        within(
            &mut o,
            &format!("T1[{i}] batches {batches:?}"),
            sp.t1[i],
            mc,
            se.max(1e-4),
        );
        let (mc, se) = mean_stderr(&t2[i]);
        within(
            &mut o,
            &format!("T2[{i}] batches {batches:?}"),
            sp.t2[i],
            mc,
            se.max(1e-4),
        );
    }

    // Closed forms in erf / exp for one and two unit-batch nodes.
    let kit = ScaledChiSquare::squared_feature(1.0);
    let e1 = e_term(0.5, 1, &kit).unwrap();
    let e2 = e_term(0.5, 2, &kit).unwrap();
    let w1 = 1.0 - 2.0 * statrs::function::erf::erf(1.0);
    let w2 = 1.0 - 2.0 * (1.0 - (-2.0f64).exp());
    o.check(
        (e1 - w1).abs() < 1e-7 && (e2 - w2).abs() < 1e-7,
        format!("erf/exp closed forms: {e1:.8} vs {w1:.8}, {e2:.8} vs {w2:.8}"),
    );

    // Monte-Carlo general-d expansion against the quadrature version at d = 1.
    for (eta, b) in [(0.6, 4usize), (1.0, 8)] {
        let spec = ProblemSpec::homogeneous(1, 3, b, eta, 1.0, 1.0);
        let q = expansion_general_b(eta, b, 1.0, &[2.0; 3], None).unwrap();
        let mc = expansion_general_d_mc(&spec, &[2.0; 3], Some(q.alpha_dis), 400_000, 5).unwrap();
        within(
            &mut o,
            &format!("general-d sign term eta={eta} b={b}"),
            q.sign_term,
            mc.sign_term,
            mc.sign_term_stderr,
        );
        within(
            &mut o,
            &format!("general-d correction eta={eta} b={b}"),
            q.correction,
            mc.correction,
            mc.correction_stderr,
        );
    }
    o
}

// ---------------------------------------------------------------------------
// 4. Monotonicity
// ---------------------------------------------------------------------------

fn monotone_steps(o: &mut Outcome, label: &str, xs: &[f64], roots: &[AlphaRoot], increasing: bool) {
    let vals: Vec<String> = xs
        .iter()
        .zip(roots)
        .map(|(x, r)| format!("{x}: {:.4}±{:.4}", r.alpha, r.uncertainty()))
        .collect();
    o.info(format!("{label}: {}", vals.join(", ")));
    for k in 1..roots.len() {
        let step = if increasing {
            roots[k].alpha - roots[k - 1].alpha
        } else {
            roots[k - 1].alpha - roots[k].alpha
        };
        let pooled = roots[k].uncertainty().hypot(roots[k - 1].uncertainty());
        o.check(
            step > pooled,
            format!(
                "{label} {} -> {}: step {step:.4} vs pooled uncertainty {pooled:.4}",
                xs[k - 1],
                xs[k]
            ),
        );
    }
}

fn c4_monotonicity() -> Outcome {
    let mut o = Outcome::new();
    let n_mc = 400_000;
    let id1 = MixingMatrix::identity(1);
    let etas = [0.5, 0.75, 1.0, 1.25, 1.5, 1.75];
    let r: Vec<AlphaRoot> = etas
        .iter()
        .map(|&e| {
            root(
                &ProblemSpec::homogeneous(1, 1, 1, e, 1.0, 1.0),
                &id1,
                n_mc,
                41,
            )
        })
        .collect();
    monotone_steps(&mut o, "single node d=1 b=1, eta", &etas, &r, false);

    let bs = [1.0, 2.0, 4.0, 8.0];
    let r: Vec<AlphaRoot> = bs
        .iter()
        .map(|&b| {
            root(
                &ProblemSpec::homogeneous(1, 1, b as usize, 1.0, 1.0, 1.0),
                &id1,
                n_mc,
                42,
            )
        })
        .collect();
    monotone_steps(&mut o, "single node d=1 eta=1, b", &bs, &r, true);

    let w = build_mixing(GraphKind::Complete, 3, 0.1).unwrap();
    let etas = [0.5, 0.6, 0.7, 0.8];
    let r: Vec<AlphaRoot> = etas
        .iter()
        .map(|&e| {
            root(
                &ProblemSpec::homogeneous(1, 3, 4, e, 1.0, 1.0),
                &w,
                n_mc,
                43,
            )
        })
        .collect();
    monotone_steps(&mut o, "network N=3 d=1 b=4, eta", &etas, &r, false);
    let bs3 = [2.0, 4.0, 8.0];
    let r: Vec<AlphaRoot> = bs3
        .iter()
        .map(|&b| {
            root(
                &ProblemSpec::homogeneous(1, 3, b as usize, 0.8, 1.0, 1.0),
                &w,
                n_mc,
                44,
            )
        })
        .collect();
    monotone_steps(&mut o, "network N=3 d=1 eta=0.8, b", &bs3, &r, true);

    let w = build_mixing(GraphKind::Cycle, 4, 0.2).unwrap();
    let etas = [0.4, 0.45, 0.5, 0.55];
    let r: Vec<AlphaRoot> = etas
        .iter()
        .map(|&e| {
            root(
                &ProblemSpec::homogeneous(3, 4, 8, e, 1.0, 1.0),
                &w,
                100_000,
                45,
            )
        })
        .collect();
    monotone_steps(&mut o, "network N=4 d=3 b=8, eta", &etas, &r, false);
    let bs4 = [4.0, 6.0, 8.0, 12.0];
    let r: Vec<AlphaRoot> = bs4
        .iter()
        .map(|&b| {
            root(
                &ProblemSpec::homogeneous(3, 4, b as usize, 0.45, 1.0, 1.0),
                &w,
                100_000,
                46,
            )
        })
        .collect();
    monotone_steps(&mut o, "network N=4 d=3 eta=0.45, b", &bs4, &r, true);
    o
}

// ---------------------------------------------------------------------------
// 5. Orderings
// ---------------------------------------------------------------------------

fn c5_orderings() -> Outcome {
    let mut o = Outcome::new();
    let runs = 1600;

    // Disconnected versus centralized with the pooled batch.
    let eta = 1.8;
    let node = MaxAbsLaw::homogeneous(eta, 1, 1, 1.0)
        .unwrap()
        .alpha()
        .unwrap();
    let mut gaps_theory = Vec::new();
    let mut gaps_emp = Vec::new();
    for n in [2usize, 5, 10] {
        let pooled = MaxAbsLaw::homogeneous(eta, 1, n, 1.0)
            .unwrap()
            .alpha()
            .unwrap();
        let spec = ProblemSpec::homogeneous(1, n, 1, eta, 1.0, 1.0);
        let mc_c = root(&spec.centralized(), &MixingMatrix::identity(1), 400_000, 51);
        o.check(
            (mc_c.alpha - pooled).abs() < 0.05 + 3.0 * mc_c.uncertainty(),
            format!(
                "C(bN={n}) root: MC {:.4} vs quadrature {pooled:.4}",
                mc_c.alpha
            ),
        );
        let dis = empirical(&spec, None, Mode::Dis, runs, &SEEDS);
        let c = empirical(&spec, None, Mode::C, runs, &SEEDS);
        o.check(
            node < pooled,
            format!("theory eta={eta} N={n}: Dis {node:.4} < C {pooled:.4}"),
        );
        o.check(
            max(&dis) < min(&c),
            format!("empirical N={n}: Dis {} below C {}", fmt(&dis), fmt(&c)),
        );
        gaps_theory.push(pooled - node);
        gaps_emp.push(mean(&c) - mean(&dis));
    }
    o.check(
        gaps_theory.windows(2).all(|w| w[1] > w[0]),
        format!("theory gap increases in N: {}", fmt(&gaps_theory)),
    );
    o.check(
        gaps_emp.windows(2).all(|w| w[1] > w[0]),
        format!("empirical gap increases in N: {}", fmt(&gaps_emp)),
    );

    // Bound-level version with a stable disconnected bound.
    // A pooled root beyond the probe limit counts as an infinite index.
    let (eta, b) = (0.6, 4usize);
    let mut gaps = Vec::new();
    for n in [2usize, 5, 10] {
        let dis = MaxAbsLaw::homogeneous(eta, n, b, 1.0)
            .unwrap()
            .alpha()
            .unwrap();
        let c = match MaxAbsLaw::homogeneous(eta, 1, b * n, 1.0).unwrap().alpha() {
            Err(dsgd_tails::Error::NoRootLight { .. }) => f64::INFINITY,
            r => r.unwrap(),
        };
        o.check(
            dis < c,
            format!("bound eta={eta} b={b} N={n}: Dis {dis:.4} < C {c:.4}"),
        );
        gaps.push(c - dis);
    }
    o.check(
        gaps.windows(2).all(|w| w[1] > w[0]),
        format!("bound gap increases in N: {}", fmt(&gaps)),
    );

    // Small delta, both sides of the sign threshold, bound stable on both.
    let (b, n, delta) = (4usize, 3usize, 0.02);
    let w = build_mixing(GraphKind::Complete, n, delta).unwrap();
    let tau = thresholds(
        &ProblemSpec::homogeneous(1, n, b, 1.0, 1.0, 1.0),
        (0.05, 5.0),
        100,
        1,
    )
    .unwrap()
    .tau_sign
    .unwrap();
    o.info(format!("sign threshold for N={n} b={b}: {tau:.4}"));
    let mut engine_signs = Vec::new();
    for eta in [0.87, 1.17] {
        let spec = ProblemSpec::homogeneous(1, n, b, eta, 1.0, 1.0);
        let de = root(&spec, &w, 400_000, 52);
        let dis = root(&spec, &MixingMatrix::identity(n), 400_000, 52);
        let x = expansion_general_d_mc(&spec, w.laplacian_diag(), Some(dis.alpha), 400_000, 52)
            .unwrap();
        let first = x.alpha_of_delta(delta) - x.alpha_dis;
        let want = if eta < tau { 1.0 } else { -1.0 };
        o.check(
            first.signum() == want && -x.sign_term.signum() == want,
            format!(
                "engine eta={eta}: sign term {:.4}, first-order DE - Dis {first:+.4}",
                x.sign_term
            ),
        );
        engine_signs.push(first.signum());

        let gap = de.alpha - dis.alpha;
        let exact = x.correction_exact.unwrap();
        let weighted = -exact.value * delta;
        let slack = 3.0 * (de.uncertainty() + dis.uncertainty() + exact.stderr * delta);
        o.check(
            gap.signum() == weighted.signum() && (gap - weighted).abs() <= slack,
            format!("engine eta={eta}: root gap {gap:+.4} vs weighted first order {weighted:+.4} (slack {slack:.4})"),
        );
        o.info(format!(
            "eta={eta}: root gap sign {} the unweighted sign term prediction",
            if gap.signum() == want {
                "follows"
            } else {
                "does not follow"
            }
        ));
        if eta > tau {
            let c = root(&spec.centralized(), &MixingMatrix::identity(1), 400_000, 52);
            o.check(
                de.alpha + de.uncertainty() < c.alpha - c.uncertainty(),
                format!(
                    "engine eta={eta}: DE {:.4} heavier than C {:.4}",
                    de.alpha, c.alpha
                ),
            );
        }
    }
    o.check(
        engine_signs[0] != engine_signs[1],
        "engine first-order sign flips across the threshold",
    );

    // The same claims on simulated iterates.
    let (n, delta) = (3usize, 0.1);
    let w = build_mixing(GraphKind::Complete, n, delta).unwrap();
    let kit = ScaledChiSquare::squared_feature(1.0);
    let tau = thresholds(
        &ProblemSpec::homogeneous(1, n, 1, 1.0, 1.0, 1.0),
        (0.05, 5.0),
        100,
        1,
    )
    .unwrap()
    .tau_sign
    .unwrap();
    o.check(
        0.8 < tau && tau < 1.5,
        format!("engine threshold for N={n} b=1 is {tau:.4}, between the probes"),
    );
    for eta in [0.8, 1.5] {
        let spec = ProblemSpec::homogeneous(1, n, 1, eta, 1.0, 1.0);
        let e = e_term(eta, n, &kit).unwrap();
        let de = empirical(&spec, Some(&w), Mode::De, runs, &SEEDS);
        let dis = empirical(&spec, None, Mode::Dis, runs, &SEEDS);
        let diffs: Vec<f64> = de.iter().zip(&dis).map(|(a, b)| a - b).collect();
        let want = -e.signum();
        o.check(
            diffs.iter().all(|d| d.signum() == want),
            format!(
                "empirical eta={eta} (sign term {e:.3}): DE - Dis per seed {}",
                fmt(&diffs)
            ),
        );
        if eta == 1.5 {
            let c = empirical(&spec, None, Mode::C, runs, &SEEDS);
            let diffs: Vec<f64> = de.iter().zip(&c).map(|(a, b)| a - b).collect();
            o.check(
                diffs.iter().all(|&d| d < 0.0),
                format!("empirical eta={eta}: DE - C per seed {}", fmt(&diffs)),
            );
        }
    }
    o
}

// ---------------------------------------------------------------------------
// 6. Cases
// ---------------------------------------------------------------------------

fn case_rows(name: &str, modes: &[Mode]) -> (Vec<f64>, Vec<ResultRow>) {
    let mut sc = preset(name).unwrap();
    let v = sc.sweep.values.clone();
    sc.sweep.values = vec![v[0], v[v.len() - 1]];
    sc.modes = modes.to_vec();
    sc.seeds = SEEDS.to_vec();
    let out = run_scenario(
        &sc,
        &RunOptions {
            no_theory: true,
            ..Default::default()
        },
    )
    .unwrap();
    (sc.sweep.values, out.rows)
}

fn alphas(rows: &[ResultRow], eta: f64, mode: &str) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.eta == eta && r.mode == mode)
        .map(|r| r.alpha_hat_empirical.value().unwrap_or(f64::NAN))
        .collect()
}

fn divergence(rows: &[ResultRow], eta: f64) -> f64 {
    rows.iter()
        .filter(|r| r.eta == eta)
        .map(|r| r.divergence_fraction)
        .fold(0.0, f64::max)
}

fn c6_cases() -> Outcome {
    let mut o = Outcome::new();

    let (ends, rows) = case_rows("case1", &[Mode::De, Mode::Dis]);
    let (lo, hi) = (ends[0], ends[1]);
    let (de, dis) = (alphas(&rows, lo, "de"), alphas(&rows, lo, "dis"));
    o.check(
        mean(&de) >= 1.9 && mean(&dis) >= 1.9,
        format!("case1 eta={lo}: plateau DE {} Dis {}", fmt(&de), fmt(&dis)),
    );
    let (de, dis) = (alphas(&rows, hi, "de"), alphas(&rows, hi, "dis"));
    o.check(
        mean(&de) < 1.9 && max(&de) < min(&dis),
        format!(
            "case1 eta={hi}: DE {} heavier than Dis {}",
            fmt(&de),
            fmt(&dis)
        ),
    );

    let (ends, rows) = case_rows("case2", &[Mode::De, Mode::Dis]);
    let (lo, hi) = (ends[0], ends[1]);
    let (de, dis) = (alphas(&rows, lo, "de"), alphas(&rows, lo, "dis"));
    o.check(
        min(&de) > max(&dis),
        format!(
            "case2 eta={lo}: DE {} lighter than Dis {}",
            fmt(&de),
            fmt(&dis)
        ),
    );
    let (de, dis) = (alphas(&rows, hi, "de"), alphas(&rows, hi, "dis"));
    o.check(
        max(&de) < min(&dis),
        format!(
            "case2 eta={hi}: DE {} heavier than Dis {}",
            fmt(&de),
            fmt(&dis)
        ),
    );
    let div = divergence(&rows, lo).max(divergence(&rows, hi));
    o.check(
        div == 0.0,
        format!("case2 endpoints stable (largest divergence fraction {div})"),
    );

    let (ends, rows) = case_rows("case3", &[Mode::De, Mode::Dis, Mode::C]);
    for eta in ends {
        let (de, dis, c) = (
            alphas(&rows, eta, "de"),
            alphas(&rows, eta, "dis"),
            alphas(&rows, eta, "c"),
        );
        o.check(
            max(&dis) < min(&de) && max(&de) < min(&c),
            format!(
                "case3 eta={eta}: Dis {} < DE {} < C {}",
                fmt(&dis),
                fmt(&de),
                fmt(&c)
            ),
        );
    }
    o
}

// ---------------------------------------------------------------------------
// 7. Contours
// ---------------------------------------------------------------------------

fn c7_contours() -> Outcome {
    let mut o = Outcome::new();
    let sc = ContourScenario::from_toml(preset_text("contour-d1").unwrap()).unwrap();
    let g = compute_contour(&sc).unwrap();
    let sat = |v: f64| v.abs() >= 1.0 - 1e-12;
    let mut bad = 0;
    let mut pairs = 0;
    for r in 0..g.ns.len() {
        for c in 0..g.etas.len() {
            let v = g.values[r][c];
            for (w, along) in [
                (g.values[r].get(c + 1), "eta"),
                (g.values.get(r + 1).map(|row| &row[c]), "N"),
            ] {
                if let Some(&w) = w {
                    pairs += 1;
                    let ok = if sat(v) && sat(w) { w >= v } else { w > v };
                    if !ok {
                        bad += 1;
                        o.info(format!(
                            "not increasing along {along} at N={} eta={:.4}: {v} -> {w}",
                            g.ns[r], g.etas[c]
                        ));
                    }
                }
            }
        }
    }
    o.check(
        bad == 0,
        format!(
            "d=1 grid {}x{}: {pairs} neighbour pairs, {bad} violations",
            g.ns.len(),
            g.etas.len()
        ),
    );
    o.check(
        g.zero_curve.len() == g.ns.len(),
        format!("zero curve crosses all {} rows", g.ns.len()),
    );

    let runs = 1600;
    for (n, delta, eta) in [
        (3usize, 0.1, 0.8),
        (3, 0.1, 1.5),
        (2, 0.1, 1.0),
        (2, 0.1, 2.0),
    ] {
        let z = g.zero_curve.iter().find(|p| p.1 == n as f64).unwrap().0;
        let w = build_mixing(GraphKind::Complete, n, delta).unwrap();
        let spec = ProblemSpec::homogeneous(1, n, 1, eta, 1.0, 1.0);
        let de = empirical(&spec, Some(&w), Mode::De, runs, &SEEDS);
        let dis = empirical(&spec, None, Mode::Dis, runs, &SEEDS);
        let diffs: Vec<f64> = de.iter().zip(&dis).map(|(a, b)| a - b).collect();
        let want = if eta < z { 1.0 } else { -1.0 };
        o.check(
            diffs.iter().all(|d| d.signum() == want),
            format!(
                "probe N={n} eta={eta} ({} of curve at {z:.3}): DE - Dis per seed {}",
                if eta < z { "left" } else { "right" },
                fmt(&diffs)
            ),
        );
    }

    let sc = ContourScenario::from_toml(preset_text("contour-d100").unwrap()).unwrap();
    let g = compute_contour(&sc).unwrap();
    let inst = g.instability.as_ref().unwrap();
    o.check(
        g.zero_curve.len() == g.ns.len() && g.instability_curve.len() == g.ns.len(),
        format!(
            "d=100: red curve {} points, orange curve {} points",
            g.zero_curve.len(),
            g.instability_curve.len()
        ),
    );
    let mut region1 = 0;
    let mut region2 = 0;
    let mut region2_stable = 0;
    for r in 0..g.ns.len() {
        for c in 0..g.etas.len() {
            let (e, rho) = (g.values[r][c], inst[r][c]);
            if e < 0.0 && rho < 0.0 {
                region1 += 1;
            }
            if e > 0.0 {
                region2 += 1;
                if rho <= 0.0 {
                    region2_stable += 1;
                }
            }
        }
    }
    o.check(
        region1 > 0 && region2 > 0,
        format!("d=100: {region1} stable cells with e < 0, {region2} cells with e > 0"),
    );
    o.check(
        region2_stable == 0,
        format!("d=100: cells with e > 0 on the stable side: {region2_stable}"),
    );
    for (zp, ip) in g.zero_curve.iter().zip(&g.instability_curve) {
        o.info(format!(
            "N={}: instability at {:.4}, sign change at {:.4}",
            zp.1, ip.0, zp.0
        ));
    }
    o
}

// ---------------------------------------------------------------------------
// 8. Moment bounds and contraction
// ---------------------------------------------------------------------------

/// `E |q|^p` for the stacked noise term with `x_true = 0`.
fn noise_moment(spec: &ProblemSpec, p: f64, draws: usize, seed: u64) -> f64 {
    let mut r = rng::stream(seed);
    let v: Vec<f64> = (0..draws)
        .map(|_| {
            let mut sq = 0.0;
            for &b in &spec.batch_sizes {
                let mut q = vec![0.0; spec.d];
                for _ in 0..b {
                    let y: f64 =
                        spec.sigma_y * Distribution::<f64>::sample(&StandardNormal, &mut r);
                    for qc in q.iter_mut() {
                        let a: f64 =
                            spec.sigma * Distribution::<f64>::sample(&StandardNormal, &mut r);
                        *qc += spec.eta / b as f64 * a * y;
                    }
                }
                sq += q.iter().map(|x| x * x).sum::<f64>();
            }
            sq.sqrt().powf(p)
        })
        .collect();
    mean_stderr(&v).0
}

fn c8_moment_bounds() -> Outcome {
    let mut o = Outcome::new();
    let k_max = 200;
    let setups: [(&str, ProblemSpec, MixingMatrix, f64); 2] = [
        (
            "heavy",
            ProblemSpec::homogeneous(1, 1, 1, 1.6, 1.0, 1.0),
            MixingMatrix::identity(1),
            0.5,
        ),
        (
            "light",
            ProblemSpec::homogeneous(2, 3, 4, 0.3, 1.0, 1.0),
            build_mixing(GraphKind::Complete, 3, 0.2).unwrap(),
            1.5,
        ),
    ];
    for (label, spec, w, frac) in setups {
        let mf = MomentFunction::new(&spec, &w, 400_000, 81).unwrap();
        let alpha = alpha_hat_root(&mf).unwrap().alpha;
        let p = if label == "heavy" { frac * alpha } else { frac };
        let regime = if alpha <= 1.0 {
            "alpha <= 1"
        } else {
            "alpha > 1"
        };
        o.info(format!(
            "{label}: alpha_hat {alpha:.4} ({regime}), p = {p:.4}"
        ));
        let cfg = RunConfig::new(spec.clone(), Some(w.clone()), Mode::De, k_max, 0, 4000, 82)
            .unwrap()
            .with_trace(k_max);
        let ens: IterateEnsemble = run_ensemble(&cfg);
        let mom = ens.trace_moments(p);
        let e0 = mom[0].0;
        let eq1 = noise_moment(&spec, p, 200_000, 83);
        let mut worst = f64::NEG_INFINITY;
        for (k, &(m, se)) in mom.iter().enumerate() {
            let b = moment_bound(&mf, alpha, p, k, e0, eq1).unwrap().bound;
            worst = worst.max((m - 3.0 * se) / b);
        }
        o.check(
            worst <= 1.0,
            format!("{label}: max over k <= {k_max} of (moment - 3 se) / bound = {worst:.4}"),
        );

        let h = mf.h(p);
        let cfg = RunConfig::new(spec.clone(), Some(w.clone()), Mode::De, 60, 0, 4000, 84)
            .unwrap()
            .with_sampler(Sampler::Explicit);
        let t = run_coupled(&cfg, p).unwrap();
        let mut worst = f64::NEG_INFINITY;
        for (r, se) in t.ratios.iter().zip(&t.ratio_stderr) {
            if r.is_finite() {
                worst = worst.max(r - 3.0 * se);
            }
        }
        o.check(
            worst <= h.value + 3.0 * h.stderr,
            format!(
                "{label}: coupled per-step ratio (minus 3 se) {worst:.4} vs h(p) + 3 se {:.4}",
                h.value + 3.0 * h.stderr
            ),
        );
    }
    o
}

// ---------------------------------------------------------------------------
// 9. Perturbation expansion
// ---------------------------------------------------------------------------

fn c9_perturbation() -> Outcome {
    let mut o = Outcome::new();
    let deltas = [1e-2, 1e-3, 1e-4];
    let lap = laplacian(&build_graph(GraphKind::Complete, 3).unwrap())
        .matrix()
        .clone();
    for (d, b) in [(1usize, 1usize), (3, 4)] {
        let spec = ProblemSpec::homogeneous(d, 3, b, 0.7, 1.0, 1.0);
        let mut fails = 0;
        let mut worst = f64::INFINITY;
        for t in 0..20 {
            let (res, _) =
                perturbation_trial(&spec, &lap, &deltas, 1.7, rng::derive(90, t)).unwrap();
            if !res.decays(3.0) {
                fails += 1;
            }
            for (r, res) in res.ratios.windows(2).zip(res.residuals.windows(2)) {
                if res[1] > 1e-12 {
                    worst = worst.min(r[0] / r[1]);
                }
            }
        }
        o.check(fails == 0, format!("d={d} b={b}: {fails} of 20 draws fail the 3x decay (smallest decay factor {worst:.1})"));
    }
    o
}

// ---------------------------------------------------------------------------
// 10. Sandwich bounds
// ---------------------------------------------------------------------------

fn c10_sandwich() -> Outcome {
    let mut o = Outcome::new();
    let mut r = rng::stream(100);
    let unit = Uniform::new(0.0, 1.0).unwrap();
    let mut found = 0;
    let mut attempt = 0u64;
    while found < 10 && attempt < 200 {
        attempt += 1;
        let d = 1 + (unit.sample(&mut r) * 3.0) as usize;
        let n = 1 + (unit.sample(&mut r) * 4.0) as usize;
        let b = d + (unit.sample(&mut r) * 5.0) as usize;
        let eta = 0.05 + 0.5 * unit.sample(&mut r);
        let w = if n >= 2 {
            let g = laplacian(&build_graph(GraphKind::Complete, n).unwrap());
            let delta = 0.8 * max_delta(&g) * unit.sample(&mut r);
            mixing_matrix(&g, delta).unwrap()
        } else {
            MixingMatrix::identity(1)
        };
        let spec = ProblemSpec::homogeneous(d, n, b, eta, 1.0, 1.0);
        let seed = rng::derive(101, attempt);
        let mf = MomentFunction::new(&spec, &w, 20_000, seed).unwrap();
        let rho = mf.rho();
        let Ok(root) = alpha_hat_root(&mf) else {
            continue;
        };
        if rho.value >= 0.0 {
            continue;
        }
        found += 1;
        let s = (0.2 + 0.6 * unit.sample(&mut r)) * root.alpha.min(4.0);
        let hat = mf.h(s);
        let fin = h_finite_k_mc(&spec, &w, s, 5, 5_000, seed).unwrap();
        let lyap = lyapunov_mc(&spec, &w, 200, 200, seed).unwrap();
        let label = format!(
            "d={d} N={n} b={b} eta={eta:.3} delta={:.3} s={s:.3}",
            w.delta()
        );
        o.check(
            fin.value <= hat.value + 3.0 * (fin.stderr + hat.stderr),
            format!("{label}: finite-k {:.5} vs h {:.5}", fin.value, hat.value),
        );
        o.check(
            lyap.value <= rho.value + 3.0 * (lyap.stderr + rho.stderr),
            format!(
                "{label}: Lyapunov {:.5} vs rho {:.5}",
                lyap.value, rho.value
            ),
        );
    }
    o.check(found == 10, format!("{found} stable random specs drawn"));
    o
}
