use std::process::Command;

use dsgd_tails_cli::commands::run_with;
use dsgd_tails_cli::experiment::{run_scenario, RunOptions};
use dsgd_tails_cli::rows::{read_rows, write_rows, Cell, Tag};
use dsgd_tails_cli::scenario::{preset, preset_names, preset_text, ContourScenario, Scenario};
use dsgd_tails_cli::CliError;

fn run(args: &[&str]) -> Result<String, CliError> {
    let mut out = Vec::new();
    let mut full = vec!["dsgd-tails"];
    full.extend_from_slice(args);
    run_with(full, &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn matrix_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.contains(':'))
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect()
}

const SMALL: &str = r#"
name = "small"
seeds = [3]
modes = ["de", "dis", "c"]

[problem]
d = 1
n = 3
b = 2
sigma = 1.0
sigma_y = 0.5
eta = 0.5

[topology]
kind = "complete"
delta = 0.1

[estimation]
k = 300
k0 = 100
r = 400

[theory]
n_mc = 2000
"#;

#[test]
fn topology_complete_has_diagonal_point_eight() {
    let text = run(&["topology", "complete", "--n", "3", "--delta", "0.1"]).unwrap();
    let m = matrix_rows(&text);
    assert_eq!(m.len(), 3);
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let want = if i == j { 0.8 } else { 0.1 };
            assert!((v - want).abs() < 1e-9, "W[{i}][{j}] = {v}");
        }
    }
}

#[test]
fn topology_cycle_rejects_large_delta() {
    let err = run(&["topology", "cycle", "--n", "4", "--delta", "0.6"]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("0.5"), "{err}");
}

#[test]
fn topology_star_with_zero_delta_is_identity() {
    let m = matrix_rows(&run(&["topology", "star", "--n", "4", "--delta", "0"]).unwrap());
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn topology_exports_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run(&[
        "topology", "path", "--n", "5", "--delta", "0.2", "--out", out,
    ])
    .unwrap();
    let w = std::fs::read_to_string(dir.path().join("mixing.csv")).unwrap();
    assert_eq!(w.lines().count(), 5);
    let first: f64 = w
        .lines()
        .next()
        .unwrap()
        .split(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((first - 0.8).abs() < 1e-15);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_dsgd-tails");
    let ok = Command::new(bin)
        .args(["topology", "complete", "--n", "3"])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let cfg = Command::new(bin)
        .args(["topology", "cycle", "--n", "4", "--delta", "0.6"])
        .output()
        .unwrap();
    assert_eq!(cfg.status.code(), Some(2));
    let num = Command::new(bin)
        .args([
            "theory", "--eta", "1.8", "--n", "2", "--mode", "dis", "--n-mc", "2000",
        ])
        .output()
        .unwrap();
    assert_eq!(num.status.code(), Some(3));
    let bad_flag = Command::new(bin)
        .args(["run", "--no-such-flag"])
        .output()
        .unwrap();
    assert_eq!(bad_flag.status.code(), Some(2));
}

#[test]
fn contour_single_cell_has_one_value_and_no_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run(&[
        "contour",
        "--eta-min",
        "1.0",
        "--eta-max",
        "1.0",
        "--eta-points",
        "1",
        "--n-min",
        "3",
        "--n-max",
        "3",
        "--out",
        out,
    ])
    .unwrap();
    let grid = std::fs::read_to_string(dir.path().join("contour.csv")).unwrap();
    assert_eq!(grid.lines().count(), 2);
    let curve = std::fs::read_to_string(dir.path().join("zero_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1);
    let svg = std::fs::read_to_string(dir.path().join("contour.svg")).unwrap();
    assert!(!svg.contains("<polyline"));
}

#[test]
fn contour_d1_preset_draws_red_curve_between_signs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run(&["contour", "--preset", "contour-d1", "--out", out]).unwrap();
    let svg = std::fs::read_to_string(dir.path().join("contour.svg")).unwrap();
    assert!(svg.contains(r##"stroke="#e41a1c""##));
    let mut rdr = csv::Reader::from_path(dir.path().join("contour.csv")).unwrap();
    let cells: Vec<(usize, f64, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (
                r[0].parse().unwrap(),
                r[1].parse().unwrap(),
                r[2].parse().unwrap(),
            )
        })
        .collect();
    let mut rdr = csv::Reader::from_path(dir.path().join("zero_curve.csv")).unwrap();
    let curve: Vec<(f64, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[1].parse().unwrap(), r[2].parse().unwrap())
        })
        .collect();
    assert_eq!(curve.len(), 49);
    for (n, eta, v) in cells {
        let z = curve.iter().find(|c| c.1 == n as f64).unwrap().0;
        let grid_gap = 0.1 * z;
        if eta < z - grid_gap {
            assert!(v < 0.0, "N {n} eta {eta}: {v}");
        } else if eta > z + grid_gap {
            assert!(v > 0.0, "N {n} eta {eta}: {v}");
        }
    }
}

#[test]
fn contour_general_engine_has_both_curves_with_region_two_unstable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let text = run(&[
        "contour",
        "--preset",
        "contour-d100",
        "--n-mc",
        "600",
        "--out",
        out,
    ])
    .unwrap();
    assert!(text.contains("instability curve points: 6"), "{text}");
    let svg = std::fs::read_to_string(dir.path().join("contour.svg")).unwrap();
    assert!(svg.contains(r##"stroke="#e41a1c""##) && svg.contains(r##"stroke="#ff7f00""##));
    let mut rdr = csv::Reader::from_path(dir.path().join("contour.csv")).unwrap();
    for r in rdr.records() {
        let r = r.unwrap();
        let (sign, rho): (f64, f64) = (r[2].parse().unwrap(), r[3].parse().unwrap());
        if sign > 0.0 {
            assert!(rho > 0.0, "positive sign term on the stable side: {r:?}");
        }
    }
}

#[test]
fn thresholds_classify_the_cases() {
    let t1 = run(&["thresholds", "--preset", "case1"]).unwrap();
    assert!(t1.contains("case I "), "{t1}");
    let t3 = run(&["thresholds", "--preset", "case3", "--n-mc", "4000"]).unwrap();
    assert!(t3.contains("case III"), "{t3}");
    let t = run(&["thresholds", "--n", "1"]).unwrap();
    let tau: f64 = t
        .lines()
        .find(|l| l.starts_with("tau "))
        .unwrap()
        .split_whitespace()
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((tau - 4.396).abs() < 1e-3, "{tau}");
}

#[test]
fn empty_sweep_gives_one_row_per_mode() {
    let sc = Scenario::from_toml(SMALL).unwrap();
    let out = run_scenario(&sc, &RunOptions::default()).unwrap();
    assert_eq!(out.rows.len(), 3);
    let modes: Vec<&str> = out.rows.iter().map(|r| r.mode.as_str()).collect();
    assert_eq!(modes, ["de", "dis", "c"]);
    for r in &out.rows {
        assert!(r.alpha_hat_empirical.value().is_some(), "{r:?}");
        assert_eq!(r.seed, 3);
    }
    assert_eq!(out.rows[0].topology, "complete");
    assert_eq!(out.rows[1].delta, 0.0);
}

#[test]
fn rows_round_trip_through_csv_and_reruns_reproduce() {
    let sc = Scenario::from_toml(SMALL).unwrap();
    let a = run_scenario(&sc, &RunOptions::default()).unwrap();
    let mut buf = Vec::new();
    write_rows(&a.rows, &mut buf).unwrap();
    let back = read_rows(&buf[..]).unwrap();
    assert_eq!(back, a.rows);
    let b = run_scenario(&sc, &RunOptions::default()).unwrap();
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert!(x.same_result(y));
    }
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("small.toml");
    std::fs::write(&file, SMALL).unwrap();
    let out = dir.path().join("out");
    run(&[
        "run",
        file.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    for f in [
        "results.csv",
        "alpha_summary.csv",
        "alpha.svg",
        "thresholds.json",
        "theory/point000_de.json",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let rows = read_rows(std::fs::File::open(out.join("results.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
}

#[test]
fn output_is_independent_of_job_count() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("small.toml");
    std::fs::write(&file, SMALL).unwrap();
    let mut sets = Vec::new();
    for jobs in ["1", "3"] {
        let out = dir.path().join(jobs);
        run(&[
            "run",
            file.to_str().unwrap(),
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
        ])
        .unwrap();
        sets.push(read_rows(std::fs::File::open(out.join("results.csv")).unwrap()).unwrap());
    }
    for (x, y) in sets[0].iter().zip(&sets[1]) {
        assert!(x.same_result(y));
    }
}

#[test]
fn cells_parse_numbers_and_tags() {
    for t in [
        "diverged",
        "insufficient",
        "noroot-unstable",
        "noroot-light",
        "skipped",
    ] {
        let c: Cell = t.parse().unwrap();
        assert!(matches!(c, Cell::Tag(_)));
        assert_eq!(c.to_string(), t);
    }
    let v = 0.1 + 0.2;
    assert_eq!(v.to_string().parse::<Cell>().unwrap(), Cell::Value(v));
    assert!("banana".parse::<Cell>().is_err());
    assert_eq!(Cell::Tag(Tag::Skipped).value(), None);
}

#[test]
fn scenario_errors_name_the_field() {
    let cases = [
        (
            SMALL.replace("sigma_y = 0.5", "sigma_y = 0.5\nfoo = 1"),
            "foo",
        ),
        (SMALL.replace("k = 300", "k = 50"), "estimation.k"),
        (SMALL.replace("seeds = [3]", "seeds = []"), "seeds"),
        (SMALL.replace("delta = 0.1", "delta = 0.9"), "topology"),
        (SMALL.replace("eta = 0.5\n", ""), "problem.eta"),
        (
            SMALL.replace(
                "[estimation]",
                "[sweep]\nfield = \"b\"\nvalues = [1.5]\n\n[estimation]",
            ),
            "sweep.values",
        ),
        (
            SMALL.replace("kind = \"complete\"", "kind = \"torus\""),
            "torus",
        ),
        (SMALL.replace("n = 3", "n = \"three\""), "line"),
    ];
    for (text, needle) in cases {
        let err = Scenario::from_toml(&text).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains(needle), "{needle}: {err}");
    }
}

#[test]
fn presets_parse_and_list() {
    let listed = run(&["preset"]).unwrap();
    for name in preset_names() {
        assert!(listed.contains(name));
        if name.starts_with("contour") {
            ContourScenario::from_toml(preset_text(name).unwrap()).unwrap();
        } else {
            let sc = preset(name).unwrap();
            assert_eq!(sc.name, name);
            assert!(!sc.points().unwrap().is_empty());
        }
    }
    assert!(run(&["preset", "case3"])
        .unwrap()
        .contains("kind = \"star\""));
    assert_eq!(run(&["preset", "nope"]).unwrap_err().exit_code(), 2);
}

#[test]
fn paper_scale_restores_full_protocol() {
    let mut sc = preset("case1").unwrap();
    sc.paper_scale();
    assert_eq!(
        (sc.estimation.r, sc.estimation.k, sc.estimation.k0),
        (1600, 5000, 500)
    );
    let again = Scenario::from_toml(&sc.to_toml()).unwrap();
    assert_eq!(again, sc);
}

#[test]
fn theory_and_calibrate_commands() {
    let t = run(&[
        "theory", "--eta", "1.0", "--mode", "c", "--n", "3", "--n-mc", "20000", "--tol", "1e-3",
    ])
    .unwrap();
    assert!(t.contains("alpha_hat"), "{t}");
    let c = run(&["calibrate", "--k", "40000", "--alphas", "1.5"]).unwrap();
    let est: f64 = c
        .lines()
        .nth(1)
        .unwrap()
        .split_whitespace()
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((est - 1.5).abs() < 0.2, "{c}");
    let cp = run(&[
        "couple", "--eta", "0.5", "--n", "3", "--delta", "0.1", "--k", "50", "--r", "100",
        "--n-mc", "20000",
    ])
    .unwrap();
    assert!(cp.contains("contraction within bound: true"), "{cp}");
}
