//! Scenario files (TOML) and the embedded presets.

use serde::{Deserialize, Serialize};

use dsgd_tails::recursion::Mode;
use dsgd_tails::synthdata::ProblemSpec;
use dsgd_tails::topology::GraphKind;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub d: usize,
    pub n: usize,
    /// Homogeneous batch size; ignored when `batch_sizes` is given.
    #[serde(default = "one")]
    pub b: usize,
    #[serde(default)]
    pub batch_sizes: Option<Vec<usize>>,
    #[serde(default = "unit")]
    pub sigma: f64,
    #[serde(default = "unit")]
    pub sigma_y: f64,
    /// Step size when the sweep is not over `eta`.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub x_true: Option<Vec<f64>>,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub kind: GraphKind,
    #[serde(default)]
    pub delta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepField {
    Eta,
    B,
    Delta,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub field: SweepField,
    #[serde(default)]
    pub values: Vec<f64>,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            field: SweepField::None,
            values: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Estimation {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_k0")]
    pub k0: usize,
    #[serde(default = "default_r")]
    pub r: usize,
    /// Block factorization; both default to `floor(sqrt(samples))`.
    #[serde(default)]
    pub k1: Option<usize>,
    #[serde(default)]
    pub k2: Option<usize>,
}

fn default_k() -> usize {
    2000
}

fn default_k0() -> usize {
    400
}

fn default_r() -> usize {
    400
}

impl Default for Estimation {
    fn default() -> Self {
        Estimation {
            k: default_k(),
            k0: default_k0(),
            r: default_r(),
            k1: None,
            k2: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySettings {
    /// Draws for the moment function; `None` picks 200k for `d = 1` and 20k otherwise.
    #[serde(default)]
    pub n_mc: Option<usize>,
    #[serde(default = "theory_seed")]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

fn theory_seed() -> u64 {
    7
}

fn default_true() -> bool {
    true
}

impl Default for TheorySettings {
    fn default() -> Self {
        TheorySettings {
            n_mc: None,
            seed: theory_seed(),
            enabled: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub out: Option<String>,
    pub problem: Problem,
    pub topology: Topology,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub estimation: Estimation,
    #[serde(default)]
    pub theory: TheorySettings,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_modes() -> Vec<Mode> {
    vec![Mode::De, Mode::Dis, Mode::C]
}

/// One sweep point, fully resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub index: usize,
    pub spec: ProblemSpec,
    pub delta: f64,
}

impl Scenario {
    pub fn from_toml(text: &str) -> CliResult<Scenario> {
        let s: Scenario = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad =
            |field: &str, msg: String| Err(CliError::Config(format!("field `{field}`: {msg}")));
        if self.seeds.is_empty() {
            return bad("seeds", "at least one seed is required".into());
        }
        if self.modes.is_empty() {
            return bad("modes", "at least one mode is required".into());
        }
        let e = &self.estimation;
        if e.k <= e.k0 {
            return bad("estimation.k", format!("must exceed k0 = {}", e.k0));
        }
        if e.r == 0 {
            return bad("estimation.r", "must be at least 1".into());
        }
        if e.k1.is_some() != e.k2.is_some() {
            return bad("estimation.k1", "k1 and k2 must be given together".into());
        }
        if let (Some(k1), Some(k2)) = (e.k1, e.k2) {
            if k1 < 2 || k2 < 2 {
                return bad("estimation.k1", "block sizes must be at least 2".into());
            }
        }
        match self.sweep.field {
            SweepField::None => {
                if !self.sweep.values.is_empty() {
                    return bad("sweep.values", "values given without a sweep field".into());
                }
            }
            field => {
                if self.sweep.values.is_empty() {
                    return bad("sweep.values", "a sweep needs at least one value".into());
                }
                for &v in &self.sweep.values {
                    let ok = match field {
                        SweepField::Eta => v >= 0.0 && v.is_finite(),
                        SweepField::B => v >= 1.0 && v.fract() == 0.0,
                        SweepField::Delta => v >= 0.0 && v.is_finite(),
                        SweepField::None => true,
                    };
                    if !ok {
                        return bad(
                            "sweep.values",
                            format!("{v} is not a valid {field:?} value"),
                        );
                    }
                }
            }
        }
        if self.sweep.field != SweepField::Eta && self.problem.eta.is_none() {
            return bad(
                "problem.eta",
                "required unless the sweep is over eta".into(),
            );
        }
        for p in self.points()? {
            p.spec
                .validate()
                .map_err(|e| CliError::Config(format!("sweep point {}: {e}", p.index)))?;
            dsgd_tails::topology::build_mixing(self.topology.kind, p.spec.n_nodes, p.delta)
                .map_err(|e| CliError::Config(format!("sweep point {} topology: {e}", p.index)))?;
        }
        Ok(())
    }

    /// Specs for every sweep point (one point when there is no sweep).
    pub fn points(&self) -> CliResult<Vec<Point>> {
        let pr = &self.problem;
        let base_batches = pr.batch_sizes.clone().unwrap_or_else(|| vec![pr.b; pr.n]);
        let make = |eta: f64, batches: Vec<usize>| {
            let mut spec = ProblemSpec {
                batch_sizes: batches,
                ..ProblemSpec::homogeneous(pr.d, pr.n, 1, eta, pr.sigma, pr.sigma_y)
            };
            if let Some(x) = &pr.x_true {
                spec = spec.with_x_true(x.clone());
            }
            spec
        };
        let eta0 = pr.eta.unwrap_or(0.0);
        let values: Vec<f64> = if self.sweep.field == SweepField::None {
            vec![f64::NAN]
        } else {
            self.sweep.values.clone()
        };
        Ok(values
            .iter()
            .enumerate()
            .map(|(index, &v)| match self.sweep.field {
                SweepField::Eta => Point {
                    index,
                    spec: make(v, base_batches.clone()),
                    delta: self.topology.delta,
                },
                SweepField::B => Point {
                    index,
                    spec: make(eta0, vec![v as usize; pr.n]),
                    delta: self.topology.delta,
                },
                SweepField::Delta => Point {
                    index,
                    spec: make(eta0, base_batches.clone()),
                    delta: v,
                },
                SweepField::None => Point {
                    index,
                    spec: make(eta0, base_batches.clone()),
                    delta: self.topology.delta,
                },
            })
            .collect())
    }

    /// Switch to the full ensemble protocol (`R = 1600`, `K = 5000`, `K0 = 500`).
    pub fn paper_scale(&mut self) {
        self.estimation.r = 1600;
        self.estimation.k = 5000;
        self.estimation.k0 = 500;
    }
}

/// Embedded scenario presets, by name.
pub const PRESETS: [(&str, &str); 7] = [
    ("case1", include_str!("presets/case1.toml")),
    ("case2", include_str!("presets/case2.toml")),
    ("case3", include_str!("presets/case3.toml")),
    ("sweep-eta", include_str!("presets/sweep-eta.toml")),
    ("sweep-batch", include_str!("presets/sweep-batch.toml")),
    ("contour-d1", include_str!("presets/contour-d1.toml")),
    ("contour-d100", include_str!("presets/contour-d100.toml")),
];

pub fn preset_text(name: &str) -> CliResult<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            CliError::Config(format!(
                "unknown preset `{name}`; known: {}",
                preset_names().join(", ")
            ))
        })
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset(name: &str) -> CliResult<Scenario> {
    Scenario::from_toml(preset_text(name)?)
}

/// A value list given either explicitly or as an evenly spaced range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range {
        min: f64,
        max: f64,
        points: usize,
        #[serde(default)]
        log: bool,
    },
}

impl Grid {
    pub fn values(&self) -> CliResult<Vec<f64>> {
        match *self {
            Grid::List(ref v) => Ok(v.clone()),
            Grid::Range {
                min,
                max,
                points,
                log,
            } => {
                if points == 0 || !(min <= max) || (log && !(min > 0.0)) {
                    return Err(CliError::Config(format!(
                        "invalid grid range [{min}, {max}] with {points} points"
                    )));
                }
                if points == 1 {
                    return Ok(vec![min]);
                }
                Ok((0..points)
                    .map(|k| {
                        let t = k as f64 / (points - 1) as f64;
                        if log {
                            (min.ln() + t * (max.ln() - min.ln())).exp()
                        } else {
                            min + t * (max - min)
                        }
                    })
                    .collect())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContourKind {
    D1,
    General,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourSpec {
    pub engine: ContourKind,
    #[serde(default = "one")]
    pub d: usize,
    #[serde(default = "one")]
    pub b: usize,
    #[serde(default = "unit")]
    pub sigma: f64,
    pub eta: Grid,
    pub n: Grid,
    #[serde(default = "contour_mc")]
    pub n_mc: usize,
    #[serde(default = "theory_seed")]
    pub seed: u64,
}

fn contour_mc() -> usize {
    20_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourScenario {
    pub name: String,
    #[serde(default)]
    pub out: Option<String>,
    pub contour: ContourSpec,
}

impl ContourScenario {
    pub fn from_toml(text: &str) -> CliResult<ContourScenario> {
        let s: ContourScenario =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let ns = s.contour.n.values()?;
        if ns
            .iter()
            .any(|n| !(n.round() >= 1.0 && (n - n.round()).abs() < 1e-9))
        {
            return Err(CliError::Config(
                "field `contour.n`: node counts must be positive integers".into(),
            ));
        }
        if s.contour.eta.values()?.iter().any(|e| !(*e > 0.0)) {
            return Err(CliError::Config(
                "field `contour.eta`: step sizes must be positive".into(),
            ));
        }
        Ok(s)
    }

    pub fn etas(&self) -> Vec<f64> {
        self.contour.eta.values().expect("validated")
    }

    pub fn ns(&self) -> Vec<usize> {
        self.contour
            .n
            .values()
            .expect("validated")
            .iter()
            .map(|&n| n.round() as usize)
            .collect()
    }
}
