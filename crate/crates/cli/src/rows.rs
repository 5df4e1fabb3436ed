//! Result rows and their CSV form.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::CliResult;

/// A numeric result, or the reason there is none.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Value(f64),
    Tag(Tag),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag {
    Diverged,
    Insufficient,
    NoRootUnstable,
    NoRootLight,
    Skipped,
}

impl Tag {
    pub fn name(self) -> &'static str {
        match self {
            Tag::Diverged => "diverged",
            Tag::Insufficient => "insufficient",
            Tag::NoRootUnstable => "noroot-unstable",
            Tag::NoRootLight => "noroot-light",
            Tag::Skipped => "skipped",
        }
    }

    const ALL: [Tag; 5] = [
        Tag::Diverged,
        Tag::Insufficient,
        Tag::NoRootUnstable,
        Tag::NoRootLight,
        Tag::Skipped,
    ];
}

impl Cell {
    pub fn value(&self) -> Option<f64> {
        match *self {
            Cell::Value(v) => Some(v),
            Cell::Tag(_) => None,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // `{}` on f64 prints the shortest string that parses back exactly.
            Cell::Value(v) => write!(f, "{v}"),
            Cell::Tag(t) => f.write_str(t.name()),
        }
    }
}

impl FromStr for Cell {
    type Err = String;
    fn from_str(s: &str) -> Result<Cell, String> {
        if let Some(t) = Tag::ALL.iter().find(|t| t.name() == s) {
            return Ok(Cell::Tag(*t));
        }
        s.parse::<f64>()
            .map(Cell::Value)
            .map_err(|_| format!("`{s}` is neither a number nor a known tag"))
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Cell, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub mode: String,
    /// Graph kind for DE, `disconnected` or `centralized` for the baselines.
    pub topology: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub d: usize,
    pub b: usize,
    pub eta: f64,
    pub delta: f64,
    pub seed: u64,
    pub alpha_hat_empirical: Cell,
    pub alpha_hat_theory: Cell,
    pub rho_hat: Cell,
    pub divergence_fraction: f64,
    pub runtime_ms: u64,
}

impl ResultRow {
    /// Equality on everything except the wall-clock column.
    pub fn same_result(&self, other: &ResultRow) -> bool {
        ResultRow {
            runtime_ms: 0,
            ..self.clone()
        } == ResultRow {
            runtime_ms: 0,
            ..other.clone()
        }
    }
}

pub fn write_rows<W: Write>(rows: &[ResultRow], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> CliResult<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<Result<Vec<ResultRow>, _>>()?;
    Ok(rows)
}
