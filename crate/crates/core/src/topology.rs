//! Graph families, Laplacians and mixing matrices `W = I - delta L`.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `N*d` for which [`BlockOperator`] keeps an explicit dense copy.
pub const DENSE_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Complete,
    Star,
    Cycle,
    Hypercube,
    Bipartite,
    Barbell,
    Path,
    /// Untyped adjacency supplied by the caller.
    Custom,
}

impl GraphKind {
    pub const FAMILIES: [GraphKind; 7] = [
        GraphKind::Complete,
        GraphKind::Star,
        GraphKind::Cycle,
        GraphKind::Hypercube,
        GraphKind::Bipartite,
        GraphKind::Barbell,
        GraphKind::Path,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GraphKind::Complete => "complete",
            GraphKind::Star => "star",
            GraphKind::Cycle => "cycle",
            GraphKind::Hypercube => "hypercube",
            GraphKind::Bipartite => "bipartite",
            GraphKind::Barbell => "barbell",
            GraphKind::Path => "path",
            GraphKind::Custom => "custom",
        }
    }

    /// Whether `n` is an admissible node count for this family.
    pub fn accepts(self, n: usize) -> bool {
        match self {
            GraphKind::Cycle => n >= 3,
            GraphKind::Hypercube => n >= 2 && n.is_power_of_two(),
            GraphKind::Bipartite | GraphKind::Barbell => n >= 2 && n % 2 == 0,
            _ => n >= 2,
        }
    }
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "complete" => Ok(GraphKind::Complete),
            "star" => Ok(GraphKind::Star),
            "cycle" | "ring" => Ok(GraphKind::Cycle),
            "hypercube" => Ok(GraphKind::Hypercube),
            "bipartite" => Ok(GraphKind::Bipartite),
            "barbell" => Ok(GraphKind::Barbell),
            "path" | "line" => Ok(GraphKind::Path),
            "custom" => Ok(GraphKind::Custom),
            other => Err(Error::InvalidParameter(format!(
                "unknown graph kind `{other}`"
            ))),
        }
    }
}

/// Undirected simple graph stored as a dense 0/1 adjacency matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    kind: GraphKind,
    n: usize,
    adjacency: Vec<u8>,
}

impl Graph {
    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j] == 1
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| self.adjacent(i, j)).count()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.adjacent(i, j))
    }

    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| {
            f64::from(self.adjacency[i * self.n + j])
        })
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for w in self.neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Escape hatch for arbitrary graphs. Only symmetry, a zero diagonal and
    /// connectivity are checked.
    pub fn from_adjacency(rows: &[Vec<u8>]) -> Result<Graph> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::InvalidN {
                kind: "custom".into(),
                n,
                reason: "need at least two nodes".into(),
            });
        }
        let mut adjacency = vec![0u8; n * n];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "row {} has {} entries, expected {n}",
                    i + 1,
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(Error::InvalidParameter(format!(
                        "adjacency entry ({},{}) is not 0/1",
                        i + 1,
                        j + 1
                    )));
                }
                adjacency[i * n + j] = v;
            }
        }
        for i in 0..n {
            if adjacency[i * n + i] != 0 {
                return Err(Error::InvalidParameter(format!(
                    "self loop at node {}",
                    i + 1
                )));
            }
            for j in 0..i {
                if adjacency[i * n + j] != adjacency[j * n + i] {
                    return Err(Error::InvalidParameter(format!(
                        "adjacency not symmetric at ({},{})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let g = Graph {
            kind: GraphKind::Custom,
            n,
            adjacency,
        };
        if !g.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(g)
    }
}

fn hypercube_adjacency(n: usize) -> DMatrix<u8> {
    if n == 2 {
        return DMatrix::from_row_slice(2, 2, &[0, 1, 1, 0]);
    }
    let half = n / 2;
    let sub = hypercube_adjacency(half);
    let mut a = DMatrix::<u8>::zeros(n, n);
    a.view_mut((0, 0), (half, half)).copy_from(&sub);
    a.view_mut((half, half), (half, half)).copy_from(&sub);
    for i in 0..half {
        a[(i, half + i)] = 1;
        a[(half + i, i)] = 1;
    }
    a
}

/// Build one of the seven graph families on `n` nodes.
pub fn build_graph(kind: GraphKind, n: usize) -> Result<Graph> {
    if kind == GraphKind::Custom {
        return Err(Error::InvalidParameter(
            "custom graphs are built with Graph::from_adjacency".into(),
        ));
    }
    if !kind.accepts(n) {
        let reason = match kind {
            GraphKind::Cycle => "cycle needs at least three nodes",
            GraphKind::Hypercube => "hypercube needs a power of two",
            GraphKind::Bipartite | GraphKind::Barbell => "needs an even node count",
            _ => "needs at least two nodes",
        };
        return Err(Error::InvalidN {
            kind: kind.name().into(),
            n,
            reason: reason.into(),
        });
    }
    let mut adjacency = vec![0u8; n * n];
    let mut link = |i: usize, j: usize| {
        adjacency[i * n + j] = 1;
        adjacency[j * n + i] = 1;
    };
    match kind {
        GraphKind::Complete => {
            for i in 0..n {
                for j in 0..i {
                    link(i, j);
                }
            }
        }
        GraphKind::Star => {
            for j in 1..n {
                link(0, j);
            }
        }
        GraphKind::Cycle => {
            for i in 0..n - 1 {
                link(i, i + 1);
            }
            link(0, n - 1);
        }
        GraphKind::Path => {
            for i in 0..n - 1 {
                link(i, i + 1);
            }
        }
        GraphKind::Bipartite => {
            let h = n / 2;
            for i in 0..h {
                for j in h..n {
                    link(i, j);
                }
            }
        }
        GraphKind::Barbell => {
            let h = n / 2;
            for i in 0..h {
                for j in 0..i {
                    link(i, j);
                    link(h + i, h + j);
                }
            }
            link(0, h);
        }
        GraphKind::Hypercube => {
            let a = hypercube_adjacency(n);
            for i in 0..n {
                for j in 0..i {
                    if a[(i, j)] == 1 {
                        link(i, j);
                    }
                }
            }
        }
        GraphKind::Custom => unreachable!(),
    }
    let g = Graph { kind, n, adjacency };
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    Ok(g)
}

fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

#[derive(Clone, Debug)]
pub struct Laplacian {
    matrix: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl Laplacian {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().copied().collect()
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().expect("nonempty spectrum")
    }
}

/// Integer Laplacian `D - A`.
pub fn integer_laplacian(g: &Graph) -> Vec<Vec<i64>> {
    let n = g.n_nodes();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        g.degree(i) as i64
                    } else {
                        -i64::from(g.adjacent(i, j))
                    }
                })
                .collect()
        })
        .collect()
}

pub fn laplacian(g: &Graph) -> Laplacian {
    let n = g.n_nodes();
    let int = integer_laplacian(g);
    let matrix = DMatrix::from_fn(n, n, |i, j| int[i][j] as f64);
    let eigenvalues = sorted_eigenvalues(&matrix);
    Laplacian {
        matrix,
        eigenvalues,
    }
}

/// Supremum `2 / lambda_N` of admissible mixing weights.
pub fn max_delta(l: &Laplacian) -> f64 {
    2.0 / l.lambda_max()
}

#[derive(Clone, Debug)]
pub struct MixingMatrix {
    matrix: DMatrix<f64>,
    delta: f64,
    eigenvalues: Vec<f64>,
    laplacian_diag: Vec<f64>,
}

impl MixingMatrix {
    /// `W = I_n`, the disconnected case.
    pub fn identity(n: usize) -> MixingMatrix {
        MixingMatrix {
            matrix: DMatrix::identity(n, n),
            delta: 0.0,
            eigenvalues: vec![1.0; n],
            laplacian_diag: vec![0.0; n],
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.nrows()
    }

    /// Diagonal of the Laplacian the matrix was built from (zeros for the identity).
    pub fn laplacian_diag(&self) -> &[f64] {
        &self.laplacian_diag
    }

    pub fn is_identity(&self) -> bool {
        self.matrix == DMatrix::identity(self.n_nodes(), self.n_nodes())
    }

    /// Apply a node relabeling: node `i` of the result is node `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> MixingMatrix {
        let n = self.n_nodes();
        MixingMatrix {
            matrix: DMatrix::from_fn(n, n, |i, j| self.matrix[(perm[i], perm[j])]),
            delta: self.delta,
            eigenvalues: self.eigenvalues.clone(),
            laplacian_diag: perm.iter().map(|&p| self.laplacian_diag[p]).collect(),
        }
    }

    pub fn lift(&self, d: usize) -> BlockOperator {
        lift_to_blocks(self, d)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrix_csv(&self.matrix, out)
    }
}

/// `W = I - delta L`. `delta = 0` is accepted and gives the identity.
pub fn mixing_matrix(l: &Laplacian, delta: f64) -> Result<MixingMatrix> {
    let max = max_delta(l);
    if !(delta >= 0.0 && delta < max) {
        return Err(Error::DeltaOutOfRange { delta, max });
    }
    let n = l.n_nodes();
    let matrix = DMatrix::identity(n, n) - l.matrix() * delta;
    let mut eigenvalues: Vec<f64> = l
        .eigenvalues()
        .iter()
        .map(|&lam| 1.0 - delta * lam)
        .collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    Ok(MixingMatrix {
        matrix,
        delta,
        eigenvalues,
        laplacian_diag: l.diagonal(),
    })
}

/// Convenience: graph, Laplacian and mixing matrix in one call.
pub fn build_mixing(kind: GraphKind, n: usize, delta: f64) -> Result<MixingMatrix> {
    let g = build_graph(kind, n)?;
    mixing_matrix(&laplacian(&g), delta)
}

/// `W (x) I_d` acting on concatenated node blocks, stored by nonzero rows.
#[derive(Clone, Debug)]
pub struct BlockOperator {
    n: usize,
    d: usize,
    rows: Vec<Vec<(usize, f64)>>,
    dense: Option<DMatrix<f64>>,
}

impl BlockOperator {
    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn block_dim(&self) -> usize {
        self.d
    }

    pub fn dim(&self) -> usize {
        self.n * self.d
    }

    /// Nonzero weights of row `i`.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        assert_eq!(x.len(), self.dim());
        assert_eq!(out.len(), self.dim());
        for (i, row) in self.rows.iter().enumerate() {
            let o = &mut out[i * d..(i + 1) * d];
            o.fill(0.0);
            for &(j, w) in row {
                let xj = &x[j * d..(j + 1) * d];
                for (a, b) in o.iter_mut().zip(xj) {
                    *a += w * b;
                }
            }
        }
    }

    /// Explicit `W (x) I_d`, available when `N d <= DENSE_CAP`.
    pub fn dense(&self) -> Option<&DMatrix<f64>> {
        self.dense.as_ref()
    }
}

pub fn lift_to_blocks(w: &MixingMatrix, d: usize) -> BlockOperator {
    let n = w.n_nodes();
    let rows = (0..n)
        .map(|i| {
            (0..n)
                .filter_map(|j| {
                    let v = w.matrix()[(i, j)];
                    (v != 0.0).then_some((j, v))
                })
                .collect()
        })
        .collect();
    let dense = (n * d <= DENSE_CAP).then(|| w.matrix().kronecker(&DMatrix::<f64>::identity(d, d)));
    BlockOperator { n, d, rows, dense }
}

/// Row-major CSV with 17 significant digits.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, mut out: W) -> Result<()> {
    for i in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols())
            .map(|j| format!("{:.16e}", m[(i, j)]))
            .collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}
