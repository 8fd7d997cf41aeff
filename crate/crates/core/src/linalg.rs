//! Compressed sparse row matrices, block systems and direct solves.
//!
//! LU factorization is delegated to `faer`; the coercivity check
//! ([`symmetric_part_cholesky_ok`]) uses its own envelope LDLᵀ so it does not
//! share code with the solver it is used to sanity-check.

use std::collections::VecDeque;
use std::io::Write;

use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use thiserror::Error;

use crate::timegrid::Sub;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("entry ({row}, {col}) outside a {rows}x{cols} matrix")]
    IndexError {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("matrix is singular to working precision{0}")]
    SingularMatrix(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Duplicates are summed. Entries are sorted by (row, col, value) before
    /// summation, so the result does not depend on triplet order.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, LinalgError> {
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(LinalgError::IndexError {
                    row: r,
                    col: c,
                    rows,
                    cols,
                });
            }
            if !v.is_finite() {
                return Err(LinalgError::NonFinite("triplet value"));
            }
        }
        let mut sorted = triplets.to_vec();
        sorted.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
        Ok(Self::from_sorted(rows, cols, &sorted))
    }

    fn from_sorted(rows: usize, cols: usize, sorted: &[(usize, usize, f64)]) -> Self {
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterate `(col, value)` over row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[a..b]
            .iter()
            .copied()
            .zip(self.values[a..b].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[a..b].binary_search(&j) {
            Ok(p) => self.values[a + p],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.rows {
            out.extend(self.row(i).map(|(j, v)| (i, j, v)));
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "mul_vec dimension");
        (0..self.rows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `y += alpha * A x`
    pub fn mul_vec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "mul_vec_add dimension");
        assert_eq!(y.len(), self.rows, "mul_vec_add dimension");
        for (i, yi) in y.iter_mut().enumerate() {
            let s: f64 = self.row(i).map(|(j, v)| v * x[j]).sum();
            *yi += alpha * s;
        }
    }

    /// `xᵀ A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.rows)
            .map(|i| x[i] * self.row(i).map(|(j, v)| v * y[j]).sum::<f64>())
            .sum()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut t: Vec<(usize, usize, f64)> = self
            .triplets()
            .into_iter()
            .map(|(i, j, v)| (j, i, v))
            .collect();
        t.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        Self::from_sorted(self.cols, self.rows, &t)
    }

    pub fn scaled(&self, alpha: f64) -> SparseMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `(A + Aᵀ) / 2`
    pub fn symmetric_part(&self) -> SparseMatrix {
        let mut t = self.triplets();
        t.extend(self.transpose().triplets());
        for e in &mut t {
            e.2 *= 0.5;
        }
        SparseMatrix::from_triplets(self.rows, self.cols, &t).expect("in range")
    }

    /// Extract the submatrix with the given row and column index lists.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> SparseMatrix {
        let mut col_map = vec![usize::MAX; self.cols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut t = Vec::new();
        for (ni, &i) in rows.iter().enumerate() {
            for (j, v) in self.row(i) {
                if col_map[j] != usize::MAX {
                    t.push((ni, col_map[j], v));
                }
            }
        }
        t.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        Self::from_sorted(rows.len(), cols.len(), &t)
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                d[i][j] = v;
            }
        }
        d
    }

    /// Matrix Market coordinate format (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.rows, self.cols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }

    fn to_faer(&self) -> SparseColMat<usize, f64> {
        let t: Vec<Triplet<usize, usize, f64>> = self
            .triplets()
            .into_iter()
            .map(|(i, j, v)| Triplet::new(i, j, v))
            .collect();
        SparseColMat::try_new_from_triplets(self.rows, self.cols, &t).expect("valid csr converts")
    }
}

pub fn norm_inf_vec(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// A sparse LU factorization that can be reused for many right-hand sides.
pub struct LuFactor {
    matrix: SparseMatrix,
    lu: Lu<usize, f64>,
    norm_a: f64,
}

impl std::fmt::Debug for LuFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "LuFactor({}x{}, nnz {})",
            self.matrix.rows,
            self.matrix.cols,
            self.matrix.nnz()
        )
    }
}

impl LuFactor {
    pub fn new(a: &SparseMatrix) -> Result<Self, LinalgError> {
        if a.rows != a.cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{}x{} is not square",
                a.rows, a.cols
            )));
        }
        let lu = a
            .to_faer()
            .sp_lu()
            .map_err(|e| LinalgError::SingularMatrix(format!(" ({e:?})")))?;
        Ok(LuFactor {
            matrix: a.clone(),
            lu,
            norm_a: a.norm_inf(),
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows
    }

    fn raw_solve(&self, b: &[f64]) -> Vec<f64> {
        use faer::linalg::solvers::Solve;
        let rhs = faer::col::Col::from_fn(b.len(), |i| b[i]);
        let x = self.lu.solve(&rhs);
        (0..b.len()).map(|i| x[i]).collect()
    }

    /// Solve, then refine iteratively (at most three steps) until the residual
    /// is at roundoff level. Fails if the backward error stays above `1e-10`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if b.len() != self.dim() {
            return Err(LinalgError::DimensionMismatch(format!(
                "rhs length {} for {} unknowns",
                b.len(),
                self.dim()
            )));
        }
        let mut x = self.raw_solve(b);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::SingularMatrix(String::new()));
        }
        let scale = |x: &[f64]| self.norm_a * norm_inf_vec(x) + norm_inf_vec(b);
        let residual = |x: &[f64]| {
            let mut r = b.to_vec();
            self.matrix.mul_vec_add(-1.0, x, &mut r);
            r
        };
        let mut r = residual(&x);
        let mut rn = norm_inf_vec(&r);
        for _ in 0..3 {
            if rn <= 4.0 * f64::EPSILON * scale(&x) {
                break;
            }
            let dx = self.raw_solve(&r);
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + d).collect();
            let tr = residual(&trial);
            let tn = norm_inf_vec(&tr);
            if !(tn < rn) {
                break;
            }
            (x, r, rn) = (trial, tr, tn);
        }
        let _ = &r;
        if x.iter().all(|v| v.is_finite()) && rn <= 1e-10 * scale(&x) {
            Ok(x)
        } else {
            Err(LinalgError::SingularMatrix(format!(" (residual {rn:e})")))
        }
    }
}

pub fn solve_direct(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    LuFactor::new(a)?.solve(b)
}

/// True iff `(A + Aᵀ)/2` has a Cholesky factorization whose pivots all
/// exceed `1e-14 · max diagonal`.
pub fn symmetric_part_cholesky_ok(a: &SparseMatrix) -> bool {
    if a.rows != a.cols {
        return false;
    }
    let n = a.rows;
    if n == 0 {
        return true;
    }
    let s = a.symmetric_part();
    let max_diag = (0..n)
        .map(|i| s.get(i, i))
        .fold(f64::NEG_INFINITY, f64::max);
    if !(max_diag > 0.0) {
        return false;
    }
    let threshold = 1e-14 * max_diag;
    let perm = reverse_cuthill_mckee(&s);
    let mut inv = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    // envelope rows of the permuted matrix: row i stores columns first[i]..=i
    let mut first = (0..n).collect::<Vec<_>>();
    for old in 0..n {
        let i = inv[old];
        for (j_old, _) in s.row(old) {
            let j = inv[j_old];
            if j < i {
                first[i] = first[i].min(j);
            }
        }
    }
    let mut start = vec![0usize; n + 1];
    for i in 0..n {
        start[i + 1] = start[i] + (i - first[i] + 1);
    }
    let mut env = vec![0.0; start[n]];
    for old in 0..n {
        let i = inv[old];
        for (j_old, v) in s.row(old) {
            let j = inv[j_old];
            if j <= i {
                env[start[i] + j - first[i]] = v;
            }
        }
    }
    // LDLᵀ in place: env holds L below the diagonal and D on it
    let mut d = vec![0.0; n];
    for i in 0..n {
        let fi = first[i];
        for j in fi..i {
            let fj = first[j];
            let lo = fi.max(fj);
            let mut sum = env[start[i] + j - fi];
            for k in lo..j {
                sum -= env[start[i] + k - fi] * d[k] * env[start[j] + k - fj];
            }
            env[start[i] + j - fi] = sum / d[j];
        }
        let mut di = env[start[i] + i - fi];
        for k in fi..i {
            let l = env[start[i] + k - fi];
            di -= l * l * d[k];
        }
        if !(di > threshold) {
            return false;
        }
        d[i] = di;
    }
    true
}

/// Reverse Cuthill-McKee ordering of a structurally symmetric matrix.
pub fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    let n = a.rows;
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| a.row(i).map(|(j, _)| j).filter(|&j| j != i).collect())
        .collect();
    let degree: Vec<usize> = adj.iter().map(|v| v.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs = |root: usize, visited: &mut Vec<bool>, out: &mut Vec<usize>| -> usize {
        // returns the last vertex reached (a far vertex)
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        let mut last = root;
        while let Some(v) = queue.pop_front() {
            out.push(v);
            last = v;
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nb.sort_by_key(|&w| (degree[w], w));
            for w in nb {
                visited[w] = true;
                queue.push_back(w);
            }
        }
        last
    };
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start: one sweep from the seed, restart at the far end
        let mut scratch = visited.clone();
        let mut tmp = Vec::new();
        let far = bfs(seed, &mut scratch, &mut tmp);
        bfs(far, &mut visited, &mut order);
    }
    order.reverse();
    order
}

/// Which physical field an unknown belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    /// temperature or velocity
    Primary,
    Pressure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UnknownLabel {
    pub sub: Sub,
    /// micro index within the macro step, from 1
    pub micro: usize,
    pub field: Field,
    /// spatial degree of freedom in the full (unconstrained) numbering
    pub dof: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub size: usize,
}

/// Monolithic per-macro-step system.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub blocks: Vec<Block>,
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub labels: Vec<UnknownLabel>,
}

impl BlockSystem {
    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    pub fn solve(&self) -> Result<Vec<f64>, LinalgError> {
        solve_direct(&self.matrix, &self.rhs)
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }
}
