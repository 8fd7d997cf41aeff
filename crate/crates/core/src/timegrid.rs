//! Two-rate hierarchical time meshes and the dG(0) time operators.
//!
//! A [`MultirateMesh`] is a macro partition `0 = t^0 < ... < t^N = T` where
//! every macro step is split uniformly into `N_1^n` micro steps for
//! subproblem 1 and `N_2^n` for subproblem 2, with at most one of them
//! larger than one.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimeGridError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("macro step {step} has counts ({n1}, {n2}); one of them must be 1")]
    ConstraintViolation { step: usize, n1: usize, n2: usize },
    #[error("cannot refine subproblem {sub} on macro step {step}: opposite count {other} is odd")]
    CannotPromote {
        sub: usize,
        step: usize,
        other: usize,
    },
    #[error("function does not live on this mesh: {0}")]
    MeshMismatch(String),
    #[error("payload dimension mismatch: expected {expected}, got {got}")]
    PayloadMismatch { expected: usize, got: usize },
}

/// One of the two coupled subproblems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sub {
    One,
    Two,
}

impl Sub {
    pub const BOTH: [Sub; 2] = [Sub::One, Sub::Two];

    pub fn index(self) -> usize {
        match self {
            Sub::One => 0,
            Sub::Two => 1,
        }
    }

    pub fn other(self) -> Sub {
        match self {
            Sub::One => Sub::Two,
            Sub::Two => Sub::One,
        }
    }

    /// 1-based number, as used in file formats and messages.
    pub fn number(self) -> usize {
        self.index() + 1
    }

    pub fn from_number(j: usize) -> Option<Sub> {
        match j {
            1 => Some(Sub::One),
            2 => Some(Sub::Two),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeshRepr", into = "MeshRepr")]
pub struct MultirateMesh {
    macro_nodes: Vec<f64>,
    micro_counts: Vec<[usize; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeshRepr {
    macro_nodes: Vec<f64>,
    micro_counts: Vec<[usize; 2]>,
}

impl TryFrom<MeshRepr> for MultirateMesh {
    type Error = TimeGridError;
    fn try_from(r: MeshRepr) -> Result<Self, Self::Error> {
        MultirateMesh::new(r.macro_nodes, r.micro_counts)
    }
}

impl From<MultirateMesh> for MeshRepr {
    fn from(m: MultirateMesh) -> Self {
        MeshRepr {
            macro_nodes: m.macro_nodes,
            micro_counts: m.micro_counts,
        }
    }
}

/// A micro interval `I_j^{n,m}`, `m` counted from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicroInterval {
    pub step: usize,
    pub m: usize,
    pub start: f64,
    pub end: f64,
}

impl MicroInterval {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }
}

impl MultirateMesh {
    pub fn new(
        macro_nodes: Vec<f64>,
        micro_counts: Vec<[usize; 2]>,
    ) -> Result<Self, TimeGridError> {
        if macro_nodes.len() < 2 {
            return Err(TimeGridError::InvalidMesh(
                "need at least two macro nodes".into(),
            ));
        }
        if macro_nodes[0] != 0.0 {
            return Err(TimeGridError::InvalidMesh(format!(
                "first macro node must be 0, got {}",
                macro_nodes[0]
            )));
        }
        for w in macro_nodes.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(TimeGridError::InvalidMesh(format!(
                    "macro nodes not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if micro_counts.len() != macro_nodes.len() - 1 {
            return Err(TimeGridError::InvalidMesh(format!(
                "{} macro steps but {} count pairs",
                macro_nodes.len() - 1,
                micro_counts.len()
            )));
        }
        for (step, c) in micro_counts.iter().enumerate() {
            if c[0] == 0 || c[1] == 0 {
                return Err(TimeGridError::InvalidMesh(format!(
                    "macro step {step} has a zero micro count"
                )));
            }
            if c[0] > 1 && c[1] > 1 {
                return Err(TimeGridError::ConstraintViolation {
                    step,
                    n1: c[0],
                    n2: c[1],
                });
            }
        }
        Ok(MultirateMesh {
            macro_nodes,
            micro_counts,
        })
    }

    /// Single-rate mesh with `n` equal macro steps on `[0, horizon]`.
    pub fn uniform(n: usize, horizon: f64) -> Result<Self, TimeGridError> {
        Self::uniform_with_counts(n, horizon, [1, 1])
    }

    pub fn uniform_with_counts(
        n: usize,
        horizon: f64,
        counts: [usize; 2],
    ) -> Result<Self, TimeGridError> {
        if n == 0 {
            return Err(TimeGridError::InvalidMesh(
                "need at least one macro step".into(),
            ));
        }
        let nodes = (0..=n)
            .map(|i| {
                if i == n {
                    horizon
                } else {
                    horizon * i as f64 / n as f64
                }
            })
            .collect();
        Self::new(nodes, vec![counts; n])
    }

    pub fn macro_nodes(&self) -> &[f64] {
        &self.macro_nodes
    }

    pub fn micro_counts(&self) -> &[[usize; 2]] {
        &self.micro_counts
    }

    pub fn macro_steps(&self) -> usize {
        self.micro_counts.len()
    }

    pub fn horizon(&self) -> f64 {
        *self.macro_nodes.last().unwrap()
    }

    pub fn macro_len(&self, n: usize) -> f64 {
        self.macro_nodes[n + 1] - self.macro_nodes[n]
    }

    pub fn count(&self, j: Sub, n: usize) -> usize {
        self.micro_counts[n][j.index()]
    }

    /// Node `t_j^{n,m}` for `m` in `0..=N_j^n`; macro nodes are returned verbatim.
    pub fn micro_node(&self, j: Sub, n: usize, m: usize) -> f64 {
        let c = self.count(j, n);
        if m == 0 {
            self.macro_nodes[n]
        } else if m == c {
            self.macro_nodes[n + 1]
        } else {
            self.macro_nodes[n] + m as f64 * self.macro_len(n) / c as f64
        }
    }

    /// Total number of micro intervals of subproblem `j`.
    pub fn micro_total(&self, j: Sub) -> usize {
        self.micro_counts.iter().map(|c| c[j.index()]).sum()
    }

    /// Index of the first micro interval of macro step `n` in the flat ordering of `j`.
    pub fn micro_offset(&self, j: Sub, n: usize) -> usize {
        self.micro_counts[..n].iter().map(|c| c[j.index()]).sum()
    }

    pub fn micro_intervals(&self, j: Sub) -> Vec<MicroInterval> {
        let mut out = Vec::with_capacity(self.micro_total(j));
        for n in 0..self.macro_steps() {
            for m in 1..=self.count(j, n) {
                out.push(MicroInterval {
                    step: n,
                    m,
                    start: self.micro_node(j, n, m - 1),
                    end: self.micro_node(j, n, m),
                });
            }
        }
        out
    }

    /// All nodes of subproblem `j`, starting with 0.
    pub fn micro_nodes(&self, j: Sub) -> Vec<f64> {
        let mut out = vec![0.0];
        out.extend(self.micro_intervals(j).iter().map(|iv| iv.end));
        out
    }

    /// Largest micro step of subproblem `j` (the `k_j` of the error bounds).
    pub fn k_max(&self, j: Sub) -> f64 {
        (0..self.macro_steps())
            .map(|n| self.macro_len(n) / self.count(j, n) as f64)
            .fold(0.0, f64::max)
    }

    pub fn macro_k_max(&self) -> f64 {
        (0..self.macro_steps())
            .map(|n| self.macro_len(n))
            .fold(0.0, f64::max)
    }

    /// Refine subproblem `j` on macro step `n`: bisect its micro steps, or,
    /// if `j` is the coarse side of a multirate step, split the macro step at
    /// its midpoint so that the min-one rule survives.
    pub fn refine_micro(&self, j: Sub, n: usize) -> Result<Self, TimeGridError> {
        if n >= self.macro_steps() {
            return Err(TimeGridError::InvalidMesh(format!(
                "macro index {n} out of range (have {})",
                self.macro_steps()
            )));
        }
        let own = self.count(j, n);
        let other = self.count(j.other(), n);
        let mut nodes = self.macro_nodes.clone();
        let mut counts = self.micro_counts.clone();
        if other == 1 {
            counts[n][j.index()] = own * 2;
        } else if other % 2 == 0 {
            let mid = self.micro_node(j.other(), n, other / 2);
            let mut half = [0usize; 2];
            half[j.index()] = 1;
            half[j.other().index()] = other / 2;
            counts[n] = half;
            counts.insert(n + 1, half);
            nodes.insert(n + 1, mid);
        } else {
            return Err(TimeGridError::CannotPromote {
                sub: j.number(),
                step: n,
                other,
            });
        }
        MultirateMesh::new(nodes, counts)
    }

    /// Refine subproblem `j` on every macro step.
    pub fn refine_all(&self, j: Sub) -> Result<Self, TimeGridError> {
        let mut mesh = self.clone();
        // back to front: a promotion inserts a step after `n`
        for n in (0..self.macro_steps()).rev() {
            mesh = mesh.refine_micro(j, n)?;
        }
        Ok(mesh)
    }

    /// Interval-overlap weights between micro intervals of `target` and
    /// `source` inside macro step `n`: entries `(m_t, m_s, w)` with
    /// `w = |I_t ∩ I_s| / |I_t|` and `m` counted from 0. Computed in integer
    /// arithmetic, so a source interval covering the target gives exactly 1.
    pub fn overlap_weights(
        &self,
        target: Lattice,
        source: Lattice,
        n: usize,
    ) -> Vec<(usize, usize, f64)> {
        let nt = self.lattice_count(target, n);
        let ns = self.lattice_count(source, n);
        let mut out = Vec::new();
        for mt in 0..nt {
            // target interval spans [mt*ns, (mt+1)*ns] in units of k^n/(nt*ns)
            let (a0, a1) = (mt * ns, (mt + 1) * ns);
            let first = a0 / nt;
            for ms in first..ns {
                let (b0, b1) = (ms * nt, (ms + 1) * nt);
                if b0 >= a1 {
                    break;
                }
                let lo = a0.max(b0);
                let hi = a1.min(b1);
                if hi > lo {
                    let o = hi - lo;
                    let w = if o == ns { 1.0 } else { o as f64 / ns as f64 };
                    out.push((mt, ms, w));
                }
            }
        }
        out
    }

    /// Absolute overlap length `|I_t ∩ I_s|` for the same pairs as [`Self::overlap_weights`].
    pub fn overlap_lengths(
        &self,
        target: Lattice,
        source: Lattice,
        n: usize,
    ) -> Vec<(usize, usize, f64)> {
        let kt = self.macro_len(n) / self.lattice_count(target, n) as f64;
        self.overlap_weights(target, source, n)
            .into_iter()
            .map(|(mt, ms, w)| (mt, ms, w * kt))
            .collect()
    }

    pub fn lattice_count(&self, lattice: Lattice, n: usize) -> usize {
        match lattice {
            Lattice::Micro(j) => self.count(j, n),
            Lattice::Macro => 1,
        }
    }

    pub fn lattice_total(&self, lattice: Lattice) -> usize {
        match lattice {
            Lattice::Micro(j) => self.micro_total(j),
            Lattice::Macro => self.macro_steps(),
        }
    }

    pub fn lattice_offset(&self, lattice: Lattice, n: usize) -> usize {
        match lattice {
            Lattice::Micro(j) => self.micro_offset(j, n),
            Lattice::Macro => n,
        }
    }

    pub fn lattice_node(&self, lattice: Lattice, n: usize, m: usize) -> f64 {
        match lattice {
            Lattice::Micro(j) => self.micro_node(j, n, m),
            Lattice::Macro => self.macro_nodes[n + m],
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mesh serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TimeGridError> {
        serde_json::from_str(text).map_err(|e| TimeGridError::InvalidMesh(e.to_string()))
    }
}

/// Which partition a piecewise-constant function lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lattice {
    Micro(Sub),
    Macro,
}

/// dG(0) function: one payload per interval of its lattice plus the value at `t = 0`.
/// Payloads are stored flat, `dim` numbers each.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstant {
    lattice: Lattice,
    dim: usize,
    initial: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn new(
        lattice: Lattice,
        initial: Vec<f64>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self, TimeGridError> {
        let dim = initial.len();
        let mut flat = Vec::with_capacity(dim * values.len());
        for v in &values {
            if v.len() != dim {
                return Err(TimeGridError::PayloadMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            flat.extend_from_slice(v);
        }
        Ok(PiecewiseConstant {
            lattice,
            dim,
            initial,
            values: flat,
        })
    }

    pub fn from_flat(
        lattice: Lattice,
        initial: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self, TimeGridError> {
        let dim = initial.len();
        if dim == 0 && !values.is_empty() || dim > 0 && values.len() % dim != 0 {
            return Err(TimeGridError::PayloadMismatch {
                expected: dim,
                got: values.len(),
            });
        }
        Ok(PiecewiseConstant {
            lattice,
            dim,
            initial,
            values,
        })
    }

    /// Scalar convenience constructor.
    pub fn scalar(lattice: Lattice, initial: f64, values: &[f64]) -> Self {
        PiecewiseConstant {
            lattice,
            dim: 1,
            initial: vec![initial],
            values: values.to_vec(),
        }
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values_flat(&self) -> &[f64] {
        &self.values
    }

    /// Value at the end of the last interval.
    pub fn final_value(&self) -> &[f64] {
        if self.is_empty() {
            &self.initial
        } else {
            self.value(self.len() - 1)
        }
    }

    pub fn check_mesh(&self, mesh: &MultirateMesh) -> Result<(), TimeGridError> {
        let expected = mesh.lattice_total(self.lattice);
        if self.len() != expected {
            return Err(TimeGridError::MeshMismatch(format!(
                "{:?} needs {} values, function has {}",
                self.lattice,
                expected,
                self.len()
            )));
        }
        Ok(())
    }

    /// Point evaluation with intervals closed on the right: `t = t^{n,m}`
    /// returns the value of `I^{n,m}`, `t = 0` the initial value.
    pub fn eval(&self, mesh: &MultirateMesh, t: f64) -> &[f64] {
        if t <= 0.0 || self.is_empty() {
            return &self.initial;
        }
        let nodes = mesh.macro_nodes();
        // macro step n with t in (t^n, t^{n+1}]
        let n = match nodes.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => i.saturating_sub(1),
            Err(i) => (i - 1).min(mesh.macro_steps() - 1),
        };
        let c = mesh.lattice_count(self.lattice, n);
        let mut m = 1;
        while m < c && mesh.lattice_node(self.lattice, n, m) < t {
            m += 1;
        }
        self.value(mesh.lattice_offset(self.lattice, n) + m - 1)
    }
}

/// `i^k`: right-endpoint values on the micro partition of `j`.
pub fn endpoint_projection<F>(
    f: F,
    mesh: &MultirateMesh,
    j: Sub,
) -> Result<PiecewiseConstant, TimeGridError>
where
    F: Fn(f64) -> Vec<f64>,
{
    project_lattice(f, mesh, Lattice::Micro(j))
}

fn project_lattice<F>(
    f: F,
    mesh: &MultirateMesh,
    lattice: Lattice,
) -> Result<PiecewiseConstant, TimeGridError>
where
    F: Fn(f64) -> Vec<f64>,
{
    let initial = f(0.0);
    let dim = initial.len();
    let mut values = Vec::with_capacity(dim * mesh.lattice_total(lattice));
    for n in 0..mesh.macro_steps() {
        for m in 1..=mesh.lattice_count(lattice, n) {
            let v = f(mesh.lattice_node(lattice, n, m));
            if v.len() != dim {
                return Err(TimeGridError::PayloadMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            values.extend_from_slice(&v);
        }
    }
    PiecewiseConstant::from_flat(lattice, initial, values)
}

/// Overlap-weighted average of `g` onto `target`. With `g` on the opposite
/// subproblem this is `I_j^k`; any source lattice is accepted.
pub fn average_onto(
    g: &PiecewiseConstant,
    mesh: &MultirateMesh,
    target: Lattice,
) -> Result<PiecewiseConstant, TimeGridError> {
    g.check_mesh(mesh)?;
    let dim = g.dim();
    let mut values = vec![0.0; dim * mesh.lattice_total(target)];
    for n in 0..mesh.macro_steps() {
        let to = mesh.lattice_offset(target, n);
        let so = mesh.lattice_offset(g.lattice(), n);
        for (mt, ms, w) in mesh.overlap_weights(target, g.lattice(), n) {
            let dst = &mut values[(to + mt) * dim..(to + mt + 1) * dim];
            let src = g.value(so + ms);
            if w == 1.0 {
                dst.copy_from_slice(src);
            } else {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    PiecewiseConstant::from_flat(target, g.initial().to_vec(), values)
}

/// `I_j^k g` for `g` living on the opposite subproblem.
pub fn transfer_average(
    g: &PiecewiseConstant,
    mesh: &MultirateMesh,
    j: Sub,
) -> Result<PiecewiseConstant, TimeGridError> {
    if g.lattice() != Lattice::Micro(j.other()) {
        return Err(TimeGridError::MeshMismatch(format!(
            "transfer onto subproblem {} expects a function on subproblem {}, got {:?}",
            j.number(),
            j.other().number(),
            g.lattice()
        )));
    }
    average_onto(g, mesh, Lattice::Micro(j))
}

/// `Ī^k` of a piecewise-constant function: exact macro-step means.
pub fn macro_average(
    g: &PiecewiseConstant,
    mesh: &MultirateMesh,
) -> Result<PiecewiseConstant, TimeGridError> {
    average_onto(g, mesh, Lattice::Macro)
}

/// `Ī^k` of a continuous function by Gauss-Legendre quadrature with `points` nodes per macro step.
pub fn macro_average_fn<F>(
    f: F,
    mesh: &MultirateMesh,
    points: usize,
) -> Result<PiecewiseConstant, TimeGridError>
where
    F: Fn(f64) -> Vec<f64>,
{
    let rule = crate::spacefem::quadrature::gauss_legendre(points);
    let initial = f(0.0);
    let dim = initial.len();
    let mut values = Vec::with_capacity(dim * mesh.macro_steps());
    for n in 0..mesh.macro_steps() {
        let a = mesh.macro_nodes()[n];
        let k = mesh.macro_len(n);
        let mut acc = vec![0.0; dim];
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            let v = f(a + x * k);
            if v.len() != dim {
                return Err(TimeGridError::PayloadMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            for (s, vi) in acc.iter_mut().zip(&v) {
                *s += w * vi;
            }
        }
        values.extend(acc);
    }
    PiecewiseConstant::from_flat(Lattice::Macro, initial, values)
}

/// `d_t^k u`: difference quotients on the lattice of `u`; the first interval
/// uses the initial value as predecessor.
pub fn discrete_time_derivative(
    u: &PiecewiseConstant,
    mesh: &MultirateMesh,
) -> Result<PiecewiseConstant, TimeGridError> {
    u.check_mesh(mesh)?;
    let dim = u.dim();
    let lattice = u.lattice();
    let mut values = Vec::with_capacity(u.values_flat().len());
    let mut prev = u.initial();
    let mut i = 0;
    for n in 0..mesh.macro_steps() {
        for m in 1..=mesh.lattice_count(lattice, n) {
            let k = mesh.lattice_node(lattice, n, m) - mesh.lattice_node(lattice, n, m - 1);
            let cur = u.value(i);
            values.extend(cur.iter().zip(prev).map(|(a, b)| (a - b) / k));
            prev = cur;
            i += 1;
        }
    }
    PiecewiseConstant::from_flat(lattice, vec![0.0; dim], values)
}

/// `∫_{I^n} g dt` per macro step, exact for piecewise constants.
pub fn macro_integrals(
    g: &PiecewiseConstant,
    mesh: &MultirateMesh,
) -> Result<Vec<Vec<f64>>, TimeGridError> {
    g.check_mesh(mesh)?;
    let lattice = g.lattice();
    let mut out = Vec::with_capacity(mesh.macro_steps());
    for n in 0..mesh.macro_steps() {
        let mut acc = vec![0.0; g.dim()];
        let off = mesh.lattice_offset(lattice, n);
        for m in 1..=mesh.lattice_count(lattice, n) {
            let k = mesh.lattice_node(lattice, n, m) - mesh.lattice_node(lattice, n, m - 1);
            for (a, v) in acc.iter_mut().zip(g.value(off + m - 1)) {
                *a += k * v;
            }
        }
        out.push(acc);
    }
    Ok(out)
}
