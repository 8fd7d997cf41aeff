//! Monolithic macro-step assembly shared by the heat and Stokes solvers.
//!
//! Every subproblem `j` is described by three spatial operators on its full
//! dof vector: a mass `M_j`, the own-side operator `A_j` and the coupling
//! `C_j` acting on the opposite subproblem. Rows are integrated over the
//! micro interval, so micro step `m` of length `w` reads
//!
//! `M_j (u^m − u^{m−1}) + w A_j u^m + Σ_{m'} |I^m ∩ I^{m'}| C_j u_ĵ^{m'} = w F_j(t^m)`.
//!
//! Constrained dofs are eliminated with their values taken at the micro
//! endpoint.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::linalg::{Block, BlockSystem, Field, LinalgError, LuFactor, SparseMatrix, UnknownLabel};
use crate::spacefem::FemError;
use crate::timegrid::{Lattice, MultirateMesh, PiecewiseConstant, Sub, TimeGridError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    TimeGrid(#[from] TimeGridError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone)]
pub struct SubOperators {
    pub mass: SparseMatrix,
    pub own: SparseMatrix,
    /// rows this subproblem, columns the opposite one
    pub cross: SparseMatrix,
    pub constrained: Vec<bool>,
    /// `(field, index within the field's space)` of every dof
    pub labels: Vec<(Field, usize)>,
}

impl SubOperators {
    pub fn n_dofs(&self) -> usize {
        self.constrained.len()
    }
}

/// Time-dependent data of a discretized problem, as full dof vectors.
pub trait TimeData: Sync {
    /// Values at constrained dofs; other entries are ignored.
    fn dirichlet(&self, j: Sub, t: f64) -> Vec<f64>;
    /// Load vector, `None` for a vanishing source.
    fn source(&self, j: Sub, t: f64) -> Option<Vec<f64>>;
}

type CacheKey = (u64, usize, usize);

struct Factored {
    matrix: SparseMatrix,
    lu: LuFactor,
}

pub struct MacroStepSolver {
    pub subs: [SubOperators; 2],
    free: [Vec<usize>; 2],
    cache: Mutex<HashMap<CacheKey, Arc<Factored>>>,
}

impl std::fmt::Debug for MacroStepSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "MacroStepSolver({} + {} dofs)",
            self.subs[0].n_dofs(),
            self.subs[1].n_dofs()
        )
    }
}

/// Layout of the unknowns of one macro step: sub 1 micro steps first.
struct Layout {
    counts: [usize; 2],
    nfree: [usize; 2],
}

impl Layout {
    fn offset(&self, j: Sub, m: usize) -> usize {
        match j {
            Sub::One => m * self.nfree[0],
            Sub::Two => self.counts[0] * self.nfree[0] + m * self.nfree[1],
        }
    }

    fn dim(&self) -> usize {
        self.counts[0] * self.nfree[0] + self.counts[1] * self.nfree[1]
    }
}

impl MacroStepSolver {
    pub fn new(subs: [SubOperators; 2]) -> Result<Self, SolverError> {
        for j in Sub::BOTH {
            let s = &subs[j.index()];
            let n = s.n_dofs();
            let o = subs[j.other().index()].n_dofs();
            let ok = s.mass.rows() == n
                && s.mass.cols() == n
                && s.own.rows() == n
                && s.own.cols() == n
                && s.cross.rows() == n
                && s.cross.cols() == o
                && s.labels.len() == n;
            if !ok {
                return Err(SolverError::InvalidProblem(format!(
                    "operator shapes of subproblem {} disagree",
                    j.number()
                )));
            }
        }
        let free = [0, 1].map(|i| {
            (0..subs[i].n_dofs())
                .filter(|&d| !subs[i].constrained[d])
                .collect::<Vec<_>>()
        });
        Ok(MacroStepSolver {
            subs,
            free,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn free_dofs(&self, j: Sub) -> &[usize] {
        &self.free[j.index()]
    }

    fn layout(&self, counts: [usize; 2]) -> Layout {
        Layout {
            counts,
            nfree: [self.free[0].len(), self.free[1].len()],
        }
    }

    fn position_maps(&self) -> [Vec<usize>; 2] {
        [0, 1].map(|i| {
            let mut pos = vec![usize::MAX; self.subs[i].n_dofs()];
            for (p, &d) in self.free[i].iter().enumerate() {
                pos[d] = p;
            }
            pos
        })
    }

    /// Matrix of a macro step of length `k` with micro counts `counts`;
    /// `with_mass = false` gives the steady operator (then `counts` must be `[1, 1]`).
    fn assemble_matrix(&self, k: f64, counts: [usize; 2], with_mass: bool) -> SparseMatrix {
        let lay = self.layout(counts);
        let pos = self.position_maps();
        let mesh = MultirateMesh::uniform_with_counts(1, k, counts).expect("valid counts");
        let mut t = Vec::new();
        for j in Sub::BOTH {
            let i = j.index();
            let o = j.other().index();
            let s = &self.subs[i];
            let w = k / counts[i] as f64;
            let ov = mesh.overlap_lengths(Lattice::Micro(j), Lattice::Micro(j.other()), 0);
            for m in 0..counts[i] {
                let row0 = lay.offset(j, m);
                let mut push_local = |mat: &SparseMatrix, scale: f64, col0: usize| {
                    for (a, b, v) in mat.triplets() {
                        let (pa, pb) = (pos[i][a], pos[i][b]);
                        if pa != usize::MAX && pb != usize::MAX {
                            t.push((row0 + pa, col0 + pb, scale * v));
                        }
                    }
                };
                if with_mass {
                    push_local(&s.mass, 1.0, row0);
                    if m > 0 {
                        push_local(&s.mass, -1.0, lay.offset(j, m - 1));
                    }
                }
                push_local(&s.own, if with_mass { w } else { 1.0 }, row0);
                for &(mt, ms, len) in ov.iter().filter(|e| e.0 == m) {
                    debug_assert_eq!(mt, m);
                    let col0 = lay.offset(j.other(), ms);
                    let scale = if with_mass { len } else { 1.0 };
                    for (a, b, v) in s.cross.triplets() {
                        let (pa, pb) = (pos[i][a], pos[o][b]);
                        if pa != usize::MAX && pb != usize::MAX {
                            t.push((row0 + pa, col0 + pb, scale * v));
                        }
                    }
                }
            }
        }
        SparseMatrix::from_triplets(lay.dim(), lay.dim(), &t).expect("indices in range")
    }

    fn factored(&self, k: f64, counts: [usize; 2]) -> Result<Arc<Factored>, SolverError> {
        let key = (k.to_bits(), counts[0], counts[1]);
        if let Some(f) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(f));
        }
        let matrix = self.assemble_matrix(k, counts, true);
        let lu = LuFactor::new(&matrix)?;
        let f = Arc::new(Factored { matrix, lu });
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, Arc::clone(&f));
        Ok(f)
    }

    /// Full vectors holding the Dirichlet values at the micro endpoints, zero elsewhere.
    fn known(&self, data: &dyn TimeData, mesh: &MultirateMesh, n: usize) -> [Vec<Vec<f64>>; 2] {
        Sub::BOTH.map(|j| {
            let s = &self.subs[j.index()];
            (1..=mesh.count(j, n))
                .map(|m| {
                    let t = mesh.micro_node(j, n, m);
                    let g = data.dirichlet(j, t);
                    (0..s.n_dofs())
                        .map(|d| if s.constrained[d] { g[d] } else { 0.0 })
                        .collect()
                })
                .collect()
        })
    }

    fn assemble_rhs(
        &self,
        data: &dyn TimeData,
        mesh: &MultirateMesh,
        n: usize,
        prev: [&[f64]; 2],
        known: &[Vec<Vec<f64>>; 2],
    ) -> Vec<f64> {
        let counts = [mesh.count(Sub::One, n), mesh.count(Sub::Two, n)];
        let lay = self.layout(counts);
        let mut rhs = vec![0.0; lay.dim()];
        for j in Sub::BOTH {
            let i = j.index();
            let s = &self.subs[i];
            let w = mesh.macro_len(n) / counts[i] as f64;
            let ov = mesh.overlap_lengths(Lattice::Micro(j), Lattice::Micro(j.other()), n);
            for m in 0..counts[i] {
                let t = mesh.micro_node(j, n, m + 1);
                let mut r = match data.source(j, t) {
                    Some(f) => f.into_iter().map(|v| w * v).collect(),
                    None => vec![0.0; s.n_dofs()],
                };
                let z = &known[i][m];
                s.mass.mul_vec_add(-1.0, z, &mut r);
                s.own.mul_vec_add(-w, z, &mut r);
                let before: &[f64] = if m == 0 { prev[i] } else { &known[i][m - 1] };
                s.mass.mul_vec_add(1.0, before, &mut r);
                for &(_, ms, len) in ov.iter().filter(|e| e.0 == m) {
                    s.cross
                        .mul_vec_add(-len, &known[j.other().index()][ms], &mut r);
                }
                let off = lay.offset(j, m);
                for (p, &d) in self.free[i].iter().enumerate() {
                    rhs[off + p] = r[d];
                }
            }
        }
        rhs
    }

    fn scatter(
        &self,
        x: &[f64],
        lay: &Layout,
        mut known: [Vec<Vec<f64>>; 2],
    ) -> [Vec<Vec<f64>>; 2] {
        for j in Sub::BOTH {
            let i = j.index();
            for (m, v) in known[i].iter_mut().enumerate() {
                let off = lay.offset(j, m);
                for (p, &d) in self.free[i].iter().enumerate() {
                    v[d] = x[off + p];
                }
            }
        }
        known
    }

    fn labels(&self, counts: [usize; 2]) -> (Vec<Block>, Vec<UnknownLabel>) {
        let lay = self.layout(counts);
        let mut blocks = Vec::new();
        let mut labels = Vec::with_capacity(lay.dim());
        for j in Sub::BOTH {
            let i = j.index();
            for m in 0..counts[i] {
                blocks.push(Block {
                    name: format!("u{}^{}", j.number(), m + 1),
                    offset: lay.offset(j, m),
                    size: lay.nfree[i],
                });
                for &d in &self.free[i] {
                    let (field, dof) = self.subs[i].labels[d];
                    labels.push(UnknownLabel {
                        sub: j,
                        micro: m + 1,
                        field,
                        dof,
                    });
                }
            }
        }
        (blocks, labels)
    }

    /// The linear system of macro step `n` given the end state `prev` of step `n − 1`.
    pub fn assemble(
        &self,
        data: &dyn TimeData,
        mesh: &MultirateMesh,
        n: usize,
        prev: [&[f64]; 2],
    ) -> Result<BlockSystem, SolverError> {
        self.check_prev(prev)?;
        let counts = [mesh.count(Sub::One, n), mesh.count(Sub::Two, n)];
        let matrix = self.assemble_matrix(mesh.macro_len(n), counts, true);
        let known = self.known(data, mesh, n);
        let rhs = self.assemble_rhs(data, mesh, n, prev, &known);
        let (blocks, labels) = self.labels(counts);
        Ok(BlockSystem {
            blocks,
            matrix,
            rhs,
            labels,
        })
    }

    fn check_prev(&self, prev: [&[f64]; 2]) -> Result<(), SolverError> {
        for j in Sub::BOTH {
            if prev[j.index()].len() != self.subs[j.index()].n_dofs() {
                return Err(SolverError::InvalidProblem(format!(
                    "state of subproblem {} has {} entries, expected {}",
                    j.number(),
                    prev[j.index()].len(),
                    self.subs[j.index()].n_dofs()
                )));
            }
        }
        Ok(())
    }

    /// Full micro-step vectors of macro step `n`.
    pub fn solve_step(
        &self,
        data: &dyn TimeData,
        mesh: &MultirateMesh,
        n: usize,
        prev: [&[f64]; 2],
    ) -> Result<[Vec<Vec<f64>>; 2], SolverError> {
        self.check_prev(prev)?;
        let counts = [mesh.count(Sub::One, n), mesh.count(Sub::Two, n)];
        let f = self.factored(mesh.macro_len(n), counts)?;
        debug_assert_eq!(f.matrix.rows(), self.layout(counts).dim());
        let known = self.known(data, mesh, n);
        let rhs = self.assemble_rhs(data, mesh, n, prev, &known);
        let x = f.lu.solve(&rhs)?;
        Ok(self.scatter(&x, &self.layout(counts), known))
    }

    /// March over all macro steps from `initial`.
    pub fn solve(
        &self,
        data: &dyn TimeData,
        mesh: &MultirateMesh,
        initial: [Vec<f64>; 2],
    ) -> Result<[PiecewiseConstant; 2], SolverError> {
        let mut prev = initial.clone();
        let mut out: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for n in 0..mesh.macro_steps() {
            let step = self.solve_step(data, mesh, n, [&prev[0], &prev[1]])?;
            for (i, vs) in step.into_iter().enumerate() {
                for v in &vs {
                    out[i].extend_from_slice(v);
                }
                prev[i] = vs.into_iter().last().expect("at least one micro step");
            }
        }
        let [i1, i2] = initial;
        let [o1, o2] = out;
        Ok([
            PiecewiseConstant::from_flat(Lattice::Micro(Sub::One), i1, o1)?,
            PiecewiseConstant::from_flat(Lattice::Micro(Sub::Two), i2, o2)?,
        ])
    }

    /// Steady state `A u + C u_ĵ = F(t)` with constraints at time `t`.
    pub fn solve_steady(&self, data: &dyn TimeData, t: f64) -> Result<[Vec<f64>; 2], SolverError> {
        let matrix = self.assemble_matrix(1.0, [1, 1], false);
        let lay = self.layout([1, 1]);
        let known: [Vec<f64>; 2] = Sub::BOTH.map(|j| {
            let s = &self.subs[j.index()];
            let g = data.dirichlet(j, t);
            (0..s.n_dofs())
                .map(|d| if s.constrained[d] { g[d] } else { 0.0 })
                .collect()
        });
        let mut rhs = vec![0.0; lay.dim()];
        for j in Sub::BOTH {
            let i = j.index();
            let s = &self.subs[i];
            let mut r = data.source(j, t).unwrap_or_else(|| vec![0.0; s.n_dofs()]);
            s.own.mul_vec_add(-1.0, &known[i], &mut r);
            s.cross.mul_vec_add(-1.0, &known[j.other().index()], &mut r);
            let off = lay.offset(j, 0);
            for (p, &d) in self.free[i].iter().enumerate() {
                rhs[off + p] = r[d];
            }
        }
        let x = LuFactor::new(&matrix)?.solve(&rhs)?;
        let [a, b] = self.scatter(&x, &lay, known.map(|v| vec![v]));
        Ok([a.into_iter().next().unwrap(), b.into_iter().next().unwrap()])
    }
}
