//! Two heat equations coupled across an interface by Nitsche terms.
//!
//! The unknown is scalar on each side. Interface traces of the opposite
//! subproblem enter every micro step through its average over that micro
//! interval (see [`crate::transient`]).

use std::sync::Arc;

use crate::linalg::{symmetric_part_cholesky_ok, BlockSystem, Field};
use crate::spacefem::mesh::{BoundaryTag, CoupledMesh};
use crate::spacefem::ops::{
    interface_mass, interface_normal_derivative, load, mass, nitsche_blocks, stiffness,
};
use crate::spacefem::space::LagrangeSpace;
use crate::timegrid::{MultirateMesh, PiecewiseConstant, Sub};
use crate::transient::{MacroStepSolver, SolverError, SubOperators, TimeData};

pub type SpaceTimeFn = Arc<dyn Fn(Sub, [f64; 2], f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct HeatProblem {
    pub nu: [f64; 2],
    /// `f_j(x, t)`, zero when absent
    pub source: Option<SpaceTimeFn>,
    /// outer boundary values, zero when absent
    pub dirichlet: Option<SpaceTimeFn>,
    /// Nitsche constant, `10 max(ν) r²` when absent
    pub gamma: Option<f64>,
    /// `u_j(x, 0)`, zero when absent
    pub initial: Option<SpaceTimeFn>,
}

impl HeatProblem {
    pub fn new(nu: [f64; 2]) -> Self {
        HeatProblem {
            nu,
            source: None,
            dirichlet: None,
            gamma: None,
            initial: None,
        }
    }

    pub fn gamma_for(&self, order: usize) -> f64 {
        self.gamma.unwrap_or_else(|| default_gamma(self.nu, order))
    }

    fn validate(&self) -> Result<(), SolverError> {
        if !(self.nu[0] > 0.0 && self.nu[1] > 0.0) {
            return Err(SolverError::InvalidProblem(format!(
                "diffusivities must be positive, got {:?}",
                self.nu
            )));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) {
                return Err(SolverError::InvalidProblem(format!(
                    "Nitsche constant must be positive, got {g}"
                )));
            }
        }
        Ok(())
    }
}

pub fn default_gamma(nu: [f64; 2], order: usize) -> f64 {
    10.0 * nu[0].max(nu[1]) * (order * order) as f64
}

/// Spaces and assembled operators of a heat problem on a coupled mesh.
pub struct HeatDiscretization {
    pub mesh: CoupledMesh,
    pub order: usize,
    pub spaces: [Arc<LagrangeSpace>; 2],
    pub gamma: f64,
    pub solver: MacroStepSolver,
    problem: HeatProblem,
}

impl HeatDiscretization {
    pub fn new(problem: &HeatProblem, cm: &CoupledMesh, order: usize) -> Result<Self, SolverError> {
        problem.validate()?;
        cm.check_matching()?;
        let tags = [BoundaryTag::Dirichlet];
        let spaces = [
            Arc::new(LagrangeSpace::new(cm.subs[0].clone(), order, 1, &tags)?),
            Arc::new(LagrangeSpace::new(cm.subs[1].clone(), order, 1, &tags)?),
        ];
        let gamma = problem.gamma_for(order);
        let s = [(Sub::One, &*spaces[0]), (Sub::Two, &*spaces[1])];
        let t = [0, 1].map(|r| [0, 1].map(|c| interface_normal_derivative(cm, s[r], s[c])));
        let jm = [0, 1].map(|r| [0, 1].map(|c| interface_mass(cm, s[r], s[c])));
        let nu = problem.nu;
        let b = nitsche_blocks(&t, &jm, [0.5 * nu[0], 0.5 * nu[1]], gamma / cm.h());
        let subs = [0, 1].map(|i| {
            let sp = &spaces[i];
            let own = add(&stiffness(sp).scaled(nu[i]), &b[i][i]);
            SubOperators {
                mass: mass(sp),
                own,
                cross: b[i][1 - i].clone(),
                constrained: (0..sp.n_dofs()).map(|d| sp.is_constrained(d)).collect(),
                labels: (0..sp.n_dofs()).map(|d| (Field::Primary, d)).collect(),
            }
        });
        Ok(HeatDiscretization {
            mesh: cm.clone(),
            order,
            spaces,
            gamma,
            solver: MacroStepSolver::new(subs)?,
            problem: problem.clone(),
        })
    }

    pub fn initial_state(&self) -> [Vec<f64>; 2] {
        Sub::BOTH.map(|j| match &self.problem.initial {
            Some(f) => {
                self.spaces[j.index()]
                    .interpolate(|x| vec![f(j, x, 0.0)])
                    .coeffs
            }
            None => vec![0.0; self.spaces[j.index()].n_dofs()],
        })
    }

    pub fn assemble(
        &self,
        tmesh: &MultirateMesh,
        n: usize,
        prev: [&[f64]; 2],
    ) -> Result<BlockSystem, SolverError> {
        self.solver.assemble(self, tmesh, n, prev)
    }

    pub fn solve(&self, tmesh: &MultirateMesh) -> Result<TransientTrajectory, SolverError> {
        let parts = self.solver.solve(self, tmesh, self.initial_state())?;
        Ok(TransientTrajectory {
            mesh: tmesh.clone(),
            spaces: self.spaces.clone(),
            parts,
        })
    }
}

impl TimeData for HeatDiscretization {
    fn dirichlet(&self, j: Sub, t: f64) -> Vec<f64> {
        let sp = &self.spaces[j.index()];
        match &self.problem.dirichlet {
            Some(g) => sp.interpolate(|x| vec![g(j, x, t)]).coeffs,
            None => vec![0.0; sp.n_dofs()],
        }
    }

    fn source(&self, j: Sub, t: f64) -> Option<Vec<f64>> {
        let f = self.problem.source.as_ref()?;
        Some(load(&self.spaces[j.index()], |x| vec![f(j, x, t)]))
    }
}

pub(crate) fn add(
    a: &crate::linalg::SparseMatrix,
    b: &crate::linalg::SparseMatrix,
) -> crate::linalg::SparseMatrix {
    let mut t = a.triplets();
    t.extend(b.triplets());
    crate::linalg::SparseMatrix::from_triplets(a.rows(), a.cols(), &t).expect("same shape")
}

/// Coefficient vectors of both subproblems per micro interval.
#[derive(Debug, Clone)]
pub struct TransientTrajectory {
    pub mesh: MultirateMesh,
    pub spaces: [Arc<LagrangeSpace>; 2],
    pub parts: [PiecewiseConstant; 2],
}

impl TransientTrajectory {
    pub fn part(&self, j: Sub) -> &PiecewiseConstant {
        &self.parts[j.index()]
    }

    pub fn payload_count(&self) -> usize {
        self.parts[0].len() + self.parts[1].len()
    }
}

pub fn assemble_heat_macro_step(
    problem: &HeatProblem,
    cm: &CoupledMesh,
    order: usize,
    tmesh: &MultirateMesh,
    n: usize,
    prev: [&[f64]; 2],
) -> Result<BlockSystem, SolverError> {
    HeatDiscretization::new(problem, cm, order)?.assemble(tmesh, n, prev)
}

pub fn solve_heat_transient(
    problem: &HeatProblem,
    cm: &CoupledMesh,
    order: usize,
    tmesh: &MultirateMesh,
) -> Result<TransientTrajectory, SolverError> {
    HeatDiscretization::new(problem, cm, order)?.solve(tmesh)
}

/// True when the symmetric part of every macro-step matrix of `tmesh` is positive definite.
pub fn coercive_on(disc: &HeatDiscretization, tmesh: &MultirateMesh) -> Result<bool, SolverError> {
    let zero = disc.initial_state().map(|v| vec![0.0; v.len()]);
    for n in 0..tmesh.macro_steps() {
        let sys = disc.assemble(tmesh, n, [&zero[0], &zero[1]])?;
        if !symmetric_part_cholesky_ok(&sys.matrix) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `g(t) · p(x)` with `p` a polynomial in `x` on each side (coefficients by ascending power).
#[derive(Clone)]
pub struct SeparableTerm {
    pub g: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub dg: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub poly: [Vec<f64>; 2],
}

/// A closed-form 1D solution `Σ g_i(t) p_i(x)` on `(0,½) ∪ (½,1)`.
#[derive(Clone)]
pub struct ManufacturedHeat {
    pub nu: [f64; 2],
    pub terms: Vec<SeparableTerm>,
}

fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, a| acc * x + a)
}

fn poly_der(c: &[f64]) -> Vec<f64> {
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(i, a)| i as f64 * a)
        .collect()
}

/// Coefficients of `(a + b x)^p`.
fn binomial_power(a: f64, b: f64, p: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    for _ in 0..p {
        let mut next = vec![0.0; out.len() + 1];
        for (i, c) in out.iter().enumerate() {
            next[i] += a * c;
            next[i + 1] += b * c;
        }
        out = next;
    }
    out
}

fn poly_add(a: &[f64], b: &[f64], s: f64) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, v) in a.iter().enumerate() {
        out[i] += v;
    }
    for (i, v) in b.iter().enumerate() {
        out[i] += s * v;
    }
    out
}

impl ManufacturedHeat {
    pub fn value(&self, j: Sub, x: f64, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|s| (s.g)(t) * poly_eval(&s.poly[j.index()], x))
            .sum()
    }

    pub fn gradient(&self, j: Sub, x: f64, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|s| (s.g)(t) * poly_eval(&poly_der(&s.poly[j.index()]), x))
            .sum()
    }

    /// `∂_t u − ν_j ∂_xx u`
    pub fn source(&self, j: Sub, x: f64, t: f64) -> f64 {
        let nu = self.nu[j.index()];
        self.terms
            .iter()
            .map(|s| {
                let p = &s.poly[j.index()];
                (s.dg)(t) * poly_eval(p, x) - nu * (s.g)(t) * poly_eval(&poly_der(&poly_der(p)), x)
            })
            .sum()
    }

    pub fn problem(&self) -> HeatProblem {
        let me = self.clone();
        let mut p = HeatProblem::new(self.nu);
        p.source = Some(Arc::new(move |j, x, t| me.source(j, x[0], t)));
        p
    }
}

/// Piecewise cubic solution with continuous value and flux at `x = ½`,
/// vanishing at both ends, times `sin(πt)`.
pub fn manufactured_heat_1d(nu1: f64, nu2: f64) -> (HeatProblem, ManufacturedHeat) {
    let m = ManufacturedHeat {
        nu: [nu1, nu2],
        terms: vec![coupled_cubic([nu1, nu2], 1.0)],
    };
    (m.problem(), m)
}

fn coupled_cubic(nu: [f64; 2], omega: f64) -> SeparableTerm {
    let (b1, b2) = (1.0, 2.0);
    let delta = (b2 - b1) / 4.0;
    let r = -0.75 * (nu[0] * b1 + nu[1] * b2);
    let a1 = (r + nu[1] * delta) / (nu[0] + nu[1]);
    let a2 = a1 - delta;
    // a2 (1 - x) + b2 (1 - x)^3
    let p2 = poly_add(
        &binomial_power(1.0, -1.0, 1)
            .iter()
            .map(|c| a2 * c)
            .collect::<Vec<_>>(),
        &binomial_power(1.0, -1.0, 3),
        b2,
    );
    let w = omega * std::f64::consts::PI;
    SeparableTerm {
        g: Arc::new(move |t| (w * t).sin()),
        dg: Arc::new(move |t| w * (w * t).cos()),
        poly: [vec![0.0, a1, 0.0, b1], p2],
    }
}

/// The cubic of [`manufactured_heat_1d`] oscillating at `sin(π t)`, plus a
/// bubble `x(½ − x)²` in Ω1 varying as `sin(ω π t)` and a bubble
/// `(1 − x)(x − ½)²` in Ω2 varying as `sin(π t)`. The bubbles vanish at the
/// outer ends and have zero value and slope at `x = ½`.
pub fn manufactured_heat_fast_slow(
    nu1: f64,
    nu2: f64,
    omega: f64,
) -> (HeatProblem, ManufacturedHeat) {
    let bubble1 = {
        let q = binomial_power(0.5, -1.0, 2);
        let mut p = vec![0.0];
        p.extend(q);
        p
    };
    let bubble2 = {
        let q = binomial_power(-0.5, 1.0, 2);
        poly_add(
            &q,
            &{
                let mut s = vec![0.0];
                s.extend(q.iter().copied());
                s
            },
            -1.0,
        )
    };
    let w = omega * std::f64::consts::PI;
    let pi = std::f64::consts::PI;
    let terms = vec![
        coupled_cubic([nu1, nu2], 1.0),
        SeparableTerm {
            g: Arc::new(move |t| 4.0 * (w * t).sin()),
            dg: Arc::new(move |t| 4.0 * w * (w * t).cos()),
            poly: [bubble1, vec![0.0]],
        },
        SeparableTerm {
            g: Arc::new(move |t| 4.0 * (pi * t).sin()),
            dg: Arc::new(move |t| 4.0 * pi * (pi * t).cos()),
            poly: [vec![0.0], bubble2],
        },
    ];
    let m = ManufacturedHeat {
        nu: [nu1, nu2],
        terms,
    };
    (m.problem(), m)
}
