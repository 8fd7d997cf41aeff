//! Coupled ODE systems advanced with the multirate implicit Euler scheme.
//!
//! On each macro step all micro values of both subproblems are found by a
//! damped fixed-point iteration on
//! `u_j^m = u_j^{m-1} + k_j^m f_j(t_j^m, ·, ·)`, where the opposite
//! subproblem enters through its overlap average over the micro interval.

use std::sync::Arc;

use thiserror::Error;

use crate::study::{observed_rates, write_rate};
use crate::timegrid::{Lattice, MultirateMesh, PiecewiseConstant, Sub, TimeGridError};

pub type RhsFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type ExactFn = Arc<dyn Fn(f64) -> (Vec<f64>, Vec<f64>) + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("fixed-point iteration did not converge on macro step {step}: residual {residual:e} after {iterations} iterations")]
    IterationDiverged {
        step: usize,
        iterations: usize,
        residual: f64,
    },
    #[error("problem has no exact solution")]
    MissingExact,
    #[error("mesh horizon {mesh} differs from problem horizon {problem}")]
    HorizonMismatch { mesh: f64, problem: f64 },
    #[error("right-hand side returned {got} entries, state has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    TimeGrid(#[from] TimeGridError),
}

/// `u_1' = f_1(t, u_1, u_2)`, `u_2' = f_2(t, u_1, u_2)` on `[0, horizon]`.
#[derive(Clone)]
pub struct CoupledOdeProblem {
    pub f1: RhsFn,
    pub f2: RhsFn,
    pub u0: (Vec<f64>, Vec<f64>),
    pub horizon: f64,
    pub exact: Option<ExactFn>,
}

impl CoupledOdeProblem {
    fn rhs(&self, j: Sub, t: f64, own: &[f64], other: &[f64]) -> Vec<f64> {
        match j {
            Sub::One => (self.f1)(t, own, other),
            Sub::Two => (self.f2)(t, other, own),
        }
    }

    fn dim(&self, j: Sub) -> usize {
        match j {
            Sub::One => self.u0.0.len(),
            Sub::Two => self.u0.1.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// `θ` in `U ← U + θ (G(U) − U)`
    pub damping: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            tol: 1e-12,
            max_iter: 500,
            damping: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// number of residual evaluations
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct MultirateOdeSolution {
    pub mesh: MultirateMesh,
    pub u1: PiecewiseConstant,
    pub u2: PiecewiseConstant,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl MultirateOdeSolution {
    pub fn part(&self, j: Sub) -> &PiecewiseConstant {
        match j {
            Sub::One => &self.u1,
            Sub::Two => &self.u2,
        }
    }
}

pub fn solve_multirate(
    problem: &CoupledOdeProblem,
    mesh: &MultirateMesh,
    opts: &PicardOptions,
) -> Result<MultirateOdeSolution, OdeError> {
    let horizon = mesh.horizon();
    if (horizon - problem.horizon).abs() > 1e-12 * problem.horizon.abs().max(1.0) {
        return Err(OdeError::HorizonMismatch {
            mesh: horizon,
            problem: problem.horizon,
        });
    }
    let dims = [problem.dim(Sub::One), problem.dim(Sub::Two)];
    let mut prev = [problem.u0.0.clone(), problem.u0.1.clone()];
    let mut out: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut diagnostics = Vec::with_capacity(mesh.macro_steps());
    for n in 0..mesh.macro_steps() {
        let counts = [mesh.count(Sub::One, n), mesh.count(Sub::Two, n)];
        // U[j][m] for m = 1..=N_j, initialized with the previous end state
        let mut u: [Vec<Vec<f64>>; 2] = [
            vec![prev[0].clone(); counts[0]],
            vec![prev[1].clone(); counts[1]],
        ];
        let weights = [
            mesh.overlap_weights(Lattice::Micro(Sub::One), Lattice::Micro(Sub::Two), n),
            mesh.overlap_weights(Lattice::Micro(Sub::Two), Lattice::Micro(Sub::One), n),
        ];
        let mut iterations = 0;
        let residual = loop {
            iterations += 1;
            let g = fixed_point_map(problem, mesh, n, &prev, &u, &weights, dims)?;
            let res = u
                .iter()
                .zip(&g)
                .flat_map(|(us, gs)| {
                    us.iter()
                        .zip(gs)
                        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                })
                .fold(0.0, f64::max);
            if res <= opts.tol {
                break res;
            }
            if iterations >= opts.max_iter || !res.is_finite() {
                return Err(OdeError::IterationDiverged {
                    step: n,
                    iterations,
                    residual: res,
                });
            }
            for (us, gs) in u.iter_mut().zip(&g) {
                for (a, b) in us.iter_mut().zip(gs) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += opts.damping * (y - *x);
                    }
                }
            }
        };
        diagnostics.push(StepDiagnostics {
            iterations,
            residual,
        });
        for j in Sub::BOTH {
            let i = j.index();
            for v in &u[i] {
                out[i].extend_from_slice(v);
            }
            prev[i] = u[i].last().unwrap().clone();
        }
    }
    let [v1, v2] = out;
    Ok(MultirateOdeSolution {
        mesh: mesh.clone(),
        u1: PiecewiseConstant::from_flat(Lattice::Micro(Sub::One), problem.u0.0.clone(), v1)?,
        u2: PiecewiseConstant::from_flat(Lattice::Micro(Sub::Two), problem.u0.1.clone(), v2)?,
        diagnostics,
    })
}

/// `G(U)` of the macro step.
fn fixed_point_map(
    problem: &CoupledOdeProblem,
    mesh: &MultirateMesh,
    n: usize,
    prev: &[Vec<f64>; 2],
    u: &[Vec<Vec<f64>>; 2],
    weights: &[Vec<(usize, usize, f64)>; 2],
    dims: [usize; 2],
) -> Result<[Vec<Vec<f64>>; 2], OdeError> {
    let mut g: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for j in Sub::BOTH {
        let i = j.index();
        let o = j.other().index();
        let count = u[i].len();
        let k = mesh.macro_len(n) / count as f64;
        let mut avg = vec![vec![0.0; dims[o]]; count];
        for &(mt, ms, w) in &weights[i] {
            if w == 1.0 {
                avg[mt].copy_from_slice(&u[o][ms]);
            } else {
                for (a, b) in avg[mt].iter_mut().zip(&u[o][ms]) {
                    *a += w * b;
                }
            }
        }
        for m in 0..count {
            let t = mesh.micro_node(j, n, m + 1);
            let f = problem.rhs(j, t, &u[i][m], &avg[m]);
            if f.len() != dims[i] {
                return Err(OdeError::DimensionMismatch {
                    expected: dims[i],
                    got: f.len(),
                });
            }
            let before = if m == 0 { &prev[i] } else { &u[i][m - 1] };
            g[i].push(before.iter().zip(&f).map(|(b, fv)| b + k * fv).collect());
        }
    }
    Ok(g)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `(‖u_1^k(T) − u_1(T)‖, ‖u_2^k(T) − u_2(T)‖)`
pub fn final_time_error(
    sol: &MultirateOdeSolution,
    problem: &CoupledOdeProblem,
) -> Result<(f64, f64), OdeError> {
    let exact = problem.exact.as_ref().ok_or(OdeError::MissingExact)?;
    let (e1, e2) = exact(sol.mesh.horizon());
    Ok((
        euclid(sol.u1.final_value(), &e1),
        euclid(sol.u2.final_value(), &e2),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeRecord {
    pub level: usize,
    pub k1: f64,
    pub k2: f64,
    pub k: f64,
    pub e1: f64,
    pub e2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeRateTable {
    pub records: Vec<OdeRecord>,
    pub rate_e1: Vec<Option<f64>>,
    pub rate_e2: Vec<Option<f64>>,
}

impl OdeRateTable {
    /// Columns `level,k1,k2,k,e1,e2,rate_e1,rate_e2`; the rate columns of a
    /// row refer to the step from the previous level, undefined rates print `inf`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,k1,k2,k,e1,e2,rate_e1,rate_e2\n");
        for (i, r) in self.records.iter().enumerate() {
            let (a, b) = if i == 0 {
                (None, None)
            } else {
                (self.rate_e1[i - 1], self.rate_e2[i - 1])
            };
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{},{}\n",
                r.level,
                r.k1,
                r.k2,
                r.k,
                r.e1,
                r.e2,
                write_rate(a),
                write_rate(b)
            ));
        }
        s
    }
}

pub fn ode_convergence_study(
    problem: &CoupledOdeProblem,
    schedule: &[MultirateMesh],
    opts: &PicardOptions,
) -> Result<OdeRateTable, OdeError> {
    let mut records = Vec::with_capacity(schedule.len());
    for (level, mesh) in schedule.iter().enumerate() {
        let sol = solve_multirate(problem, mesh, opts)?;
        let (e1, e2) = final_time_error(&sol, problem)?;
        records.push(OdeRecord {
            level,
            k1: mesh.k_max(Sub::One),
            k2: mesh.k_max(Sub::Two),
            k: mesh.macro_k_max(),
            e1,
            e2,
        });
    }
    let steps = |r: &OdeRecord, k: f64| (r.level, 1.0 / k);
    let rate_e1 = observed_rates(
        &records
            .iter()
            .map(|r| (steps(r, r.k1).1, r.e1))
            .collect::<Vec<_>>(),
    );
    let rate_e2 = observed_rates(
        &records
            .iter()
            .map(|r| (steps(r, r.k2).1, r.e2))
            .collect::<Vec<_>>(),
    );
    Ok(OdeRateTable {
        records,
        rate_e1,
        rate_e2,
    })
}

/// `u_1' = −a u_1 + b u_2`, `u_2' = c u_1 − d u_2` with a polynomial-free
/// manufactured solution `u_1 = sin(t)`, `u_2 = t e^{−t}`; sources make it exact.
pub fn linear_test_problem(horizon: f64) -> CoupledOdeProblem {
    let (a, b, c, d) = (2.0, 1.0, 1.0, 3.0);
    let u1 = |t: f64| t.sin();
    let du1 = |t: f64| t.cos();
    let u2 = |t: f64| t * (-t).exp();
    let du2 = |t: f64| (1.0 - t) * (-t).exp();
    let f1: RhsFn = Arc::new(move |t, x1: &[f64], x2: &[f64]| {
        let s = du1(t) + a * u1(t) - b * u2(t);
        vec![-a * x1[0] + b * x2[0] + s]
    });
    let f2: RhsFn = Arc::new(move |t, x1: &[f64], x2: &[f64]| {
        let s = du2(t) - c * u1(t) + d * u2(t);
        vec![c * x1[0] - d * x2[0] + s]
    });
    CoupledOdeProblem {
        f1,
        f2,
        u0: (vec![0.0], vec![0.0]),
        horizon,
        exact: Some(Arc::new(move |t| (vec![u1(t)], vec![u2(t)]))),
    }
}

/// Fast subproblem 1 oscillating at angular frequency `omega`, slow
/// subproblem 2, weak linear coupling of strength `eps`:
/// `u_1 = sin(ω t)`, `u_2 = sin(t)` are exact.
pub fn fast_slow_problem(omega: f64, eps: f64, horizon: f64) -> CoupledOdeProblem {
    let u1 = move |t: f64| (omega * t).sin();
    let u2 = |t: f64| t.sin();
    let f1: RhsFn = Arc::new(move |t, x1: &[f64], x2: &[f64]| {
        vec![-x1[0] + eps * x2[0] + omega * (omega * t).cos() + u1(t) - eps * u2(t)]
    });
    let f2: RhsFn = Arc::new(move |t, x1: &[f64], x2: &[f64]| {
        vec![eps * x1[0] - x2[0] + t.cos() + u2(t) - eps * u1(t)]
    });
    CoupledOdeProblem {
        f1,
        f2,
        u0: (vec![0.0], vec![0.0]),
        horizon,
        exact: Some(Arc::new(move |t| (vec![u1(t)], vec![u2(t)]))),
    }
}
