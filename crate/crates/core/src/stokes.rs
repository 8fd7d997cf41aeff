//! Two time-dependent Stokes problems coupled by Nitsche terms, Taylor-Hood
//! elements of order `r`/`r − 1`.
//!
//! Each subproblem's dof vector is its velocity coefficients followed by its
//! pressure coefficients. The momentum rows carry the strain form, the
//! interface traction terms and `−(p, div φ)` with averaged interface
//! pressure; the continuity rows carry `(div u, ψ)` minus half the normal
//! jump of the velocity tested with `ψ`.

use std::sync::Arc;

use crate::linalg::{BlockSystem, Field, SparseMatrix};
use crate::spacefem::mesh::{build_two_pipe_mesh, BoundaryTag, CoupledMesh};
use crate::spacefem::ops::{
    divergence, interface_mass, interface_pressure, interface_strain_traction, load, mass,
    nitsche_blocks, strain_stiffness,
};
use crate::spacefem::space::{FEFunction, LagrangeSpace};
use crate::timegrid::{MultirateMesh, PiecewiseConstant, Sub};
use crate::transient::{MacroStepSolver, SolverError, SubOperators, TimeData};

pub type VectorFn = Arc<dyn Fn(Sub, [f64; 2], f64) -> [f64; 2] + Send + Sync>;

#[derive(Clone)]
pub struct StokesProblem {
    pub nu: [f64; 2],
    /// body force, zero when absent
    pub force: Option<VectorFn>,
    /// velocity on facets tagged `Inflow`; `NoSlip` facets are held at zero
    pub inflow: VectorFn,
    /// Nitsche constant, `10 · 2 max(ν) · r²` when absent
    pub gamma: Option<f64>,
    pub order: usize,
    pub horizon: f64,
}

impl StokesProblem {
    pub fn gamma(&self) -> f64 {
        self.gamma
            .unwrap_or_else(|| default_gamma(self.nu, self.order))
    }

    fn validate(&self) -> Result<(), SolverError> {
        if self.order < 2 {
            return Err(SolverError::InvalidProblem(format!(
                "Taylor-Hood needs velocity order >= 2, got {}",
                self.order
            )));
        }
        if !(self.nu[0] > 0.0 && self.nu[1] > 0.0) {
            return Err(SolverError::InvalidProblem(format!(
                "viscosities must be positive, got {:?}",
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
    10.0 * 2.0 * nu[0].max(nu[1]) * (order * order) as f64
}

/// Inflow profile of the two-pipe benchmark.
pub fn two_pipe_inflow(j: Sub, x: [f64; 2], t: f64) -> [f64; 2] {
    let y = x[1];
    let s = (std::f64::consts::PI * t).sin();
    match j {
        Sub::One => [s * y * (1.0 - y), 0.0],
        Sub::Two => [s * y * (1.0 + y), 0.0],
    }
}

/// The two-pipe problem: ν = (1, 56), parabolic inflows, no body force, `T = 1`.
/// The mesh builder is [`build_two_pipe_mesh`]; `m` cells per unit length.
pub fn two_pipe_benchmark() -> StokesProblem {
    StokesProblem {
        nu: [1.0, 56.0],
        force: None,
        inflow: Arc::new(two_pipe_inflow),
        gamma: None,
        order: 2,
        horizon: 1.0,
    }
}

pub fn two_pipe_mesh(m: usize) -> Result<CoupledMesh, SolverError> {
    Ok(build_two_pipe_mesh(m)?)
}

pub struct StokesDiscretization {
    pub mesh: CoupledMesh,
    pub velocity: [Arc<LagrangeSpace>; 2],
    pub pressure: [Arc<LagrangeSpace>; 2],
    pub gamma: f64,
    pub solver: MacroStepSolver,
    /// 1 on dofs lying on an `Inflow` facet, per subproblem
    inflow_dof: [Vec<bool>; 2],
    problem: StokesProblem,
}

fn cat(blocks: &[(&SparseMatrix, usize, usize)], rows: usize, cols: usize) -> SparseMatrix {
    let mut t = Vec::new();
    for (m, r0, c0) in blocks {
        t.extend(
            m.triplets()
                .into_iter()
                .map(|(a, b, v)| (a + r0, b + c0, v)),
        );
    }
    SparseMatrix::from_triplets(rows, cols, &t).expect("block layout in range")
}

impl StokesDiscretization {
    pub fn new(problem: &StokesProblem, cm: &CoupledMesh) -> Result<Self, SolverError> {
        problem.validate()?;
        cm.check_matching()?;
        let r = problem.order;
        let tags = [BoundaryTag::Inflow, BoundaryTag::NoSlip];
        let velocity =
            [0, 1].map(|i| LagrangeSpace::new(cm.subs[i].clone(), r, 2, &tags).map(Arc::new));
        let pressure =
            [0, 1].map(|i| LagrangeSpace::new(cm.subs[i].clone(), r - 1, 1, &[]).map(Arc::new));
        let [v1, v2] = velocity;
        let [q1, q2] = pressure;
        let velocity = [v1?, v2?];
        let pressure = [q1?, q2?];
        let gamma = problem.gamma();
        let nu = problem.nu;
        let vs = [(Sub::One, &*velocity[0]), (Sub::Two, &*velocity[1])];
        let t = [0, 1].map(|a| [0, 1].map(|b| interface_strain_traction(cm, vs[a], vs[b])));
        let jm = [0, 1].map(|a| [0, 1].map(|b| interface_mass(cm, vs[a], vs[b])));
        let bl = nitsche_blocks(&t, &jm, nu, gamma / cm.h());
        // d[j][s]: rows pressure of j, columns velocity of s
        let half_jump = |j: usize, s: usize, scale: f64| -> SparseMatrix {
            let n = cm.normal(Sub::BOTH[j]);
            interface_pressure(cm, vs[s], (Sub::BOTH[j], &*pressure[j]), n)
                .transpose()
                .scaled(scale)
        };
        let d = [0, 1].map(|j| {
            [0, 1].map(|s| {
                if s == j {
                    crate::heat::add(
                        &divergence(&pressure[j], &velocity[j]),
                        &half_jump(j, j, -0.5),
                    )
                } else {
                    half_jump(j, s, 0.5)
                }
            })
        });
        let subs = [0, 1].map(|j| {
            let o = 1 - j;
            let (nv, np) = (velocity[j].n_dofs(), pressure[j].n_dofs());
            let (ov, op) = (velocity[o].n_dofs(), pressure[o].n_dofs());
            let n = nv + np;
            let viscous =
                crate::heat::add(&strain_stiffness(&velocity[j]).scaled(nu[j]), &bl[j][j]);
            let p_own = d[j][j].transpose().scaled(-1.0);
            let p_cross = d[o][j].transpose().scaled(-1.0);
            let own = cat(
                &[(&viscous, 0, 0), (&p_own, 0, nv), (&d[j][j], nv, 0)],
                n,
                n,
            );
            let cross = cat(
                &[(&bl[j][o], 0, 0), (&p_cross, 0, ov), (&d[j][o], nv, 0)],
                n,
                ov + op,
            );
            let m = cat(&[(&mass(&velocity[j]), 0, 0)], n, n);
            let mut constrained: Vec<bool> =
                (0..nv).map(|dof| velocity[j].is_constrained(dof)).collect();
            constrained.extend(std::iter::repeat(false).take(np));
            let mut labels: Vec<(Field, usize)> =
                (0..nv).map(|dof| (Field::Primary, dof)).collect();
            labels.extend((0..np).map(|dof| (Field::Pressure, dof)));
            SubOperators {
                mass: m,
                own,
                cross,
                constrained,
                labels,
            }
        });
        let inflow_dof = [0, 1].map(|j| {
            let sp = &velocity[j];
            let mut flag = vec![false; sp.n_dofs()];
            for f in sp
                .mesh()
                .facets
                .iter()
                .filter(|f| f.tag == BoundaryTag::Inflow)
            {
                for node in sp.facet_nodes(f.side, f.index) {
                    for c in 0..2 {
                        flag[sp.dof(c, node)] = true;
                    }
                }
            }
            flag
        });
        Ok(StokesDiscretization {
            mesh: cm.clone(),
            velocity,
            pressure,
            gamma,
            solver: MacroStepSolver::new(subs)?,
            inflow_dof,
            problem: problem.clone(),
        })
    }

    pub fn n_dofs(&self, j: Sub) -> usize {
        self.velocity[j.index()].n_dofs() + self.pressure[j.index()].n_dofs()
    }

    pub fn velocity_dofs(&self, j: Sub) -> usize {
        self.velocity[j.index()].n_dofs()
    }

    pub fn initial_state(&self) -> [Vec<f64>; 2] {
        Sub::BOTH.map(|j| vec![0.0; self.n_dofs(j)])
    }

    pub fn assemble(
        &self,
        tmesh: &MultirateMesh,
        n: usize,
        prev: [&[f64]; 2],
    ) -> Result<BlockSystem, SolverError> {
        self.solver.assemble(self, tmesh, n, prev)
    }

    fn check_horizon(&self, tmesh: &MultirateMesh) -> Result<(), SolverError> {
        if (tmesh.horizon() - self.problem.horizon).abs() > 1e-12 {
            return Err(SolverError::InvalidProblem(format!(
                "time mesh ends at {}, problem horizon is {}",
                tmesh.horizon(),
                self.problem.horizon
            )));
        }
        Ok(())
    }

    pub fn solve(&self, tmesh: &MultirateMesh) -> Result<StokesTrajectory, SolverError> {
        self.check_horizon(tmesh)?;
        let parts = self.solver.solve(self, tmesh, self.initial_state())?;
        Ok(StokesTrajectory {
            mesh: tmesh.clone(),
            velocity: self.velocity.clone(),
            pressure: self.pressure.clone(),
            parts,
        })
    }

    /// Steady state of the same spatial operators with boundary data at time `t`.
    pub fn solve_steady(&self, t: f64) -> Result<[StokesState; 2], SolverError> {
        let [a, b] = self.solver.solve_steady(self, t)?;
        Ok([self.state(Sub::One, &a), self.state(Sub::Two, &b)])
    }

    pub fn state(&self, j: Sub, coeffs: &[f64]) -> StokesState {
        split_state(&self.velocity[j.index()], &self.pressure[j.index()], coeffs)
    }
}

fn split_state(v: &Arc<LagrangeSpace>, p: &Arc<LagrangeSpace>, coeffs: &[f64]) -> StokesState {
    let nv = v.n_dofs();
    StokesState {
        velocity: FEFunction {
            space: Arc::clone(v),
            coeffs: coeffs[..nv].to_vec(),
        },
        pressure: FEFunction {
            space: Arc::clone(p),
            coeffs: coeffs[nv..].to_vec(),
        },
    }
}

impl TimeData for StokesDiscretization {
    fn dirichlet(&self, j: Sub, t: f64) -> Vec<f64> {
        let sp = &self.velocity[j.index()];
        let mut out = vec![0.0; self.n_dofs(j)];
        let flags = &self.inflow_dof[j.index()];
        for node in 0..sp.n_nodes() {
            if flags[sp.dof(0, node)] {
                let u = (self.problem.inflow)(j, sp.node_coords(node), t);
                out[sp.dof(0, node)] = u[0];
                out[sp.dof(1, node)] = u[1];
            }
        }
        // nodes shared with a no-slip facet stay at zero
        for f in sp
            .mesh()
            .facets
            .iter()
            .filter(|f| f.tag == BoundaryTag::NoSlip)
        {
            for node in sp.facet_nodes(f.side, f.index) {
                out[sp.dof(0, node)] = 0.0;
                out[sp.dof(1, node)] = 0.0;
            }
        }
        out
    }

    fn source(&self, j: Sub, t: f64) -> Option<Vec<f64>> {
        let f = self.problem.force.as_ref()?;
        let mut out = load(&self.velocity[j.index()], |x| f(j, x, t).to_vec());
        out.extend(std::iter::repeat(0.0).take(self.pressure[j.index()].n_dofs()));
        Some(out)
    }
}

#[derive(Debug, Clone)]
pub struct StokesState {
    pub velocity: FEFunction,
    pub pressure: FEFunction,
}

/// Velocity and pressure coefficients per micro interval, concatenated.
#[derive(Debug, Clone)]
pub struct StokesTrajectory {
    pub mesh: MultirateMesh,
    pub velocity: [Arc<LagrangeSpace>; 2],
    pub pressure: [Arc<LagrangeSpace>; 2],
    pub parts: [PiecewiseConstant; 2],
}

impl StokesTrajectory {
    pub fn part(&self, j: Sub) -> &PiecewiseConstant {
        &self.parts[j.index()]
    }

    pub fn state(&self, j: Sub, i: usize) -> StokesState {
        split_state(
            &self.velocity[j.index()],
            &self.pressure[j.index()],
            self.parts[j.index()].value(i),
        )
    }

    pub fn final_state(&self, j: Sub) -> StokesState {
        split_state(
            &self.velocity[j.index()],
            &self.pressure[j.index()],
            self.parts[j.index()].final_value(),
        )
    }
}

pub fn assemble_stokes_macro_step(
    problem: &StokesProblem,
    cm: &CoupledMesh,
    tmesh: &MultirateMesh,
    n: usize,
    prev: [&[f64]; 2],
) -> Result<BlockSystem, SolverError> {
    StokesDiscretization::new(problem, cm)?.assemble(tmesh, n, prev)
}

pub fn solve_stokes_transient(
    problem: &StokesProblem,
    cm: &CoupledMesh,
    tmesh: &MultirateMesh,
) -> Result<StokesTrajectory, SolverError> {
    StokesDiscretization::new(problem, cm)?.solve(tmesh)
}
