//! Error measurement against exact or reference trajectories, refinement
//! schedules, rate tables and CSV output.
//!
//! Velocity quantities follow the energy norm of the error:
//! `‖e(T)‖² + ∫ Σ_j ν_j² ‖∇e_j‖² + (γ/h) ∫ ‖e_2 − e_1‖²_Γ`; pressure
//! quantities are `∫ ‖η_j‖²`. Time integrals of piecewise constant
//! integrands are summed exactly over the common refinement of all time
//! partitions involved.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heat::{
    manufactured_heat_1d, HeatDiscretization, ManufacturedHeat, TransientTrajectory,
};
use crate::linalg::SparseMatrix;
use crate::ode::{
    fast_slow_problem, linear_test_problem, ode_convergence_study, OdeError, OdeRateTable,
    PicardOptions,
};
use crate::spacefem::mesh::{build_coupled_mesh_1d, CoupledMesh};
use crate::spacefem::norms::{h1_error, interface_jump_error_sq, l2_error};
use crate::spacefem::ops::{interface_mass, mass, stiffness};
use crate::spacefem::space::{FEFunction, LagrangeSpace};
use crate::stokes::{two_pipe_benchmark, two_pipe_mesh, StokesDiscretization, StokesTrajectory};
use crate::timegrid::{Lattice, MultirateMesh, PiecewiseConstant, Sub, TimeGridError};
use crate::transient::SolverError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StudyError {
    #[error("trajectories live on different spatial meshes: {0}")]
    MeshMismatch(String),
    #[error("invalid study configuration: {0}")]
    Config(String),
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    TimeGrid(#[from] TimeGridError),
}

/// Rates `log(E_i / E_{i+1}) / log(n_{i+1} / n_i)` between consecutive
/// entries `(n_i, E_i)`; `None` where an error is not positive and finite.
pub fn observed_rates(table: &[(f64, f64)]) -> Vec<Option<f64>> {
    table
        .windows(2)
        .map(|w| {
            let ((n0, e0), (n1, e1)) = (w[0], w[1]);
            let ok = |e: f64| e > 0.0 && e.is_finite();
            if ok(e0) && ok(e1) && n1 > n0 {
                Some((e0 / e1).ln() / (n1 / n0).ln())
            } else {
                None
            }
        })
        .collect()
}

/// CSV spelling of a rate; undefined rates print as `inf`.
pub fn write_rate(r: Option<f64>) -> String {
    match r {
        Some(v) => format!("{v:e}"),
        None => "inf".to_string(),
    }
}

fn read_rate(s: &str) -> Result<Option<f64>, StudyError> {
    if s == "inf" {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| StudyError::Csv(format!("bad rate {s:?}")))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorRecord {
    pub level: usize,
    pub n_steps: [usize; 2],
    pub k: [f64; 2],
    pub h: f64,
    /// `‖e(T)‖²_Ω`
    pub final_sq: f64,
    /// `∫ ν_j² ‖∇e_j‖²`
    pub velocity_sq_sub: [f64; 2],
    /// `(γ/h) ∫ ‖e_2 − e_1‖²_Γ`
    pub jump_sq: f64,
    pub velocity_sq_total: f64,
    pub pressure_sq_sub: [f64; 2],
    pub pressure_sq_total: f64,
}

impl ErrorRecord {
    fn finish(mut self) -> Self {
        self.velocity_sq_total =
            self.final_sq + self.velocity_sq_sub[0] + self.velocity_sq_sub[1] + self.jump_sq;
        self.pressure_sq_total = self.pressure_sq_sub[0] + self.pressure_sq_sub[1];
        self
    }

    fn with_mesh(mut self, level: usize, mesh: &MultirateMesh, h: f64) -> Self {
        self.level = level;
        self.n_steps = [mesh.micro_total(Sub::One), mesh.micro_total(Sub::Two)];
        self.k = [mesh.k_max(Sub::One), mesh.k_max(Sub::Two)];
        self.h = h;
        self
    }

    /// The larger step count, which is the refined one in every schedule.
    pub fn steps(&self) -> usize {
        self.n_steps[0].max(self.n_steps[1])
    }
}

/// Error records of one study with rates between consecutive levels.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub records: Vec<ErrorRecord>,
    pub rate_velocity: Vec<Option<f64>>,
    pub rate_pressure: Vec<Option<f64>>,
}

pub const CSV_HEADER: &str = "level,n_steps_1,n_steps_2,h,velocity_sq_total,velocity_sq_sub1,velocity_sq_sub2,pressure_sq_total,pressure_sq_sub1,pressure_sq_sub2,rate_velocity,rate_pressure";

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub level: usize,
    pub n_steps: [usize; 2],
    pub h: f64,
    pub velocity_sq_total: f64,
    pub velocity_sq_sub: [f64; 2],
    pub pressure_sq_total: f64,
    pub pressure_sq_sub: [f64; 2],
    pub rate_velocity: Option<f64>,
    pub rate_pressure: Option<f64>,
}

impl RateTable {
    pub fn new(mut records: Vec<ErrorRecord>) -> Self {
        records.sort_by_key(|r| r.level);
        let rate = |f: fn(&ErrorRecord) -> f64| {
            observed_rates(
                &records
                    .iter()
                    .map(|r| (r.steps() as f64, f(r)))
                    .collect::<Vec<_>>(),
            )
        };
        let rate_velocity = rate(|r| r.velocity_sq_total);
        let rate_pressure = rate(|r| r.pressure_sq_total);
        RateTable {
            records,
            rate_velocity,
            rate_pressure,
        }
    }

    /// Row `i > 0` carries the rates from level `i − 1` to `i`.
    pub fn rows(&self) -> Vec<CsvRow> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| CsvRow {
                level: r.level,
                n_steps: r.n_steps,
                h: r.h,
                velocity_sq_total: r.velocity_sq_total,
                velocity_sq_sub: r.velocity_sq_sub,
                pressure_sq_total: r.pressure_sq_total,
                pressure_sq_sub: r.pressure_sq_sub,
                rate_velocity: if i == 0 {
                    None
                } else {
                    self.rate_velocity[i - 1]
                },
                rate_pressure: if i == 0 {
                    None
                } else {
                    self.rate_pressure[i - 1]
                },
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in self.rows() {
            writeln!(
                s,
                "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
                r.level,
                r.n_steps[0],
                r.n_steps[1],
                r.h,
                r.velocity_sq_total,
                r.velocity_sq_sub[0],
                r.velocity_sq_sub[1],
                r.pressure_sq_total,
                r.pressure_sq_sub[0],
                r.pressure_sq_sub[1],
                write_rate(r.rate_velocity),
                write_rate(r.rate_pressure)
            )
            .expect("write to string");
        }
        s
    }
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, StudyError> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(StudyError::Csv("unexpected header".into()));
    }
    let num = |s: &str| -> Result<f64, StudyError> {
        s.parse()
            .map_err(|_| StudyError::Csv(format!("bad number {s:?}")))
    };
    let int = |s: &str| -> Result<usize, StudyError> {
        s.parse()
            .map_err(|_| StudyError::Csv(format!("bad integer {s:?}")))
    };
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 12 {
                return Err(StudyError::Csv(format!(
                    "expected 12 fields, got {}",
                    f.len()
                )));
            }
            Ok(CsvRow {
                level: int(f[0])?,
                n_steps: [int(f[1])?, int(f[2])?],
                h: num(f[3])?,
                velocity_sq_total: num(f[4])?,
                velocity_sq_sub: [num(f[5])?, num(f[6])?],
                pressure_sq_total: num(f[7])?,
                pressure_sq_sub: [num(f[8])?, num(f[9])?],
                rate_velocity: read_rate(f[10])?,
                rate_pressure: read_rate(f[11])?,
            })
        })
        .collect()
}

/// gnuplot commands plotting the totals of `csv_name` against the step count.
pub fn gnuplot_script(csv_name: &str, title: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set logscale xy\n\
         set key top right\n\
         set xlabel 'time steps'\n\
         set ylabel 'squared error'\n\
         set title '{title}'\n\
         set terminal pngcairo size 900,600\n\
         set output '{stem}.png'\n\
         plot '{csv_name}' using (($2>$3)?$2:$3):5 skip 1 with linespoints title 'velocity total', \\\n\
         \x20    '' using (($2>$3)?$2:$3):6 skip 1 with linespoints title 'velocity sub 1', \\\n\
         \x20    '' using (($2>$3)?$2:$3):7 skip 1 with linespoints title 'velocity sub 2', \\\n\
         \x20    '' using (($2>$3)?$2:$3):8 skip 1 with linespoints title 'pressure total'\n",
        stem = csv_name.trim_end_matches(".csv"),
    )
}

/// Breakpoints shared by several piecewise constant functions: returns
/// `(length, interval index in each function)` for every common interval.
pub fn common_refinement(parts: &[(&PiecewiseConstant, &MultirateMesh)]) -> Vec<(f64, Vec<usize>)> {
    let nodes: Vec<Vec<f64>> = parts
        .iter()
        .map(|(p, m)| lattice_nodes(m, p.lattice()))
        .collect();
    let mut all: Vec<f64> = nodes.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    let scale = all.last().copied().unwrap_or(1.0).abs().max(1.0);
    all.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * scale);
    all.windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            let idx = nodes
                .iter()
                .map(|ns| ns.partition_point(|&t| t < mid) - 1)
                .collect();
            (w[1] - w[0], idx)
        })
        .collect()
}

fn lattice_nodes(mesh: &MultirateMesh, lattice: Lattice) -> Vec<f64> {
    match lattice {
        Lattice::Micro(j) => mesh.micro_nodes(j),
        Lattice::Macro => mesh.macro_nodes().to_vec(),
    }
}

/// Spatial operators turning coefficient differences into the error quantities.
pub struct NormOperators {
    pub nu: [f64; 2],
    /// `γ/h`
    pub kappa: f64,
    /// number of velocity (primary) coefficients at the front of each payload
    pub primary_len: [usize; 2],
    pub mass: [SparseMatrix; 2],
    pub grad: [SparseMatrix; 2],
    pub jump: [[SparseMatrix; 2]; 2],
    pub pressure_mass: Option<[SparseMatrix; 2]>,
    pub h: f64,
}

impl NormOperators {
    fn build(cm: &CoupledMesh, spaces: [&LagrangeSpace; 2], nu: [f64; 2], gamma: f64) -> Self {
        let s = [(Sub::One, spaces[0]), (Sub::Two, spaces[1])];
        NormOperators {
            nu,
            kappa: gamma / cm.h(),
            primary_len: [spaces[0].n_dofs(), spaces[1].n_dofs()],
            mass: [mass(spaces[0]), mass(spaces[1])],
            grad: [stiffness(spaces[0]), stiffness(spaces[1])],
            jump: [0, 1].map(|a| [0, 1].map(|b| interface_mass(cm, s[a], s[b]))),
            pressure_mass: None,
            h: cm.h(),
        }
    }

    pub fn for_heat(d: &HeatDiscretization, nu: [f64; 2]) -> Self {
        Self::build(&d.mesh, [&d.spaces[0], &d.spaces[1]], nu, d.gamma)
    }

    pub fn for_stokes(d: &StokesDiscretization, nu: [f64; 2]) -> Self {
        let mut n = Self::build(&d.mesh, [&d.velocity[0], &d.velocity[1]], nu, d.gamma);
        n.pressure_mass = Some([mass(&d.pressure[0]), mass(&d.pressure[1])]);
        n
    }

    fn payload_len(&self, j: usize) -> usize {
        self.primary_len[j] + self.pressure_mass.as_ref().map_or(0, |m| m[j].rows())
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Error quantities of `(traj, traj_mesh)` against `(reference, ref_mesh)`,
/// both given as payloads per subproblem on the same spatial discretization.
pub fn error_norms(
    ops: &NormOperators,
    traj: [&PiecewiseConstant; 2],
    traj_mesh: &MultirateMesh,
    reference: [&PiecewiseConstant; 2],
    ref_mesh: &MultirateMesh,
) -> Result<ErrorRecord, StudyError> {
    for j in 0..2 {
        let want = ops.payload_len(j);
        if traj[j].dim() != want || reference[j].dim() != want {
            return Err(StudyError::MeshMismatch(format!(
                "subproblem {}: payloads of length {} and {} for {} dofs",
                j + 1,
                traj[j].dim(),
                reference[j].dim(),
                want
            )));
        }
        traj[j].check_mesh(traj_mesh)?;
        reference[j].check_mesh(ref_mesh)?;
    }
    if (traj_mesh.horizon() - ref_mesh.horizon()).abs() > 1e-12 {
        return Err(StudyError::MeshMismatch("time horizons differ".into()));
    }
    let mut rec = ErrorRecord::default();
    for j in 0..2 {
        let e = diff(traj[j].final_value(), reference[j].final_value());
        let nv = ops.primary_len[j];
        rec.final_sq += ops.mass[j].bilinear(&e[..nv], &e[..nv]);
        for (len, idx) in common_refinement(&[(traj[j], traj_mesh), (reference[j], ref_mesh)]) {
            let e = diff(traj[j].value(idx[0]), reference[j].value(idx[1]));
            let nu2 = ops.nu[j] * ops.nu[j];
            rec.velocity_sq_sub[j] += len * nu2 * ops.grad[j].bilinear(&e[..nv], &e[..nv]);
            if let Some(pm) = &ops.pressure_mass {
                rec.pressure_sq_sub[j] += len * pm[j].bilinear(&e[nv..], &e[nv..]);
            }
        }
    }
    let parts = [
        (traj[0], traj_mesh),
        (traj[1], traj_mesh),
        (reference[0], ref_mesh),
        (reference[1], ref_mesh),
    ];
    for (len, idx) in common_refinement(&parts) {
        let e1 = diff(
            &traj[0].value(idx[0])[..ops.primary_len[0]],
            &reference[0].value(idx[2])[..ops.primary_len[0]],
        );
        let e2 = diff(
            &traj[1].value(idx[1])[..ops.primary_len[1]],
            &reference[1].value(idx[3])[..ops.primary_len[1]],
        );
        let j = ops.jump[0][0].bilinear(&e1, &e1) - 2.0 * ops.jump[0][1].bilinear(&e1, &e2)
            + ops.jump[1][1].bilinear(&e2, &e2);
        rec.jump_sq += len * ops.kappa * j.max(0.0);
    }
    Ok(rec.finish())
}

/// Error quantities of a heat trajectory against a closed-form solution
/// evaluated at the right end of every micro interval.
pub fn heat_error_exact(
    traj: &TransientTrajectory,
    exact: &ManufacturedHeat,
    kappa: f64,
) -> Result<ErrorRecord, StudyError> {
    let mesh = &traj.mesh;
    let func = |j: Sub, i: usize| FEFunction {
        space: Arc::clone(&traj.spaces[j.index()]),
        coeffs: traj.part(j).value(i).to_vec(),
    };
    let t_end = mesh.horizon();
    let mut rec = ErrorRecord::default();
    for j in Sub::BOTH {
        let nu = exact.nu[j.index()];
        rec.final_sq += l2_error(&func(j, traj.part(j).len() - 1), |x| {
            vec![exact.value(j, x[0], t_end)]
        })
        .powi(2);
        for (i, iv) in mesh.micro_intervals(j).iter().enumerate() {
            let e = h1_error(&func(j, i), |x| {
                vec![[exact.gradient(j, x[0], iv.end), 0.0]]
            });
            rec.velocity_sq_sub[j.index()] += (iv.end - iv.start) * nu * nu * e * e;
        }
    }
    let parts = [(traj.part(Sub::One), mesh), (traj.part(Sub::Two), mesh)];
    let ends = [mesh.micro_nodes(Sub::One), mesh.micro_nodes(Sub::Two)];
    for (len, idx) in common_refinement(&parts) {
        let u = [func(Sub::One, idx[0]), func(Sub::Two, idx[1])];
        let t = [ends[0][idx[0] + 1], ends[1][idx[1] + 1]];
        let cm = coupled_mesh_of(traj);
        let jump = interface_jump_error_sq(&cm, [&u[0], &u[1]], |j, x| {
            vec![exact.value(j, x[0], t[j.index()])]
        });
        rec.jump_sq += len * kappa * jump;
    }
    Ok(rec.finish())
}

fn coupled_mesh_of(traj: &TransientTrajectory) -> CoupledMesh {
    let a = traj.spaces[0].mesh();
    let b = traj.spaces[1].mesh();
    let split = b.origin[0];
    build_coupled_mesh_1d(
        split,
        a.h[0],
        (a.origin[0], b.origin[0] + b.cells[0] as f64 * b.h[0]),
    )
    .expect("1D trajectory mesh")
}

/// Single-rate uniform solve with `n_ref` macro steps on the same spatial discretization.
pub fn reference_solution(
    disc: &StokesDiscretization,
    horizon: f64,
    n_ref: usize,
) -> Result<StokesTrajectory, StudyError> {
    Ok(disc.solve(&MultirateMesh::uniform(n_ref, horizon)?)?)
}

pub fn heat_reference_solution(
    disc: &HeatDiscretization,
    horizon: f64,
    n_ref: usize,
) -> Result<TransientTrajectory, StudyError> {
    Ok(disc.solve(&MultirateMesh::uniform(n_ref, horizon)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Ode,
    Heat,
    Stokes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Uniform,
    RefineSub1Only,
    RefineSub2Only,
}

impl FromStr for Schedule {
    type Err = StudyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| StudyError::Config(format!("unknown schedule {s:?}")))
    }
}

impl Schedule {
    /// One refinement of `mesh` under this schedule.
    pub fn refine(self, mesh: &MultirateMesh) -> Result<MultirateMesh, TimeGridError> {
        match self {
            Schedule::Uniform => mesh.refine_all(Sub::One)?.refine_all(Sub::Two),
            Schedule::RefineSub1Only => mesh.refine_all(Sub::One),
            Schedule::RefineSub2Only => mesh.refine_all(Sub::Two),
        }
    }

    /// `levels` meshes starting from `start`.
    pub fn meshes(
        self,
        start: &MultirateMesh,
        levels: usize,
    ) -> Result<Vec<MultirateMesh>, TimeGridError> {
        let mut out = vec![start.clone()];
        while out.len() < levels {
            let next = self.refine(out.last().expect("nonempty"))?;
            out.push(next);
        }
        out.truncate(levels);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeProblemKind {
    Linear,
    FastSlow,
}

/// Study definition; `None` fields take the documented per-kind defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub kind: StudyKind,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// cells per unit length
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space_m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_r: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default = "default_initial_steps")]
    pub initial_steps: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// explicit level-0 time mesh, replacing the uniform one
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_mesh: Option<MultirateMesh>,
    /// heat only: measure against the closed-form solution (true) or a fine single-rate reference
    #[serde(default = "default_true")]
    pub manufactured: bool,
    #[serde(default = "default_n_ref")]
    pub n_ref: usize,
    #[serde(default = "default_ode_problem")]
    pub ode_problem: OdeProblemKind,
}

fn default_schedule() -> Schedule {
    Schedule::Uniform
}
fn default_levels() -> usize {
    4
}
fn default_initial_steps() -> usize {
    4
}
fn default_horizon() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_n_ref() -> usize {
    1024
}
fn default_ode_problem() -> OdeProblemKind {
    OdeProblemKind::Linear
}

impl StudyConfig {
    pub fn new(kind: StudyKind) -> Self {
        StudyConfig {
            kind,
            schedule: default_schedule(),
            levels: default_levels(),
            space_m: None,
            order_r: None,
            nu1: None,
            nu2: None,
            gamma: None,
            initial_steps: default_initial_steps(),
            horizon: default_horizon(),
            output_dir: None,
            time_mesh: None,
            manufactured: true,
            n_ref: default_n_ref(),
            ode_problem: default_ode_problem(),
        }
    }

    pub fn nu(&self) -> [f64; 2] {
        let d = match self.kind {
            StudyKind::Stokes => [1.0, 56.0],
            _ => [1.0, 2.0],
        };
        [self.nu1.unwrap_or(d[0]), self.nu2.unwrap_or(d[1])]
    }

    pub fn space_m(&self) -> usize {
        self.space_m.unwrap_or(match self.kind {
            StudyKind::Stokes => 8,
            _ => 64,
        })
    }

    pub fn order(&self) -> usize {
        self.order_r.unwrap_or(match self.kind {
            StudyKind::Stokes => 2,
            _ => 1,
        })
    }

    /// Fill per-kind defaults into the optional fields.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let nu = self.nu();
        c.nu1 = Some(nu[0]);
        c.nu2 = Some(nu[1]);
        if self.kind != StudyKind::Ode {
            c.space_m = Some(self.space_m());
            c.order_r = Some(self.order());
        }
        c
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        let bad = |m: String| Err(StudyError::Config(m));
        if self.levels < 1 {
            return bad("levels must be at least 1".into());
        }
        if self.initial_steps < 1 {
            return bad("initial_steps must be at least 1".into());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        let nu = self.nu();
        if !(nu[0] > 0.0 && nu[1] > 0.0) {
            return bad(format!("nu1 and nu2 must be positive, got {nu:?}"));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) {
                return bad(format!("gamma must be positive, got {g}"));
            }
        }
        if self.kind == StudyKind::Stokes && self.order() < 2 {
            return bad("order_r must be at least 2 for Taylor-Hood".into());
        }
        if self.kind != StudyKind::Ode {
            if self.order() < 1 {
                return bad("order_r must be at least 1".into());
            }
            let min_m = if self.kind == StudyKind::Stokes { 2 } else { 2 };
            if self.space_m() < min_m {
                return bad(format!("space_m must be at least {min_m}"));
            }
            if self.space_m() % 2 != 0 && self.kind == StudyKind::Heat {
                return bad("space_m must be even so the interface at x = 1/2 is a node".into());
            }
        }
        if let Some(m) = &self.time_mesh {
            if (m.horizon() - self.horizon).abs() > 1e-12 {
                return bad(format!(
                    "time_mesh ends at {} but horizon is {}",
                    m.horizon(),
                    self.horizon
                ));
            }
        }
        if self.n_ref < 1 {
            return bad("n_ref must be at least 1".into());
        }
        Ok(())
    }

    pub fn start_mesh(&self) -> Result<MultirateMesh, StudyError> {
        match &self.time_mesh {
            Some(m) => Ok(m.clone()),
            None => Ok(MultirateMesh::uniform(self.initial_steps, self.horizon)?),
        }
    }
}

/// Strict JSON parse: unknown keys are rejected, defaults filled in, result validated.
pub fn parse_config(text: &str) -> Result<StudyConfig, StudyError> {
    let c: StudyConfig =
        serde_json::from_str(text).map_err(|e| StudyError::Config(e.to_string()))?;
    c.validate()?;
    Ok(c.resolved())
}

/// Rate table of a finished study.
#[derive(Debug, Clone, PartialEq)]
pub enum StudyTable {
    Ode(OdeRateTable),
    Field(RateTable),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub table: StudyTable,
    pub csv: String,
    pub meshes: Vec<MultirateMesh>,
}

impl StudyReport {
    pub fn field(&self) -> Option<&RateTable> {
        match &self.table {
            StudyTable::Field(t) => Some(t),
            StudyTable::Ode(_) => None,
        }
    }
}

/// Worker count: `MULTIRATE_THREADS` if set, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("MULTIRATE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Evaluate `f` on every item with up to `workers` threads; results keep input order.
pub fn par_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                results.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

pub fn run_study(config: &StudyConfig) -> Result<StudyReport, StudyError> {
    config.validate()?;
    let meshes = config
        .schedule
        .meshes(&config.start_mesh()?, config.levels)?;
    let workers = worker_count();
    let table = match config.kind {
        StudyKind::Ode => {
            let problem = match config.ode_problem {
                OdeProblemKind::Linear => linear_test_problem(config.horizon),
                OdeProblemKind::FastSlow => fast_slow_problem(20.0, 0.01, config.horizon),
            };
            let opts = PicardOptions {
                tol: 1e-13,
                max_iter: 10_000,
                damping: 0.5,
            };
            StudyTable::Ode(ode_convergence_study(&problem, &meshes, &opts)?)
        }
        StudyKind::Heat => StudyTable::Field(heat_study(config, &meshes, workers)?),
        StudyKind::Stokes => StudyTable::Field(stokes_study(config, &meshes, workers)?),
    };
    let csv = match &table {
        StudyTable::Ode(t) => t.to_csv(),
        StudyTable::Field(t) => t.to_csv(),
    };
    Ok(StudyReport { table, csv, meshes })
}

fn collect(results: Vec<Result<ErrorRecord, StudyError>>) -> Result<RateTable, StudyError> {
    Ok(RateTable::new(
        results.into_iter().collect::<Result<Vec<_>, _>>()?,
    ))
}

fn heat_study(
    config: &StudyConfig,
    meshes: &[MultirateMesh],
    workers: usize,
) -> Result<RateTable, StudyError> {
    let nu = config.nu();
    let (mut problem, exact) = manufactured_heat_1d(nu[0], nu[1]);
    problem.gamma = config.gamma;
    let cm = build_coupled_mesh_1d(0.5, 1.0 / config.space_m() as f64, (0.0, 1.0))
        .map_err(SolverError::from)?;
    let disc = HeatDiscretization::new(&problem, &cm, config.order())?;
    let ops = NormOperators::for_heat(&disc, nu);
    let reference = if config.manufactured {
        None
    } else {
        Some(heat_reference_solution(
            &disc,
            config.horizon,
            config.n_ref,
        )?)
    };
    let results = par_map(meshes, workers, |level, mesh| {
        let tr = disc.solve(mesh)?;
        let rec = match &reference {
            None => heat_error_exact(&tr, &exact, ops.kappa)?,
            Some(r) => error_norms(
                &ops,
                [tr.part(Sub::One), tr.part(Sub::Two)],
                mesh,
                [r.part(Sub::One), r.part(Sub::Two)],
                &r.mesh,
            )?,
        };
        Ok(rec.with_mesh(level, mesh, cm.h()))
    });
    collect(results)
}

fn stokes_study(
    config: &StudyConfig,
    meshes: &[MultirateMesh],
    workers: usize,
) -> Result<RateTable, StudyError> {
    let nu = config.nu();
    let mut problem = two_pipe_benchmark();
    problem.nu = nu;
    problem.gamma = config.gamma;
    problem.order = config.order();
    problem.horizon = config.horizon;
    let cm = two_pipe_mesh(config.space_m())?;
    let disc = StokesDiscretization::new(&problem, &cm)?;
    let ops = NormOperators::for_stokes(&disc, nu);
    let reference = reference_solution(&disc, config.horizon, config.n_ref)?;
    let results = par_map(meshes, workers, |level, mesh| {
        let tr = disc.solve(mesh)?;
        let rec = error_norms(
            &ops,
            [tr.part(Sub::One), tr.part(Sub::Two)],
            mesh,
            [reference.part(Sub::One), reference.part(Sub::Two)],
            &reference.mesh,
        )?;
        Ok(rec.with_mesh(level, mesh, cm.h()))
    });
    collect(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_of_geometric_data() {
        let data: Vec<(f64, f64)> = (0..6)
            .map(|i| (4.0 * 2f64.powi(i), 3.0 * 4f64.powi(-i)))
            .collect();
        for r in observed_rates(&data) {
            assert!((r.unwrap() - 2.0).abs() < 1e-12);
        }
        assert_eq!(observed_rates(&[(4.0, 1.5), (8.0, 1.5)]), vec![Some(0.0)]);
        assert_eq!(observed_rates(&[(4.0, 0.0), (8.0, 1.0)]), vec![None]);
    }

    #[test]
    fn published_two_pipe_rates() {
        let v = observed_rates(&[(4.0, 209.12388873964287), (8.0, 52.276864680267536)])[0].unwrap();
        assert!((v - 2.0001).abs() < 1e-4, "{v}");
        let p = observed_rates(&[(4.0, 3644.0548987697075), (8.0, 910.1062745605058)])[0].unwrap();
        assert!((p - 2.0014).abs() < 1e-4, "{p}");
    }

    #[test]
    fn common_refinement_of_two_meshes() {
        let a = MultirateMesh::new(vec![0.0, 0.5, 1.0], vec![[2, 1], [1, 1]]).unwrap();
        let b = MultirateMesh::uniform(4, 1.0).unwrap();
        let pa = PiecewiseConstant::scalar(Lattice::Micro(Sub::Two), 0.0, &[1.0, 2.0]);
        let pb = PiecewiseConstant::scalar(Lattice::Micro(Sub::One), 0.0, &[1.0, 2.0, 3.0, 4.0]);
        let c = common_refinement(&[(&pa, &a), (&pb, &b)]);
        assert_eq!(c.len(), 4);
        assert_eq!(c[1], (0.25, vec![0, 1]));
        assert_eq!(c[2], (0.25, vec![1, 2]));
        let total: f64 = c.iter().map(|x| x.0).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    fn one_dof_ops() -> NormOperators {
        let one = SparseMatrix::identity(1);
        NormOperators {
            nu: [1.0, 1.0],
            kappa: 2.0,
            primary_len: [1, 1],
            mass: [one.clone(), one.clone()],
            grad: [one.scaled(3.0), one.clone()],
            jump: [[one.clone(), one.clone()], [one.clone(), one.clone()]],
            pressure_mass: None,
            h: 1.0,
        }
    }

    #[test]
    fn synthetic_payload_errors() {
        let mesh = MultirateMesh::uniform(1, 1.0).unwrap();
        let ops = one_dof_ops();
        let one = PiecewiseConstant::scalar(Lattice::Micro(Sub::One), 0.0, &[1.0]);
        let zero1 = PiecewiseConstant::scalar(Lattice::Micro(Sub::One), 0.0, &[0.0]);
        let zero2 = PiecewiseConstant::scalar(Lattice::Micro(Sub::Two), 0.0, &[0.0]);
        let r = error_norms(&ops, [&one, &zero2], &mesh, [&zero1, &zero2], &mesh).unwrap();
        // final 1, gradient surrogate 3 on [0,1], jump κ · 1
        assert_eq!(r.final_sq, 1.0);
        assert_eq!(r.velocity_sq_sub, [3.0, 0.0]);
        assert_eq!(r.jump_sq, 2.0);
        assert_eq!(r.velocity_sq_total, 6.0);
        let s = error_norms(&ops, [&zero1, &zero2], &mesh, [&one, &zero2], &mesh).unwrap();
        assert_eq!(r, s);
        let z = error_norms(&ops, [&one, &zero2], &mesh, [&one, &zero2], &mesh).unwrap();
        assert_eq!(z.velocity_sq_total, 0.0);
    }

    #[test]
    fn payload_mismatch_is_reported() {
        let mesh = MultirateMesh::uniform(1, 1.0).unwrap();
        let ops = one_dof_ops();
        let a = PiecewiseConstant::new(
            Lattice::Micro(Sub::One),
            vec![0.0, 0.0],
            vec![vec![1.0, 1.0]],
        )
        .unwrap();
        let b = PiecewiseConstant::scalar(Lattice::Micro(Sub::Two), 0.0, &[0.0]);
        assert!(matches!(
            error_norms(&ops, [&a, &b], &mesh, [&a, &b], &mesh),
            Err(StudyError::MeshMismatch(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let recs = (0..3)
            .map(|i| {
                ErrorRecord {
                    level: i,
                    n_steps: [4 << i, 4],
                    h: 0.125,
                    final_sq: 0.1 / (i + 1) as f64,
                    velocity_sq_sub: [1.0 / 3.0, 2.0 * 4f64.powi(-(i as i32))],
                    jump_sq: 1e-7,
                    pressure_sq_sub: [0.5, 0.0],
                    ..Default::default()
                }
                .finish()
            })
            .collect();
        let t = RateTable::new(recs);
        let csv = t.to_csv();
        let rows = parse_csv(&csv).unwrap();
        assert_eq!(rows, t.rows());
        assert_eq!(rows[0].rate_velocity, None);
        assert!(rows[1].rate_velocity.is_some());
        assert!(parse_csv("level\n1").is_err());
    }

    #[test]
    fn schedules() {
        let start = MultirateMesh::uniform(4, 1.0).unwrap();
        let u = Schedule::Uniform.meshes(&start, 3).unwrap();
        assert_eq!(
            u[2].micro_counts(),
            MultirateMesh::uniform(16, 1.0).unwrap().micro_counts()
        );
        let w = Schedule::RefineSub1Only.meshes(&start, 3).unwrap();
        assert_eq!(w[2].micro_total(Sub::One), 16);
        assert_eq!(w[2].micro_total(Sub::Two), 4);
        let o = Schedule::RefineSub2Only.meshes(&start, 2).unwrap();
        assert_eq!(o[1].micro_counts(), &[[1, 2]; 4]);
        assert_eq!(
            "refine_sub1_only".parse::<Schedule>().unwrap(),
            Schedule::RefineSub1Only
        );
        assert!("sideways".parse::<Schedule>().is_err());
    }

    #[test]
    fn par_map_keeps_order() {
        let items: Vec<usize> = (0..17).collect();
        assert_eq!(
            par_map(&items, 4, |i, x| i * 100 + x),
            (0..17).map(|i| i * 101).collect::<Vec<_>>()
        );
    }

    #[test]
    fn config_defaults_and_strictness() {
        let c: StudyConfig =
            serde_json::from_str(r#"{"kind":"stokes","schedule":"uniform","levels":5}"#).unwrap();
        c.validate().unwrap();
        assert_eq!(c.nu(), [1.0, 56.0]);
        assert_eq!(c.horizon, 1.0);
        assert!(serde_json::from_str::<StudyConfig>(r#"{"kind":"bogus"}"#).is_err());
        assert!(serde_json::from_str::<StudyConfig>(r#"{"kind":"heat","levles":3}"#).is_err());
        let back: StudyConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn parse_config_fills_and_names_keys() {
        let c = parse_config(r#"{"kind":"stokes","schedule":"uniform","levels":5}"#).unwrap();
        assert_eq!(
            (c.nu1, c.nu2, c.space_m, c.order_r),
            (Some(1.0), Some(56.0), Some(8), Some(2))
        );
        assert_eq!(
            parse_config(&serde_json::to_string(&c).unwrap()).unwrap(),
            c
        );
        match parse_config(r#"{"levels":2}"#) {
            Err(StudyError::Config(m)) => assert!(m.contains("kind"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_config(r#"{"kind":"bogus"}"#),
            Err(StudyError::Config(_))
        ));
        assert!(matches!(
            parse_config(r#"{"kind":"heat","levels":0}"#),
            Err(StudyError::Config(_))
        ));
    }

    #[test]
    fn heat_study_converges_in_time() {
        let mut c = StudyConfig::new(StudyKind::Heat);
        c.levels = 3;
        c.space_m = Some(32);
        c.order_r = Some(2);
        let r = run_study(&c).unwrap();
        let t = r.field().unwrap();
        assert!(
            t.rate_velocity.iter().all(|x| x.unwrap() > 1.5),
            "{:?}",
            t.rate_velocity
        );
    }
}
