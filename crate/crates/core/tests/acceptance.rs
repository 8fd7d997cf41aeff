//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Runs without the libtest harness so the lines appear in `cargo test` output.

use std::time::Instant;

use multirate::heat::{coercive_on, manufactured_heat_1d, HeatDiscretization};
use multirate::spacefem::mesh::{build_coupled_mesh_1d, BoundaryTag};
use multirate::spacefem::ops::{
    divergence, interface_mass, interface_pressure, interface_strain_traction, mass,
    strain_stiffness,
};
use multirate::stokes::{two_pipe_benchmark, two_pipe_mesh, StokesDiscretization};
use multirate::study::{
    run_study, RateTable, Schedule, StudyConfig, StudyKind, StudyReport, StudyTable,
};
use multirate::timegrid::{
    average_onto, discrete_time_derivative, endpoint_projection, macro_average, macro_integrals,
    transfer_average, Lattice, MultirateMesh, PiecewiseConstant, Sub,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(x: Option<f64>, target: f64, tol: f64) -> bool {
    x.is_some_and(|v| (v - target).abs() <= tol)
}

fn fmt_rates(r: &[Option<f64>]) -> String {
    let parts: Vec<String> = r
        .iter()
        .map(|x| x.map_or("inf".into(), |v| format!("{v:.3}")))
        .collect();
    format!("[{}]", parts.join(", "))
}

fn rates(data: &[(f64, f64)]) -> Vec<Option<f64>> {
    multirate::study::observed_rates(data)
}

fn field(report: &StudyReport) -> &RateTable {
    report.field().expect("field study")
}

// ---------------------------------------------------------------- 1

fn random_mesh(rng: &mut ChaCha8Rng) -> MultirateMesh {
    let steps = rng.random_range(1..=8);
    let mut nodes = vec![0.0];
    for _ in 0..steps {
        let last = *nodes.last().unwrap();
        nodes.push(last + rng.random_range(0.05..1.0));
    }
    let counts = (0..steps)
        .map(|_| {
            let c = rng.random_range(1..=6);
            if rng.random_bool(0.5) {
                [c, 1]
            } else {
                [1, c]
            }
        })
        .collect();
    MultirateMesh::new(nodes, counts).expect("valid random mesh")
}

fn random_payload(
    rng: &mut ChaCha8Rng,
    mesh: &MultirateMesh,
    lattice: Lattice,
    dim: usize,
) -> PiecewiseConstant {
    let n = mesh.lattice_total(lattice);
    let initial = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
    let values = (0..n * dim)
        .map(|_| rng.random_range(-10.0..10.0))
        .collect();
    PiecewiseConstant::from_flat(lattice, initial, values).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let (mut avg_rel, mut tel_rel) = (0.0f64, 0.0f64);
    let mut idempotent = true;
    for _ in 0..200 {
        let mesh = random_mesh(&mut rng);
        let dim = rng.random_range(1..=4);
        for j in Sub::BOTH {
            let g = random_payload(&mut rng, &mesh, Lattice::Micro(j.other()), dim);
            let t = transfer_average(&g, &mesh, j).unwrap();
            let (a, b) = (
                macro_integrals(&g, &mesh).unwrap(),
                macro_integrals(&t, &mesh).unwrap(),
            );
            for n in 0..mesh.macro_steps() {
                let scale =
                    mesh.macro_len(n) * g.values_flat().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for d in 0..dim {
                    avg_rel = avg_rel.max((a[n][d] - b[n][d]).abs() / scale);
                }
            }
            idempotent &= average_onto(&t, &mesh, Lattice::Micro(j)).unwrap() == t;
            let gm = macro_average(&g, &mesh).unwrap();
            idempotent &= macro_average(&gm, &mesh).unwrap() == gm;
            let own = random_payload(&mut rng, &mesh, Lattice::Micro(j), dim);
            idempotent &=
                endpoint_projection(|s| own.eval(&mesh, s).to_vec(), &mesh, j).unwrap() == own;

            let dt = discrete_time_derivative(&own, &mesh).unwrap();
            let ints = macro_integrals(&dt, &mesh).unwrap();
            let mut prev = own.initial().to_vec();
            for (n, int) in ints.iter().enumerate() {
                let end = own
                    .value(mesh.lattice_offset(Lattice::Micro(j), n) + mesh.count(j, n) - 1)
                    .to_vec();
                for d in 0..dim {
                    let jump = end[d] - prev[d];
                    let scale = end[d].abs().max(prev[d].abs()).max(1.0);
                    tel_rel = tel_rel.max((int[d] - jump).abs() / scale);
                }
                prev = end;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        avg_rel <= 1e-12 && tel_rel <= 1e-12 && idempotent && secs < 5.0,
        format!("200 meshes: average-zero rel {avg_rel:.1e}, telescoping rel {tel_rel:.1e}, idempotent {idempotent}, {secs:.2} s"),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut lin = StudyConfig::new(StudyKind::Ode);
    lin.levels = 5;
    let lt = match run_study(&lin).expect("linear ode study").table {
        StudyTable::Ode(t) => t,
        _ => unreachable!(),
    };
    let order_ok = lt
        .rate_e1
        .iter()
        .chain(&lt.rate_e2)
        .all(|r| within(*r, 1.0, 0.15));

    let mut fs = StudyConfig::new(StudyKind::Ode);
    fs.ode_problem = multirate::study::OdeProblemKind::FastSlow;
    fs.schedule = Schedule::RefineSub1Only;
    fs.levels = 4;
    let ft = match run_study(&fs).expect("fast-slow ode study").table {
        StudyTable::Ode(t) => t,
        _ => unreachable!(),
    };
    let first = &ft.records[0];
    let last = ft.records.last().unwrap();
    let fast_gain = first.e1 / last.e1;
    let slow: Vec<f64> = ft.records.iter().map(|r| r.e2).collect();
    let slow_spread = slow.iter().cloned().fold(0.0, f64::max)
        / slow.iter().cloned().fold(f64::INFINITY, f64::min);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        order_ok && fast_gain >= 6.0 && slow_spread < 2.0 && secs < 10.0,
        format!(
            "linear rates e1 {} e2 {}; fast-only refinement: fast error /{fast_gain:.2}, slow error spread x{slow_spread:.3}; {secs:.2} s",
            fmt_rates(&lt.rate_e1),
            fmt_rates(&lt.rate_e2)
        ),
    )
}

// ---------------------------------------------------------------- 3

fn heat_space_rates(order: usize, hs: &[usize], n_time: usize) -> (Vec<f64>, Vec<Option<f64>>) {
    let mut errs = Vec::new();
    for &m in hs {
        let mut c = StudyConfig::new(StudyKind::Heat);
        c.space_m = Some(m);
        c.order_r = Some(order);
        c.levels = 1;
        c.initial_steps = n_time;
        let t = run_study(&c).expect("heat space study");
        let r = &field(&t).records[0];
        errs.push(r.velocity_sq_sub[0] + r.velocity_sq_sub[1] + r.jump_sq);
    }
    let data: Vec<(f64, f64)> = hs.iter().zip(&errs).map(|(m, e)| (*m as f64, *e)).collect();
    (errs, rates(&data))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut c = StudyConfig::new(StudyKind::Heat);
    c.space_m = Some(128);
    c.order_r = Some(1);
    c.levels = 4;
    let exact = run_study(&c).expect("heat time study");
    // the closed-form error carries a fixed spatial part at this h; the
    // time rate is read against a time-converged solution on the same mesh
    c.manufactured = false;
    c.n_ref = 4096;
    let time = run_study(&c).expect("heat time study against reference");
    let tr = &field(&time).rate_velocity;
    let time_ok = tr.iter().all(|r| within(*r, 2.0, 0.3));

    let (_, r1) = heat_space_rates(1, &[8, 16, 32, 64], 4096);
    let (_, r2) = heat_space_rates(2, &[4, 8, 16, 32], 16384);
    let space_ok =
        r1.iter().all(|r| within(*r, 2.0, 0.4)) && r2.iter().all(|r| within(*r, 4.0, 0.4));

    let (problem, _) = manufactured_heat_1d(1.0, 2.0);
    let mut coercive = true;
    let mut steps = 0;
    for order in [1, 2] {
        let cm = build_coupled_mesh_1d(0.5, 1.0 / 32.0, (0.0, 1.0)).unwrap();
        let disc = HeatDiscretization::new(&problem, &cm, order).unwrap();
        let mut meshes = time.meshes.clone();
        meshes.push(
            MultirateMesh::new(
                vec![0.0, 0.25, 0.5, 0.75, 1.0],
                vec![[2, 1], [1, 3], [5, 1], [1, 1]],
            )
            .unwrap(),
        );
        meshes.push(MultirateMesh::uniform_with_counts(8, 1.0, [1, 16]).unwrap());
        for m in &meshes {
            coercive &= coercive_on(&disc, m).unwrap();
            steps += m.macro_steps();
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        time_ok && space_ok && coercive && secs < 60.0,
        format!(
            "time rates {} (closed-form error {}); space rates r=1 {} r=2 {}; coercive on {steps} macro steps: {coercive}; {secs:.1} s",
            fmt_rates(tr),
            fmt_rates(&field(&exact).rate_velocity),
            fmt_rates(&r1),
            fmt_rates(&r2)
        ),
    )
}

// ---------------------------------------------------------------- 4

/// Dense LU with partial pivoting.
struct DenseLu {
    n: usize,
    a: Vec<f64>,
    piv: Vec<usize>,
}

impl DenseLu {
    fn new(n: usize, mut a: Vec<f64>) -> DenseLu {
        let mut piv = vec![0; n];
        for k in 0..n {
            let p = (k..n)
                .max_by(|&x, &y| a[x * n + k].abs().total_cmp(&a[y * n + k].abs()))
                .unwrap();
            piv[k] = p;
            if p != k {
                for c in 0..n {
                    a.swap(k * n + c, p * n + c);
                }
            }
            let d = a[k * n + k];
            assert!(d != 0.0, "singular oracle matrix");
            for r in k + 1..n {
                let f = a[r * n + k] / d;
                if f == 0.0 {
                    continue;
                }
                a[r * n + k] = f;
                for c in k + 1..n {
                    a[r * n + c] -= f * a[k * n + c];
                }
            }
        }
        DenseLu { n, a, piv }
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
        }
        for r in 0..n {
            let s: f64 = (0..r).map(|c| self.a[r * n + c] * x[c]).sum();
            x[r] -= s;
        }
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| self.a[r * n + c] * x[c]).sum();
            x[r] = (x[r] - s) / self.a[r * n + r];
        }
        x
    }
}

const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_2),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_2),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
];

/// Equispaced Lagrange basis of degree `r` on [0, 1]: values and derivatives at `s`.
fn basis_1d(r: usize, s: f64) -> (Vec<f64>, Vec<f64>) {
    let nodes: Vec<f64> = (0..=r).map(|i| i as f64 / r as f64).collect();
    let mut v = vec![0.0; r + 1];
    let mut d = vec![0.0; r + 1];
    for i in 0..=r {
        let mut p = 1.0;
        let mut dp = 0.0;
        for j in (0..=r).filter(|&j| j != i) {
            let den = nodes[i] - nodes[j];
            dp = dp * (s - nodes[j]) / den + p / den;
            p *= (s - nodes[j]) / den;
        }
        v[i] = p;
        d[i] = dp;
    }
    (v, d)
}

/// Standard backward Euler for the 1D Nitsche-coupled heat problem on
/// (0,½) ∪ (½,1), written from scratch. Returns nodal values per step,
/// indexed `[side][step][node]`.
fn heat_oracle(
    nu: [f64; 2],
    h: f64,
    r: usize,
    gamma: f64,
    steps: usize,
    f: &dyn Fn(usize, f64, f64) -> f64,
) -> [Vec<Vec<f64>>; 2] {
    let cells = (0.5 / h).round() as usize;
    let per = cells * r + 1;
    let n = 2 * per;
    let origin = [0.0, 0.5];
    let k = 1.0 / steps as f64;
    let kappa = gamma / h;
    let mut mm = vec![0.0; n * n];
    let mut aa = vec![0.0; n * n];
    for j in 0..2 {
        let off = j * per;
        for c in 0..cells {
            for (q, w) in GAUSS4 {
                let s = 0.5 * (q + 1.0);
                let (v, d) = basis_1d(r, s);
                let wq = 0.5 * w * h;
                for a in 0..=r {
                    for b in 0..=r {
                        let (ia, ib) = (off + c * r + a, off + c * r + b);
                        mm[ia * n + ib] += wq * v[a] * v[b];
                        aa[ia * n + ib] += wq * nu[j] * d[a] * d[b] / (h * h);
                    }
                }
            }
        }
    }
    // interface: side 0 right end (n = +1), side 1 left end (n = -1)
    let (_, d_end) = basis_1d(r, 1.0);
    let (_, d_start) = basis_1d(r, 0.0);
    let trace = [per - 1, per];
    // (index, ∂_n coefficient) pairs of the normal derivative on each side
    let flux: [Vec<(usize, f64)>; 2] = [
        (0..=r)
            .map(|a| ((cells - 1) * r + a, d_end[a] / h))
            .collect(),
        (0..=r).map(|a| (per + a, -d_start[a] / h)).collect(),
    ];
    for j in 0..2 {
        let o = 1 - j;
        let vj = trace[j];
        // −(½ν_j ∂_n u_j − ½ν_o ∂_n u_o) v_j
        for &(i, c) in &flux[j] {
            aa[vj * n + i] -= 0.5 * nu[j] * c;
        }
        for &(i, c) in &flux[o] {
            aa[vj * n + i] += 0.5 * nu[o] * c;
        }
        // (u_j − u_o) ½ν_j ∂_n v_j
        for &(i, c) in &flux[j] {
            aa[i * n + trace[j]] += 0.5 * nu[j] * c;
            aa[i * n + trace[o]] -= 0.5 * nu[j] * c;
        }
        // κ (u_j − u_o) v_j
        aa[vj * n + trace[j]] += kappa;
        aa[vj * n + trace[o]] -= kappa;
    }
    let fixed = [0, n - 1];
    let mut sys: Vec<f64> = mm.iter().zip(&aa).map(|(m, a)| m / k + a).collect();
    for &d in &fixed {
        for c in 0..n {
            sys[d * n + c] = if c == d { 1.0 } else { 0.0 };
        }
    }
    let lu = DenseLu::new(n, sys);
    let mut u = vec![0.0; n];
    let mut out = [Vec::new(), Vec::new()];
    for step in 1..=steps {
        let t = step as f64 * k;
        let mut rhs = vec![0.0; n];
        for row in 0..n {
            rhs[row] = (0..n).map(|c| mm[row * n + c] * u[c]).sum::<f64>() / k;
        }
        for j in 0..2 {
            for c in 0..cells {
                let x0 = origin[j] + c as f64 * h;
                for (q, w) in GAUSS4 {
                    let s = 0.5 * (q + 1.0);
                    let (v, _) = basis_1d(r, s);
                    let fx = f(j, x0 + s * h, t);
                    for a in 0..=r {
                        rhs[j * per + c * r + a] += 0.5 * w * h * fx * v[a];
                    }
                }
            }
        }
        for &d in &fixed {
            rhs[d] = 0.0;
        }
        u = lu.solve(&rhs);
        out[0].push(u[..per].to_vec());
        out[1].push(u[per..].to_vec());
    }
    out
}

/// Standard backward Euler for the two-pipe Stokes problem, one monolithic
/// dense system `[u1, p1, u2, p2]` built from the weak-form pieces.
fn stokes_oracle(disc: &StokesDiscretization, nu: [f64; 2], steps: usize) -> [Vec<Vec<f64>>; 2] {
    let cm = &disc.mesh;
    let v = [&*disc.velocity[0], &*disc.velocity[1]];
    let p = [&*disc.pressure[0], &*disc.pressure[1]];
    let subs = [Sub::One, Sub::Two];
    let nv = [v[0].n_dofs(), v[1].n_dofs()];
    let np = [p[0].n_dofs(), p[1].n_dofs()];
    let base_v = [0, nv[0] + np[0]];
    let base_p = [nv[0], nv[0] + np[0] + nv[1]];
    let n = nv[0] + np[0] + nv[1] + np[1];
    let kappa = disc.gamma / cm.h();
    let k = 1.0 / steps as f64;
    let mut sys = vec![0.0; n * n];
    let mut mm = vec![0.0; n * n];
    let put = |dst: &mut Vec<f64>,
               m: &multirate::linalg::SparseMatrix,
               r0: usize,
               c0: usize,
               s: f64,
               transpose: bool| {
        for (a, b, x) in m.triplets() {
            let (a, b) = if transpose { (b, a) } else { (a, b) };
            dst[(r0 + a) * n + c0 + b] += s * x;
        }
    };
    for j in 0..2 {
        let o = 1 - j;
        let sj = (subs[j], v[j]);
        let so = (subs[o], v[o]);
        let nj = cm.normal(subs[j]);
        let mj = mass(v[j]);
        put(&mut mm, &mj, base_v[j], base_v[j], 1.0, false);
        put(&mut sys, &mj, base_v[j], base_v[j], 1.0 / k, false);
        put(
            &mut sys,
            &strain_stiffness(v[j]),
            base_v[j],
            base_v[j],
            nu[j],
            false,
        );
        // −⟨ν_j ε̇(u_j) n_j − ν_o ε̇(u_o) n_o, φ_j⟩
        let t_jj = interface_strain_traction(cm, sj, sj);
        let t_jo = interface_strain_traction(cm, sj, so);
        let t_oj = interface_strain_traction(cm, so, sj);
        put(&mut sys, &t_jj, base_v[j], base_v[j], -nu[j], false);
        put(&mut sys, &t_jo, base_v[j], base_v[o], nu[o], false);
        // +⟨u_j − u_o, ν_j ε̇(φ_j) n_j⟩
        put(&mut sys, &t_jj, base_v[j], base_v[j], nu[j], true);
        put(&mut sys, &t_oj, base_v[j], base_v[o], -nu[j], true);
        // κ ⟨u_j − u_o, φ_j⟩
        put(
            &mut sys,
            &interface_mass(cm, sj, sj),
            base_v[j],
            base_v[j],
            kappa,
            false,
        );
        put(
            &mut sys,
            &interface_mass(cm, sj, so),
            base_v[j],
            base_v[o],
            -kappa,
            false,
        );
        // continuity rows of side j: (div u_j, q_j) − ½⟨u_j − u_o, q_j n_j⟩
        let div = divergence(p[j], v[j]);
        let pj_own = interface_pressure(cm, sj, (subs[j], p[j]), nj);
        let pj_other = interface_pressure(cm, so, (subs[j], p[j]), nj);
        put(&mut sys, &div, base_p[j], base_v[j], 1.0, false);
        put(&mut sys, &pj_own, base_p[j], base_v[j], -0.5, true);
        put(&mut sys, &pj_other, base_p[j], base_v[o], 0.5, true);
        // momentum rows: −(p_j, div φ_j) + ½⟨p_j n_j, φ_j⟩ − ½⟨p_j n_j, φ_o⟩ (transpose of the above)
        put(&mut sys, &div, base_v[j], base_p[j], -1.0, true);
        put(&mut sys, &pj_own, base_v[j], base_p[j], 0.5, false);
        put(&mut sys, &pj_other, base_v[o], base_p[j], -0.5, false);
    }
    // boundary values: inflow facets, then no-slip facets forced to zero
    let bc = |j: usize, t: f64| -> Vec<(usize, f64)> {
        let sp = v[j];
        let mut vals = std::collections::BTreeMap::new();
        for f in sp
            .mesh()
            .facets
            .iter()
            .filter(|f| f.tag == BoundaryTag::Inflow)
        {
            for node in sp.facet_nodes(f.side, f.index) {
                let x = sp.node_coords(node);
                let y = x[1];
                let s = (std::f64::consts::PI * t).sin();
                let u = if j == 0 {
                    s * y * (1.0 - y)
                } else {
                    s * y * (1.0 + y)
                };
                vals.insert(sp.dof(0, node), u);
                vals.insert(sp.dof(1, node), 0.0);
            }
        }
        for f in sp
            .mesh()
            .facets
            .iter()
            .filter(|f| f.tag == BoundaryTag::NoSlip)
        {
            for node in sp.facet_nodes(f.side, f.index) {
                vals.insert(sp.dof(0, node), 0.0);
                vals.insert(sp.dof(1, node), 0.0);
            }
        }
        vals.into_iter().map(|(d, x)| (base_v[j] + d, x)).collect()
    };
    for j in 0..2 {
        for (d, _) in bc(j, 0.0) {
            for c in 0..n {
                sys[d * n + c] = if c == d { 1.0 } else { 0.0 };
            }
        }
    }
    let full = sys.clone();
    let lu = DenseLu::new(n, sys);
    let mut u = vec![0.0; n];
    let mut out = [Vec::new(), Vec::new()];
    for step in 1..=steps {
        let t = step as f64 * k;
        let mut rhs: Vec<f64> = (0..n)
            .map(|row| (0..n).map(|c| mm[row * n + c] * u[c]).sum::<f64>() / k)
            .collect();
        for j in 0..2 {
            for (d, x) in bc(j, t) {
                rhs[d] = x;
            }
        }
        u = lu.solve(&rhs);
        for _ in 0..2 {
            let res: Vec<f64> = (0..n)
                .map(|row| rhs[row] - (0..n).map(|c| full[row * n + c] * u[c]).sum::<f64>())
                .collect();
            let du = lu.solve(&res);
            u.iter_mut().zip(&du).for_each(|(a, b)| *a += b);
        }
        for j in 0..2 {
            let mut s = u[base_v[j]..base_v[j] + nv[j]].to_vec();
            s.extend_from_slice(&u[base_p[j]..base_p[j] + np[j]]);
            out[j].push(s);
        }
    }
    out
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut heat_dev = 0.0f64;
    let mut heat_scale = 0.0f64;
    let nu = [1.0, 2.0];
    let (problem, exact) = manufactured_heat_1d(nu[0], nu[1]);
    for r in [1, 2] {
        let h = 1.0 / 16.0;
        let steps = 32;
        let cm = build_coupled_mesh_1d(0.5, h, (0.0, 1.0)).unwrap();
        let disc = HeatDiscretization::new(&problem, &cm, r).unwrap();
        let traj = disc
            .solve(&MultirateMesh::uniform(steps, 1.0).unwrap())
            .unwrap();
        let oracle = heat_oracle(nu, h, r, disc.gamma, steps, &|j, x, t| {
            exact.source(Sub::BOTH[j], x, t)
        });
        for j in 0..2 {
            let sp = &disc.spaces[j];
            let origin = [0.0, 0.5][j];
            for (i, ours) in oracle[j].iter().enumerate() {
                let got = traj.parts[j].value(i);
                for node in 0..sp.n_nodes() {
                    let x = sp.node_coords(node)[0];
                    let idx = ((x - origin) / (h / r as f64)).round() as usize;
                    heat_dev = heat_dev.max((got[sp.dof(0, node)] - ours[idx]).abs());
                    heat_scale = heat_scale.max(ours[idx].abs());
                }
            }
        }
    }

    let problem = two_pipe_benchmark();
    let disc = StokesDiscretization::new(&problem, &two_pipe_mesh(4).unwrap()).unwrap();
    let steps = 16;
    let traj = disc
        .solve(&MultirateMesh::uniform(steps, 1.0).unwrap())
        .unwrap();
    let oracle = stokes_oracle(&disc, problem.nu, steps);
    let mut stokes_dev = 0.0f64;
    let mut stokes_scale = 0.0f64;
    let mut split = [0.0f64; 4];
    for j in 0..2 {
        let nv = disc.velocity_dofs(Sub::BOTH[j]);
        for (i, ours) in oracle[j].iter().enumerate() {
            for (c, (a, b)) in traj.parts[j].value(i).iter().zip(ours).enumerate() {
                stokes_dev = stokes_dev.max((a - b).abs());
                stokes_scale = stokes_scale.max(b.abs());
                let slot = 2 * j + usize::from(c >= nv);
                split[slot] = split[slot].max((a - b).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        heat_dev <= 1e-9 * heat_scale.max(1.0) && stokes_dev <= 1e-9 * stokes_scale.max(1.0) && secs < 60.0,
        format!(
            "max |multirate − oracle| against 1e-9 max(1, |oracle|): heat {heat_dev:.1e} (|u| ≤ {heat_scale:.2}), \
             Stokes {stokes_dev:.1e} (|u,p| ≤ {stokes_scale:.1}; velocity {:.1e}, pressure {:.1e}); {secs:.1} s",
            split[0].max(split[2]),
            split[1].max(split[3])
        ),
    )
}

// ---------------------------------------------------------------- 5–7

fn stokes_config(schedule: Schedule, levels: usize) -> StudyConfig {
    let mut c = StudyConfig::new(StudyKind::Stokes);
    c.schedule = schedule;
    c.levels = levels;
    c.space_m = Some(8);
    c.order_r = Some(2);
    c.n_ref = 1024;
    c
}

fn criterion_5(uniform: &StudyReport, secs: f64) -> Outcome {
    let t = field(uniform);
    let v_ok = t.rate_velocity.iter().all(|r| within(*r, 2.0, 0.25));
    let p_ok = t.rate_pressure.iter().all(|r| within(*r, 2.0, 0.3));
    outcome(
        v_ok && p_ok && t.records.len() == 5 && secs < 900.0,
        format!(
            "steps 4→64, velocity rates {}, pressure rates {}; {secs:.1} s",
            fmt_rates(&t.rate_velocity),
            fmt_rates(&t.rate_pressure)
        ),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let water = run_study(&stokes_config(Schedule::RefineSub1Only, 5)).expect("water-only study");
    let oil = run_study(&stokes_config(Schedule::RefineSub2Only, 5)).expect("oil-only study");
    let mut cmp = stokes_config(Schedule::Uniform, 4);
    cmp.time_mesh = Some(MultirateMesh::uniform_with_counts(4, 1.0, [2, 1]).unwrap());
    let comparator = run_study(&cmp).expect("comparator study");

    let w = &field(&water).records;
    let total_change: Vec<f64> = w
        .windows(2)
        .map(|p| (p[1].velocity_sq_total / p[0].velocity_sq_total - 1.0).abs())
        .collect();
    let total_flat = total_change.iter().all(|c| *c < 0.01);
    let sub_rates = rates(
        &w.iter()
            .map(|r| (r.n_steps[0] as f64, r.velocity_sq_sub[0]))
            .collect::<Vec<_>>(),
    );
    let sub_ok = sub_rates.iter().all(|r| within(*r, 2.0, 0.3));

    let o = field(&oil);
    let oil_ok = o.rate_velocity.iter().all(|r| within(*r, 2.0, 0.25));

    let c = &field(&comparator).records;
    let water_p = |steps: usize| {
        w.iter()
            .find(|r| r.n_steps[0] == steps)
            .map(|r| r.pressure_sq_sub[0])
            .unwrap()
    };
    let cmp_p = |steps: usize| {
        c.iter()
            .find(|r| r.n_steps[0] == steps)
            .map(|r| r.pressure_sq_sub[0])
            .unwrap()
    };
    let ratio16 = water_p(16) / cmp_p(16);
    let ratio64 = water_p(64) / cmp_p(64);
    let pressure_ok = ratio64 >= 2.0;

    let secs = start.elapsed().as_secs_f64();
    let changes: Vec<String> = total_change
        .iter()
        .map(|c| format!("{:.2}%", 100.0 * c))
        .collect();
    outcome(
        total_flat && sub_ok && oil_ok && pressure_ok && secs < 1200.0,
        format!(
            "water-only: total change [{}] ({}), water gradient rates {} ({}); oil-only total rates {} ({}); \
             water pressure asym/uniform at 16 steps {ratio16:.2}, at 64 steps {ratio64:.2} ({}); {secs:.1} s",
            changes.join(", "),
            if total_flat { "ok" } else { "not flat" },
            fmt_rates(&sub_rates),
            if sub_ok { "ok" } else { "off" },
            fmt_rates(&o.rate_velocity),
            if oil_ok { "ok" } else { "off" },
            if pressure_ok { "ok" } else { "off" },
        ),
    )
}

fn criterion_7(first: &StudyReport) -> Outcome {
    let second = run_study(&stokes_config(Schedule::Uniform, 5)).expect("second uniform study");
    let same = first.csv == second.csv;
    outcome(
        same,
        format!(
            "two runs of the uniform study, {} CSV bytes, identical: {same}",
            first.csv.len()
        ),
    )
}

/// `ACCEPTANCE_ONLY=3,4` restricts the run to the listed criteria.
fn selected() -> Vec<usize> {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(v) => v.split(',').filter_map(|x| x.trim().parse().ok()).collect(),
        Err(_) => (1..=7).collect(),
    }
}

fn main() {
    let only = selected();
    let mut failed = 0;
    let mut report = |id: usize, name: &str, run: &dyn Fn() -> Outcome| {
        if !only.contains(&id) {
            return;
        }
        let o = run();
        println!(
            "{} criterion {id} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    };
    report(1, "projection identities", &criterion_1);
    report(2, "ODE order and localization", &criterion_2);
    report(3, "heat manufactured convergence", &criterion_3);
    report(4, "single-rate oracle equivalence", &criterion_4);
    let uniform = std::cell::OnceCell::new();
    let uniform_run = || {
        uniform.get_or_init(|| {
            let start = Instant::now();
            let r = run_study(&stokes_config(Schedule::Uniform, 5)).expect("uniform study");
            (r, start.elapsed().as_secs_f64())
        })
    };
    report(5, "two-pipe uniform refinement", &|| {
        let (r, secs) = uniform_run();
        criterion_5(r, *secs)
    });
    report(6, "two-pipe decoupling pattern", &criterion_6);
    report(7, "determinism", &|| criterion_7(&uniform_run().0));
    if failed > 0 {
        println!("{failed} of {} criteria failed", only.len());
        std::process::exit(1);
    }
}
