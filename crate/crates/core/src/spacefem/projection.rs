//! Ritz projections onto the globally continuous space and L2 projections.

use std::sync::Arc;

use super::mesh::{BoundaryTag, CoupledMesh};
use super::ops::{divergence, load, mass, stiffness};
use super::space::{FEFunction, LagrangeSpace};
use super::FemError;
use crate::linalg::{solve_direct, LinalgError, SparseMatrix};
use crate::timegrid::Sub;

/// Dof numbering of the continuous space over both subdomains: subdomain 1
/// keeps its numbering, subdomain 2 interface nodes reuse their partners.
pub struct Glue {
    pub maps: [Vec<usize>; 2],
    pub n_global: usize,
    pub constrained: Vec<bool>,
}

impl Glue {
    pub fn new(cm: &CoupledMesh, spaces: [&LagrangeSpace; 2]) -> Glue {
        let [s1, s2] = spaces;
        let nc = s1.components();
        let mut node_partner = vec![usize::MAX; s2.n_nodes()];
        for pair in &cm.interface {
            let (a_side, a_idx) = pair.facets[0];
            let (b_side, b_idx) = pair.facets[1];
            for (na, nb) in s1
                .facet_nodes(a_side, a_idx)
                .into_iter()
                .zip(s2.facet_nodes(b_side, b_idx))
            {
                node_partner[nb] = na;
            }
        }
        let map1: Vec<usize> = (0..s1.n_dofs()).collect();
        let mut map2 = vec![0; s2.n_dofs()];
        let mut next = s1.n_dofs();
        for c in 0..nc {
            for node in 0..s2.n_nodes() {
                let d = s2.dof(c, node);
                map2[d] = if node_partner[node] != usize::MAX {
                    s1.dof(c, node_partner[node])
                } else {
                    next += 1;
                    next - 1
                };
            }
        }
        let mut constrained = vec![false; next];
        for &d in s1.constrained_dofs() {
            constrained[map1[d]] = true;
        }
        for &d in s2.constrained_dofs() {
            constrained[map2[d]] = true;
        }
        Glue {
            maps: [map1, map2],
            n_global: next,
            constrained,
        }
    }

    fn add(&self, j: usize, m: &SparseMatrix, scale: f64, t: &mut Vec<(usize, usize, f64)>) {
        let map = &self.maps[j];
        t.extend(
            m.triplets()
                .into_iter()
                .map(|(a, b, v)| (map[a], map[b], scale * v)),
        );
    }
}

/// Elliptic projection onto the continuous order-`order` scalar space:
/// `(∇R u, ∇φ) = (∇u, ∇φ)` with homogeneous constraints on facets tagged `tags`.
pub fn ritz_projection<G>(
    cm: &CoupledMesh,
    order: usize,
    tags: &[BoundaryTag],
    grad: G,
) -> Result<[FEFunction; 2], FemError>
where
    G: Fn(Sub, [f64; 2]) -> [f64; 2],
{
    let spaces = [
        Arc::new(LagrangeSpace::new(cm.subs[0].clone(), order, 1, tags)?),
        Arc::new(LagrangeSpace::new(cm.subs[1].clone(), order, 1, tags)?),
    ];
    let glue = Glue::new(cm, [&spaces[0], &spaces[1]]);
    if !glue.constrained.iter().any(|&c| c) {
        return Err(LinalgError::SingularMatrix(" (no Dirichlet constraint)".into()).into());
    }
    let mut t = Vec::new();
    let mut rhs = vec![0.0; glue.n_global];
    for j in Sub::BOTH {
        let sp = &spaces[j.index()];
        glue.add(j.index(), &stiffness(sp), 1.0, &mut t);
        let b = grad_load(sp, |x| {
            let g = grad(j, x);
            vec![g]
        });
        for (d, v) in b.into_iter().enumerate() {
            rhs[glue.maps[j.index()][d]] += v;
        }
    }
    let x = solve_constrained(&glue.constrained, glue.n_global, &t, &rhs)?;
    Ok(split(&glue, &spaces, &x))
}

/// Divergence-free Ritz projection for two-component fields with a
/// multiplier in the continuous order-`order-1` space:
/// `(∇R u, ∇φ) - (q, div φ) = (∇u, ∇φ)`, `(div R u, ψ) = 0`.
/// `grad(j, x)[c]` is the gradient of component `c`.
pub fn stokes_ritz_projection<G>(
    cm: &CoupledMesh,
    order: usize,
    tags: &[BoundaryTag],
    grad: G,
) -> Result<[FEFunction; 2], FemError>
where
    G: Fn(Sub, [f64; 2]) -> [[f64; 2]; 2],
{
    if order < 2 {
        return Err(FemError::InvalidSpace(
            "Taylor-Hood needs order >= 2".into(),
        ));
    }
    let vs = [
        Arc::new(LagrangeSpace::new(cm.subs[0].clone(), order, 2, tags)?),
        Arc::new(LagrangeSpace::new(cm.subs[1].clone(), order, 2, tags)?),
    ];
    let ps = [
        LagrangeSpace::new(cm.subs[0].clone(), order - 1, 1, &[])?,
        LagrangeSpace::new(cm.subs[1].clone(), order - 1, 1, &[])?,
    ];
    let vg = Glue::new(cm, [&vs[0], &vs[1]]);
    let pg = Glue::new(cm, [&ps[0], &ps[1]]);
    let nv = vg.n_global;
    let n = nv + pg.n_global;
    let mut t = Vec::new();
    let mut rhs = vec![0.0; n];
    for j in Sub::BOTH {
        let i = j.index();
        vg.add(i, &stiffness(&vs[i]), 1.0, &mut t);
        let d = divergence(&ps[i], &vs[i]);
        for (q, b, v) in d.triplets() {
            let (pq, vb) = (nv + pg.maps[i][q], vg.maps[i][b]);
            t.push((pq, vb, v));
            t.push((vb, pq, -v));
        }
        let b = grad_load(&vs[i], |x| grad(j, x).to_vec());
        for (d, v) in b.into_iter().enumerate() {
            rhs[vg.maps[i][d]] += v;
        }
    }
    let mut constrained = vg.constrained.clone();
    constrained.extend(std::iter::repeat_n(false, pg.n_global));
    let x = solve_constrained(&constrained, n, &t, &rhs)?;
    Ok(split(&vg, &vs, &x[..nv]))
}

/// `(g, ∇φ)` summed over components, `g(x)[c]` the gradient datum of component `c`.
fn grad_load<F>(space: &LagrangeSpace, g: F) -> Vec<f64>
where
    F: Fn([f64; 2]) -> Vec<[f64; 2]>,
{
    let rule = space.cell_rule(space.order() + 2);
    let evals: Vec<_> = rule
        .iter()
        .map(|(xi, _)| space.eval_reference(*xi))
        .collect();
    let mut out = vec![0.0; space.n_dofs()];
    for c in 0..space.mesh().n_cells() {
        let nodes = space.cell_nodes(c);
        for (q, (xi, w)) in rule.iter().enumerate() {
            let gx = g(space.mesh().map_point(c, *xi));
            for (a, &node) in nodes.iter().enumerate() {
                let ga = evals[q].grads[a];
                for (comp, gc) in gx.iter().enumerate() {
                    out[space.dof(comp, node)] += w * (gc[0] * ga[0] + gc[1] * ga[1]);
                }
            }
        }
    }
    out
}

fn solve_constrained(
    constrained: &[bool],
    n: usize,
    t: &[(usize, usize, f64)],
    rhs: &[f64],
) -> Result<Vec<f64>, FemError> {
    let mut index = vec![usize::MAX; n];
    let mut free = 0;
    for i in 0..n {
        if !constrained[i] {
            index[i] = free;
            free += 1;
        }
    }
    let ft: Vec<_> = t
        .iter()
        .filter(|(a, b, _)| !constrained[*a] && !constrained[*b])
        .map(|&(a, b, v)| (index[a], index[b], v))
        .collect();
    let a = SparseMatrix::from_triplets(free, free, &ft)?;
    let b: Vec<f64> = (0..n)
        .filter(|&i| !constrained[i])
        .map(|i| rhs[i])
        .collect();
    let y = solve_direct(&a, &b)?;
    Ok((0..n)
        .map(|i| if constrained[i] { 0.0 } else { y[index[i]] })
        .collect())
}

fn split(glue: &Glue, spaces: &[Arc<LagrangeSpace>; 2], x: &[f64]) -> [FEFunction; 2] {
    let part = |j: usize| FEFunction {
        space: Arc::clone(&spaces[j]),
        coeffs: glue.maps[j].iter().map(|&g| x[g]).collect(),
    };
    [part(0), part(1)]
}

/// `(I^h p, ψ) = (p, ψ)` for all `ψ` in `space`.
pub fn l2_projection<F>(space: &Arc<LagrangeSpace>, p: F) -> Result<FEFunction, FemError>
where
    F: Fn([f64; 2]) -> Vec<f64>,
{
    let m = mass(space);
    let b = load(space, p);
    let x = solve_direct(&m, &b)?;
    Ok(FEFunction {
        space: Arc::clone(space),
        coeffs: x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spacefem::mesh::{build_coupled_mesh_1d, build_two_pipe_mesh};
    use crate::spacefem::norms::{h1_error, l2_error};

    #[test]
    fn ritz_reproduces_linear_functions() {
        let cm = build_coupled_mesh_1d(0.5, 0.125, (0.0, 1.0)).unwrap();
        // u = x(1-x) is not linear; use a hat that is linear on each side and vanishes at 0 and 1
        let u = |x: f64| if x <= 0.5 { x } else { 1.0 - x };
        for r in 1..=3 {
            let rp = ritz_projection(&cm, r, &[BoundaryTag::Dirichlet], |_, x| {
                [if x[0] <= 0.5 { 1.0 } else { -1.0 }, 0.0]
            })
            .unwrap();
            for f in &rp {
                for node in 0..f.space.n_nodes() {
                    let x = f.space.node_coords(node)[0];
                    assert!((f.coeffs[node] - u(x)).abs() < 1e-10, "r={r} x={x}");
                }
            }
        }
    }

    #[test]
    fn ritz_traces_agree_and_rate_is_one() {
        let pi = std::f64::consts::PI;
        let mut errs = Vec::new();
        for n in [8, 16, 32, 64] {
            let cm = build_coupled_mesh_1d(0.5, 1.0 / n as f64, (0.0, 1.0)).unwrap();
            let rp = ritz_projection(&cm, 1, &[BoundaryTag::Dirichlet], |_, x| {
                [pi * (pi * x[0]).cos(), 0.0]
            })
            .unwrap();
            let t1 = *rp[0].coeffs.last().unwrap();
            let t2 = rp[1].coeffs[0];
            assert!((t1 - t2).abs() <= 1e-12);
            let e: f64 = Sub::BOTH
                .iter()
                .map(|j| h1_error(&rp[j.index()], |x| vec![[pi * (pi * x[0]).cos(), 0.0]]).powi(2))
                .sum::<f64>()
                .sqrt();
            errs.push(e);
        }
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!((rate - 1.0).abs() < 0.1, "rate {rate}");
        }
    }

    #[test]
    fn ritz_is_idempotent() {
        let cm = build_coupled_mesh_1d(0.5, 0.1, (0.0, 1.0)).unwrap();
        let first = ritz_projection(&cm, 2, &[BoundaryTag::Dirichlet], |_, x| {
            [(3.0 * x[0]).cos() * 3.0, 0.0]
        })
        .unwrap();
        let second = ritz_projection(&cm, 2, &[BoundaryTag::Dirichlet], |j, x| {
            let (_, g) = first[j.index()].eval(x).unwrap();
            g[0]
        })
        .unwrap();
        for j in 0..2 {
            for (a, b) in first[j].coeffs.iter().zip(&second[j].coeffs) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ritz_without_constraints_is_singular() {
        let cm = build_coupled_mesh_1d(0.5, 0.25, (0.0, 1.0)).unwrap();
        let r = ritz_projection(&cm, 1, &[], |_, _| [1.0, 0.0]);
        assert!(matches!(
            r,
            Err(FemError::Linalg(LinalgError::SingularMatrix(_)))
        ));
    }

    #[test]
    fn l2_projection_exactness_and_rate() {
        let cm = build_two_pipe_mesh(2).unwrap();
        let sp = Arc::new(LagrangeSpace::new(cm.subs[0].clone(), 2, 1, &[]).unwrap());
        let c = l2_projection(&sp, |_| vec![2.5]).unwrap();
        assert!(c.coeffs.iter().all(|v| (v - 2.5).abs() < 1e-12));
        let p = l2_projection(&sp, |x| vec![x[0] * x[1] + x[1] * x[1]]).unwrap();
        assert!(l2_error(&p, |x| vec![x[0] * x[1] + x[1] * x[1]]) < 1e-10);
        for r in 1..=2 {
            let mut errs = Vec::new();
            for m in [2, 4, 8] {
                let cm = build_two_pipe_mesh(m).unwrap();
                let sp = Arc::new(LagrangeSpace::new(cm.subs[1].clone(), r, 1, &[]).unwrap());
                let f = |x: [f64; 2]| vec![(x[0] * 2.0).sin() * (x[1] * 3.0).cos()];
                errs.push(l2_error(&l2_projection(&sp, f).unwrap(), f));
            }
            for w in errs.windows(2) {
                let rate = (w[0] / w[1]).log2();
                assert!((rate - (r + 1) as f64).abs() < 0.3, "r={r} rate {rate}");
            }
        }
    }

    #[test]
    fn stokes_ritz_is_discretely_solenoidal() {
        let cm = build_two_pipe_mesh(2).unwrap();
        let tags = [BoundaryTag::NoSlip, BoundaryTag::Inflow];
        // gradient of u = (sin y, x²)
        let r =
            stokes_ritz_projection(&cm, 2, &tags, |_, x| [[0.0, x[1].cos()], [2.0 * x[0], 0.0]])
                .unwrap();
        let vs = [&r[0].space, &r[1].space];
        let ps = [
            LagrangeSpace::new(cm.subs[0].clone(), 1, 1, &[]).unwrap(),
            LagrangeSpace::new(cm.subs[1].clone(), 1, 1, &[]).unwrap(),
        ];
        let pg = Glue::new(&cm, [&ps[0], &ps[1]]);
        let mut res = vec![0.0; pg.n_global];
        for j in 0..2 {
            let d = divergence(&ps[j], vs[j]);
            for (q, v) in d.mul_vec(&r[j].coeffs).into_iter().enumerate() {
                res[pg.maps[j][q]] += v;
            }
        }
        assert!(res.iter().all(|v| v.abs() < 1e-10));
        assert!(r[0].coeffs.iter().any(|v| v.abs() > 1e-3));
    }
}
