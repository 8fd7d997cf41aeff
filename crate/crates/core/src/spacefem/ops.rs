//! Matrix assembly for volume and interface forms.
//!
//! All matrices use the full dof numbering of their spaces (constrained dofs
//! included); elimination happens in the time-stepping assemblers.

use super::mesh::{CoupledMesh, Side};
use super::space::{BasisEval, LagrangeSpace};
use crate::linalg::SparseMatrix;
use crate::timegrid::Sub;

fn build(rows: usize, cols: usize, t: Vec<(usize, usize, f64)>) -> SparseMatrix {
    SparseMatrix::from_triplets(rows, cols, &t).expect("assembly indices in range")
}

/// Volume loop: `kernel(row_eval, col_eval, weight, push(local_row, comp_row, local_col, comp_col, value))`.
fn volume<F>(rows: &LagrangeSpace, cols: &LagrangeSpace, kernel: F) -> SparseMatrix
where
    F: Fn(&BasisEval, &BasisEval, f64, &mut dyn FnMut(usize, usize, usize, usize, f64)),
{
    assert_eq!(rows.mesh(), cols.mesh(), "volume forms need a common mesh");
    let nq = rows.order().max(cols.order()) + 1;
    let rule = rows.cell_rule(nq);
    let er: Vec<BasisEval> = rule
        .iter()
        .map(|(xi, _)| rows.eval_reference(*xi))
        .collect();
    let ec: Vec<BasisEval> = rule
        .iter()
        .map(|(xi, _)| cols.eval_reference(*xi))
        .collect();
    let mut t = Vec::new();
    for c in 0..rows.mesh().n_cells() {
        let rn = rows.cell_nodes(c);
        let cn = cols.cell_nodes(c);
        for (q, (_, w)) in rule.iter().enumerate() {
            kernel(&er[q], &ec[q], *w, &mut |a, ca, b, cb, v| {
                t.push((rows.dof(ca, rn[a]), cols.dof(cb, cn[b]), v));
            });
        }
    }
    build(rows.n_dofs(), cols.n_dofs(), t)
}

/// `(φ_b, φ_a)` with matching components.
pub fn mass(space: &LagrangeSpace) -> SparseMatrix {
    let nc = space.components();
    volume(space, space, |r, c, w, push| {
        for a in 0..r.values.len() {
            for b in 0..c.values.len() {
                let v = w * r.values[a] * c.values[b];
                for comp in 0..nc {
                    push(a, comp, b, comp, v);
                }
            }
        }
    })
}

/// `(∇φ_b, ∇φ_a)` with matching components.
pub fn stiffness(space: &LagrangeSpace) -> SparseMatrix {
    let nc = space.components();
    volume(space, space, |r, c, w, push| {
        for a in 0..r.values.len() {
            for b in 0..c.values.len() {
                let g = r.grads[a];
                let h = c.grads[b];
                let v = w * (g[0] * h[0] + g[1] * h[1]);
                for comp in 0..nc {
                    push(a, comp, b, comp, v);
                }
            }
        }
    })
}

/// `2(ε̇(u), ∇φ) = 2(ε̇(u), ε̇(φ))` for two-component fields in 2D.
pub fn strain_stiffness(space: &LagrangeSpace) -> SparseMatrix {
    assert_eq!(space.components(), 2, "strain form needs a 2D vector space");
    volume(space, space, |r, c, w, push| {
        for a in 0..r.values.len() {
            let ga = r.grads[a];
            for b in 0..c.values.len() {
                let gb = c.grads[b];
                let dot = ga[0] * gb[0] + ga[1] * gb[1];
                for d in 0..2 {
                    for cc in 0..2 {
                        // row φ = e_d N_a, column u = e_cc N_b
                        let mut v = gb[d] * ga[cc];
                        if d == cc {
                            v += dot;
                        }
                        push(a, d, b, cc, w * v);
                    }
                }
            }
        }
    })
}

/// `(div u, q)`: rows pressure dofs, columns velocity dofs.
pub fn divergence(pressure: &LagrangeSpace, velocity: &LagrangeSpace) -> SparseMatrix {
    assert_eq!(pressure.components(), 1);
    volume(pressure, velocity, |r, c, w, push| {
        for q in 0..r.values.len() {
            for b in 0..c.values.len() {
                for cc in 0..2 {
                    push(q, 0, b, cc, w * r.values[q] * c.grads[b][cc]);
                }
            }
        }
    })
}

/// `(f, φ)` for a vector source with one entry per component.
pub fn load<F>(space: &LagrangeSpace, f: F) -> Vec<f64>
where
    F: Fn([f64; 2]) -> Vec<f64>,
{
    let rule = space.cell_rule(space.order() + 2);
    let evals: Vec<BasisEval> = rule
        .iter()
        .map(|(xi, _)| space.eval_reference(*xi))
        .collect();
    let mut out = vec![0.0; space.n_dofs()];
    for c in 0..space.mesh().n_cells() {
        let nodes = space.cell_nodes(c);
        for (q, (xi, w)) in rule.iter().enumerate() {
            let x = space.mesh().map_point(c, *xi);
            let fx = f(x);
            for (a, &node) in nodes.iter().enumerate() {
                for (comp, fv) in fx.iter().enumerate() {
                    out[space.dof(comp, node)] += w * fv * evals[q].values[a];
                }
            }
        }
    }
    out
}

/// One side of an interface quadrature point.
pub struct FacetSample<'a> {
    pub space: &'a LagrangeSpace,
    pub nodes: Vec<usize>,
    pub eval: BasisEval,
    /// outward normal of this side
    pub normal: [f64; 2],
}

/// Loop over interface quadrature points with evaluations on side `row` and side `col`.
pub fn for_each_interface_point<F>(
    cm: &CoupledMesh,
    row: (Sub, &LagrangeSpace),
    col: (Sub, &LagrangeSpace),
    points: usize,
    mut f: F,
) where
    F: FnMut(&FacetSample, &FacetSample, [f64; 2], f64),
{
    let rule = if cm.dim() == 1 {
        super::quadrature::Rule {
            points: vec![0.5],
            weights: vec![1.0],
        }
    } else {
        super::quadrature::gauss_legendre(points)
    };
    fn sample<'s>(
        cm: &CoupledMesh,
        j: Sub,
        sp: &'s LagrangeSpace,
        (side, idx): (Side, usize),
        s: f64,
    ) -> (FacetSample<'s>, [f64; 2]) {
        let mesh = cm.sub(j);
        let c = mesh.facet_cell(side, idx);
        let xi = side.reference_point(s);
        let nodes = sp.cell_nodes(c);
        let x = mesh.map_point(c, xi);
        (
            FacetSample {
                space: sp,
                nodes,
                eval: sp.eval_reference(xi),
                normal: cm.normal(j),
            },
            x,
        )
    }
    for pair in &cm.interface {
        let fr = pair.facets[row.0.index()];
        let fc = pair.facets[col.0.index()];
        let len = cm.sub(row.0).facet_length(fr.0);
        for (s, w) in rule.points.iter().zip(&rule.weights) {
            let (rs, x) = sample(cm, row.0, row.1, fr, *s);
            let (cs, _) = sample(cm, col.0, col.1, fc, *s);
            f(&rs, &cs, x, w * len);
        }
    }
}

fn interface_matrix<K>(
    cm: &CoupledMesh,
    row: (Sub, &LagrangeSpace),
    col: (Sub, &LagrangeSpace),
    kernel: K,
) -> SparseMatrix
where
    K: Fn(&FacetSample, &FacetSample, f64, &mut dyn FnMut(usize, usize, usize, usize, f64)),
{
    let points = row.1.order().max(col.1.order()) + 1;
    let mut t = Vec::new();
    for_each_interface_point(cm, row, col, points, |rs, cs, _, w| {
        kernel(rs, cs, w, &mut |a, ca, b, cb, v| {
            t.push((
                rs.space.dof(ca, rs.nodes[a]),
                cs.space.dof(cb, cs.nodes[b]),
                v,
            ));
        });
    });
    build(row.1.n_dofs(), col.1.n_dofs(), t)
}

/// `⟨φ^col_b, φ^row_a⟩_Γ`, components matched.
pub fn interface_mass(
    cm: &CoupledMesh,
    row: (Sub, &LagrangeSpace),
    col: (Sub, &LagrangeSpace),
) -> SparseMatrix {
    let nc = row.1.components();
    interface_matrix(cm, row, col, |r, c, w, push| {
        for a in 0..r.eval.values.len() {
            for b in 0..c.eval.values.len() {
                let v = w * r.eval.values[a] * c.eval.values[b];
                if v != 0.0 {
                    for comp in 0..nc {
                        push(a, comp, b, comp, v);
                    }
                }
            }
        }
    })
}

/// `⟨∂_{n_col} φ^col_b, φ^row_a⟩_Γ`, components matched (normal of the column side).
pub fn interface_normal_derivative(
    cm: &CoupledMesh,
    row: (Sub, &LagrangeSpace),
    col: (Sub, &LagrangeSpace),
) -> SparseMatrix {
    let nc = row.1.components();
    interface_matrix(cm, row, col, |r, c, w, push| {
        let n = c.normal;
        for a in 0..r.eval.values.len() {
            if r.eval.values[a] == 0.0 {
                continue;
            }
            for b in 0..c.eval.values.len() {
                let g = c.eval.grads[b];
                let v = w * r.eval.values[a] * (g[0] * n[0] + g[1] * n[1]);
                for comp in 0..nc {
                    push(a, comp, b, comp, v);
                }
            }
        }
    })
}

/// `⟨ε̇(φ^col_b) n_col, φ^row_a⟩_Γ` for two-component fields.
pub fn interface_strain_traction(
    cm: &CoupledMesh,
    row: (Sub, &LagrangeSpace),
    col: (Sub, &LagrangeSpace),
) -> SparseMatrix {
    interface_matrix(cm, row, col, |r, c, w, push| {
        let n = c.normal;
        for a in 0..r.eval.values.len() {
            let va = r.eval.values[a];
            if va == 0.0 {
                continue;
            }
            for b in 0..c.eval.values.len() {
                let g = c.eval.grads[b];
                let gn = g[0] * n[0] + g[1] * n[1];
                // ε̇(e_cc N) n = ½ (e_cc ∂_n N + ∇N n_cc)
                for d in 0..2 {
                    for cc in 0..2 {
                        let mut v = 0.5 * g[d] * n[cc];
                        if d == cc {
                            v += 0.5 * gn;
                        }
                        push(a, d, b, cc, w * va * v);
                    }
                }
            }
        }
    })
}

/// `⟨q^col n, φ^row⟩_Γ` for a given vector `n`: rows velocity dofs of the row side, columns pressure dofs of the column side.
pub fn interface_pressure(
    cm: &CoupledMesh,
    row: (Sub, &LagrangeSpace),
    col: (Sub, &LagrangeSpace),
    n: [f64; 2],
) -> SparseMatrix {
    interface_matrix(cm, row, col, |r, c, w, push| {
        for a in 0..r.eval.values.len() {
            let va = r.eval.values[a];
            if va == 0.0 {
                continue;
            }
            for b in 0..c.eval.values.len() {
                for d in 0..2 {
                    push(a, d, b, 0, w * va * c.eval.values[b] * n[d]);
                }
            }
        }
    })
}

/// Combine interface forms into the Nitsche blocks of row side `j`:
/// `B_jj = -c_j T_jj + c_j T_jjᵀ + κ J_jj` and
/// `B_jĵ = c_ĵ T_jĵ - c_j T_ĵjᵀ - κ J_jĵ`,
/// where `T[r][s] = ⟨flux(φ^s), φ^r⟩` and `c_j` scales the flux of side `j`.
pub fn nitsche_blocks(
    t: &[[SparseMatrix; 2]; 2],
    jm: &[[SparseMatrix; 2]; 2],
    c: [f64; 2],
    kappa: f64,
) -> [[SparseMatrix; 2]; 2] {
    let block = |j: usize, s: usize| -> SparseMatrix {
        let mut trip = Vec::new();
        if j == s {
            trip.extend(
                t[j][j]
                    .triplets()
                    .into_iter()
                    .map(|(a, b, v)| (a, b, -c[j] * v)),
            );
            trip.extend(
                t[j][j]
                    .triplets()
                    .into_iter()
                    .map(|(a, b, v)| (b, a, c[j] * v)),
            );
            trip.extend(
                jm[j][j]
                    .triplets()
                    .into_iter()
                    .map(|(a, b, v)| (a, b, kappa * v)),
            );
        } else {
            trip.extend(
                t[j][s]
                    .triplets()
                    .into_iter()
                    .map(|(a, b, v)| (a, b, c[s] * v)),
            );
            trip.extend(
                t[s][j]
                    .triplets()
                    .into_iter()
                    .map(|(b, a, v)| (a, b, -c[j] * v)),
            );
            trip.extend(
                jm[j][s]
                    .triplets()
                    .into_iter()
                    .map(|(a, b, v)| (a, b, -kappa * v)),
            );
        }
        build(jm[j][s].rows(), jm[j][s].cols(), trip)
    };
    [[block(0, 0), block(0, 1)], [block(1, 0), block(1, 1)]]
}
