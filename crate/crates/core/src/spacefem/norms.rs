//! Discrete norms of coupled FE functions and errors against closed-form fields.

use std::str::FromStr;

use super::mesh::CoupledMesh;
use super::ops::{interface_mass, mass, stiffness};
use super::space::FEFunction;
use super::FemError;
use crate::timegrid::Sub;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    L2Domain,
    H1Seminorm,
    InterfaceL2Jump,
    /// `(Σ ν_j² ‖∇u_j‖² + (γ/h) ‖u_2 − u_1‖²_Γ)^{1/2}`
    Triple {
        nu: [f64; 2],
        gamma: f64,
        h: f64,
    },
}

impl FromStr for NormKind {
    type Err = FemError;
    /// Parses the parameter-free kinds; `triple` needs [`NormKind::Triple`] directly.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l2_domain" => Ok(NormKind::L2Domain),
            "h1_seminorm" => Ok(NormKind::H1Seminorm),
            "interface_l2_jump" => Ok(NormKind::InterfaceL2Jump),
            other => Err(FemError::UnknownNorm(other.to_string())),
        }
    }
}

fn jump_sq(cm: &CoupledMesh, u: [&FEFunction; 2]) -> f64 {
    let s = [&*u[0].space, &*u[1].space];
    let j11 = interface_mass(cm, (Sub::One, s[0]), (Sub::One, s[0]));
    let j12 = interface_mass(cm, (Sub::One, s[0]), (Sub::Two, s[1]));
    let j22 = interface_mass(cm, (Sub::Two, s[1]), (Sub::Two, s[1]));
    let v = j11.bilinear(&u[0].coeffs, &u[0].coeffs)
        - 2.0 * j12.bilinear(&u[0].coeffs, &u[1].coeffs)
        + j22.bilinear(&u[1].coeffs, &u[1].coeffs);
    v.max(0.0)
}

pub fn norm(cm: &CoupledMesh, u: [&FEFunction; 2], kind: NormKind) -> f64 {
    let grad_sq = |f: &FEFunction| stiffness(&f.space).bilinear(&f.coeffs, &f.coeffs);
    let v = match kind {
        NormKind::L2Domain => u
            .iter()
            .map(|f| mass(&f.space).bilinear(&f.coeffs, &f.coeffs))
            .sum(),
        NormKind::H1Seminorm => u.iter().map(|f| grad_sq(f)).sum(),
        NormKind::InterfaceL2Jump => jump_sq(cm, u),
        NormKind::Triple { nu, gamma, h } => {
            nu[0] * nu[0] * grad_sq(u[0])
                + nu[1] * nu[1] * grad_sq(u[1])
                + gamma / h * jump_sq(cm, u)
        }
    };
    v.max(0.0).sqrt()
}

/// `‖u_h − f‖_{L2}` over the subdomain of `u`, `f(x)` one entry per component.
pub fn l2_error<F>(u: &FEFunction, f: F) -> f64
where
    F: Fn([f64; 2]) -> Vec<f64>,
{
    cell_integral(u, |vals, _, x| {
        let fx = f(x);
        vals.iter().zip(&fx).map(|(a, b)| (a - b) * (a - b)).sum()
    })
    .sqrt()
}

/// `‖∇(u_h − f)‖_{L2}`, `g(x)[c]` the exact gradient of component `c`.
pub fn h1_error<G>(u: &FEFunction, g: G) -> f64
where
    G: Fn([f64; 2]) -> Vec<[f64; 2]>,
{
    cell_integral(u, |_, grads, x| {
        let gx = g(x);
        grads
            .iter()
            .zip(&gx)
            .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
            .sum()
    })
    .sqrt()
}

/// `∫ integrand(u values, u gradients, x)` with a rule exact beyond degree 2r.
pub fn cell_integral<F>(u: &FEFunction, integrand: F) -> f64
where
    F: Fn(&[f64], &[[f64; 2]], [f64; 2]) -> f64,
{
    let sp = &u.space;
    let rule = sp.cell_rule(sp.order() + 3);
    let evals: Vec<_> = rule.iter().map(|(xi, _)| sp.eval_reference(*xi)).collect();
    let n = sp.n_nodes();
    let nc = sp.components();
    let mut total = 0.0;
    let mut vals = vec![0.0; nc];
    let mut grads = vec![[0.0; 2]; nc];
    for c in 0..sp.mesh().n_cells() {
        let nodes = sp.cell_nodes(c);
        for (q, (xi, w)) in rule.iter().enumerate() {
            vals.iter_mut().for_each(|v| *v = 0.0);
            grads.iter_mut().for_each(|g| *g = [0.0; 2]);
            for comp in 0..nc {
                for (a, &node) in nodes.iter().enumerate() {
                    let coef = u.coeffs[comp * n + node];
                    vals[comp] += coef * evals[q].values[a];
                    grads[comp][0] += coef * evals[q].grads[a][0];
                    grads[comp][1] += coef * evals[q].grads[a][1];
                }
            }
            total += w * integrand(&vals, &grads, sp.mesh().map_point(c, *xi));
        }
    }
    total
}

/// `‖(u_2 − f_2) − (u_1 − f_1)‖²_Γ` for exact interface data `f_j`.
pub fn interface_jump_error_sq<F>(cm: &CoupledMesh, u: [&FEFunction; 2], f: F) -> f64
where
    F: Fn(Sub, [f64; 2]) -> Vec<f64>,
{
    let s = [&*u[0].space, &*u[1].space];
    let nc = s[0].components();
    let points = s[0].order() + 3;
    let mut total = 0.0;
    super::ops::for_each_interface_point(
        cm,
        (Sub::One, s[0]),
        (Sub::Two, s[1]),
        points,
        |r, c, x, w| {
            let f1 = f(Sub::One, x);
            let f2 = f(Sub::Two, x);
            for comp in 0..nc {
                let mut e1 = -f1[comp];
                for (a, &node) in r.nodes.iter().enumerate() {
                    e1 += u[0].coeffs[r.space.dof(comp, node)] * r.eval.values[a];
                }
                let mut e2 = -f2[comp];
                for (b, &node) in c.nodes.iter().enumerate() {
                    e2 += u[1].coeffs[c.space.dof(comp, node)] * c.eval.values[b];
                }
                total += w * (e2 - e1) * (e2 - e1);
            }
        },
    );
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spacefem::mesh::build_coupled_mesh_1d;
    use crate::spacefem::space::LagrangeSpace;
    use std::sync::Arc;

    fn spaces(r: usize) -> (CoupledMesh, [Arc<LagrangeSpace>; 2]) {
        let cm = build_coupled_mesh_1d(0.5, 0.125, (0.0, 1.0)).unwrap();
        let s = [
            Arc::new(LagrangeSpace::new(cm.subs[0].clone(), r, 1, &[]).unwrap()),
            Arc::new(LagrangeSpace::new(cm.subs[1].clone(), r, 1, &[]).unwrap()),
        ];
        (cm, s)
    }

    #[test]
    fn zero_function_has_zero_norms() {
        let (cm, s) = spaces(2);
        let z = [
            FEFunction::zero(s[0].clone()),
            FEFunction::zero(s[1].clone()),
        ];
        for kind in [
            NormKind::L2Domain,
            NormKind::H1Seminorm,
            NormKind::InterfaceL2Jump,
            NormKind::Triple {
                nu: [1.0, 56.0],
                gamma: 10.0,
                h: 0.125,
            },
        ] {
            assert_eq!(norm(&cm, [&z[0], &z[1]], kind), 0.0);
        }
    }

    #[test]
    fn continuous_function_has_no_jump() {
        let (cm, s) = spaces(2);
        let u = [
            s[0].interpolate(|x| vec![x[0].sin()]),
            s[1].interpolate(|x| vec![x[0].sin()]),
        ];
        assert!(norm(&cm, [&u[0], &u[1]], NormKind::InterfaceL2Jump) < 1e-14);
        let v = [
            s[0].interpolate(|_| vec![1.0]),
            s[1].interpolate(|_| vec![3.0]),
        ];
        assert!((norm(&cm, [&v[0], &v[1]], NormKind::InterfaceL2Jump) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn triple_norm_of_identity() {
        let (cm, s) = spaces(1);
        let u = [
            s[0].interpolate(|x| vec![x[0]]),
            s[1].interpolate(|x| vec![x[0]]),
        ];
        let t = norm(
            &cm,
            [&u[0], &u[1]],
            NormKind::Triple {
                nu: [1.0, 1.0],
                gamma: 0.0,
                h: 0.125,
            },
        );
        assert!((t - 1.0).abs() < 1e-13);
        assert!(
            (norm(&cm, [&u[0], &u[1]], NormKind::L2Domain) - (1.0f64 / 3.0).sqrt()).abs() < 1e-13
        );
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!(matches!(
            "sup".parse::<NormKind>(),
            Err(FemError::UnknownNorm(_))
        ));
        assert_eq!(
            "h1_seminorm".parse::<NormKind>().unwrap(),
            NormKind::H1Seminorm
        );
    }

    #[test]
    fn exact_error_helpers() {
        let (cm, s) = spaces(2);
        let u = [
            s[0].interpolate(|x| vec![x[0] * x[0]]),
            s[1].interpolate(|x| vec![x[0] * x[0]]),
        ];
        assert!(l2_error(&u[0], |x| vec![x[0] * x[0]]) < 1e-13);
        assert!(h1_error(&u[1], |x| vec![[2.0 * x[0], 0.0]]) < 1e-12);
        let e = interface_jump_error_sq(&cm, [&u[0], &u[1]], |j, _| {
            vec![if j == Sub::One { 0.25 } else { 1.25 }]
        });
        assert!((e - 1.0).abs() < 1e-13);
    }
}
