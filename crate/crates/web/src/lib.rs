//! Browser bindings. Every export takes plain numbers or a mesh JSON string
//! and returns a JSON string; errors surface as JS exceptions.

use multirate::heat::{manufactured_heat_fast_slow, HeatDiscretization};
use multirate::ode::{fast_slow_problem, solve_multirate, PicardOptions};
use multirate::spacefem::mesh::build_coupled_mesh_1d;
use multirate::timegrid::{MultirateMesh, Sub};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn sub(j: u32) -> Result<Sub, String> {
    Sub::from_number(j as usize).ok_or_else(|| format!("subproblem must be 1 or 2, got {j}"))
}

fn mesh_view(m: &MultirateMesh) -> serde_json::Value {
    json!({
        "mesh": serde_json::from_str::<serde_json::Value>(&m.to_json()).expect("mesh json"),
        "nodes1": m.micro_nodes(Sub::One),
        "nodes2": m.micro_nodes(Sub::Two),
    })
}

/// Split every micro interval of subproblem `j` (`n < 0`) or only those of macro step `n`.
pub fn refine(mesh_json: &str, j: u32, n: i32) -> Result<String, String> {
    let m = MultirateMesh::from_json(mesh_json).map_err(|e| e.to_string())?;
    let j = sub(j)?;
    let r = if n < 0 {
        m.refine_all(j)
    } else {
        m.refine_micro(j, n as usize)
    };
    Ok(mesh_view(&r.map_err(|e| e.to_string())?).to_string())
}

pub fn describe(mesh_json: &str) -> Result<String, String> {
    let m = MultirateMesh::from_json(mesh_json).map_err(|e| e.to_string())?;
    Ok(mesh_view(&m).to_string())
}

/// Fast-slow ODE on `[0, 1]` with `n_fast` micro steps per macro step on the fast side.
pub fn fast_slow(omega: f64, eps: f64, n_macro: u32, n_fast: u32) -> Result<String, String> {
    let p = fast_slow_problem(omega, eps, 1.0);
    let mesh = MultirateMesh::uniform_with_counts(n_macro as usize, 1.0, [n_fast as usize, 1])
        .map_err(|e| e.to_string())?;
    let opts = PicardOptions {
        tol: 1e-13,
        max_iter: 10_000,
        damping: 0.5,
    };
    let sol = solve_multirate(&p, &mesh, &opts).map_err(|e| e.to_string())?;
    let values = |u: &multirate::timegrid::PiecewiseConstant| -> Vec<f64> {
        std::iter::once(u.initial()[0])
            .chain((0..u.len()).map(|i| u.value(i)[0]))
            .collect()
    };
    let exact = p.exact.as_ref().expect("fast-slow has an exact solution");
    let fine: Vec<f64> = (0..=400).map(|i| i as f64 / 400.0).collect();
    let (e1, e2): (Vec<f64>, Vec<f64>) = fine
        .iter()
        .map(|&t| {
            let (a, b) = exact(t);
            (a[0], b[0])
        })
        .unzip();
    Ok(json!({
        "t1": mesh.micro_nodes(Sub::One),
        "u1": values(&sol.u1),
        "t2": mesh.micro_nodes(Sub::Two),
        "u2": values(&sol.u2),
        "t": fine,
        "exact1": e1,
        "exact2": e2,
    })
    .to_string())
}

/// Heat profile at time `t_end` with `m` cells per unit length, P1 elements.
pub fn heat_profile(
    omega: f64,
    m: u32,
    n_macro: u32,
    n1: u32,
    n2: u32,
    t_end: f64,
) -> Result<String, String> {
    if m < 2 || m % 2 != 0 {
        return Err(format!("cells per unit length must be even, got {m}"));
    }
    let (problem, exact) = manufactured_heat_fast_slow(1.0, 2.0, omega);
    let cm = build_coupled_mesh_1d(0.5, 1.0 / m as f64, (0.0, 1.0)).map_err(|e| e.to_string())?;
    let disc = HeatDiscretization::new(&problem, &cm, 1).map_err(|e| e.to_string())?;
    let mesh =
        MultirateMesh::uniform_with_counts(n_macro as usize, t_end, [n1 as usize, n2 as usize])
            .map_err(|e| e.to_string())?;
    let traj = disc.solve(&mesh).map_err(|e| e.to_string())?;
    let side = |j: Sub| {
        let sp = &disc.spaces[j.index()];
        let u = traj.part(j).final_value();
        let mut pts: Vec<(f64, f64)> = (0..sp.n_nodes())
            .map(|node| (sp.node_coords(node)[0], u[sp.dof(0, node)]))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let exact: Vec<f64> = pts.iter().map(|(x, _)| exact.value(j, *x, t_end)).collect();
        json!({"x": pts.iter().map(|p| p.0).collect::<Vec<_>>(), "u": pts.iter().map(|p| p.1).collect::<Vec<_>>(), "exact": exact})
    };
    Ok(json!({"sub1": side(Sub::One), "sub2": side(Sub::Two), "steps": [mesh.micro_total(Sub::One), mesh.micro_total(Sub::Two)]}).to_string())
}

#[wasm_bindgen(js_name = refineMesh)]
pub fn refine_mesh(mesh_json: &str, j: u32, n: i32) -> Result<String, JsValue> {
    refine(mesh_json, j, n).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = describeMesh)]
pub fn describe_mesh(mesh_json: &str) -> Result<String, JsValue> {
    describe(mesh_json).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = fastSlow)]
pub fn fast_slow_js(omega: f64, eps: f64, n_macro: u32, n_fast: u32) -> Result<String, JsValue> {
    fast_slow(omega, eps, n_macro, n_fast).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = heatProfile)]
pub fn heat_profile_js(
    omega: f64,
    m: u32,
    n_macro: u32,
    n1: u32,
    n2: u32,
    t_end: f64,
) -> Result<String, JsValue> {
    heat_profile(omega, m, n_macro, n1, n2, t_end).map_err(|e| JsValue::from_str(&e))
}
