//! Continuous tensor-product Lagrange spaces on structured meshes.

use std::sync::Arc;

use super::mesh::{BoundaryTag, Side, SubdomainMesh};
use super::quadrature::{gauss_legendre, lagrange_1d};
use super::FemError;

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeSpace {
    mesh: SubdomainMesh,
    order: usize,
    components: usize,
    constrained_tags: Vec<BoundaryTag>,
    constrained: Vec<usize>,
    is_constrained: Vec<bool>,
}

/// Basis values and physical gradients of one cell at one point.
#[derive(Debug, Clone)]
pub struct BasisEval {
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 2]>,
}

impl LagrangeSpace {
    /// Order-`order` space with `components` copies; nodes on facets carrying
    /// any of `constrained_tags` (closures included) are constrained.
    pub fn new(
        mesh: SubdomainMesh,
        order: usize,
        components: usize,
        constrained_tags: &[BoundaryTag],
    ) -> Result<Self, FemError> {
        if order == 0 {
            return Err(FemError::InvalidSpace(
                "polynomial order must be at least 1".into(),
            ));
        }
        if components == 0 {
            return Err(FemError::InvalidSpace("need at least one component".into()));
        }
        let mut space = LagrangeSpace {
            mesh,
            order,
            components,
            constrained_tags: constrained_tags.to_vec(),
            constrained: Vec::new(),
            is_constrained: Vec::new(),
        };
        let n_nodes = space.n_nodes();
        let mut node_flag = vec![false; n_nodes];
        for f in &space.mesh.facets {
            if constrained_tags.contains(&f.tag) {
                for node in space.facet_nodes(f.side, f.index) {
                    node_flag[node] = true;
                }
            }
        }
        let mut is_constrained = vec![false; n_nodes * components];
        for c in 0..components {
            for (node, &flag) in node_flag.iter().enumerate() {
                is_constrained[c * n_nodes + node] = flag;
            }
        }
        space.constrained = (0..is_constrained.len())
            .filter(|&d| is_constrained[d])
            .collect();
        space.is_constrained = is_constrained;
        Ok(space)
    }

    pub fn mesh(&self) -> &SubdomainMesh {
        &self.mesh
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn constrained_tags(&self) -> &[BoundaryTag] {
        &self.constrained_tags
    }

    /// Nodes per axis.
    pub fn grid(&self) -> [usize; 2] {
        let nx = self.mesh.cells[0] * self.order + 1;
        let ny = if self.mesh.dim == 1 {
            1
        } else {
            self.mesh.cells[1] * self.order + 1
        };
        [nx, ny]
    }

    pub fn n_nodes(&self) -> usize {
        let [nx, ny] = self.grid();
        nx * ny
    }

    pub fn n_dofs(&self) -> usize {
        self.n_nodes() * self.components
    }

    pub fn dof(&self, component: usize, node: usize) -> usize {
        component * self.n_nodes() + node
    }

    pub fn dof_node(&self, dof: usize) -> (usize, usize) {
        (dof / self.n_nodes(), dof % self.n_nodes())
    }

    pub fn constrained_dofs(&self) -> &[usize] {
        &self.constrained
    }

    pub fn is_constrained(&self, dof: usize) -> bool {
        self.is_constrained[dof]
    }

    pub fn free_dofs(&self) -> Vec<usize> {
        (0..self.n_dofs())
            .filter(|&d| !self.is_constrained[d])
            .collect()
    }

    pub fn node_coords(&self, node: usize) -> [f64; 2] {
        let [nx, _] = self.grid();
        let (a, b) = (node % nx, node / nx);
        let r = self.order as f64;
        let x = self.mesh.origin[0] + a as f64 * self.mesh.h[0] / r;
        let y = if self.mesh.dim == 1 {
            0.0
        } else {
            self.mesh.origin[1] + b as f64 * self.mesh.h[1] / r
        };
        [x, y]
    }

    pub fn local_count(&self) -> usize {
        if self.mesh.dim == 1 {
            self.order + 1
        } else {
            (self.order + 1) * (self.order + 1)
        }
    }

    /// Global node ids of a cell, local index `q * (r+1) + p`.
    pub fn cell_nodes(&self, c: usize) -> Vec<usize> {
        let (ix, iy) = self.mesh.cell_coords(c);
        let r = self.order;
        let [nx, _] = self.grid();
        let qn = if self.mesh.dim == 1 { 1 } else { r + 1 };
        let mut out = Vec::with_capacity(self.local_count());
        for q in 0..qn {
            for p in 0..=r {
                out.push((iy * r + q) * nx + ix * r + p);
            }
        }
        out
    }

    /// Nodes lying on a boundary facet, endpoints included.
    pub fn facet_nodes(&self, side: Side, index: usize) -> Vec<usize> {
        let [nx, ny] = self.grid();
        let r = self.order;
        if self.mesh.dim == 1 {
            return vec![if side == Side::Left { 0 } else { nx - 1 }];
        }
        match side {
            Side::Bottom => (0..=r).map(|p| index * r + p).collect(),
            Side::Top => (0..=r).map(|p| (ny - 1) * nx + index * r + p).collect(),
            Side::Left => (0..=r).map(|q| (index * r + q) * nx).collect(),
            Side::Right => (0..=r).map(|q| (index * r + q) * nx + nx - 1).collect(),
        }
    }

    /// Basis values and physical gradients at reference point `xi` of any cell.
    pub fn eval_reference(&self, xi: [f64; 2]) -> BasisEval {
        let r = self.order;
        let (vx, dx) = lagrange_1d(r, xi[0]);
        let [hx, hy] = self.mesh.h;
        if self.mesh.dim == 1 {
            return BasisEval {
                values: vx,
                grads: dx.iter().map(|d| [d / hx, 0.0]).collect(),
            };
        }
        let (vy, dy) = lagrange_1d(r, xi[1]);
        let mut values = Vec::with_capacity(self.local_count());
        let mut grads = Vec::with_capacity(self.local_count());
        for q in 0..=r {
            for p in 0..=r {
                values.push(vx[p] * vy[q]);
                grads.push([dx[p] * vy[q] / hx, vx[p] * dy[q] / hy]);
            }
        }
        BasisEval { values, grads }
    }

    /// Tensor Gauss rule with `n` points per direction: `(reference point, weight × cell measure)`.
    pub fn cell_rule(&self, n: usize) -> Vec<([f64; 2], f64)> {
        let g = gauss_legendre(n);
        let meas = self.mesh.cell_measure();
        let mut out = Vec::new();
        if self.mesh.dim == 1 {
            for (x, w) in g.points.iter().zip(&g.weights) {
                out.push(([*x, 0.0], w * meas));
            }
        } else {
            for (y, wy) in g.points.iter().zip(&g.weights) {
                for (x, wx) in g.points.iter().zip(&g.weights) {
                    out.push(([*x, *y], wx * wy * meas));
                }
            }
        }
        out
    }

    /// Nodal interpolation of a vector field with `components` entries.
    pub fn interpolate<F>(self: &Arc<Self>, f: F) -> FEFunction
    where
        F: Fn([f64; 2]) -> Vec<f64>,
    {
        let n = self.n_nodes();
        let mut coeffs = vec![0.0; self.n_dofs()];
        for node in 0..n {
            let v = f(self.node_coords(node));
            for c in 0..self.components {
                coeffs[c * n + node] = v[c];
            }
        }
        FEFunction {
            space: Arc::clone(self),
            coeffs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FEFunction {
    pub space: Arc<LagrangeSpace>,
    pub coeffs: Vec<f64>,
}

impl FEFunction {
    pub fn new(space: Arc<LagrangeSpace>, coeffs: Vec<f64>) -> Result<Self, FemError> {
        if coeffs.len() != space.n_dofs() {
            return Err(FemError::InvalidSpace(format!(
                "coefficient length {} but space has {} dofs",
                coeffs.len(),
                space.n_dofs()
            )));
        }
        Ok(FEFunction { space, coeffs })
    }

    pub fn zero(space: Arc<LagrangeSpace>) -> Self {
        let n = space.n_dofs();
        FEFunction {
            space,
            coeffs: vec![0.0; n],
        }
    }

    /// Values (per component) and gradients (per component) at a physical point.
    pub fn eval(&self, x: [f64; 2]) -> Option<(Vec<f64>, Vec<[f64; 2]>)> {
        let sp = &self.space;
        let (c, xi) = sp.mesh().locate(x)?;
        let nodes = sp.cell_nodes(c);
        let b = sp.eval_reference(xi);
        let n = sp.n_nodes();
        let mut vals = vec![0.0; sp.components()];
        let mut grads = vec![[0.0; 2]; sp.components()];
        for comp in 0..sp.components() {
            for (a, &node) in nodes.iter().enumerate() {
                let u = self.coeffs[comp * n + node];
                vals[comp] += u * b.values[a];
                grads[comp][0] += u * b.grads[a][0];
                grads[comp][1] += u * b.grads[a][1];
            }
        }
        Some((vals, grads))
    }
}
