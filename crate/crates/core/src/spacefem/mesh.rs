//! Structured subdomain meshes and their interface pairing.

use serde::Serialize;
use serde_json::json;

use super::FemError;
use crate::timegrid::Sub;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTag {
    Dirichlet,
    Inflow,
    Outflow,
    NoSlip,
    Interface,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub fn normal(self) -> [f64; 2] {
        match self {
            Side::Left => [-1.0, 0.0],
            Side::Right => [1.0, 0.0],
            Side::Bottom => [0.0, -1.0],
            Side::Top => [0.0, 1.0],
        }
    }

    /// Reference coordinates of facet parameter `s` in [0, 1].
    pub fn reference_point(self, s: f64) -> [f64; 2] {
        match self {
            Side::Left => [0.0, s],
            Side::Right => [1.0, s],
            Side::Bottom => [s, 0.0],
            Side::Top => [s, 1.0],
        }
    }
}

/// A boundary facet: `index` counts cells along the side (bottom/top run in
/// x, left/right in y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BoundaryFacet {
    pub side: Side,
    pub index: usize,
    pub tag: BoundaryTag,
}

/// Axis-aligned structured mesh of a rectangle (or an interval when `dim == 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainMesh {
    pub dim: usize,
    pub origin: [f64; 2],
    pub cells: [usize; 2],
    pub h: [f64; 2],
    pub facets: Vec<BoundaryFacet>,
}

impl SubdomainMesh {
    pub fn interval(a: f64, b: f64, n: usize, left: BoundaryTag, right: BoundaryTag) -> Self {
        SubdomainMesh {
            dim: 1,
            origin: [a, 0.0],
            cells: [n, 1],
            h: [(b - a) / n as f64, 1.0],
            facets: vec![
                BoundaryFacet {
                    side: Side::Left,
                    index: 0,
                    tag: left,
                },
                BoundaryFacet {
                    side: Side::Right,
                    index: 0,
                    tag: right,
                },
            ],
        }
    }

    /// Rectangle `[x0, x0+nx*hx] x [y0, y0+ny*hy]`; `tag(side, index, midpoint)` labels each boundary facet.
    pub fn rectangle<F>(origin: [f64; 2], cells: [usize; 2], h: [f64; 2], tag: F) -> Self
    where
        F: Fn(Side, usize, [f64; 2]) -> BoundaryTag,
    {
        let mut mesh = SubdomainMesh {
            dim: 2,
            origin,
            cells,
            h,
            facets: Vec::new(),
        };
        let mut facets = Vec::new();
        for side in [Side::Bottom, Side::Right, Side::Top, Side::Left] {
            for index in 0..mesh.side_len(side) {
                let mid = mesh.facet_midpoint(side, index);
                facets.push(BoundaryFacet {
                    side,
                    index,
                    tag: tag(side, index, mid),
                });
            }
        }
        mesh.facets = facets;
        mesh
    }

    pub fn n_cells(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    /// Number of facets along a side.
    pub fn side_len(&self, side: Side) -> usize {
        if self.dim == 1 {
            return 1;
        }
        match side {
            Side::Bottom | Side::Top => self.cells[0],
            Side::Left | Side::Right => self.cells[1],
        }
    }

    pub fn cell_index(&self, ix: usize, iy: usize) -> usize {
        iy * self.cells[0] + ix
    }

    pub fn cell_coords(&self, c: usize) -> (usize, usize) {
        (c % self.cells[0], c / self.cells[0])
    }

    pub fn cell_origin(&self, c: usize) -> [f64; 2] {
        let (ix, iy) = self.cell_coords(c);
        [
            self.origin[0] + ix as f64 * self.h[0],
            self.origin[1] + iy as f64 * self.h[1],
        ]
    }

    pub fn cell_measure(&self) -> f64 {
        if self.dim == 1 {
            self.h[0]
        } else {
            self.h[0] * self.h[1]
        }
    }

    /// Cell adjacent to a boundary facet.
    pub fn facet_cell(&self, side: Side, index: usize) -> usize {
        let [nx, ny] = self.cells;
        if self.dim == 1 {
            return if side == Side::Left { 0 } else { nx - 1 };
        }
        match side {
            Side::Bottom => self.cell_index(index, 0),
            Side::Top => self.cell_index(index, ny - 1),
            Side::Left => self.cell_index(0, index),
            Side::Right => self.cell_index(nx - 1, index),
        }
    }

    pub fn facet_length(&self, side: Side) -> f64 {
        if self.dim == 1 {
            return 1.0;
        }
        match side {
            Side::Bottom | Side::Top => self.h[0],
            Side::Left | Side::Right => self.h[1],
        }
    }

    pub fn map_point(&self, c: usize, xi: [f64; 2]) -> [f64; 2] {
        let o = self.cell_origin(c);
        if self.dim == 1 {
            [o[0] + xi[0] * self.h[0], 0.0]
        } else {
            [o[0] + xi[0] * self.h[0], o[1] + xi[1] * self.h[1]]
        }
    }

    pub fn facet_midpoint(&self, side: Side, index: usize) -> [f64; 2] {
        let c = self.facet_cell(side, index);
        self.map_point(c, side.reference_point(0.5))
    }

    pub fn facet_tag(&self, side: Side, index: usize) -> Option<BoundaryTag> {
        self.facets
            .iter()
            .find(|f| f.side == side && f.index == index)
            .map(|f| f.tag)
    }

    /// Locate the cell containing `x` and the reference coordinates inside it.
    pub fn locate(&self, x: [f64; 2]) -> Option<(usize, [f64; 2])> {
        let mut idx = [0usize; 2];
        let mut xi = [0.0; 2];
        for d in 0..self.dim {
            let s = (x[d] - self.origin[d]) / self.h[d];
            let n = self.cells[d] as f64;
            if s < -1e-12 || s > n + 1e-12 {
                return None;
            }
            let i = (s.floor().max(0.0) as usize).min(self.cells[d] - 1);
            idx[d] = i;
            xi[d] = (s - i as f64).clamp(0.0, 1.0);
        }
        Some((self.cell_index(idx[0], idx[1]), xi))
    }

    pub fn max_h(&self) -> f64 {
        if self.dim == 1 {
            self.h[0]
        } else {
            self.h[0].max(self.h[1])
        }
    }
}

/// One matched pair of facets on the interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfacePair {
    /// (side, facet index) in subdomain 1 and 2
    pub facets: [(Side, usize); 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledMesh {
    pub subs: [SubdomainMesh; 2],
    pub interface: Vec<InterfacePair>,
    /// outward normal of subdomain 1 on the interface; subdomain 2 uses its negative
    pub normal1: [f64; 2],
}

impl CoupledMesh {
    pub fn sub(&self, j: Sub) -> &SubdomainMesh {
        &self.subs[j.index()]
    }

    pub fn normal(&self, j: Sub) -> [f64; 2] {
        match j {
            Sub::One => self.normal1,
            Sub::Two => [-self.normal1[0], -self.normal1[1]],
        }
    }

    pub fn dim(&self) -> usize {
        self.subs[0].dim
    }

    /// Global mesh size `h = max(h_1, h_2)`.
    pub fn h(&self) -> f64 {
        self.subs[0].max_h().max(self.subs[1].max_h())
    }

    pub fn interface_measure(&self) -> f64 {
        self.interface
            .iter()
            .map(|p| self.subs[0].facet_length(p.facets[0].0))
            .sum()
    }

    /// Checks that paired facets coincide geometrically.
    pub fn check_matching(&self) -> Result<(), FemError> {
        for p in &self.interface {
            let (s1, i1) = p.facets[0];
            let (s2, i2) = p.facets[1];
            let a = &self.subs[0];
            let b = &self.subs[1];
            for s in [0.0, 1.0] {
                let x1 = a.map_point(a.facet_cell(s1, i1), s1.reference_point(s));
                let x2 = b.map_point(b.facet_cell(s2, i2), s2.reference_point(s));
                if (x1[0] - x2[0]).abs() > 1e-12 || (x1[1] - x2[1]).abs() > 1e-12 {
                    return Err(FemError::MeshSizeError(format!(
                        "interface facets do not match: {x1:?} vs {x2:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// JSON export of nodes (cell corners), cells and tagged boundary facets.
    pub fn to_json(&self) -> serde_json::Value {
        let subs: Vec<serde_json::Value> = self
            .subs
            .iter()
            .map(|m| {
                let nx = m.cells[0] + 1;
                let ny = if m.dim == 1 { 1 } else { m.cells[1] + 1 };
                let mut nodes = Vec::new();
                for b in 0..ny {
                    for a in 0..nx {
                        let x = m.origin[0] + a as f64 * m.h[0];
                        let y = if m.dim == 1 { 0.0 } else { m.origin[1] + b as f64 * m.h[1] };
                        nodes.push(if m.dim == 1 { json!([x]) } else { json!([x, y]) });
                    }
                }
                let mut cells = Vec::new();
                for c in 0..m.n_cells() {
                    let (ix, iy) = m.cell_coords(c);
                    if m.dim == 1 {
                        cells.push(json!([ix, ix + 1]));
                    } else {
                        let n0 = iy * nx + ix;
                        cells.push(json!([n0, n0 + 1, n0 + nx + 1, n0 + nx]));
                    }
                }
                let facets: Vec<serde_json::Value> = m
                    .facets
                    .iter()
                    .map(|f| json!({"side": f.side, "index": f.index, "tag": f.tag, "midpoint": m.facet_midpoint(f.side, f.index)}))
                    .collect();
                json!({"dim": m.dim, "nodes": nodes, "cells": cells, "facets": facets})
            })
            .collect();
        let pairs: Vec<serde_json::Value> = self
            .interface
            .iter()
            .map(|p| {
                json!([
                    [p.facets[0].0, p.facets[0].1],
                    [p.facets[1].0, p.facets[1].1]
                ])
            })
            .collect();
        json!({"subdomains": subs, "interface": pairs, "normal1": self.normal1})
    }
}

/// Interval `domain` split at `split` into two meshes of cell size `h`, Dirichlet outside.
pub fn build_coupled_mesh_1d(
    split: f64,
    h: f64,
    domain: (f64, f64),
) -> Result<CoupledMesh, FemError> {
    let (a, b) = domain;
    if !(a < split && split < b) {
        return Err(FemError::MeshSizeError(format!(
            "split {split} not inside ({a}, {b})"
        )));
    }
    if !(h > 0.0) {
        return Err(FemError::MeshSizeError(format!(
            "cell size {h} must be positive"
        )));
    }
    let count = |len: f64| -> Result<usize, FemError> {
        let n = (len / h).round();
        if n < 1.0 || ((n * h - len).abs() > 1e-10 * len.max(1.0)) {
            return Err(FemError::MeshSizeError(format!(
                "h = {h} does not divide length {len}"
            )));
        }
        Ok(n as usize)
    };
    let n1 = count(split - a)?;
    let n2 = count(b - split)?;
    let m1 = SubdomainMesh::interval(a, split, n1, BoundaryTag::Dirichlet, BoundaryTag::Interface);
    let m2 = SubdomainMesh::interval(split, b, n2, BoundaryTag::Interface, BoundaryTag::Dirichlet);
    Ok(CoupledMesh {
        subs: [m1, m2],
        interface: vec![InterfacePair {
            facets: [(Side::Right, 0), (Side::Left, 0)],
        }],
        normal1: [1.0, 0.0],
    })
}

/// Two pipes: Ω1 = (0,4)x(0,1) on top of Ω2 = (1,3)x(-1,0), interface (1,3)x{0}.
pub fn build_two_pipe_mesh(m: usize) -> Result<CoupledMesh, FemError> {
    if m < 2 {
        return Err(FemError::MeshSizeError(format!(
            "two-pipe mesh needs m >= 2, got {m}"
        )));
    }
    let h = 1.0 / m as f64;
    let upper =
        SubdomainMesh::rectangle([0.0, 0.0], [4 * m, m], [h, h], |side, _, mid| match side {
            Side::Left => BoundaryTag::Inflow,
            Side::Right => BoundaryTag::Outflow,
            Side::Top => BoundaryTag::NoSlip,
            Side::Bottom if mid[0] > 1.0 && mid[0] < 3.0 => BoundaryTag::Interface,
            Side::Bottom => BoundaryTag::NoSlip,
        });
    let lower =
        SubdomainMesh::rectangle([1.0, -1.0], [2 * m, m], [h, h], |side, _, _| match side {
            Side::Left => BoundaryTag::Inflow,
            Side::Right => BoundaryTag::Outflow,
            Side::Bottom => BoundaryTag::NoSlip,
            Side::Top => BoundaryTag::Interface,
        });
    let interface = (0..2 * m)
        .map(|i| InterfacePair {
            facets: [(Side::Bottom, m + i), (Side::Top, i)],
        })
        .collect();
    let cm = CoupledMesh {
        subs: [upper, lower],
        interface,
        normal1: [0.0, -1.0],
    };
    cm.check_matching()?;
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_split() {
        let cm = build_coupled_mesh_1d(0.5, 0.25, (0.0, 1.0)).unwrap();
        assert_eq!(cm.subs[0].cells[0], 2);
        assert_eq!(cm.subs[1].cells[0], 2);
        assert_eq!(cm.subs[0].map_point(1, [1.0, 0.0])[0], 0.5);
        assert_eq!(cm.subs[1].origin[0], 0.5);
        let n = cm.normal(Sub::One)[0] + cm.normal(Sub::Two)[0];
        assert_eq!(n, 0.0);
        cm.check_matching().unwrap();
    }

    #[test]
    fn interval_errors() {
        assert!(matches!(
            build_coupled_mesh_1d(1.0, 0.25, (0.0, 1.0)),
            Err(FemError::MeshSizeError(_))
        ));
        assert!(matches!(
            build_coupled_mesh_1d(0.5, 0.3, (0.0, 1.0)),
            Err(FemError::MeshSizeError(_))
        ));
    }

    #[test]
    fn two_pipe_counts() {
        let cm = build_two_pipe_mesh(2).unwrap();
        assert_eq!(cm.subs[0].n_cells(), 16);
        assert_eq!(cm.subs[1].n_cells(), 8);
        assert_eq!(cm.interface.len(), 4);
        for m in [2, 3, 8] {
            let cm = build_two_pipe_mesh(m).unwrap();
            assert_eq!(cm.interface.len(), 2 * m);
            assert!((cm.interface_measure() - 2.0).abs() < 1e-12);
            for p in &cm.interface {
                assert!((cm.subs[0].facet_length(p.facets[0].0) - 1.0 / m as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_pipe_midpoints_and_tags() {
        let cm = build_two_pipe_mesh(4).unwrap();
        for p in &cm.interface {
            let a = cm.subs[0].facet_midpoint(p.facets[0].0, p.facets[0].1);
            let b = cm.subs[1].facet_midpoint(p.facets[1].0, p.facets[1].1);
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
        for m in &cm.subs {
            let expected: usize = [Side::Left, Side::Right, Side::Bottom, Side::Top]
                .iter()
                .map(|s| m.side_len(*s))
                .sum();
            assert_eq!(m.facets.len(), expected);
            for s in [Side::Left, Side::Right, Side::Bottom, Side::Top] {
                for i in 0..m.side_len(s) {
                    assert_eq!(
                        m.facets
                            .iter()
                            .filter(|f| f.side == s && f.index == i)
                            .count(),
                        1
                    );
                }
            }
        }
        let interface_tags = cm.subs[0]
            .facets
            .iter()
            .filter(|f| f.tag == BoundaryTag::Interface)
            .count();
        assert_eq!(interface_tags, 8);
        assert_eq!(cm.normal(Sub::Two), [-0.0, 1.0]);
    }

    #[test]
    fn locate_points() {
        let cm = build_two_pipe_mesh(2).unwrap();
        let (c, xi) = cm.subs[1].locate([1.75, -0.25]).unwrap();
        assert_eq!(cm.subs[1].cell_coords(c), (1, 1));
        assert!((xi[0] - 0.5).abs() < 1e-12 && (xi[1] - 0.5).abs() < 1e-12);
        assert!(cm.subs[1].locate([0.5, -0.5]).is_none());
    }
}
