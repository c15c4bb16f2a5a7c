//! Continuous P2 and P1 Lagrange spaces on a `CrossSection`.

use std::collections::BTreeMap;

use crate::mesh::{CrossSection, Point2};

/// Degree-2 scalar space: vertex nodes followed by edge-midpoint nodes.
/// Local node order per triangle: v0, v1, v2, m01, m12, m20.
#[derive(Debug, Clone)]
pub struct P2Space {
    n_vertices: usize,
    edges: Vec<[usize; 2]>,
    element_dofs: Vec<[usize; 6]>,
    nodes: Vec<Point2>,
}

impl P2Space {
    pub fn new(cs: &CrossSection) -> Self {
        let nv = cs.vertices().len();
        let mut edge_ids: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut edges = Vec::new();
        let mut element_dofs = Vec::with_capacity(cs.triangles().len());
        for tri in cs.triangles() {
            let mut dofs = [tri[0], tri[1], tri[2], 0, 0, 0];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let id = *edge_ids.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    edges.len() - 1
                });
                dofs[3 + k] = nv + id;
            }
            element_dofs.push(dofs);
        }
        let v = cs.vertices();
        let mut nodes = v.to_vec();
        nodes.extend(edges.iter().map(|&[a, b]| [0.5 * (v[a][0] + v[b][0]), 0.5 * (v[a][1] + v[b][1])]));
        Self { n_vertices: nv, edges, element_dofs, nodes }
    }

    pub fn n_dofs(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn element_dofs(&self, t: usize) -> &[usize; 6] {
        &self.element_dofs[t]
    }

    pub fn nodes(&self) -> &[Point2] {
        &self.nodes
    }

    /// P2 node id of the midpoint of edge (a, b).
    pub fn edge_node(&self, a: usize, b: usize) -> Option<usize> {
        let key = [a.min(b), a.max(b)];
        self.edges.iter().position(|e| *e == key).map(|i| self.n_vertices + i)
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(&self, f: impl Fn(Point2) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&p| f(p)).collect()
    }
}

/// Gradients of the barycentric coordinates of triangle `t`.
pub fn bary_gradients(cs: &CrossSection, t: usize) -> [[f64; 2]; 3] {
    let [a, b, c] = cs.triangles()[t];
    let (p0, p1, p2) = (cs.vertices()[a], cs.vertices()[b], cs.vertices()[c]);
    let two_area = 2.0 * cs.triangle_area(t);
    [
        [(p1[1] - p2[1]) / two_area, (p2[0] - p1[0]) / two_area],
        [(p2[1] - p0[1]) / two_area, (p0[0] - p2[0]) / two_area],
        [(p0[1] - p1[1]) / two_area, (p1[0] - p0[0]) / two_area],
    ]
}

pub fn p2_values(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ]
}

pub fn p2_gradients(l: [f64; 3], g: &[[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let mut out = [[0.0; 2]; 6];
    for d in 0..2 {
        out[0][d] = (4.0 * l[0] - 1.0) * g[0][d];
        out[1][d] = (4.0 * l[1] - 1.0) * g[1][d];
        out[2][d] = (4.0 * l[2] - 1.0) * g[2][d];
        out[3][d] = 4.0 * (l[0] * g[1][d] + l[1] * g[0][d]);
        out[4][d] = 4.0 * (l[1] * g[2][d] + l[2] * g[1][d]);
        out[5][d] = 4.0 * (l[2] * g[0][d] + l[0] * g[2][d]);
    }
    out
}

/// Local P1 mass matrix of a triangle of area `area`.
pub fn p1_mass(area: f64) -> [[f64; 3]; 3] {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::TRI_ORDER4;

    #[test]
    fn p2_space_counts() {
        let cs = CrossSection::generate_rectangle(1.0, 1).unwrap();
        let sp = P2Space::new(&cs);
        let (nv, nt) = (cs.vertices().len(), cs.triangles().len());
        // Euler: edges = V + T - 1 for a simply connected triangulation
        assert_eq!(sp.n_dofs(), nv + nv + nt - 1);
    }

    #[test]
    fn p2_reproduces_quadratics() {
        let cs = CrossSection::generate_disk(1).unwrap();
        let sp = P2Space::new(&cs);
        let f = |p: Point2| 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[0] * p[0] - 3.0 * p[0] * p[1] + p[1] * p[1];
        let df = |p: Point2| [2.0 + p[0] - 3.0 * p[1], -1.0 - 3.0 * p[0] + 2.0 * p[1]];
        let u = sp.interpolate(f);
        for t in 0..cs.triangles().len() {
            let g = bary_gradients(&cs, t);
            let dofs = sp.element_dofs(t);
            let [a, b, c] = cs.triangles()[t];
            for qp in &TRI_ORDER4 {
                let l = qp.bary;
                let x = [
                    l[0] * cs.vertices()[a][0] + l[1] * cs.vertices()[b][0] + l[2] * cs.vertices()[c][0],
                    l[0] * cs.vertices()[a][1] + l[1] * cs.vertices()[b][1] + l[2] * cs.vertices()[c][1],
                ];
                let v: f64 = p2_values(l).iter().zip(dofs).map(|(n, &d)| n * u[d]).sum();
                assert!((v - f(x)).abs() < 1e-12);
                let grads = p2_gradients(l, &g);
                for d in 0..2 {
                    let gd: f64 = grads.iter().zip(dofs).map(|(n, &k)| n[d] * u[k]).sum();
                    assert!((gd - df(x)[d]).abs() < 1e-11);
                }
            }
        }
    }
}
