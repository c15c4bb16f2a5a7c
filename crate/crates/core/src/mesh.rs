//! Triangulated cross-sections normalized to unit measure, zero centroid and
//! principal axes aligned with the coordinate axes.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::TRI_ORDER4;

pub type Point2 = [f64; 2];

/// Default tolerance for the geometric normalization conditions.
pub const TOL_GEOM: f64 = 1e-10;

/// Relative threshold below which the two principal second moments are
/// considered equal.
const PRINCIPAL_TIE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryEdge {
    /// Endpoints ordered so that the domain lies to the left.
    pub vertices: [usize; 2],
    pub normal: Point2,
    pub length: f64,
}

/// Similarity map `x ↦ scale · Rot(rotation_angle) · (x + translation)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalizationTransform {
    pub translation: Point2,
    pub rotation_angle: f64,
    pub scale: f64,
    /// Set when the principal moments coincide and the rotation was left at zero.
    pub ambiguous_principal_axes: bool,
}

impl NormalizationTransform {
    pub fn apply(&self, p: Point2) -> Point2 {
        let (s, c) = self.rotation_angle.sin_cos();
        let x = p[0] + self.translation[0];
        let y = p[1] + self.translation[1];
        [self.scale * (c * x - s * y), self.scale * (s * x + c * y)]
    }

    pub fn invert(&self, p: Point2) -> Point2 {
        let (s, c) = self.rotation_angle.sin_cos();
        let x = p[0] / self.scale;
        let y = p[1] / self.scale;
        [c * x + s * y - self.translation[0], -s * x + c * y - self.translation[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeshStats {
    pub vertices: usize,
    pub triangles: usize,
    pub boundary_edges: usize,
    pub h_max: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    area: f64,
    first: Point2,
    /// ∫x², ∫y², ∫xy
    second: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct CrossSection {
    vertices: Vec<Point2>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    measure: f64,
    m2: f64,
    m3: f64,
    quadrature_order: u8,
}

impl CrossSection {
    /// Normalizes a raw conforming triangulation: translation to the
    /// centroid, rotation onto principal axes, uniform scaling to unit area.
    pub fn normalize(
        raw_vertices: &[Point2],
        raw_triangles: &[[usize; 3]],
    ) -> Result<(Self, NormalizationTransform)> {
        let triangles = checked_topology(raw_vertices, raw_triangles)?;
        let mom = polygon_moments(raw_vertices, &triangles);
        let c = [mom.first[0] / mom.area, mom.first[1] / mom.area];
        let ixx = mom.second[0] - mom.area * c[0] * c[0];
        let iyy = mom.second[1] - mom.area * c[1] * c[1];
        let ixy = mom.second[2] - mom.area * c[0] * c[1];

        let spread = (ixx - iyy).hypot(2.0 * ixy);
        let ambiguous = spread <= PRINCIPAL_TIE * (ixx + iyy);
        // Principal direction angle θ; rotating by −θ removes the product moment.
        let theta = if ambiguous {
            0.0
        } else {
            let mut t = 0.5 * (2.0 * ixy).atan2(ixx - iyy);
            if t > PI / 4.0 {
                t -= PI / 2.0;
            } else if t <= -PI / 4.0 {
                t += PI / 2.0;
            }
            t
        };
        let transform = NormalizationTransform {
            translation: [-c[0], -c[1]],
            rotation_angle: -theta,
            scale: 1.0 / mom.area.sqrt(),
            ambiguous_principal_axes: ambiguous,
        };
        let vertices: Vec<Point2> = raw_vertices.iter().map(|&p| transform.apply(p)).collect();
        let cs = Self::from_parts(vertices, triangles)?;
        Ok((cs, transform))
    }

    fn from_parts(vertices: Vec<Point2>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let boundary_edges = boundary_edges(&vertices, &triangles)?;
        let mom = polygon_moments(&vertices, &triangles);
        let cs = Self {
            vertices,
            triangles,
            boundary_edges,
            measure: mom.area,
            m2: mom.second[0],
            m3: mom.second[1],
            quadrature_order: 4,
        };
        cs.check_invariants()?;
        Ok(cs)
    }

    /// Polygonal disk `{|x|² ≤ 1/π}` built from concentric rings of
    /// `6 i` vertices, `4 · refinement` rings in total.
    pub fn generate_disk(refinement: usize) -> Result<Self> {
        if refinement == 0 {
            return Err(Error::InvalidInput("refinement must be >= 1".into()));
        }
        let rings = 4 * refinement;
        let radius = 1.0 / PI.sqrt();
        let mut vertices = vec![[0.0, 0.0]];
        let mut ring_start = vec![0usize];
        for i in 1..=rings {
            ring_start.push(vertices.len());
            let n = 6 * i;
            let r = radius * i as f64 / rings as f64;
            for j in 0..n {
                let a = 2.0 * PI * j as f64 / n as f64;
                vertices.push([r * a.cos(), r * a.sin()]);
            }
        }
        let mut triangles = Vec::with_capacity(6 * rings * rings);
        for i in 1..=rings {
            let n_out = 6 * i;
            let outer = |k: usize| ring_start[i] + k % n_out;
            let inner = |k: usize| {
                if i == 1 {
                    0
                } else {
                    ring_start[i - 1] + k % (6 * (i - 1))
                }
            };
            for s in 0..6 {
                for k in 0..i {
                    let o0 = outer(s * i + k);
                    let o1 = outer(s * i + k + 1);
                    let n0 = inner(s * (i - 1) + k);
                    triangles.push([o0, o1, n0]);
                    if k + 1 < i {
                        let n1 = inner(s * (i - 1) + k + 1);
                        triangles.push([n0, o1, n1]);
                    }
                }
            }
        }
        orient_ccw(&vertices, &mut triangles);
        Ok(Self::normalize(&vertices, &triangles)?.0)
    }

    /// Axis-aligned rectangle with side ratio `aspect` (long side along x₂
    /// when `aspect > 1`), scaled to unit area and centred at the origin.
    pub fn generate_rectangle(aspect: f64, refinement: usize) -> Result<Self> {
        if !(aspect > 0.0) || !aspect.is_finite() {
            return Err(Error::InvalidInput(format!("aspect must be positive, got {aspect}")));
        }
        if refinement == 0 {
            return Err(Error::InvalidInput("refinement must be >= 1".into()));
        }
        let base = 4 * refinement;
        let (w, h) = (aspect.sqrt(), 1.0 / aspect.sqrt());
        let nx = ((base as f64 * w).round() as usize).max(1);
        let ny = ((base as f64 * h).round() as usize).max(1);
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([
                    -0.5 * w + w * i as f64 / nx as f64,
                    -0.5 * h + h * j as f64 / ny as f64,
                ]);
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                if (i + j) % 2 == 0 {
                    triangles.push([a, b, c]);
                    triangles.push([a, c, d]);
                } else {
                    triangles.push([a, b, d]);
                    triangles.push([b, c, d]);
                }
            }
        }
        Ok(Self::normalize(&vertices, &triangles)?.0)
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn measure(&self) -> f64 {
        self.measure
    }

    /// ∫ x₂² over the section.
    pub fn m2(&self) -> f64 {
        self.m2
    }

    /// ∫ x₃² over the section.
    pub fn m3(&self) -> f64 {
        self.m3
    }

    pub fn quadrature_order(&self) -> u8 {
        self.quadrature_order
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    /// Quadrature points of triangle `t` as (physical point, weight × area).
    pub fn quadrature_points(&self, t: usize) -> impl Iterator<Item = (Point2, f64)> + '_ {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let area = self.triangle_area(t);
        TRI_ORDER4.iter().map(move |qp| {
            let [l0, l1, l2] = qp.bary;
            (
                [
                    l0 * pa[0] + l1 * pb[0] + l2 * pc[0],
                    l0 * pa[1] + l1 * pb[1] + l2 * pc[1],
                ],
                qp.weight * area,
            )
        })
    }

    /// ∫ f over the section with the order-4 triangle rule.
    pub fn integrate(&self, f: impl Fn(Point2) -> f64) -> f64 {
        (0..self.triangles.len())
            .map(|t| self.quadrature_points(t).map(|(p, w)| w * f(p)).sum::<f64>())
            .sum()
    }

    /// ∫ of the piecewise linear interpolant of per-vertex values.
    pub fn integrate_vertex_values(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.vertices.len(), "one value per vertex");
        self.triangles
            .iter()
            .enumerate()
            .map(|(t, tri)| self.triangle_area(t) * tri.iter().map(|&v| values[v]).sum::<f64>() / 3.0)
            .sum()
    }

    /// Recomputes (∫1, ∫x₂, ∫x₃, ∫x₂², ∫x₃², ∫x₂x₃) by quadrature.
    pub fn moments(&self) -> [f64; 6] {
        let m = polygon_moments(&self.vertices, &self.triangles);
        [m.area, m.first[0], m.first[1], m.second[0], m.second[1], m.second[2]]
    }

    pub fn check_invariants(&self) -> Result<()> {
        let [area, mx, my, _, _, mxy] = self.moments();
        let fail = |what: &str, v: f64| {
            Err(Error::DegenerateMesh(format!("normalization condition {what} violated: {v:.3e}")))
        };
        if (area - 1.0).abs() > TOL_GEOM {
            return fail("|ω| = 1", area - 1.0);
        }
        for (name, v) in [("∫x₂ = 0", mx), ("∫x₃ = 0", my), ("∫x₂x₃ = 0", mxy)] {
            if v.abs() > TOL_GEOM {
                return fail(name, v);
            }
        }
        if !(self.m2 > 0.0 && self.m3 > 0.0) {
            return fail("positive second moments", self.m2.min(self.m3));
        }
        Ok(())
    }

    pub fn stats(&self) -> MeshStats {
        let mut h_max: f64 = 0.0;
        for tri in &self.triangles {
            for k in 0..3 {
                let p = self.vertices[tri[k]];
                let q = self.vertices[tri[(k + 1) % 3]];
                h_max = h_max.max((p[0] - q[0]).hypot(p[1] - q[1]));
            }
        }
        MeshStats {
            vertices: self.vertices.len(),
            triangles: self.triangles.len(),
            boundary_edges: self.boundary_edges.len(),
            h_max,
        }
    }
}

pub(crate) fn signed_area(a: Point2, b: Point2, c: Point2) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn orient_ccw(vertices: &[Point2], triangles: &mut [[usize; 3]]) {
    for t in triangles.iter_mut() {
        if signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]) < 0.0 {
            t.swap(1, 2);
        }
    }
}

/// Validates indices, orientation, degeneracy and conformity. A mesh whose
/// triangles are all clockwise is flipped; mixed orientation is rejected.
fn checked_topology(vertices: &[Point2], triangles: &[[usize; 3]]) -> Result<Vec<[usize; 3]>> {
    if triangles.is_empty() {
        return Err(Error::DegenerateMesh("no triangles".into()));
    }
    for (t, tri) in triangles.iter().enumerate() {
        if tri.iter().any(|&v| v >= vertices.len()) {
            return Err(Error::DegenerateMesh(format!("triangle {t} references a missing vertex")));
        }
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return Err(Error::DegenerateMesh(format!("triangle {t} repeats a vertex")));
        }
    }
    let areas: Vec<f64> = triangles
        .iter()
        .map(|t| signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]))
        .collect();
    let mut tris = triangles.to_vec();
    if areas.iter().all(|&a| a < 0.0) {
        tris.iter_mut().for_each(|t| t.swap(1, 2));
    } else if let Some(t) = areas.iter().position(|&a| a < 0.0) {
        return Err(Error::DegenerateMesh(format!("triangle {t} is inverted")));
    }
    let mean = areas.iter().map(|a| a.abs()).sum::<f64>() / areas.len() as f64;
    if mean <= 0.0 {
        return Err(Error::DegenerateMesh("zero total area".into()));
    }
    if let Some(t) = areas.iter().position(|a| a.abs() <= 1e-12 * mean) {
        return Err(Error::DegenerateMesh(format!("triangle {t} has (near) zero area")));
    }
    // Every directed edge may appear once; an interior edge appears once in each direction.
    let mut directed: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (t, tri) in tris.iter().enumerate() {
        for k in 0..3 {
            let e = (tri[k], tri[(k + 1) % 3]);
            if directed.insert(e, t).is_some() {
                return Err(Error::DegenerateMesh(format!(
                    "edge ({}, {}) is used twice with the same orientation",
                    e.0, e.1
                )));
            }
        }
    }
    Ok(tris)
}

fn boundary_edges(vertices: &[Point2], triangles: &[[usize; 3]]) -> Result<Vec<BoundaryEdge>> {
    let mut directed = BTreeMap::new();
    for tri in triangles {
        for k in 0..3 {
            directed.insert((tri[k], tri[(k + 1) % 3]), ());
        }
    }
    let edges: Vec<BoundaryEdge> = directed
        .keys()
        .filter(|(a, b)| !directed.contains_key(&(*b, *a)))
        .map(|&(a, b)| {
            let (p, q) = (vertices[a], vertices[b]);
            let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
            let length = dx.hypot(dy);
            BoundaryEdge { vertices: [a, b], normal: [dy / length, -dx / length], length }
        })
        .collect();
    if edges.is_empty() {
        return Err(Error::DegenerateMesh("mesh has no boundary".into()));
    }
    Ok(edges)
}

fn polygon_moments(vertices: &[Point2], triangles: &[[usize; 3]]) -> Moments {
    let mut m = Moments::default();
    for tri in triangles {
        let (a, b, c) = (vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
        let area = signed_area(a, b, c);
        for qp in &TRI_ORDER4 {
            let [l0, l1, l2] = qp.bary;
            let x = l0 * a[0] + l1 * b[0] + l2 * c[0];
            let y = l0 * a[1] + l1 * b[1] + l2 * c[1];
            let w = qp.weight * area;
            m.area += w;
            m.first[0] += w * x;
            m.first[1] += w * y;
            m.second[0] += w * x * x;
            m.second[1] += w * y * y;
            m.second[2] += w * x * y;
        }
    }
    m
}
