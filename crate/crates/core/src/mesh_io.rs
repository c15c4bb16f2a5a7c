//! Plain-text triangle meshes.
//!
//! ```text
//! NV NT
//! x2 x3        (NV lines)
//! i j k        (NT lines, 0-based)
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mesh::{CrossSection, NormalizationTransform, Point2};

pub type RawMesh = (Vec<Point2>, Vec<[usize; 3]>);

pub fn parse_mesh(text: &str) -> Result<RawMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hl, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty mesh file".into() })?;
    let counts: Vec<usize> = fields(header, hl, 2)?;
    let (nv, nt) = (counts[0], counts[1]);
    let mut vertices = Vec::with_capacity(nv);
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or(Error::Parse { line: hl, msg: format!("expected {nv} vertex lines") })?;
        let v: Vec<f64> = fields(l, ln, 2)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parse { line: ln, msg: "non-finite coordinate".into() });
        }
        vertices.push([v[0], v[1]]);
    }
    for _ in 0..nt {
        let (ln, l) = lines.next().ok_or(Error::Parse { line: hl, msg: format!("expected {nt} triangle lines") })?;
        let t: Vec<usize> = fields(l, ln, 3)?;
        if t.iter().any(|&i| i >= nv) {
            return Err(Error::Parse { line: ln, msg: format!("vertex index out of range (NV = {nv})") });
        }
        triangles.push([t[0], t[1], t[2]]);
    }
    if let Some((ln, _)) = lines.next() {
        return Err(Error::Parse { line: ln, msg: "trailing content after the triangle list".into() });
    }
    Ok((vertices, triangles))
}

fn fields<T: std::str::FromStr>(line: &str, ln: usize, n: usize) -> Result<Vec<T>> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != n {
        return Err(Error::Parse { line: ln, msg: format!("expected {n} fields, found {}", parts.len()) });
    }
    parts
        .iter()
        .map(|p| p.parse::<T>().map_err(|_| Error::Parse { line: ln, msg: format!("cannot parse '{p}'") }))
        .collect()
}

/// Parses and normalizes a mesh.
pub fn read_mesh(text: &str) -> Result<(CrossSection, NormalizationTransform)> {
    let (v, t) = parse_mesh(text)?;
    CrossSection::normalize(&v, &t)
}

/// Serializes with round-trip precision.
pub fn write_mesh(cs: &CrossSection) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} {}", cs.vertices().len(), cs.triangles().len());
    for v in cs.vertices() {
        let _ = writeln!(s, "{:e} {:e}", v[0], v[1]);
    }
    for t in cs.triangles() {
        let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
    }
    s
}
