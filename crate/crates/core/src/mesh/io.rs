//! Mesh file formats.
//!
//! Text: a header line `vertices N / triangles M`, then `N` lines `x y`, then
//! `M` lines `v0 v1 v2` with 0-based vertex indices. Blank lines and lines
//! starting with `#` are ignored. JSON: `{"vertices": [[x, y], ...],
//! "triangles": [[v0, v1, v2], ...]}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AfemError, Result};
use crate::geometry::Point;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshInput {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
}

pub fn read_mesh_text(text: &str) -> Result<MeshInput> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| AfemError::InvalidMesh("empty mesh file".into()))?;
    let tokens: Vec<&str> = header.split_whitespace().filter(|t| *t != "/").collect();
    let (n, m) = match tokens.as_slice() {
        ["vertices", n, "triangles", m] => (
            n.parse::<usize>().map_err(|e| AfemError::InvalidMesh(format!("vertex count: {e}")))?,
            m.parse::<usize>().map_err(|e| AfemError::InvalidMesh(format!("triangle count: {e}")))?,
        ),
        _ => return Err(AfemError::InvalidMesh(format!("bad header line {header:?}"))),
    };
    let mut vertices = Vec::with_capacity(n);
    for i in 0..n {
        let l = lines.next().ok_or_else(|| AfemError::InvalidMesh(format!("missing vertex line {i}")))?;
        let v: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| AfemError::InvalidMesh(format!("vertex line {i}: {e}")))?;
        if v.len() != 2 || !v.iter().all(|x| x.is_finite()) {
            return Err(AfemError::InvalidMesh(format!("vertex line {i} needs two finite numbers")));
        }
        vertices.push([v[0], v[1]]);
    }
    let mut triangles = Vec::with_capacity(m);
    for i in 0..m {
        let l = lines.next().ok_or_else(|| AfemError::InvalidMesh(format!("missing triangle line {i}")))?;
        let t: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| AfemError::InvalidMesh(format!("triangle line {i}: {e}")))?;
        if t.len() != 3 {
            return Err(AfemError::InvalidMesh(format!("triangle line {i} needs three indices")));
        }
        triangles.push([t[0], t[1], t[2]]);
    }
    if lines.next().is_some() {
        return Err(AfemError::InvalidMesh("trailing data after the triangle list".into()));
    }
    Ok(MeshInput { vertices, triangles })
}

pub fn read_mesh_json(text: &str) -> Result<MeshInput> {
    Ok(serde_json::from_str(text)?)
}

/// Read a mesh file, choosing the format by extension (`.json` or text).
pub fn read_mesh_file(path: &Path) -> Result<MeshInput> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        read_mesh_json(&text)
    } else {
        read_mesh_text(&text)
    }
}

pub fn write_mesh_text(mesh: &MeshInput) -> String {
    let mut s = format!("vertices {} / triangles {}\n", mesh.vertices.len(), mesh.triangles.len());
    for v in &mesh.vertices {
        s.push_str(&format!("{:?} {:?}\n", v[0], v[1]));
    }
    for t in &mesh.triangles {
        s.push_str(&format!("{} {} {}\n", t[0], t[1], t[2]));
    }
    s
}
