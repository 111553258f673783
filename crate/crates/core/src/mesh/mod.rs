//! Conforming triangulations with newest-vertex bisection.
//!
//! A [`Triangulation`] is immutable. Refinement returns a new value that shares
//! the initial mesh (`Arc<InitialMesh>`), and every triangle carries a
//! [`CellKey`] naming its position in the bisection forest rooted at the
//! initial triangles. Keys make cross-mesh questions (is this a refinement?
//! which coarse element contains this fine one? what is the overlay?) exact set
//! operations.
//!
//! Local conventions: local edge `i` of a triangle is opposite its vertex `i`
//! and runs from vertex `i+1` to vertex `i+2` (counter-clockwise). The
//! refinement edge is stored as a local edge index.

mod io;
mod refine;

pub use io::{read_mesh_file, read_mesh_json, read_mesh_text, write_mesh_text, MeshInput};

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{AfemError, Result};
use crate::geometry::{dot, midpoint, norm, point_bits, signed_area, sub, Point};

/// Deepest bisection level a key can encode.
pub const MAX_GENERATION: u16 = 128;

/// Position of a triangle in the bisection forest: the initial triangle it
/// descends from and the sequence of child choices (bit `i` of `path` is the
/// child taken at generation `i + 1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub root: u32,
    pub depth: u16,
    pub path: u128,
}

impl CellKey {
    pub fn root(root: usize) -> Self {
        CellKey { root: root as u32, depth: 0, path: 0 }
    }

    pub fn child(&self, which: u8) -> Self {
        assert!(self.depth < MAX_GENERATION, "bisection forest deeper than {MAX_GENERATION} generations");
        CellKey { root: self.root, depth: self.depth + 1, path: self.path | ((which as u128) << self.depth) }
    }

    pub fn parent(&self) -> Option<Self> {
        if self.depth == 0 {
            return None;
        }
        let d = self.depth - 1;
        Some(CellKey { root: self.root, depth: d, path: self.path & !(1u128 << d) })
    }

    /// Child index taken at generation `level + 1`.
    pub fn branch(&self, level: u16) -> u8 {
        ((self.path >> level) & 1) as u8
    }

    pub fn is_ancestor_or_self(&self, other: &CellKey) -> bool {
        if self.root != other.root || self.depth > other.depth {
            return false;
        }
        let mask = if self.depth == 128 { u128::MAX } else { (1u128 << self.depth) - 1 };
        other.path & mask == self.path
    }

    /// Depth-first (child 0 before child 1) ordering of forest nodes.
    pub fn dfs_cmp(&self, other: &CellKey) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        match self.root.cmp(&other.root) {
            Ordering::Equal => {}
            o => return o,
        }
        let common = self.depth.min(other.depth);
        let mask = if common == 128 { u128::MAX } else { (1u128 << common) - 1 };
        let diff = (self.path ^ other.path) & mask;
        if diff == 0 {
            return self.depth.cmp(&other.depth);
        }
        let bit = diff.trailing_zeros();
        ((self.path >> bit) & 1).cmp(&((other.path >> bit) & 1))
    }
}

/// The initial mesh 𝒯₀ shared by all of its refinements.
#[derive(Debug)]
pub struct InitialMesh {
    pub(crate) id: u64,
    pub(crate) vertices: Vec<Point>,
    /// Vertex triples (counter-clockwise) and refinement-edge labels.
    pub(crate) cells: Vec<([usize; 3], u8)>,
}

impl InitialMesh {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub vertices: [usize; 3],
    pub refinement_edge: u8,
    pub key: CellKey,
}

impl Cell {
    pub fn generation(&self) -> u16 {
        self.key.depth
    }

    pub fn parent(&self) -> Option<CellKey> {
        self.key.parent()
    }
}

/// An edge with its fixed unit normal `ν_e` and tangent `τ_e = (-ν₂, ν₁)`.
/// `ν_e` points from `minus` into `plus`; on the boundary it is the outward
/// normal and `plus` is `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub normal: Point,
    pub tangent: Point,
    pub length: f64,
    pub minus: usize,
    pub minus_local: u8,
    pub plus: Option<(usize, u8)>,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.plus.is_none()
    }

    /// Incident cells, `K₋` first.
    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.minus).chain(self.plus.map(|p| p.0))
    }
}

/// Area, size `h_K = |K|^{1/2}` and edge lengths of one triangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementGeometry {
    pub area: f64,
    pub h: f64,
    pub edge_lengths: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeMetrics {
    /// Smallest interior angle, in degrees.
    pub min_angle_deg: f64,
    pub max_h: f64,
    pub min_h: f64,
}

#[derive(Clone)]
pub struct Triangulation {
    initial: Arc<InitialMesh>,
    vertices: Vec<Point>,
    cells: Vec<Cell>,
    edges: Vec<Edge>,
    cell_edges: Vec<[usize; 3]>,
    cell_edge_signs: Vec<[f64; 3]>,
    vertex_cell_offsets: Vec<usize>,
    vertex_cell_list: Vec<usize>,
    boundary_vertex: Vec<bool>,
    edge_index: HashMap<(usize, usize), usize>,
    key_index: HashMap<CellKey, usize>,
}

impl fmt::Debug for Triangulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Triangulation")
            .field("domain_id", &format_args!("{:016x}", self.initial.id))
            .field("vertices", &self.vertices.len())
            .field("cells", &self.cells.len())
            .field("edges", &self.edges.len())
            .finish()
    }
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Lexicographically positive direction of a segment; collinear sub-segments
/// get the same direction, which is how sub-edges inherit the parent normal.
fn canonical_tangent(a: Point, b: Point) -> Point {
    let d = sub(b, a);
    let len = norm(d);
    let t = [d[0] / len, d[1] / len];
    if d[0] > 0.0 || (d[0] == 0.0 && d[1] > 0.0) {
        t
    } else {
        [-t[0], -t[1]]
    }
}

impl Triangulation {
    /// Ingest an initial mesh 𝒯₀.
    ///
    /// Triangles given clockwise are reoriented. Refinement edges are labelled
    /// by the longest-edge rule; ties (relative 1e-12) go to the lowest global
    /// edge index, edges being numbered by first appearance.
    pub fn build_initial(points: &[Point], cells: &[[usize; 3]]) -> Result<Triangulation> {
        if points.is_empty() || cells.is_empty() {
            return Err(AfemError::InvalidMesh("mesh needs at least one triangle".into()));
        }
        let mut oriented = Vec::with_capacity(cells.len());
        for (c, t) in cells.iter().enumerate() {
            if t.iter().any(|&v| v >= points.len()) {
                return Err(AfemError::InvalidMesh(format!("triangle {c} references a missing vertex")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(AfemError::Degenerate { cell: c, area: 0.0 });
            }
            let a = signed_area(points[t[0]], points[t[1]], points[t[2]]);
            let scale = norm(sub(points[t[1]], points[t[0]])).max(norm(sub(points[t[2]], points[t[0]])));
            if !(a.abs() > 1e-14 * scale * scale) {
                return Err(AfemError::Degenerate { cell: c, area: a });
            }
            oriented.push(if a > 0.0 { *t } else { [t[0], t[2], t[1]] });
        }
        let mut used = vec![false; points.len()];
        oriented.iter().flatten().for_each(|&v| used[v] = true);
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(AfemError::InvalidMesh(format!("vertex {v} is not used by any triangle")));
        }
        check_duplicate_vertices(points)?;

        // longest-edge labelling
        let mut first_seen: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &oriented {
            for i in 0..3 {
                let k = edge_key(t[(i + 1) % 3], t[(i + 2) % 3]);
                let n = first_seen.len();
                first_seen.entry(k).or_insert(n);
            }
        }
        let labelled: Vec<([usize; 3], u8)> = oriented
            .iter()
            .map(|t| {
                let lens: Vec<(f64, usize, u8)> = (0..3u8)
                    .map(|i| {
                        let (a, b) = (t[(i as usize + 1) % 3], t[(i as usize + 2) % 3]);
                        (norm(sub(points[b], points[a])), first_seen[&edge_key(a, b)], i)
                    })
                    .collect();
                let longest = lens.iter().map(|l| l.0).fold(0.0, f64::max);
                let best = lens
                    .iter()
                    .filter(|l| l.0 >= longest * (1.0 - 1e-12))
                    .min_by_key(|l| l.1)
                    .expect("a triangle has edges");
                (*t, best.2)
            })
            .collect();

        let mut hasher = DefaultHasher::new();
        for p in points {
            point_bits(*p).hash(&mut hasher);
        }
        labelled.hash(&mut hasher);
        let initial = Arc::new(InitialMesh { id: hasher.finish(), vertices: points.to_vec(), cells: labelled });

        let cells = initial
            .cells
            .iter()
            .enumerate()
            .map(|(i, (v, r))| Cell { vertices: *v, refinement_edge: *r, key: CellKey::root(i) })
            .collect();
        let mesh = Triangulation::from_parts(initial.clone(), points.to_vec(), cells)?;
        mesh.check_no_hanging_geometric()?;
        Ok(mesh)
    }

    /// Assemble the topology for a given vertex and cell list. Cells must be
    /// counter-clockwise with positive area.
    pub(crate) fn from_parts(initial: Arc<InitialMesh>, vertices: Vec<Point>, cells: Vec<Cell>) -> Result<Self> {
        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::with_capacity(cells.len() * 3 / 2 + 8);
        let mut edges: Vec<Edge> = Vec::with_capacity(cells.len() * 3 / 2 + 8);
        let mut cell_edges = vec![[0usize; 3]; cells.len()];
        for (c, cell) in cells.iter().enumerate() {
            let v = cell.vertices;
            let area = signed_area(vertices[v[0]], vertices[v[1]], vertices[v[2]]);
            if !(area > 0.0) {
                return Err(AfemError::Degenerate { cell: c, area });
            }
            for i in 0..3 {
                let (a, b) = (v[(i + 1) % 3], v[(i + 2) % 3]);
                let k = edge_key(a, b);
                match edge_index.get(&k) {
                    None => {
                        let e = edges.len();
                        edge_index.insert(k, e);
                        let d = sub(vertices[b], vertices[a]);
                        edges.push(Edge {
                            vertices: [k.0, k.1],
                            normal: [0.0; 2],
                            tangent: [0.0; 2],
                            length: norm(d),
                            minus: c,
                            minus_local: i as u8,
                            plus: None,
                        });
                        cell_edges[c][i] = e;
                    }
                    Some(&e) => {
                        if edges[e].plus.is_some() {
                            return Err(AfemError::NonConforming(format!(
                                "edge ({}, {}) is shared by more than two triangles",
                                k.0, k.1
                            )));
                        }
                        edges[e].plus = Some((c, i as u8));
                        cell_edges[c][i] = e;
                    }
                }
            }
        }

        let mut cell_edge_signs = vec![[1.0f64; 3]; cells.len()];
        for edge in edges.iter_mut() {
            let outward = |c: usize, i: u8| -> Point {
                let v = cells[c].vertices;
                let (a, b) = (vertices[v[(i as usize + 1) % 3]], vertices[v[(i as usize + 2) % 3]]);
                let d = sub(b, a);
                let l = norm(d);
                [d[1] / l, -d[0] / l]
            };
            let n_first = outward(edge.minus, edge.minus_local);
            match edge.plus {
                None => {
                    edge.normal = n_first;
                }
                Some((c2, i2)) => {
                    let [a, b] = edge.vertices;
                    let t = canonical_tangent(vertices[a], vertices[b]);
                    edge.normal = [t[1], -t[0]];
                    if dot(n_first, edge.normal) < 0.0 {
                        // the first cell is K₊: swap so that ν_e leaves K₋
                        let (c1, i1) = (edge.minus, edge.minus_local);
                        edge.minus = c2;
                        edge.minus_local = i2;
                        edge.plus = Some((c1, i1));
                    }
                    let (cp, ip) = edge.plus.expect("interior edge");
                    cell_edge_signs[cp][ip as usize] = -1.0;
                }
            }
            edge.tangent = [-edge.normal[1], edge.normal[0]];
        }

        let nv = vertices.len();
        let mut counts = vec![0usize; nv + 1];
        for cell in &cells {
            for &v in &cell.vertices {
                counts[v + 1] += 1;
            }
        }
        for i in 0..nv {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut list = vec![0usize; counts[nv]];
        for (c, cell) in cells.iter().enumerate() {
            for &v in &cell.vertices {
                list[fill[v]] = c;
                fill[v] += 1;
            }
        }
        let mut boundary_vertex = vec![false; nv];
        for e in edges.iter().filter(|e| e.is_boundary()) {
            boundary_vertex[e.vertices[0]] = true;
            boundary_vertex[e.vertices[1]] = true;
        }
        let key_index = cells.iter().enumerate().map(|(i, c)| (c.key, i)).collect();

        Ok(Triangulation {
            initial,
            vertices,
            cells,
            edges,
            cell_edges,
            cell_edge_signs,
            vertex_cell_offsets: counts,
            vertex_cell_list: list,
            boundary_vertex,
            edge_index,
            key_index,
        })
    }

    // Geometric hanging-vertex test used on external input: no vertex may lie
    // in the relative interior of a boundary-flagged edge.
    fn check_no_hanging_geometric(&self) -> Result<()> {
        let (lo, hi) = self.bounding_box();
        let diag = norm(sub(hi, lo));
        let n = (self.vertices.len() as f64).sqrt().ceil().max(1.0) as usize;
        let cell_w = [(hi[0] - lo[0]).max(diag * 1e-9) / n as f64, (hi[1] - lo[1]).max(diag * 1e-9) / n as f64];
        let bucket = |p: Point| -> (usize, usize) {
            let i = (((p[0] - lo[0]) / cell_w[0]) as usize).min(n - 1);
            let j = (((p[1] - lo[1]) / cell_w[1]) as usize).min(n - 1);
            (i, j)
        };
        let mut grid: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (v, p) in self.vertices.iter().enumerate() {
            grid.entry(bucket(*p)).or_default().push(v);
        }
        let tol = 1e-12 * diag;
        for (e, edge) in self.edges.iter().enumerate().filter(|(_, e)| e.is_boundary()) {
            let [a, b] = edge.vertices;
            let (pa, pb) = (self.vertices[a], self.vertices[b]);
            let (i0, j0) = bucket([pa[0].min(pb[0]), pa[1].min(pb[1])]);
            let (i1, j1) = bucket([pa[0].max(pb[0]), pa[1].max(pb[1])]);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    for &v in grid.get(&(i, j)).map(|x| x.as_slice()).unwrap_or(&[]) {
                        if v == a || v == b {
                            continue;
                        }
                        let p = self.vertices[v];
                        let d = sub(pb, pa);
                        let t = dot(sub(p, pa), d) / dot(d, d);
                        let dist = crate::geometry::cross(d, sub(p, pa)).abs() / edge.length;
                        if t > 0.0 && t < 1.0 && dist <= tol {
                            return Err(AfemError::NonConforming(format!(
                                "vertex {v} hangs on edge {e} ({a}, {b})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn domain_id(&self) -> u64 {
        self.initial.id
    }

    pub fn initial(&self) -> &Arc<InitialMesh> {
        &self.initial
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> Point {
        self.vertices[v]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, c: usize) -> &Cell {
        &self.cells[c]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    /// Global edge ids of the local edges of a cell.
    pub fn cell_edges(&self, c: usize) -> [usize; 3] {
        self.cell_edges[c]
    }

    /// `+1` where the local outward normal equals `ν_e`, `-1` otherwise.
    pub fn cell_edge_signs(&self, c: usize) -> [f64; 3] {
        self.cell_edge_signs[c]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn find_edge(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_index.get(&edge_key(a, b)).copied()
    }

    pub fn find_cell(&self, key: &CellKey) -> Option<usize> {
        self.key_index.get(key).copied()
    }

    pub fn cell_points(&self, c: usize) -> [Point; 3] {
        let v = self.cells[c].vertices;
        [self.vertices[v[0]], self.vertices[v[1]], self.vertices[v[2]]]
    }

    pub fn area(&self, c: usize) -> f64 {
        let p = self.cell_points(c);
        signed_area(p[0], p[1], p[2])
    }

    /// `h_K = |K|^{1/2}`.
    pub fn h(&self, c: usize) -> f64 {
        self.area(c).sqrt()
    }

    pub fn geometry(&self, c: usize) -> ElementGeometry {
        let area = self.area(c);
        let e = self.cell_edges[c];
        ElementGeometry {
            area,
            h: area.sqrt(),
            edge_lengths: [self.edges[e[0]].length, self.edges[e[1]].length, self.edges[e[2]].length],
        }
    }

    pub fn centroid(&self, c: usize) -> Point {
        let p = self.cell_points(c);
        [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0]
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_cells()).map(|c| self.area(c)).sum()
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.vertices {
            lo = [lo[0].min(p[0]), lo[1].min(p[1])];
            hi = [hi[0].max(p[0]), hi[1].max(p[1])];
        }
        (lo, hi)
    }

    /// Barycentric coordinates of `x` with respect to cell `c`.
    pub fn barycentric(&self, c: usize, x: Point) -> [f64; 3] {
        let p = self.cell_points(c);
        let a = signed_area(p[0], p[1], p[2]);
        [
            signed_area(x, p[1], p[2]) / a,
            signed_area(p[0], x, p[2]) / a,
            signed_area(p[0], p[1], x) / a,
        ]
    }

    pub fn contains(&self, c: usize, x: Point) -> bool {
        self.barycentric(c, x).iter().all(|&l| l >= -1e-12)
    }

    /// ω_K: `K` and the elements sharing an edge with it.
    pub fn element_patch(&self, c: usize) -> Vec<usize> {
        let mut out = vec![c];
        for &e in &self.cell_edges[c] {
            out.extend(self.edges[e].cells().filter(|&k| k != c));
        }
        out
    }

    /// ω_e and ξ_e.
    pub fn edge_patch(&self, e: usize) -> (Vec<usize>, usize) {
        let cells: Vec<usize> = self.edges[e].cells().collect();
        let n = cells.len();
        (cells, n)
    }

    /// Elements containing vertex `v`, and their number ξ_P.
    pub fn vertex_patch(&self, v: usize) -> (&[usize], usize) {
        let s = &self.vertex_cell_list[self.vertex_cell_offsets[v]..self.vertex_cell_offsets[v + 1]];
        (s, s.len())
    }

    pub fn leaf_keys(&self) -> Vec<CellKey> {
        self.cells.iter().map(|c| c.key).collect()
    }

    pub fn max_generation(&self) -> u16 {
        self.cells.iter().map(|c| c.key.depth).max().unwrap_or(0)
    }

    pub fn shape_metrics(&self) -> ShapeMetrics {
        let mut min_angle = f64::INFINITY;
        let (mut max_h, mut min_h) = (0.0f64, f64::INFINITY);
        for c in 0..self.num_cells() {
            min_angle = min_angle.min(min_angle_of(&self.cell_points(c)));
            let h = self.h(c);
            max_h = max_h.max(h);
            min_h = min_h.min(h);
        }
        ShapeMetrics { min_angle_deg: min_angle, max_h, min_h }
    }

    /// Lower bound for the minimum angle of any refinement: NVB descendants of a
    /// triangle fall into at most four similarity classes, so enumerating a few
    /// generations of every initial triangle reaches all of them.
    pub fn nvb_min_angle_bound(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (v, r) in &self.initial.cells {
            let pts = [self.initial.vertices[v[0]], self.initial.vertices[v[1]], self.initial.vertices[v[2]]];
            let mut stack = vec![(pts, *r, 0u32)];
            while let Some((p, r, depth)) = stack.pop() {
                best = best.min(min_angle_of(&p));
                if depth < 6 {
                    let (c0, c1) = bisect_points(&p, r);
                    stack.push((c0.0, c0.1, depth + 1));
                    stack.push((c1.0, c1.1, depth + 1));
                }
            }
        }
        best
    }

    /// Combinatorial conformity test: every edge has at most two cells, and no
    /// edge with a single cell has an existing vertex at its midpoint (NVB only
    /// ever creates midpoints, so this finds every hanging vertex).
    pub fn check_conformity(&self) -> Result<()> {
        let by_bits: HashMap<[u64; 2], usize> =
            self.vertices.iter().enumerate().map(|(i, p)| (point_bits(*p), i)).collect();
        if by_bits.len() != self.vertices.len() {
            return Err(AfemError::NonConforming("duplicate vertex coordinates".into()));
        }
        for (e, edge) in self.edges.iter().enumerate().filter(|(_, e)| e.is_boundary()) {
            let m = midpoint(self.vertices[edge.vertices[0]], self.vertices[edge.vertices[1]]);
            if let Some(v) = by_bits.get(&point_bits(m)) {
                return Err(AfemError::NonConforming(format!("vertex {v} hangs on edge {e}")));
            }
        }
        for (c, cell) in self.cells.iter().enumerate() {
            let v = cell.vertices;
            let a = signed_area(self.vertices[v[0]], self.vertices[v[1]], self.vertices[v[2]]);
            if !(a > 0.0) {
                return Err(AfemError::Degenerate { cell: c, area: a });
            }
        }
        Ok(())
    }

    /// Hash of the vertex coordinates and the cell connectivity.
    pub fn mesh_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.initial.id.hash(&mut h);
        for p in &self.vertices {
            point_bits(*p).hash(&mut h);
        }
        for c in &self.cells {
            c.vertices.hash(&mut h);
            c.refinement_edge.hash(&mut h);
        }
        h.finish()
    }

    /// Serializable copy of the mesh that restores the exact numbering.
    pub fn snapshot(&self) -> MeshSnapshot {
        MeshSnapshot {
            domain_id: self.initial.id,
            vertices: self.vertices.clone(),
            cells: self.cells.iter().map(|c| (c.vertices, c.refinement_edge)).collect(),
            keys: self.leaf_keys(),
        }
    }

    /// Rebuild a mesh from a snapshot taken on a refinement of `initial`.
    pub fn from_snapshot(initial: &Triangulation, snap: &MeshSnapshot) -> Result<Triangulation> {
        if snap.domain_id != initial.domain_id() {
            return Err(AfemError::DomainMismatch { left: snap.domain_id, right: initial.domain_id() });
        }
        if snap.cells.len() != snap.keys.len() {
            return Err(AfemError::InvalidMesh("snapshot cell and key lists differ in length".into()));
        }
        let cells = snap
            .cells
            .iter()
            .zip(&snap.keys)
            .map(|((v, r), k)| Cell { vertices: *v, refinement_edge: *r, key: *k })
            .collect();
        Triangulation::from_parts(initial.initial.clone(), snap.vertices.clone(), cells)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeshSnapshot {
    pub domain_id: u64,
    pub vertices: Vec<Point>,
    pub cells: Vec<([usize; 3], u8)>,
    pub keys: Vec<CellKey>,
}

fn min_angle_of(p: &[Point; 3]) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..3 {
        let a = sub(p[(i + 1) % 3], p[i]);
        let b = sub(p[(i + 2) % 3], p[i]);
        let cos = (dot(a, b) / (norm(a) * norm(b))).clamp(-1.0, 1.0);
        m = m.min(cos.acos().to_degrees());
    }
    m
}

/// Newest-vertex bisection of a triangle given by coordinates: returns the
/// two children with their refinement-edge labels.
pub(crate) fn bisect_points(p: &[Point; 3], r: u8) -> (([Point; 3], u8), ([Point; 3], u8)) {
    let r = r as usize;
    let (apex, a, b) = (p[r], p[(r + 1) % 3], p[(r + 2) % 3]);
    let m = midpoint(a, b);
    (([apex, a, m], 2), ([apex, m, b], 1))
}

fn check_duplicate_vertices(points: &[Point]) -> Result<()> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        lo = [lo[0].min(p[0]), lo[1].min(p[1])];
        hi = [hi[0].max(p[0]), hi[1].max(p[1])];
    }
    let tol = 1e-12 * norm(sub(hi, lo));
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]));
    for (i, &a) in order.iter().enumerate() {
        for &b in &order[i + 1..] {
            if points[b][0] - points[a][0] > tol {
                break;
            }
            if norm(sub(points[a], points[b])) <= tol {
                return Err(AfemError::InvalidMesh(format!("vertices {a} and {b} coincide")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn unit_square() -> Triangulation {
        Triangulation::build_initial(
            &[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            &[[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn unit_square_counts() {
        let m = unit_square();
        assert_eq!((m.num_vertices(), m.num_cells(), m.num_edges()), (4, 2, 5));
        assert_eq!(m.edges().iter().filter(|e| e.is_boundary()).count(), 4);
        m.check_conformity().unwrap();
    }

    #[test]
    fn single_triangle_refines_hypotenuse() {
        let m = Triangulation::build_initial(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], &[[0, 1, 2]]).unwrap();
        let c = m.cell(0);
        assert_eq!(c.refinement_edge, 0, "edge opposite the right angle");
        let r = c.refinement_edge as usize;
        let (a, b) = (c.vertices[(r + 1) % 3], c.vertices[(r + 2) % 3]);
        let mut ends = [a, b];
        ends.sort();
        assert_eq!(ends, [1, 2]);
    }

    #[test]
    fn t_junction_is_rejected() {
        // vertex 4 sits on the middle of edge (1, 2) of the left triangle
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 2.0], [2.0, 0.0], [1.0, 1.0]];
        let err = Triangulation::build_initial(&pts, &[[0, 1, 2], [1, 3, 4], [4, 3, 2]]).unwrap_err();
        assert!(err.to_string().contains("non-conforming"), "{err}");
    }

    #[test]
    fn degenerate_and_clockwise_input() {
        let err = Triangulation::build_initial(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], &[[0, 1, 2]]).unwrap_err();
        assert!(matches!(err, AfemError::Degenerate { .. }));
        let m = Triangulation::build_initial(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], &[[0, 2, 1]]).unwrap();
        assert!(m.area(0) > 0.0);
    }

    #[test]
    fn duplicate_vertices_are_rejected() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1e-14]];
        let err = Triangulation::build_initial(&pts, &[[0, 1, 2], [3, 2, 0]]).unwrap_err();
        assert!(err.to_string().contains("coincide"), "{err}");
    }

    #[test]
    fn normals_and_tangents() {
        let m = unit_square();
        for e in m.edges() {
            assert!((norm(e.normal) - 1.0).abs() < 1e-15);
            assert!(dot(e.normal, e.tangent).abs() < 1e-15);
            assert_eq!(e.tangent, [-e.normal[1], e.normal[0]]);
            // ν_e leaves K₋
            let c = m.centroid(e.minus);
            let mid = midpoint(m.vertex(e.vertices[0]), m.vertex(e.vertices[1]));
            assert!(dot(sub(mid, c), e.normal) > 0.0);
        }
    }

    #[test]
    fn patches() {
        let m = unit_square();
        let diag = m.find_edge(0, 2).unwrap();
        assert_eq!(m.edge_patch(diag).1, 2);
        let side = m.find_edge(0, 1).unwrap();
        assert_eq!(m.edge_patch(side).1, 1);
        let sizes: Vec<usize> = (0..4).map(|v| m.vertex_patch(v).1).collect();
        assert_eq!(sizes, vec![2, 1, 2, 1]);
        assert_eq!(m.element_patch(0).len(), 2);
    }

    #[test]
    fn right_isosceles_min_angle() {
        let m = Triangulation::build_initial(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], &[[0, 1, 2]]).unwrap();
        assert!((m.shape_metrics().min_angle_deg - 45.0).abs() < 1e-12);
    }

    #[test]
    fn key_navigation() {
        let k = CellKey::root(3).child(1).child(0).child(1);
        assert_eq!(k.depth, 3);
        assert_eq!(k.parent().unwrap().parent().unwrap(), CellKey::root(3).child(1));
        assert!(CellKey::root(3).child(1).is_ancestor_or_self(&k));
        assert!(!CellKey::root(3).child(0).is_ancestor_or_self(&k));
        assert!(!CellKey::root(2).is_ancestor_or_self(&k));
        assert_eq!(k.branch(0), 1);
        assert_eq!(k.branch(1), 0);
        let a = CellKey::root(0).child(0).child(1);
        let b = CellKey::root(0).child(1);
        assert_eq!(a.dfs_cmp(&b), std::cmp::Ordering::Less);
    }
}
