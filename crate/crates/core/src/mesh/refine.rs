//! Newest-vertex bisection, closure, and the forest set operations
//! (ancestor maps, overlay, refined region).

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use super::{bisect_points, Cell, CellKey, InitialMesh, Triangulation};
use crate::error::{AfemError, Result};
use crate::geometry::{midpoint, point_bits, Point};

impl Triangulation {
    /// Bisect every marked element once through its refinement edge and close
    /// the result to a conforming mesh.
    pub fn bisect(&self, marked: &[usize]) -> Result<Triangulation> {
        self.refine_marked(marked, 1)
    }

    /// Like [`bisect`](Self::bisect), with `bisections` ∈ {1, 2} applied to
    /// each marked element before closure.
    ///
    /// Closure works on edges: an element with any marked edge must have its
    /// refinement edge marked. The fixpoint always exists (at worst every edge
    /// is marked), so it terminates for any labelling of 𝒯₀.
    pub fn refine_marked(&self, marked: &[usize], bisections: u8) -> Result<Triangulation> {
        if !(1..=2).contains(&bisections) {
            return Err(AfemError::InvalidParameter(format!("bisections per mark must be 1 or 2, got {bisections}")));
        }
        if let Some(&bad) = marked.iter().find(|&&c| c >= self.num_cells()) {
            return Err(AfemError::InvalidParameter(format!("marked element {bad} does not exist")));
        }
        if marked.is_empty() {
            return Ok(self.clone());
        }
        let mut edge_marked = vec![false; self.num_edges()];
        let mut queue = Vec::new();
        for &c in marked {
            let r = self.cells[c].refinement_edge as usize;
            let locals: &[usize] = if bisections == 1 { &[r] } else { &[0, 1, 2] };
            for &i in locals {
                let e = self.cell_edges[c][i];
                if !edge_marked[e] {
                    edge_marked[e] = true;
                    queue.push(e);
                }
            }
        }
        while let Some(e) = queue.pop() {
            for c in self.edges[e].cells() {
                let re = self.cell_edges[c][self.cells[c].refinement_edge as usize];
                if !edge_marked[re] {
                    edge_marked[re] = true;
                    queue.push(re);
                }
            }
        }

        let mut vertices = self.vertices.clone();
        let mut mid_vertex = vec![usize::MAX; self.num_edges()];
        for (e, edge) in self.edges.iter().enumerate() {
            if edge_marked[e] {
                mid_vertex[e] = vertices.len();
                vertices.push(midpoint(self.vertices[edge.vertices[0]], self.vertices[edge.vertices[1]]));
            }
        }
        let old_nv = self.num_vertices();
        let mut cells = Vec::with_capacity(self.num_cells() + 2 * marked.len());
        for cell in &self.cells {
            self.split_into(*cell, &edge_marked, &mid_vertex, old_nv, &mut cells);
        }
        Triangulation::from_parts(self.initial.clone(), vertices, cells)
    }

    fn split_into(&self, cell: Cell, marked: &[bool], mid: &[usize], old_nv: usize, out: &mut Vec<Cell>) {
        let r = cell.refinement_edge as usize;
        let v = cell.vertices;
        let (apex, a, b) = (v[r], v[(r + 1) % 3], v[(r + 2) % 3]);
        // edges touching a vertex created in this sweep are never marked
        let e = if a < old_nv && b < old_nv { self.find_edge(a, b) } else { None };
        match e {
            Some(e) if marked[e] => {
                let m = mid[e];
                let c0 = Cell { vertices: [apex, a, m], refinement_edge: 2, key: cell.key.child(0) };
                let c1 = Cell { vertices: [apex, m, b], refinement_edge: 1, key: cell.key.child(1) };
                self.split_into(c0, marked, mid, old_nv, out);
                self.split_into(c1, marked, mid, old_nv, out);
            }
            _ => out.push(cell),
        }
    }

    /// Two NVB sweeps with every element marked.
    pub fn uniform_refine(&self) -> Result<Triangulation> {
        let all: Vec<usize> = (0..self.num_cells()).collect();
        let once = self.bisect(&all)?;
        let all: Vec<usize> = (0..once.num_cells()).collect();
        once.bisect(&all)
    }

    fn check_same_domain(&self, other: &Triangulation) -> Result<()> {
        if self.domain_id() != other.domain_id() {
            return Err(AfemError::DomainMismatch { left: self.domain_id(), right: other.domain_id() });
        }
        Ok(())
    }

    /// For every cell of `self`, the index of the `coarse` cell containing it.
    /// Fails unless `self` is a refinement of `coarse`.
    pub fn ancestor_map(&self, coarse: &Triangulation) -> Result<Vec<usize>> {
        self.check_same_domain(coarse)?;
        let mut cache: HashMap<CellKey, usize> = HashMap::new();
        let mut out = Vec::with_capacity(self.num_cells());
        for cell in &self.cells {
            let mut k = cell.key;
            let mut chain = Vec::new();
            let found = loop {
                if let Some(&i) = coarse.key_index.get(&k).or_else(|| cache.get(&k)) {
                    break i;
                }
                chain.push(k);
                k = k.parent().ok_or_else(|| {
                    AfemError::NotARefinement(format!("element {:?} has no ancestor in the coarse mesh", cell.key))
                })?;
            };
            for k in chain {
                cache.insert(k, found);
            }
            out.push(found);
        }
        if coarse.num_cells() > self.num_cells() {
            return Err(AfemError::NotARefinement("coarse mesh has more elements than the fine one".into()));
        }
        Ok(out)
    }

    pub fn is_refinement_of(&self, coarse: &Triangulation) -> bool {
        self.ancestor_map(coarse).is_ok()
    }

    /// 𝒯_H ∖ 𝒯_h as a list of coarse cell ids.
    pub fn refined_cells(coarse: &Triangulation, fine: &Triangulation) -> Result<Vec<usize>> {
        fine.ancestor_map(coarse)?;
        Ok((0..coarse.num_cells()).filter(|&c| fine.find_cell(&coarse.cells[c].key).is_none()).collect())
    }

    /// 𝓜_{H,h}: coarse elements whose closure meets the closure of the refined
    /// ones. In a conforming mesh two closed triangles intersect exactly when
    /// they share a vertex.
    pub fn refined_region(coarse: &Triangulation, fine: &Triangulation) -> Result<Vec<usize>> {
        let refined = Triangulation::refined_cells(coarse, fine)?;
        let mut touched = vec![false; coarse.num_vertices()];
        for &c in &refined {
            for &v in &coarse.cells[c].vertices {
                touched[v] = true;
            }
        }
        Ok((0..coarse.num_cells()).filter(|&c| coarse.cells[c].vertices.iter().any(|&v| touched[v])).collect())
    }

    /// Smallest common refinement of two refinements of the same 𝒯₀: the
    /// leaves of the union of the two bisection forests.
    pub fn overlay(a: &Triangulation, b: &Triangulation) -> Result<Triangulation> {
        a.check_same_domain(b)?;
        let strict_ancestors = |m: &Triangulation| {
            let mut set: HashSet<CellKey> = HashSet::new();
            for c in &m.cells {
                let mut k = c.key;
                while let Some(p) = k.parent() {
                    if !set.insert(p) {
                        break;
                    }
                    k = p;
                }
            }
            set
        };
        let anc_a = strict_ancestors(a);
        let anc_b = strict_ancestors(b);
        let from_a: Vec<CellKey> = a.cells.iter().map(|c| c.key).filter(|k| !anc_b.contains(k)).collect();
        let from_b: Vec<CellKey> =
            b.cells.iter().map(|c| c.key).filter(|k| !anc_a.contains(k) && a.find_cell(k).is_none()).collect();
        if from_b.is_empty() && from_a.len() == a.num_cells() {
            return Ok(a.clone());
        }
        if from_a.iter().all(|k| b.find_cell(k).is_some()) && from_a.len() + from_b.len() == b.num_cells() {
            return Ok(b.clone());
        }
        let mut keys = from_a;
        keys.extend(from_b);
        Triangulation::from_leaf_keys(a.initial.clone(), keys)
    }

    /// Rebuild a mesh from the leaves of a bisection forest by replaying the
    /// bisections from 𝒯₀. Cells come out in depth-first order.
    pub fn from_leaf_keys(initial: Arc<InitialMesh>, mut keys: Vec<CellKey>) -> Result<Triangulation> {
        keys.sort_by(|x, y| x.dfs_cmp(y));
        keys.dedup();
        let mut vertices: Vec<Point> = initial.vertices.clone();
        let mut index: HashMap<[u64; 2], usize> =
            vertices.iter().enumerate().map(|(i, p)| (point_bits(*p), i)).collect();
        let mut cells = Vec::with_capacity(keys.len());
        for key in &keys {
            let (root_v, root_r) = *initial
                .cells
                .get(key.root as usize)
                .ok_or_else(|| AfemError::InvalidMesh(format!("key {key:?} names a missing initial element")))?;
            let mut pts = [initial.vertices[root_v[0]], initial.vertices[root_v[1]], initial.vertices[root_v[2]]];
            let mut r = root_r;
            for level in 0..key.depth {
                let (c0, c1) = bisect_points(&pts, r);
                let (p, nr) = if key.branch(level) == 0 { c0 } else { c1 };
                pts = p;
                r = nr;
            }
            let mut v = [0usize; 3];
            for i in 0..3 {
                let n = vertices.len();
                v[i] = *index.entry(point_bits(pts[i])).or_insert(n);
                if v[i] == n {
                    vertices.push(pts[i]);
                }
            }
            cells.push(Cell { vertices: v, refinement_edge: r, key: *key });
        }
        Triangulation::from_parts(initial, vertices, cells)
    }

    /// Index of each vertex of `self` in `other`, matched by exact coordinates.
    pub fn vertex_map_into(&self, other: &Triangulation) -> Vec<Option<usize>> {
        let index: HashMap<[u64; 2], usize> =
            other.vertices.iter().enumerate().map(|(i, p)| (point_bits(*p), i)).collect();
        self.vertices.iter().map(|p| index.get(&point_bits(*p)).copied()).collect()
    }

    /// Fine edges whose union is the segment between two fine vertices that
    /// lie on a common coarse edge.
    pub fn sub_edges(&self, a: usize, b: usize, index: &HashMap<[u64; 2], usize>) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        let mut stack = vec![(a, b)];
        while let Some((p, q)) = stack.pop() {
            if let Some(e) = self.find_edge(p, q) {
                out.push(e);
                continue;
            }
            let m = midpoint(self.vertices[p], self.vertices[q]);
            let mv = *index.get(&point_bits(m)).ok_or_else(|| {
                AfemError::NotARefinement(format!("segment ({p}, {q}) is neither an edge nor bisected"))
            })?;
            stack.push((mv, q));
            stack.push((p, mv));
        }
        Ok(out)
    }

    pub fn vertex_bits_index(&self) -> HashMap<[u64; 2], usize> {
        self.vertices.iter().enumerate().map(|(i, p)| (point_bits(*p), i)).collect()
    }
}
