//! The Morley space: local basis, global DOF numbering, discrete functions
//! and the transfer operators between nested meshes.
//!
//! Global DOFs are numbered vertices first (`v`), then edges (`nv + e`). An
//! edge DOF holds the mean over the edge of `∇u·ν_e` for the fixed edge
//! normal; locally each element sees it multiplied by its orientation sign.

mod transfer;

pub use transfer::{kernel_check, prolong_by_averaging, restrict_to_coarse};

use std::sync::Arc;

use nalgebra::Matrix6;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AfemError, Result};
use crate::geometry::{dot, edge_points, signed_area, sub, triangle_points, Point, Quadratic, Sym2};
use crate::mesh::Triangulation;

/// Something that can be evaluated pointwise (load data, reference values).
pub trait ScalarField: Sync {
    fn value(&self, x: Point) -> f64;
}

/// A smooth function with first and second derivatives.
pub trait SmoothField: ScalarField {
    fn gradient(&self, x: Point) -> Point;
    fn hessian(&self, x: Point) -> Sym2;
}

/// Wraps a closure as a [`ScalarField`].
pub struct FnField<F>(pub F);

impl<F: Fn(Point) -> f64 + Sync> ScalarField for FnField<F> {
    fn value(&self, x: Point) -> f64 {
        (self.0)(x)
    }
}

/// The constant function.
#[derive(Clone, Copy, Debug)]
pub struct Constant(pub f64);

impl ScalarField for Constant {
    fn value(&self, _x: Point) -> f64 {
        self.0
    }
}

impl ScalarField for Quadratic {
    fn value(&self, x: Point) -> f64 {
        self.eval(x)
    }
}

impl SmoothField for Quadratic {
    fn gradient(&self, x: Point) -> Point {
        Quadratic::gradient(self, x)
    }

    fn hessian(&self, _x: Point) -> Sym2 {
        self.hess
    }
}

/// Nodal basis of the Morley element on a triangle with counter-clockwise
/// vertices: `φ_0..φ_2` for the vertex values, `φ_3..φ_5` for the mean
/// outward normal derivatives on the edges opposite vertices 0..2.
///
/// The 6×6 DOF matrix is built in monomials scaled by `h_K` around the
/// centroid, so its conditioning does not depend on the element size.
pub fn local_shape_functions(p: &[Point; 3]) -> Result<[Quadratic; 6]> {
    let area = signed_area(p[0], p[1], p[2]);
    let scale = norm_inf(sub(p[1], p[0])).max(norm_inf(sub(p[2], p[0])));
    if !(area > 1e-14 * scale * scale) {
        return Err(AfemError::Degenerate { cell: usize::MAX, area });
    }
    let center = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
    let h = area.sqrt();
    let s = |x: Point| [(x[0] - center[0]) / h, (x[1] - center[1]) / h];
    // scaled monomials 1, s1, s2, s1²/2, s1 s2, s2²/2 and their s-gradients
    let mono = |q: Point| [1.0, q[0], q[1], 0.5 * q[0] * q[0], q[0] * q[1], 0.5 * q[1] * q[1]];
    let mono_grad = |q: Point| {
        [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [q[0], 0.0], [q[1], q[0]], [0.0, q[1]]]
    };
    let mut v = Matrix6::<f64>::zeros();
    for i in 0..3 {
        let m = mono(s(p[i]));
        for j in 0..6 {
            v[(i, j)] = m[j];
        }
        let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
        let d = sub(b, a);
        let len = d[0].hypot(d[1]);
        let n = [d[1] / len, -d[0] / len];
        // the gradient of a quadratic is affine: its edge mean is its midpoint value
        let g = mono_grad(s([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]));
        for j in 0..6 {
            v[(3 + i, j)] = dot(g[j], n) / h;
        }
    }
    let inv = v.try_inverse().ok_or(AfemError::Degenerate { cell: usize::MAX, area })?;
    let mut out = [Quadratic::zero(center); 6];
    for (k, phi) in out.iter_mut().enumerate() {
        let c = inv.column(k);
        *phi = Quadratic {
            center,
            value: c[0],
            grad: [c[1] / h, c[2] / h],
            hess: Sym2::new(c[3] / (h * h), c[4] / (h * h), c[5] / (h * h)),
        };
    }
    Ok(out)
}

fn norm_inf(a: Point) -> f64 {
    a[0].abs().max(a[1].abs())
}

/// Apply the six local DOF functionals (outward normals) to a quadratic.
pub fn local_dofs(p: &[Point; 3], q: &Quadratic) -> [f64; 6] {
    let mut d = [0.0; 6];
    for i in 0..3 {
        d[i] = q.eval(p[i]);
        let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
        let t = sub(b, a);
        let len = t[0].hypot(t[1]);
        d[3 + i] = dot(q.gradient([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]), [t[1] / len, -t[0] / len]);
    }
    d
}

/// Combine a local basis with local DOF values.
pub fn combine(basis: &[Quadratic; 6], d: &[f64; 6]) -> Quadratic {
    let c = basis[0].center;
    let mut q = Quadratic::zero(c);
    for k in 0..6 {
        q.value += d[k] * basis[k].value;
        q.grad[0] += d[k] * basis[k].grad[0];
        q.grad[1] += d[k] * basis[k].grad[1];
        q.hess = q.hess.add(&basis[k].hess.scale(d[k]));
    }
    q
}

/// Global DOF numbering and the clamped boundary constraint.
#[derive(Clone, Debug)]
pub struct DofMap {
    num_vertices: usize,
    num_edges: usize,
    constrained: Vec<bool>,
    free: Vec<usize>,
    free_index: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &Triangulation) -> DofMap {
        let nv = mesh.num_vertices();
        let ne = mesh.num_edges();
        let mut constrained = vec![false; nv + ne];
        for v in 0..nv {
            constrained[v] = mesh.is_boundary_vertex(v);
        }
        for (e, edge) in mesh.edges().iter().enumerate() {
            constrained[nv + e] = edge.is_boundary();
        }
        let free: Vec<usize> = (0..nv + ne).filter(|&i| !constrained[i]).collect();
        let mut free_index = vec![usize::MAX; nv + ne];
        for (k, &i) in free.iter().enumerate() {
            free_index[i] = k;
        }
        DofMap { num_vertices: nv, num_edges: ne, constrained, free, free_index }
    }

    pub fn num_dofs(&self) -> usize {
        self.num_vertices + self.num_edges
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    pub fn vertex_dof(&self, v: usize) -> usize {
        v
    }

    pub fn edge_dof(&self, e: usize) -> usize {
        self.num_vertices + e
    }

    pub fn is_constrained(&self, dof: usize) -> bool {
        self.constrained[dof]
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free
    }

    /// Position of a DOF among the free ones.
    pub fn free_index(&self, dof: usize) -> Option<usize> {
        let k = self.free_index[dof];
        (k != usize::MAX).then_some(k)
    }

    /// The six global DOFs of a cell and the sign relating each local DOF to
    /// the global one.
    pub fn cell_dofs(&self, mesh: &Triangulation, c: usize) -> ([usize; 6], [f64; 6]) {
        let v = mesh.cell(c).vertices;
        let e = mesh.cell_edges(c);
        let s = mesh.cell_edge_signs(c);
        let nv = self.num_vertices;
        ([v[0], v[1], v[2], nv + e[0], nv + e[1], nv + e[2]], [1.0, 1.0, 1.0, s[0], s[1], s[2]])
    }
}

/// A coefficient vector over the Morley DOFs of one mesh.
#[derive(Clone, Debug)]
pub struct MorleyFunction {
    mesh: Arc<Triangulation>,
    coeffs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MorleyFunctionJson {
    mesh_hash: String,
    vertex_dofs: Vec<f64>,
    edge_dofs: Vec<f64>,
}

impl MorleyFunction {
    pub fn zero(mesh: Arc<Triangulation>) -> Self {
        let n = mesh.num_vertices() + mesh.num_edges();
        MorleyFunction { mesh, coeffs: vec![0.0; n] }
    }

    pub fn from_coeffs(mesh: Arc<Triangulation>, coeffs: Vec<f64>) -> Result<Self> {
        let n = mesh.num_vertices() + mesh.num_edges();
        if coeffs.len() != n {
            return Err(AfemError::NotInSpace(format!("expected {n} coefficients, got {}", coeffs.len())));
        }
        Ok(MorleyFunction { mesh, coeffs })
    }

    pub fn mesh(&self) -> &Arc<Triangulation> {
        &self.mesh
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn vertex_dofs(&self) -> &[f64] {
        &self.coeffs[..self.mesh.num_vertices()]
    }

    pub fn edge_dofs(&self) -> &[f64] {
        &self.coeffs[self.mesh.num_vertices()..]
    }

    /// Zero the DOFs of boundary vertices and boundary edges.
    pub fn with_clamped_bc(mut self) -> Self {
        let map = DofMap::new(&self.mesh);
        for (i, c) in self.coeffs.iter_mut().enumerate() {
            if map.is_constrained(i) {
                *c = 0.0;
            }
        }
        self
    }

    /// Whether the constrained DOFs vanish (up to `tol`).
    pub fn satisfies_bc(&self, tol: f64) -> bool {
        let map = DofMap::new(&self.mesh);
        self.coeffs.iter().enumerate().all(|(i, c)| !map.is_constrained(i) || c.abs() <= tol)
    }

    fn check_same_mesh(&self, o: &MorleyFunction) -> Result<()> {
        if !Arc::ptr_eq(&self.mesh, &o.mesh) && self.mesh.mesh_hash() != o.mesh.mesh_hash() {
            return Err(AfemError::NotInSpace("functions live on different meshes".into()));
        }
        Ok(())
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &MorleyFunction) -> Result<MorleyFunction> {
        self.check_same_mesh(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + s * b).collect();
        Ok(MorleyFunction { mesh: self.mesh.clone(), coeffs })
    }

    pub fn sub(&self, other: &MorleyFunction) -> Result<MorleyFunction> {
        self.axpy(-1.0, other)
    }

    pub fn scaled(&self, s: f64) -> MorleyFunction {
        MorleyFunction { mesh: self.mesh.clone(), coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }

    /// The P2 polynomial on cell `c`, centred at its centroid.
    pub fn local(&self, c: usize) -> Quadratic {
        let p = self.mesh.cell_points(c);
        let basis = local_shape_functions(&p).expect("mesh cells have positive area");
        combine(&basis, &self.local_dofs(c))
    }

    fn local_dofs(&self, c: usize) -> [f64; 6] {
        let nv = self.mesh.num_vertices();
        let v = self.mesh.cell(c).vertices;
        let e = self.mesh.cell_edges(c);
        let s = self.mesh.cell_edge_signs(c);
        [
            self.coeffs[v[0]],
            self.coeffs[v[1]],
            self.coeffs[v[2]],
            s[0] * self.coeffs[nv + e[0]],
            s[1] * self.coeffs[nv + e[1]],
            s[2] * self.coeffs[nv + e[2]],
        ]
    }

    fn check_inside(&self, c: usize, x: Point) -> Result<()> {
        if c >= self.mesh.num_cells() || !self.mesh.contains(c, x) {
            return Err(AfemError::OutsideElement { cell: c, x: x[0], y: x[1] });
        }
        Ok(())
    }

    pub fn evaluate(&self, c: usize, x: Point) -> Result<f64> {
        self.check_inside(c, x)?;
        Ok(self.local(c).eval(x))
    }

    pub fn gradient(&self, c: usize, x: Point) -> Result<Point> {
        self.check_inside(c, x)?;
        Ok(self.local(c).gradient(x))
    }

    /// The (constant) Hessian on cell `c`.
    pub fn hessian(&self, c: usize) -> Sym2 {
        self.local(c).hess
    }

    /// All elementwise polynomials.
    pub fn piecewise(&self) -> PiecewiseQuadratic {
        let pieces = (0..self.mesh.num_cells()).into_par_iter().map(|c| self.local(c)).collect();
        PiecewiseQuadratic { mesh: self.mesh.clone(), pieces }
    }

    pub fn to_json(&self) -> Result<String> {
        let j = MorleyFunctionJson {
            mesh_hash: format!("{:016x}", self.mesh.mesh_hash()),
            vertex_dofs: self.vertex_dofs().to_vec(),
            edge_dofs: self.edge_dofs().to_vec(),
        };
        Ok(serde_json::to_string(&j)?)
    }

    pub fn from_json(mesh: Arc<Triangulation>, text: &str) -> Result<Self> {
        let j: MorleyFunctionJson = serde_json::from_str(text)?;
        let expect = format!("{:016x}", mesh.mesh_hash());
        if j.mesh_hash != expect {
            return Err(AfemError::NotInSpace(format!("mesh hash {} does not match {expect}", j.mesh_hash)));
        }
        let mut coeffs = j.vertex_dofs;
        coeffs.extend(j.edge_dofs);
        MorleyFunction::from_coeffs(mesh, coeffs)
    }
}

/// Canonical interpolation Π_h: vertex values of `v`, and edge means of
/// `∇v·ν_e` by 3-point Gauss. Boundary DOFs are left as computed; use
/// [`MorleyFunction::with_clamped_bc`] to force them to zero.
pub fn interpolate_canonical<F: SmoothField + ?Sized>(v: &F, mesh: &Arc<Triangulation>) -> MorleyFunction {
    let nv = mesh.num_vertices();
    let mut coeffs: Vec<f64> = mesh.vertices().par_iter().map(|&p| v.value(p)).collect();
    let edge_vals: Vec<f64> = mesh
        .edges()
        .par_iter()
        .map(|edge| {
            let (a, b) = (mesh.vertex(edge.vertices[0]), mesh.vertex(edge.vertices[1]));
            let s: f64 = edge_points(a, b).iter().map(|(x, w)| w * dot(v.gradient(*x), edge.normal)).sum();
            s / edge.length
        })
        .collect();
    coeffs.extend(edge_vals);
    debug_assert_eq!(coeffs.len(), nv + mesh.num_edges());
    MorleyFunction { mesh: mesh.clone(), coeffs }
}

/// A broken P2 function: one quadratic per cell.
#[derive(Clone, Debug)]
pub struct PiecewiseQuadratic {
    mesh: Arc<Triangulation>,
    pieces: Vec<Quadratic>,
}

impl PiecewiseQuadratic {
    pub fn new(mesh: Arc<Triangulation>, pieces: Vec<Quadratic>) -> Result<Self> {
        if pieces.len() != mesh.num_cells() {
            return Err(AfemError::NotInSpace(format!("{} pieces for {} cells", pieces.len(), mesh.num_cells())));
        }
        Ok(PiecewiseQuadratic { mesh, pieces })
    }

    /// Elementwise restriction of a global quadratic.
    pub fn from_global(mesh: Arc<Triangulation>, q: &Quadratic) -> Self {
        let pieces = (0..mesh.num_cells()).map(|c| q.recentered(mesh.centroid(c))).collect();
        PiecewiseQuadratic { mesh, pieces }
    }

    pub fn mesh(&self) -> &Arc<Triangulation> {
        &self.mesh
    }

    pub fn pieces(&self) -> &[Quadratic] {
        &self.pieces
    }

    pub fn piece(&self, c: usize) -> &Quadratic {
        &self.pieces[c]
    }

    pub fn hessian(&self, c: usize) -> Sym2 {
        self.pieces[c].hess
    }

    /// Carry the function elementwise onto a refinement: every fine cell
    /// takes the polynomial of its coarse ancestor.
    pub fn transfer_to(&self, fine: &Arc<Triangulation>) -> Result<PiecewiseQuadratic> {
        let anc = fine.ancestor_map(&self.mesh)?;
        let pieces = anc.iter().enumerate().map(|(f, &c)| self.pieces[c].recentered(fine.centroid(f))).collect();
        Ok(PiecewiseQuadratic { mesh: fine.clone(), pieces })
    }

    pub fn axpy(&self, s: f64, other: &PiecewiseQuadratic) -> Result<PiecewiseQuadratic> {
        if self.pieces.len() != other.pieces.len() || self.mesh.mesh_hash() != other.mesh.mesh_hash() {
            return Err(AfemError::NotInSpace("piecewise functions live on different meshes".into()));
        }
        let pieces = self.pieces.iter().zip(&other.pieces).map(|(a, b)| a.axpy(s, b)).collect();
        Ok(PiecewiseQuadratic { mesh: self.mesh.clone(), pieces })
    }

    pub fn sub(&self, other: &PiecewiseQuadratic) -> Result<PiecewiseQuadratic> {
        self.axpy(-1.0, other)
    }

    /// Interpolate into the Morley space of the same mesh. Vertex values and
    /// edge means are averaged over the incident cells; for a Morley function
    /// this is the identity.
    pub fn to_morley(&self) -> MorleyFunction {
        let mesh = &self.mesh;
        let nv = mesh.num_vertices();
        let mut coeffs = vec![0.0; nv + mesh.num_edges()];
        for v in 0..nv {
            let (cells, n) = mesh.vertex_patch(v);
            let p = mesh.vertex(v);
            coeffs[v] = cells.iter().map(|&c| self.pieces[c].eval(p)).sum::<f64>() / n as f64;
        }
        for (e, edge) in mesh.edges().iter().enumerate() {
            let m = crate::geometry::midpoint(mesh.vertex(edge.vertices[0]), mesh.vertex(edge.vertices[1]));
            let (cells, n) = mesh.edge_patch(e);
            coeffs[nv + e] =
                cells.iter().map(|&c| dot(self.pieces[c].gradient(m), edge.normal)).sum::<f64>() / n as f64;
        }
        MorleyFunction { mesh: mesh.clone(), coeffs }
    }

    /// `‖self‖_{L²(K)}` by the 6-point rule (exact for quadratics).
    pub fn l2_norm_on(&self, c: usize) -> f64 {
        let q = &self.pieces[c];
        triangle_points(&self.mesh.cell_points(c)).iter().map(|(x, w)| w * q.eval(*x).powi(2)).sum::<f64>().sqrt()
    }

    /// `‖∇²_h self‖_{L²(K)}`.
    pub fn hessian_norm_on(&self, c: usize) -> f64 {
        self.pieces[c].hess.frobenius() * self.mesh.area(c).sqrt()
    }
}
