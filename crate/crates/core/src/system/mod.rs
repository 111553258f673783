//! Plate material, assembly of the discrete problem and its solution.

mod solve;
mod sparse;

pub use solve::{solve, solve_with, SolveReport, SolverChoice};
pub use sparse::SparseMatrix;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::element::{local_shape_functions, DofMap, MorleyFunction, PiecewiseQuadratic, ScalarField, SmoothField};
use crate::error::{AfemError, Result};
use crate::geometry::{dot, edge_points, triangle_points, Point, Quadratic, Sym2};
use crate::mesh::Triangulation;

/// Young modulus `E` and Poisson ratio `ν` of the plate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateMaterial {
    pub young: f64,
    pub poisson: f64,
}

impl Default for PlateMaterial {
    /// `ν = 0.3` and `E = 12(1 − ν²)`, so the bending stiffness is one.
    fn default() -> Self {
        PlateMaterial { young: 12.0 * (1.0 - 0.09), poisson: 0.3 }
    }
}

impl PlateMaterial {
    pub fn new(young: f64, poisson: f64) -> Result<Self> {
        if !(young > 0.0 && young.is_finite()) {
            return Err(AfemError::InvalidParameter(format!("Young modulus must be positive, got {young}")));
        }
        if !(0.0..0.5).contains(&poisson) {
            return Err(AfemError::InvalidParameter(format!("Poisson ratio must lie in [0, 0.5), got {poisson}")));
        }
        Ok(PlateMaterial { young, poisson })
    }

    /// `𝒞` equal to the identity: `ν = 0`, `E = 12`.
    pub fn biharmonic() -> Self {
        PlateMaterial { young: 12.0, poisson: 0.0 }
    }

    /// Bending stiffness `E / (12(1 − ν²))`.
    pub fn stiffness(&self) -> f64 {
        self.young / (12.0 * (1.0 - self.poisson * self.poisson))
    }

    /// `𝒞τ = D((1 − ν)τ + ν tr(τ) I)`.
    pub fn apply(&self, t: &Sym2) -> Sym2 {
        let d = self.stiffness();
        let nu = self.poisson;
        let tr = t.trace();
        Sym2::new(d * ((1.0 - nu) * t.xx + nu * tr), d * (1.0 - nu) * t.xy, d * ((1.0 - nu) * t.yy + nu * tr))
    }

    /// `𝒞a : b`.
    pub fn energy(&self, a: &Sym2, b: &Sym2) -> f64 {
        self.apply(a).ddot(b)
    }
}

/// `|K| 𝒞∇²φ_i : ∇²φ_j` for the local basis (outward normals).
pub fn local_stiffness(p: &[Point; 3], material: &PlateMaterial) -> Result<[[f64; 6]; 6]> {
    let basis = local_shape_functions(p)?;
    Ok(stiffness_from_basis(&basis, crate::geometry::signed_area(p[0], p[1], p[2]), material))
}

fn stiffness_from_basis(basis: &[Quadratic; 6], area: f64, material: &PlateMaterial) -> [[f64; 6]; 6] {
    let ch: [Sym2; 6] = std::array::from_fn(|i| material.apply(&basis[i].hess));
    let mut k = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in i..6 {
            let v = area * ch[i].ddot(&basis[j].hess);
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    k
}

/// Parallel map over cells with a fixed-order sum, so results do not depend
/// on the thread count.
pub(crate) fn cell_sum<F: Fn(usize) -> f64 + Sync + Send>(n: usize, f: F) -> f64 {
    let v: Vec<f64> = (0..n).into_par_iter().map(f).collect();
    v.iter().sum()
}

/// Stiffness matrix and load vector restricted to the free DOFs.
#[derive(Clone, Debug)]
pub struct DiscreteSystem {
    pub mesh: Arc<Triangulation>,
    pub dofs: DofMap,
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
}

impl DiscreteSystem {
    /// Expand a free-DOF vector into a Morley function (constrained DOFs 0).
    pub fn expand(&self, x: &[f64]) -> MorleyFunction {
        let mut coeffs = vec![0.0; self.dofs.num_dofs()];
        for (k, &d) in self.dofs.free_dofs().iter().enumerate() {
            coeffs[d] = x[k];
        }
        MorleyFunction::from_coeffs(self.mesh.clone(), coeffs).expect("sizes agree")
    }

    /// Free-DOF part of a Morley function on the same mesh.
    pub fn restrict(&self, u: &MorleyFunction) -> Vec<f64> {
        self.dofs.free_dofs().iter().map(|&d| u.coeffs()[d]).collect()
    }
}

struct LocalContribution {
    dofs: [usize; 6],
    signs: [f64; 6],
    k: [[f64; 6]; 6],
    load: [f64; 6],
}

fn local_contributions(
    mesh: &Triangulation,
    dofs: &DofMap,
    material: &PlateMaterial,
    f: Option<&dyn ScalarField>,
) -> Result<Vec<LocalContribution>> {
    (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let p = mesh.cell_points(c);
            let basis = local_shape_functions(&p).map_err(|_| AfemError::Degenerate { cell: c, area: mesh.area(c) })?;
            let k = stiffness_from_basis(&basis, mesh.area(c), material);
            let mut load = [0.0; 6];
            if let Some(f) = f {
                for (x, w) in triangle_points(&p) {
                    let fx = f.value(x) * w;
                    for i in 0..6 {
                        load[i] += fx * basis[i].eval(x);
                    }
                }
            }
            let (d, s) = dofs.cell_dofs(mesh, c);
            Ok(LocalContribution { dofs: d, signs: s, k, load })
        })
        .collect()
}

/// Global stiffness over all DOFs, before the boundary condition.
pub fn assemble_full(mesh: &Triangulation, material: &PlateMaterial) -> Result<SparseMatrix> {
    let dofs = DofMap::new(mesh);
    let locals = local_contributions(mesh, &dofs, material, None)?;
    let mut t = Vec::with_capacity(36 * locals.len());
    for l in &locals {
        for i in 0..6 {
            for j in 0..6 {
                t.push((l.dofs[i], l.dofs[j], l.signs[i] * l.signs[j] * l.k[i][j]));
            }
        }
    }
    Ok(SparseMatrix::from_triplets(dofs.num_dofs(), t))
}

/// Assemble `a_h(u_h, v_h) = (f, v_h)` on the free DOFs. Constrained rows and
/// columns are dropped, which is symmetric elimination for zero data.
pub fn assemble(mesh: &Arc<Triangulation>, material: &PlateMaterial, f: &dyn ScalarField) -> Result<DiscreteSystem> {
    let dofs = DofMap::new(mesh);
    let locals = local_contributions(mesh, &dofs, material, Some(f))?;
    let mut rhs = vec![0.0; dofs.num_free()];
    let mut t = Vec::with_capacity(36 * locals.len());
    for l in &locals {
        let free: [Option<usize>; 6] = std::array::from_fn(|i| dofs.free_index(l.dofs[i]));
        for i in 0..6 {
            let Some(fi) = free[i] else { continue };
            rhs[fi] += l.signs[i] * l.load[i];
            for j in 0..6 {
                if let Some(fj) = free[j] {
                    t.push((fi, fj, l.signs[i] * l.signs[j] * l.k[i][j]));
                }
            }
        }
    }
    let matrix = SparseMatrix::from_triplets(dofs.num_free(), t);
    Ok(DiscreteSystem { mesh: mesh.clone(), dofs, matrix, rhs })
}

fn same_mesh(u: &PiecewiseQuadratic, v: &PiecewiseQuadratic) -> Result<()> {
    if !Arc::ptr_eq(u.mesh(), v.mesh()) && u.mesh().mesh_hash() != v.mesh().mesh_hash() {
        return Err(AfemError::NotInSpace("bilinear form needs both functions on one mesh".into()));
    }
    Ok(())
}

/// `a_h(u, v) = Σ_K |K| 𝒞∇²u : ∇²v` for broken quadratics on one mesh.
pub fn bilinear(material: &PlateMaterial, u: &PiecewiseQuadratic, v: &PiecewiseQuadratic) -> Result<f64> {
    same_mesh(u, v)?;
    let mesh = u.mesh();
    Ok(cell_sum(mesh.num_cells(), |c| mesh.area(c) * material.energy(&u.hessian(c), &v.hessian(c))))
}

/// `a_h(u, v)` for two Morley functions on the same mesh.
pub fn bilinear_morley(material: &PlateMaterial, u: &MorleyFunction, v: &MorleyFunction) -> Result<f64> {
    bilinear(material, &u.piecewise(), &v.piecewise())
}

/// `∫_K ∇²v` through Green's formula, `∮_{∂K} ∇v ⊗ n`. On each edge the
/// tangential part of `∫_e ∇v` is the exact endpoint difference and the
/// normal part uses the 3-point rule, matching the canonical interpolation
/// DOFs; this keeps `a_h(v − Π_h v, w_h) = 0` exact for non-polynomial `v`.
pub fn hessian_integral<F: SmoothField + ?Sized>(v: &F, p: &[Point; 3]) -> Sym2 {
    let mut s = Sym2::ZERO;
    for i in 0..3 {
        let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
        let d = crate::geometry::sub(b, a);
        let len = d[0].hypot(d[1]);
        let t = [d[0] / len, d[1] / len];
        let n = [t[1], -t[0]];
        let tangential = v.value(b) - v.value(a);
        let normal: f64 = edge_points(a, b).iter().map(|(x, w)| w * dot(v.gradient(*x), n)).sum();
        let g = [tangential * t[0] + normal * n[0], tangential * t[1] + normal * n[1]];
        s.xx += g[0] * n[0];
        s.xy += 0.5 * (g[0] * n[1] + g[1] * n[0]);
        s.yy += g[1] * n[1];
    }
    s
}

/// `a_h(v, w)` for a smooth `v` and a broken quadratic `w`.
pub fn bilinear_smooth<F: SmoothField + ?Sized>(material: &PlateMaterial, v: &F, w: &PiecewiseQuadratic) -> f64 {
    let mesh = w.mesh();
    cell_sum(mesh.num_cells(), |c| material.energy(&hessian_integral(v, &mesh.cell_points(c)), &w.hessian(c)))
}

/// `(f, w)` by the 6-point rule on `w`'s own mesh.
pub fn load_functional(f: &dyn ScalarField, w: &PiecewiseQuadratic) -> f64 {
    let mesh = w.mesh();
    cell_sum(mesh.num_cells(), |c| {
        let q = w.piece(c);
        triangle_points(&mesh.cell_points(c)).iter().map(|(x, wt)| wt * f.value(*x) * q.eval(*x)).sum::<f64>()
    })
}

/// `‖v‖_{𝒞_h}`.
pub fn energy_norm(v: &MorleyFunction, material: &PlateMaterial) -> f64 {
    let pw = v.piecewise();
    bilinear(material, &pw, &pw).expect("same mesh").max(0.0).sqrt()
}

/// Per-cell `∫_K 𝒞(∇²u − ∇²_h u_h):(∇²u − ∇²_h u_h)` by the 6-point rule.
pub fn energy_error_squared_per_cell<F: SmoothField + ?Sized>(
    u: &F,
    u_h: &PiecewiseQuadratic,
    material: &PlateMaterial,
) -> Vec<f64> {
    let mesh = u_h.mesh();
    (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let hh = u_h.hessian(c);
            triangle_points(&mesh.cell_points(c))
                .iter()
                .map(|(x, w)| {
                    let d = u.hessian(*x).sub(&hh);
                    w * material.energy(&d, &d)
                })
                .sum::<f64>()
        })
        .collect()
}

/// `‖u − u_h‖_{𝒞_h}`.
pub fn energy_error<F: SmoothField + ?Sized>(u: &F, u_h: &MorleyFunction, material: &PlateMaterial) -> f64 {
    energy_error_squared_per_cell(u, &u_h.piecewise(), material).iter().sum::<f64>().max(0.0).sqrt()
}

/// Per-cell `‖∇²u − ∇²_h u_h‖_{L²(K)}` (Frobenius, no material).
pub fn hessian_error_per_cell<F: SmoothField + ?Sized>(u: &F, u_h: &PiecewiseQuadratic) -> Vec<f64> {
    let mesh = u_h.mesh();
    (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let hh = u_h.hessian(c);
            triangle_points(&mesh.cell_points(c))
                .iter()
                .map(|(x, w)| w * u.hessian(*x).sub(&hh).ddot(&u.hessian(*x).sub(&hh)))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Scalar product of two coefficient vectors.
pub fn dot_vec(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_vec(a: &[f64]) -> f64 {
    dot_vec(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::{interpolate_canonical, local_dofs, Constant, FnField};
    use crate::geometry::Quadratic;
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::ToPrimitive;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(levels: usize) -> Arc<Triangulation> {
        let mut m =
            Triangulation::build_initial(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], &[[0, 1, 2], [0, 2, 3]])
                .unwrap();
        for _ in 0..levels {
            m = m.uniform_refine().unwrap();
        }
        Arc::new(m)
    }

    fn lshape_random(seed: u64) -> Arc<Triangulation> {
        let pts = [[-1.0, -1.0], [0.0, -1.0], [-1.0, 0.0], [0.0, 0.0], [1.0, 0.0], [-1.0, 1.0], [0.0, 1.0], [1.0, 1.0]];
        let cells = [[0, 1, 3], [0, 3, 2], [2, 3, 6], [2, 6, 5], [3, 4, 7], [3, 7, 6]];
        let mut m = Triangulation::build_initial(&pts, &cells).unwrap().uniform_refine().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..3 {
            let marked: Vec<usize> = (0..m.num_cells()).filter(|_| rng.gen::<f64>() < 0.3).collect();
            m = m.bisect(&marked).unwrap();
        }
        Arc::new(m)
    }

    fn random_free(mesh: &Arc<Triangulation>, rng: &mut ChaCha8Rng) -> MorleyFunction {
        let coeffs = (0..mesh.num_vertices() + mesh.num_edges()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        MorleyFunction::from_coeffs(mesh.clone(), coeffs).unwrap().with_clamped_bc()
    }

    #[test]
    fn material_presets_and_validation() {
        let d = PlateMaterial::default();
        assert!((d.stiffness() - 1.0).abs() < 1e-15);
        let b = PlateMaterial::biharmonic();
        let t = Sym2::new(1.0, 2.0, -3.0);
        assert_eq!(b.apply(&t), t);
        assert!(PlateMaterial::new(1.0, 0.5).is_err());
        assert!(PlateMaterial::new(-1.0, 0.2).is_err());
        assert!(PlateMaterial::new(1.0, -0.1).is_err());
        // 𝒞 is symmetric positive definite on symmetric matrices
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let m = PlateMaterial::new(rng.gen_range(0.1..10.0), rng.gen_range(0.0..0.499)).unwrap();
            let a = Sym2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let c = Sym2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            assert!((m.energy(&a, &c) - m.energy(&c, &a)).abs() < 1e-12);
            assert!(m.energy(&a, &a) > 0.0);
        }
    }

    #[test]
    fn local_stiffness_kernel_and_scaling() {
        let p = [[0.1, 0.0], [1.3, 0.2], [0.4, 0.9]];
        let m = PlateMaterial::default();
        let k = local_stiffness(&p, &m).unwrap();
        let lin = Quadratic { center: [0.0, 0.0], value: 0.7, grad: [1.5, -0.3], hess: Sym2::ZERO };
        let d = local_dofs(&p, &lin);
        for i in 0..6 {
            let r: f64 = (0..6).map(|j| k[i][j] * d[j]).sum();
            assert!(r.abs() < 1e-12, "{r}");
        }
        let m3 = PlateMaterial::new(3.0 * m.young, m.poisson).unwrap();
        let k3 = local_stiffness(&p, &m3).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert!((k3[i][j] - 3.0 * k[i][j]).abs() <= 1e-14 * k[i][j].abs().max(1.0));
            }
        }
    }

    #[test]
    fn reference_stiffness_matches_rational_oracle() {
        let p = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let k = local_stiffness(&p, &PlateMaterial::new(12.0, 0.0).unwrap()).unwrap();
        let basis = crate::element::tests::rational_reference_basis();
        let r = |n: i64| BigRational::from_integer(BigInt::from(n));
        // Hessian (xx, xy, yy) of c0 + c1 x + c2 y + c3 x² + c4 xy + c5 y²
        let hess = |c: &[BigRational; 6]| [r(2) * c[3].clone(), c[4].clone(), r(2) * c[5].clone()];
        for i in 0..6 {
            for j in 0..6 {
                let (hi, hj) = (hess(&basis[i]), hess(&basis[j]));
                let exact = (hi[0].clone() * hj[0].clone() + r(2) * hi[1].clone() * hj[1].clone()
                    + hi[2].clone() * hj[2].clone())
                    / r(2);
                let mut exact = exact.to_f64().unwrap();
                // the oracle's hypotenuse function is ours divided by √2
                for idx in [i, j] {
                    if idx == 3 {
                        exact *= std::f64::consts::SQRT_2;
                    }
                }
                assert!((k[i][j] - exact).abs() < 1e-11 * exact.abs().max(1.0), "K[{i}][{j}] {} vs {exact}", k[i][j]);
            }
        }
    }

    #[test]
    fn global_matrix_kernel_and_symmetry() {
        let mesh = lshape_random(1);
        let m = PlateMaterial::default();
        let full = assemble_full(&mesh, &m).unwrap();
        assert!(full.asymmetry() < 1e-12);
        let lin = Quadratic { center: [0.0, 0.0], value: -0.4, grad: [0.8, 1.1], hess: Sym2::ZERO };
        let d = interpolate_canonical(&lin, &mesh);
        let r = full.matvec(d.coeffs());
        let scale = full.diagonal().iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(r.iter().all(|x| x.abs() < 1e-12 * scale), "{}", r.iter().fold(0.0f64, |a, b| a.max(b.abs())));
    }

    #[test]
    fn zero_load_gives_zero_rhs_and_solution() {
        let mesh = square(2);
        let sys = assemble(&mesh, &PlateMaterial::default(), &Constant(0.0)).unwrap();
        assert!(sys.rhs.iter().all(|&b| b == 0.0));
        let u = solve(&sys).unwrap();
        assert!(u.coeffs().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn assembled_energy_matches_elementwise_sum() {
        let mesh = lshape_random(2);
        let m = PlateMaterial::default();
        let sys = assemble(&mesh, &m, &Constant(1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let v = random_free(&mesh, &mut rng);
            let x = sys.restrict(&v);
            let global = sys.matrix.inner(&x, &x);
            let mut oracle = 0.0;
            for c in 0..mesh.num_cells() {
                let h = v.hessian(c);
                oracle += mesh.area(c) * m.energy(&h, &h);
            }
            assert!((global - oracle).abs() <= 1e-12 * oracle);
        }
    }

    #[test]
    fn galerkin_identity_holds() {
        let mesh = lshape_random(4);
        let m = PlateMaterial::default();
        let f = FnField(|x: Point| 1.0 + x[0] * x[1]);
        let sys = assemble(&mesh, &m, &f).unwrap();
        let u = solve(&sys).unwrap();
        assert!(u.satisfies_bc(0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let w = random_free(&mesh, &mut rng);
            let lhs = bilinear_morley(&m, &u, &w).unwrap();
            let rhs = load_functional(&f, &w.piecewise());
            assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(energy_norm(&u, &m) * energy_norm(&w, &m)));
        }
    }

    #[test]
    fn canonical_interpolation_is_energy_orthogonal() {
        struct Bubble;
        impl ScalarField for Bubble {
            fn value(&self, x: Point) -> f64 {
                (x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])).powi(2)
            }
        }
        impl SmoothField for Bubble {
            fn gradient(&self, x: Point) -> Point {
                let (a, b) = (x[0] * (1.0 - x[0]), x[1] * (1.0 - x[1]));
                [2.0 * a * (1.0 - 2.0 * x[0]) * b * b, 2.0 * b * (1.0 - 2.0 * x[1]) * a * a]
            }
            fn hessian(&self, x: Point) -> Sym2 {
                let (a, b) = (x[0] * (1.0 - x[0]), x[1] * (1.0 - x[1]));
                let (da, db) = (1.0 - 2.0 * x[0], 1.0 - 2.0 * x[1]);
                Sym2::new(
                    2.0 * (da * da - 2.0 * a) * b * b,
                    4.0 * a * da * b * db,
                    2.0 * (db * db - 2.0 * b) * a * a,
                )
            }
        }
        let mesh = square(2);
        let m = PlateMaterial::default();
        let pi = interpolate_canonical(&Bubble, &mesh).with_clamped_bc();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let w = random_free(&mesh, &mut rng).piecewise();
            let a = bilinear_smooth(&m, &Bubble, &w);
            let b = bilinear(&m, &pi.piecewise(), &w).unwrap();
            assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1e-3), "{a} {b}");
        }
    }

    #[test]
    fn energy_error_zero_for_reproduced_quadratic() {
        let mesh = square(1);
        let q = Quadratic { center: [0.5, 0.5], value: 1.0, grad: [0.2, 0.3], hess: Sym2::new(1.0, -2.0, 0.5) };
        let pi = interpolate_canonical(&q, &mesh);
        assert!(energy_error(&q, &pi, &PlateMaterial::default()) < 1e-12);
        assert_eq!(energy_norm(&MorleyFunction::zero(mesh), &PlateMaterial::default()), 0.0);
    }

    #[test]
    fn direct_and_iterative_agree() {
        let mesh = square(3);
        let sys = assemble(&mesh, &PlateMaterial::default(), &Constant(1.0)).unwrap();
        let (a, ra) = solve_with(&sys, SolverChoice::Direct).unwrap();
        let (b, rb) = solve_with(&sys, SolverChoice::Iterative).unwrap();
        assert!(ra.relative_residual <= 1e-10 && rb.relative_residual <= 1e-10);
        let diff = a.sub(&b).unwrap();
        let m = PlateMaterial::default();
        assert!(energy_norm(&diff, &m) <= 1e-6 * energy_norm(&a, &m));
    }
}
