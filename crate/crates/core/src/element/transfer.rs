//! Transfer operators between a mesh and one of its refinements.

use std::sync::Arc;

use crate::error::{AfemError, Result};
use crate::geometry::{dot, midpoint, point_bits, sub, Point, Quadratic};
use crate::mesh::Triangulation;

use super::MorleyFunction;

/// Restriction I_H: coarse vertex values are copied from `u_h`; the coarse
/// edge mean of `∂/∂ν_e` collects the fine sub-edge integrals, which are
/// single valued for a Morley function.
pub fn restrict_to_coarse(u_h: &MorleyFunction, coarse: &Arc<Triangulation>) -> Result<MorleyFunction> {
    let fine = u_h.mesh();
    fine.ancestor_map(coarse)?;
    let vmap = coarse.vertex_map_into(fine);
    let index = fine.vertex_bits_index();
    let nv_f = fine.num_vertices();
    let nv_c = coarse.num_vertices();
    let mut coeffs = vec![0.0; nv_c + coarse.num_edges()];
    for v in 0..nv_c {
        let fv = vmap[v].ok_or_else(|| AfemError::NotARefinement(format!("coarse vertex {v} missing in fine mesh")))?;
        coeffs[v] = u_h.coeffs()[fv];
    }
    for (e, edge) in coarse.edges().iter().enumerate() {
        let (a, b) = (vmap[edge.vertices[0]].unwrap(), vmap[edge.vertices[1]].unwrap());
        let mut s = 0.0;
        for fe in fine.sub_edges(a, b, &index)? {
            let sub_edge = fine.edge(fe);
            let sign = dot(sub_edge.normal, edge.normal).signum();
            s += sign * u_h.coeffs()[nv_f + fe] * sub_edge.length;
        }
        coeffs[nv_c + e] = s / edge.length;
    }
    MorleyFunction::from_coeffs(coarse.clone(), coeffs)
}

/// Prolongation I_h′ by patch averaging over the coarse elements that
/// contain each fine vertex or fine edge.
///
/// Fine vertices and edges on the boundary receive the averaged values like
/// any other; call [`MorleyFunction::with_clamped_bc`] on the result to land
/// in the constrained space.
pub fn prolong_by_averaging(v_h: &MorleyFunction, fine: &Arc<Triangulation>) -> Result<MorleyFunction> {
    let coarse = v_h.mesh();
    let anc = fine.ancestor_map(coarse)?;
    let pieces = v_h.piecewise();
    let nv = fine.num_vertices();
    let ne = fine.num_edges();
    // coarse cells per fine entity; a vertex touches at most a handful
    let mut vertex_owners: Vec<Vec<usize>> = vec![Vec::new(); nv];
    let mut edge_owners: Vec<Vec<usize>> = vec![Vec::new(); ne];
    for f in 0..fine.num_cells() {
        let k = anc[f];
        for &v in &fine.cell(f).vertices {
            if !vertex_owners[v].contains(&k) {
                vertex_owners[v].push(k);
            }
        }
        for e in fine.cell_edges(f) {
            if !edge_owners[e].contains(&k) {
                edge_owners[e].push(k);
            }
        }
    }
    let mut coeffs = vec![0.0; nv + ne];
    for v in 0..nv {
        let p = fine.vertex(v);
        let owners = &vertex_owners[v];
        coeffs[v] = owners.iter().map(|&k| pieces.piece(k).eval(p)).sum::<f64>() / owners.len() as f64;
    }
    for (e, edge) in fine.edges().iter().enumerate() {
        let m = midpoint(fine.vertex(edge.vertices[0]), fine.vertex(edge.vertices[1]));
        let owners = &edge_owners[e];
        coeffs[nv + e] =
            owners.iter().map(|&k| dot(pieces.piece(k).gradient(m), edge.normal)).sum::<f64>() / owners.len() as f64;
    }
    MorleyFunction::from_coeffs(fine.clone(), coeffs)
}

/// For a piecewise quadratic on two triangles sharing an edge: `Ok(true)`
/// iff it is one linear polynomial on their union. Input that violates the
/// Morley continuity conditions (vertex values, mean normal derivative on the
/// common edge) is rejected. `tol` is relative to the coefficient size.
pub fn kernel_check(k1: (&[Point; 3], &Quadratic), k2: (&[Point; 3], &Quadratic), tol: f64) -> Result<bool> {
    let (p1, q1) = k1;
    let (p2, q2) = k2;
    let shared: Vec<Point> =
        p1.iter().filter(|a| p2.iter().any(|b| point_bits(**a) == point_bits(*b))).copied().collect();
    if shared.len() != 2 {
        return Err(AfemError::InvalidParameter(format!("triangles share {} vertices, not an edge", shared.len())));
    }
    let scale = [q1, q2]
        .iter()
        .map(|q| q.value.abs().max(q.grad[0].abs()).max(q.grad[1].abs()).max(q.hess.frobenius()))
        .fold(1.0, f64::max);
    let tol = tol * scale;
    for &p in &shared {
        if (q1.eval(p) - q2.eval(p)).abs() > tol {
            return Err(AfemError::NotInSpace(format!("vertex values differ at ({}, {})", p[0], p[1])));
        }
    }
    let d = sub(shared[1], shared[0]);
    let n = [d[1], -d[0]];
    let m = midpoint(shared[0], shared[1]);
    if (dot(q1.gradient(m), n) - dot(q2.gradient(m), n)).abs() > tol * d[0].hypot(d[1]) {
        return Err(AfemError::NotInSpace("mean normal derivative jumps across the common edge".into()));
    }
    let r = q2.recentered(q1.center);
    let linear = q1.hess.frobenius() <= tol && r.hess.frobenius() <= tol;
    let same = (q1.value - r.value).abs() <= tol
        && (q1.grad[0] - r.grad[0]).abs() <= tol
        && (q1.grad[1] - r.grad[1]).abs() <= tol;
    Ok(linear && same)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::{interpolate_canonical, PiecewiseQuadratic};
    use crate::geometry::{edge_points, Sym2};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lshape() -> Triangulation {
        let pts = [[-1.0, -1.0], [0.0, -1.0], [-1.0, 0.0], [0.0, 0.0], [1.0, 0.0], [-1.0, 1.0], [0.0, 1.0], [1.0, 1.0]];
        let cells = [[0, 1, 3], [0, 3, 2], [2, 3, 6], [2, 6, 5], [3, 4, 7], [3, 7, 6]];
        Triangulation::build_initial(&pts, &cells).unwrap()
    }

    fn random_pair(seed: u64) -> (Arc<Triangulation>, Arc<Triangulation>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = lshape().uniform_refine().unwrap();
        for _ in 0..2 {
            let marked: Vec<usize> = (0..m.num_cells()).filter(|_| rng.gen::<f64>() < 0.3).collect();
            m = m.bisect(&marked).unwrap();
        }
        let coarse = Arc::new(m);
        let mut f = (*coarse).clone();
        for _ in 0..2 {
            let marked: Vec<usize> = (0..f.num_cells()).filter(|_| rng.gen::<f64>() < 0.3).collect();
            f = f.bisect(&marked).unwrap();
        }
        (coarse, Arc::new(f))
    }

    fn random_morley(mesh: &Arc<Triangulation>, rng: &mut ChaCha8Rng) -> MorleyFunction {
        let coeffs = (0..mesh.num_vertices() + mesh.num_edges()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        MorleyFunction::from_coeffs(mesh.clone(), coeffs).unwrap().with_clamped_bc()
    }

    #[test]
    fn restriction_to_same_mesh_is_identity() {
        let (coarse, _) = random_pair(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random_morley(&coarse, &mut rng);
        let r = restrict_to_coarse(&u, &coarse).unwrap();
        for (a, b) in r.coeffs().iter().zip(u.coeffs()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn restriction_keeps_unrefined_elements() {
        let (coarse, fine) = random_pair(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_morley(&fine, &mut rng);
        let r = restrict_to_coarse(&u, &coarse).unwrap();
        let mut kept = 0;
        for c in 0..coarse.num_cells() {
            if let Some(f) = fine.find_cell(&coarse.cell(c).key) {
                kept += 1;
                let (a, b) = (r.local(c), u.local(f));
                let x = coarse.centroid(c);
                assert!((a.eval(x) - b.eval(x)).abs() < 1e-12);
                assert!(a.hess.sub(&b.hess).frobenius() < 1e-10);
            }
        }
        assert!(kept > 0);
    }

    #[test]
    fn restriction_preserves_coarse_edge_gradient_integrals() {
        let (coarse, fine) = random_pair(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = random_morley(&fine, &mut rng);
        let r = restrict_to_coarse(&u, &coarse).unwrap();
        let anc = fine.ancestor_map(&coarse).unwrap();
        for edge in coarse.edges() {
            let (a, b) = (coarse.vertex(edge.vertices[0]), coarse.vertex(edge.vertices[1]));
            for k in edge.cells() {
                let qk = r.local(k);
                let mut lhs = [0.0; 2];
                for (x, w) in edge_points(a, b) {
                    let g = qk.gradient(x);
                    lhs = [lhs[0] + w * g[0], lhs[1] + w * g[1]];
                }
                // fine cells inside K with an edge on the coarse edge
                let mut rhs = [0.0; 2];
                for f in (0..fine.num_cells()).filter(|&f| anc[f] == k) {
                    for fe in fine.cell_edges(f) {
                        let se = fine.edge(fe);
                        let (pa, pb) = (fine.vertex(se.vertices[0]), fine.vertex(se.vertices[1]));
                        let on = |p: Point| crate::geometry::signed_area(a, b, p).abs() < 1e-14;
                        if on(pa) && on(pb) {
                            let qf = u.local(f);
                            for (x, w) in edge_points(pa, pb) {
                                let g = qf.gradient(x);
                                rhs = [rhs[0] + w * g[0], rhs[1] + w * g[1]];
                            }
                        }
                    }
                }
                assert!((lhs[0] - rhs[0]).abs() < 1e-12 && (lhs[1] - rhs[1]).abs() < 1e-12, "{lhs:?} {rhs:?}");
            }
        }
    }

    #[test]
    fn prolongation_reproduces_global_quadratics() {
        let (coarse, fine) = random_pair(7);
        let q = Quadratic { center: [0.1, 0.2], value: 0.3, grad: [1.0, -2.0], hess: Sym2::new(0.5, -1.0, 2.0) };
        let v = interpolate_canonical(&q, &coarse);
        let p = prolong_by_averaging(&v, &fine).unwrap();
        let direct = interpolate_canonical(&q, &fine);
        for (a, b) in p.coeffs().iter().zip(direct.coeffs()) {
            assert!((a - b).abs() < 1e-11);
        }
        let same = prolong_by_averaging(&v, &coarse).unwrap();
        for (a, b) in same.coeffs().iter().zip(v.coeffs()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn prolongation_keeps_elements_away_from_refinement() {
        let (coarse, _) = random_pair(8);
        let fine = Arc::new(coarse.bisect(&[0]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = random_morley(&coarse, &mut rng);
        let p = prolong_by_averaging(&v, &fine).unwrap().with_clamped_bc();
        let region = Triangulation::refined_region(&coarse, &fine).unwrap();
        let mut checked = 0;
        for c in (0..coarse.num_cells()).filter(|c| !region.contains(c)) {
            let f = fine.find_cell(&coarse.cell(c).key).unwrap();
            let (a, b) = (v.local(c), p.local(f));
            assert!(a.hess.sub(&b.hess).frobenius() < 1e-9);
            assert!((a.eval(coarse.centroid(c)) - b.eval(coarse.centroid(c))).abs() < 1e-12);
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn prolongation_rejects_non_refinements() {
        let (coarse, fine) = random_pair(10);
        let v = MorleyFunction::zero(fine.clone());
        assert!(prolong_by_averaging(&v, &coarse).is_err());
        assert!(restrict_to_coarse(&MorleyFunction::zero(coarse.clone()), &fine).is_err());
    }

    #[test]
    fn kernel_check_linear_and_inadmissible() {
        let p1 = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let p2 = [[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let lin = Quadratic { center: [0.0, 0.0], value: 0.5, grad: [1.0, -3.0], hess: Sym2::ZERO };
        assert!(kernel_check((&p1, &lin), (&p2, &lin.recentered([0.7, 0.7])), 1e-12).unwrap());
        // two linears agreeing at the shared vertices but with different normal slopes
        let other = Quadratic { center: [0.0, 0.0], value: 0.5, grad: [2.0, -2.0], hess: Sym2::ZERO };
        assert!(matches!(kernel_check((&p1, &lin), (&p2, &other), 1e-12), Err(AfemError::NotInSpace(_))));
        // admissible but curved
        let curved = Quadratic { center: [0.0, 0.0], value: 0.0, grad: [0.0, 0.0], hess: Sym2::new(1.0, 0.0, 0.0) };
        assert!(!kernel_check((&p1, &curved), (&p2, &curved), 1e-12).unwrap());
        let far = [[5.0, 5.0], [6.0, 5.0], [5.0, 6.0]];
        assert!(kernel_check((&p1, &lin), (&far, &lin), 1e-12).is_err());
    }

    #[test]
    fn kernel_check_on_random_admissible_pairs() {
        // unknowns: two affine functions (a0 + a1 x + a2 y). Constraints: equal
        // values at the two shared vertices and equal mean normal derivative.
        // Every null-space vector must be one global linear polynomial.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let a: Point = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let b: Point = [a[0] + rng.gen_range(0.5..1.5), a[1] + rng.gen_range(-0.5..0.5)];
            let d = sub(b, a);
            let n = [d[1], -d[0]];
            let (t1, t2) = (rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0));
            let m = midpoint(a, b);
            let p1 = [a, b, [m[0] - t1 * n[0], m[1] - t1 * n[1]]];
            let p2 = [b, a, [m[0] + t2 * n[0], m[1] + t2 * n[1]]];
            let mut c = DMatrix::<f64>::zeros(3, 6);
            for (row, p) in [a, b].iter().enumerate() {
                let r = [1.0, p[0], p[1], -1.0, -p[0], -p[1]];
                for j in 0..6 {
                    c[(row, j)] = r[j];
                }
            }
            let r = [0.0, n[0], n[1], 0.0, -n[0], -n[1]];
            for j in 0..6 {
                c[(2, j)] = r[j];
            }
            // null space: eigenvectors of CᵀC with zero eigenvalue
            let eig = (c.transpose() * &c).symmetric_eigen();
            let mut x = DVector::<f64>::zeros(6);
            let mut dim = 0;
            for k in 0..6 {
                if eig.eigenvalues[k].abs() < 1e-10 {
                    x += eig.eigenvectors.column(k) * rng.gen_range(-1.0..1.0);
                    dim += 1;
                }
            }
            assert_eq!(dim, 3);
            assert!((&c * &x).norm() < 1e-12);
            let q1 = Quadratic { center: [0.0, 0.0], value: x[0], grad: [x[1], x[2]], hess: Sym2::ZERO };
            let q2 = Quadratic { center: [0.0, 0.0], value: x[3], grad: [x[4], x[5]], hess: Sym2::ZERO };
            assert!(kernel_check((&p1, &q1), (&p2, &q2), 1e-12).unwrap());
        }
    }

    #[test]
    fn piecewise_transfer_matches_ancestors() {
        let (coarse, fine) = random_pair(13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let v = random_morley(&coarse, &mut rng);
        let t = v.piecewise().transfer_to(&fine).unwrap();
        let anc = fine.ancestor_map(&coarse).unwrap();
        for f in 0..fine.num_cells() {
            let x = fine.centroid(f);
            assert!((t.piece(f).eval(x) - v.local(anc[f]).eval(x)).abs() < 1e-12);
        }
        let _: &PiecewiseQuadratic = &t;
    }
}
