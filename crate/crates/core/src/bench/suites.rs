//! Verification suites: the transfer-operator identities, the empirical
//! constants of the convergence analysis and the inline checks on
//! adaptive runs.

use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::problems::ProblemSpec;
use super::reference::{reference_solution, ReferenceConfig, Truth};
use super::report::{max_over_median, Check, CheckKind, SuiteReport};
use crate::adapt::{anfem, bulk_reached, doerfler_mark, marked_vs_refined, AdaptiveConfig, AdaptiveRun, MarkingConfig};
use crate::element::{
    interpolate_canonical, kernel_check, local_dofs, restrict_to_coarse, MorleyFunction, PiecewiseQuadratic,
    ScalarField, SmoothField,
};
use crate::error::{AfemError, Result};
use crate::estimator::{indicators_piecewise, residual, BoundaryJumps, IndicatorField, TestFunction};
use crate::geometry::{dot, edge_points, sub, triangle_points_deg8, Point, Quadratic, Sym2};
use crate::mesh::Triangulation;
use crate::system::{assemble, bilinear, bilinear_smooth, load_functional, solve, PlateMaterial};

/// Tolerance for the identities, relative to a Cauchy–Schwarz scale.
pub const IDENTITY_TOL: f64 = 1e-9;
/// max/median bound for measured ratios.
pub const RATIO_FACTOR: f64 = 3.0;
/// max/median bound for interpolation and continuity constants.
pub const CONSTANT_FACTOR: f64 = 2.0;

#[derive(Clone, Copy, Debug)]
pub struct SuiteConfig {
    /// Random inputs per mesh or mesh pair.
    pub samples: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig { samples: 20, seed: 2024 }
    }
}

/// `Σ_i a_i sin(k_i·x + φ_i)`, a smooth test function with no boundary
/// conditions.
#[derive(Clone, Debug)]
pub struct TrigField {
    pub terms: Vec<(f64, Point, f64)>,
}

impl TrigField {
    pub fn random(rng: &mut impl Rng) -> TrigField {
        let terms = (0..3)
            .map(|_| {
                let k = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
                (rng.gen_range(-1.0..1.0), k, rng.gen_range(0.0..6.3))
            })
            .collect();
        TrigField { terms }
    }
}

impl ScalarField for TrigField {
    fn value(&self, x: Point) -> f64 {
        self.terms.iter().map(|(a, k, p)| a * (dot(*k, x) + p).sin()).sum()
    }
}

impl SmoothField for TrigField {
    fn gradient(&self, x: Point) -> Point {
        self.terms.iter().fold([0.0, 0.0], |g, (a, k, p)| {
            let c = a * (dot(*k, x) + p).cos();
            [g[0] + c * k[0], g[1] + c * k[1]]
        })
    }

    fn hessian(&self, x: Point) -> Sym2 {
        self.terms.iter().fold(Sym2::ZERO, |h, (a, k, p)| {
            let s = -a * (dot(*k, x) + p).sin();
            h.add(&Sym2::new(s * k[0] * k[0], s * k[0] * k[1], s * k[1] * k[1]))
        })
    }
}

pub fn random_morley(mesh: &Arc<Triangulation>, rng: &mut impl Rng) -> MorleyFunction {
    let n = mesh.num_vertices() + mesh.num_edges();
    let coeffs = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    MorleyFunction::from_coeffs(mesh.clone(), coeffs).expect("length matches").with_clamped_bc()
}

pub fn random_piecewise(mesh: &Arc<Triangulation>, rng: &mut impl Rng) -> PiecewiseQuadratic {
    let pieces = (0..mesh.num_cells())
        .map(|c| Quadratic {
            center: mesh.centroid(c),
            value: rng.gen_range(-1.0..1.0),
            grad: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            hess: Sym2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
        })
        .collect();
    PiecewiseQuadratic::new(mesh.clone(), pieces).expect("one piece per cell")
}

fn ratio(x: f64, scale: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if scale > 0.0 {
        x.abs() / scale
    } else {
        f64::INFINITY
    }
}

fn norm_c(material: &PlateMaterial, v: &PiecewiseQuadratic) -> f64 {
    bilinear(material, v, v).expect("same mesh").max(0.0).sqrt()
}

/// `Res_H(v_H)` relative to `|(f, v_H)| + |a_H(u_H, v_H)|`.
pub fn galerkin_defect(u: &MorleyFunction, f: &dyn ScalarField, material: &PlateMaterial, v: &MorleyFunction) -> Result<f64> {
    let r = residual(u, f, material, TestFunction::Discrete(v))?;
    let scale = load_functional(f, &v.piecewise()).abs() + bilinear(material, &u.piecewise(), &v.piecewise())?.abs();
    Ok(ratio(r, scale))
}

fn vec_norm(v: Point) -> f64 {
    v[0].hypot(v[1])
}

/// `∫_e ∇v ds`: tangential part exact, normal part by the edge rule.
fn edge_gradient_integral(v: &dyn SmoothField, a: Point, b: Point) -> Point {
    let d = sub(b, a);
    let len = vec_norm(d);
    let t = [d[0] / len, d[1] / len];
    let n = [t[1], -t[0]];
    let tan = v.value(b) - v.value(a);
    let nor: f64 = edge_points(a, b).iter().map(|(x, w)| w * dot(v.gradient(*x), n)).sum();
    [tan * t[0] + nor * n[0], tan * t[1] + nor * n[1]]
}

fn quad_edge_integral(q: &Quadratic, a: Point, b: Point) -> Point {
    edge_points(a, b).iter().fold([0.0, 0.0], |s, (x, w)| {
        let g = q.gradient(*x);
        [s[0] + w * g[0], s[1] + w * g[1]]
    })
}

/// `max_e |∫_e ∇_h(v − Π_h v)|`, each edge seen from each side, relative to
/// `max_e h_e max|∇v|`.
pub fn edge_gradient_defect(v: &dyn SmoothField, mesh: &Arc<Triangulation>) -> f64 {
    let pi = interpolate_canonical(v, mesh);
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    for edge in mesh.edges() {
        let (a, b) = (mesh.vertex(edge.vertices[0]), mesh.vertex(edge.vertices[1]));
        let iv = edge_gradient_integral(v, a, b);
        let s = edge.length * edge_points(a, b).iter().map(|(x, _)| vec_norm(v.gradient(*x))).fold(0.0, f64::max)
            + (v.value(b) - v.value(a)).abs();
        scale = scale.max(s);
        for c in edge.cells() {
            let ip = quad_edge_integral(&pi.local(c), a, b);
            worst = worst.max(vec_norm(sub(iv, ip)));
        }
    }
    ratio(worst, scale)
}

/// `a_h(v − Π_h v, w)` relative to `‖Π_h v‖_{𝒞_h} ‖w‖_{𝒞_h}`.
pub fn interpolation_orthogonality_defect(
    v: &dyn SmoothField,
    w: &PiecewiseQuadratic,
    material: &PlateMaterial,
) -> Result<f64> {
    let pi = interpolate_canonical(v, w.mesh()).piecewise();
    let d = bilinear_smooth(material, v, w) - bilinear(material, &pi, w)?;
    Ok(ratio(d, norm_c(material, &pi).max(f64::MIN_POSITIVE) * norm_c(material, w)))
}

/// `∫_e ∇_h(v_h − I_H v_h)` on every coarse edge, from each coarse side,
/// relative to the largest sum of the magnitudes of the parts.
pub fn restriction_edge_defect(v_h: &MorleyFunction, coarse: &Arc<Triangulation>) -> Result<f64> {
    let fine = v_h.mesh();
    let anc = fine.ancestor_map(coarse)?;
    let ih = restrict_to_coarse(v_h, coarse)?;
    let vmap = coarse.vertex_map_into(fine);
    let index = fine.vertex_bits_index();
    let (mut worst, mut scale_max) = (0.0f64, 0.0f64);
    for (ce, edge) in coarse.edges().iter().enumerate() {
        let (a, b) = (edge.vertices[0], edge.vertices[1]);
        let subs = fine.sub_edges(vmap[a].expect("nested"), vmap[b].expect("nested"), &index)?;
        for k in coarse.edge(ce).cells() {
            let coarse_int = quad_edge_integral(&ih.local(k), coarse.vertex(a), coarse.vertex(b));
            let mut fine_int = [0.0, 0.0];
            let mut scale = vec_norm(coarse_int);
            for &fe in &subs {
                let fedge = fine.edge(fe);
                let side = fedge.cells().find(|&fc| anc[fc] == k).expect("sub-edge lies on the coarse cell");
                let part = quad_edge_integral(
                    &v_h.local(side),
                    fine.vertex(fedge.vertices[0]),
                    fine.vertex(fedge.vertices[1]),
                );
                fine_int = [fine_int[0] + part[0], fine_int[1] + part[1]];
                scale += vec_norm(part);
            }
            worst = worst.max(vec_norm(sub(fine_int, coarse_int)));
            scale_max = scale_max.max(scale);
        }
    }
    Ok(ratio(worst, scale_max))
}

/// `a_h(v_H, v_h − I_H v_h)` relative to `‖v_H‖ ‖v_h − I_H v_h‖`.
pub fn restriction_orthogonality_defect(
    v_coarse: &MorleyFunction,
    v_h: &MorleyFunction,
    material: &PlateMaterial,
) -> Result<f64> {
    let fine = v_h.mesh();
    let ih = restrict_to_coarse(v_h, v_coarse.mesh())?;
    let w = v_h.piecewise().sub(&ih.piecewise().transfer_to(fine)?)?;
    let vc = v_coarse.piecewise().transfer_to(fine)?;
    let d = bilinear(material, &vc, &w)?;
    Ok(ratio(d, norm_c(material, &vc) * norm_c(material, &w)))
}

/// `I_H v_h = v_h` on the elements that were not refined, compared through
/// the six local DOFs.
pub fn restriction_locality_defect(v_h: &MorleyFunction, coarse: &Arc<Triangulation>) -> Result<f64> {
    let fine = v_h.mesh();
    let ih = restrict_to_coarse(v_h, coarse)?;
    let mut worst = 0.0f64;
    for k in 0..coarse.num_cells() {
        if let Some(fk) = fine.find_cell(&coarse.cell(k).key) {
            let p = coarse.cell_points(k);
            let a = local_dofs(&p, &ih.local(k));
            let b = local_dofs(&p, &v_h.local(fk));
            let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let d = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            worst = worst.max(ratio(d, scale));
        }
    }
    Ok(worst)
}

/// The quasi-orthogonality identity for one test function `v_h`:
/// `a_h(u_h − u_H, v_h) = (f, (I − I_H)v_h) − a_h(u_H, (I − I_H)v_h)` with the
/// last term zero. Returns the defects of the identity (relative to
/// `‖u_h − u_H‖ ‖v_h‖`) and of the vanishing term (relative to
/// `‖u_H‖ ‖(I − I_H)v_h‖`).
pub fn quasi_orthogonality_identity(
    u_coarse: &MorleyFunction,
    u_h: &MorleyFunction,
    f: &dyn ScalarField,
    material: &PlateMaterial,
    v_h: &MorleyFunction,
) -> Result<(f64, f64)> {
    let fine = u_h.mesh();
    let coarse = u_coarse.mesh();
    let uc = u_coarse.piecewise().transfer_to(fine)?;
    let diff = u_h.piecewise().sub(&uc)?;
    let vh = v_h.piecewise();
    let ih = restrict_to_coarse(v_h, coarse)?;
    let w = vh.sub(&ih.piecewise().transfer_to(fine)?)?;
    let lhs = bilinear(material, &diff, &vh)?;
    let f_part = load_functional(f, &vh) - load_functional(f, &ih.piecewise());
    let a_part = bilinear(material, &uc, &w)?;
    let rhs = f_part - a_part;
    let id = ratio(lhs - rhs, norm_c(material, &diff) * norm_c(material, &vh));
    let zero = ratio(a_part, norm_c(material, &uc) * norm_c(material, &w));
    Ok((id, zero))
}

fn solve_on(problem: &ProblemSpec, mesh: &Arc<Triangulation>) -> Result<MorleyFunction> {
    solve(&assemble(mesh, &problem.material, problem.load())?)
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Galerkin identity, the Π_h and I_H identities, locality of I_H and the
/// quasi-orthogonality identity, on every mesh (pair) of a nested sequence.
pub fn identity_suite(problem: &ProblemSpec, meshes: &[Arc<Triangulation>], cfg: &SuiteConfig) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("verify:identity", &problem.name);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = &problem.material;
    let f = problem.load();
    let solutions: Vec<MorleyFunction> = meshes.iter().map(|mesh| solve_on(problem, mesh)).collect::<Result<_>>()?;
    for (mesh, u) in meshes.iter().zip(&solutions) {
        let (mut gal, mut e32a, mut e32ab) = (0.0f64, 0.0f64, 0.0f64);
        for s in 0..cfg.samples {
            gal = gal.max(galerkin_defect(u, f, m, &random_morley(mesh, &mut rng))?);
            let v = TrigField::random(&mut rng);
            let w = random_piecewise(mesh, &mut rng);
            if s < 3 {
                e32a = e32a.max(edge_gradient_defect(&v, mesh));
            }
            e32ab = e32ab.max(interpolation_orthogonality_defect(&v, &w, m)?);
        }
        if let Some(ex) = problem.exact() {
            e32a = e32a.max(edge_gradient_defect(ex, mesh));
            e32ab = e32ab.max(interpolation_orthogonality_defect(ex, &random_piecewise(mesh, &mut rng), m)?);
        }
        rep.record("galerkin", gal);
        rep.record("interp_edge_gradient", e32a);
        rep.record("interp_orthogonality", e32ab);
    }
    for (l, pair) in meshes.windows(2).enumerate() {
        let (coarse, fine) = (&pair[0], &pair[1]);
        let (uc, uf) = (&solutions[l], &solutions[l + 1]);
        let (mut e32b, mut e32bb, mut e34b, mut e39, mut e39z) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for s in 0..cfg.samples {
            let vh = random_morley(fine, &mut rng);
            let vc = random_morley(coarse, &mut rng);
            if s < 3 {
                e32b = e32b.max(restriction_edge_defect(&vh, coarse)?);
                e34b = e34b.max(restriction_locality_defect(&vh, coarse)?);
            }
            e32bb = e32bb.max(restriction_orthogonality_defect(&vc, &vh, m)?);
            let (a, b) = quasi_orthogonality_identity(uc, uf, f, m, &vh)?;
            e39 = e39.max(a);
            e39z = e39z.max(b);
        }
        rep.record("restriction_edge_gradient", e32b);
        rep.record("restriction_orthogonality", e32bb);
        rep.record("restriction_locality", e34b);
        rep.record("quasi_orthogonality_identity", e39);
        rep.record("quasi_orthogonality_zero_term", e39z);
    }
    let levels = format!("{} meshes, {} samples each", meshes.len(), cfg.samples);
    for (name, key) in [
        ("galerkin identity Res_H(v_H) = 0", "galerkin"),
        ("edge integrals of grad(v - Pi_h v) vanish", "interp_edge_gradient"),
        ("a_h(v - Pi_h v, w_h) = 0", "interp_orthogonality"),
        ("edge integrals of grad(v_h - I_H v_h) vanish", "restriction_edge_gradient"),
        ("a_h(v_H, v_h - I_H v_h) = 0", "restriction_orthogonality"),
        ("I_H v_h = v_h on unrefined elements", "restriction_locality"),
        ("quasi-orthogonality identity", "quasi_orthogonality_identity"),
        ("a_h(u_H, (I - I_H) v_h) = 0", "quasi_orthogonality_zero_term"),
    ] {
        let v = max_of(rep.measured.get(key).map(|v| v.as_slice()).unwrap_or(&[]));
        rep.push(Check::at_most(name, CheckKind::Identity, v, IDENTITY_TOL, levels.clone()));
    }
    Ok(rep)
}

fn l2_deg8(mesh: &Triangulation, c: usize, g: impl Fn(Point) -> f64) -> f64 {
    triangle_points_deg8(&mesh.cell_points(c)).iter().map(|(x, w)| w * g(*x).powi(2)).sum::<f64>().sqrt()
}

/// `max_K ‖v − Π_h v‖_{L²(K)} / (h_K² |v|_{H²(K)})`.
pub fn interpolation_constant(v: &dyn SmoothField, mesh: &Arc<Triangulation>) -> f64 {
    let pi = interpolate_canonical(v, mesh);
    (0..mesh.num_cells())
        .map(|c| {
            let q = pi.local(c);
            let num = l2_deg8(mesh, c, |x| v.value(x) - q.eval(x));
            let semi = triangle_points_deg8(&mesh.cell_points(c))
                .iter()
                .map(|(x, w)| w * v.hessian(*x).ddot(&v.hessian(*x)))
                .sum::<f64>()
                .sqrt();
            if semi > 1e-12 {
                num / (mesh.area(c) * semi)
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// `max_K ‖I_H v_h − v_h‖_{L²(K)} / (h_K² ‖∇²_h v_h‖_{L²(K)})` over the
/// refined coarse elements.
pub fn restriction_constant(v_h: &MorleyFunction, coarse: &Arc<Triangulation>) -> Result<f64> {
    let fine = v_h.mesh();
    let anc = fine.ancestor_map(coarse)?;
    let ih = restrict_to_coarse(v_h, coarse)?;
    let mut num = vec![0.0; coarse.num_cells()];
    let mut den = vec![0.0; coarse.num_cells()];
    for fc in 0..fine.num_cells() {
        let k = anc[fc];
        let (a, b) = (ih.local(k), v_h.local(fc));
        num[k] += l2_deg8(fine, fc, |x| a.eval(x) - b.eval(x)).powi(2);
        den[k] += fine.area(fc) * b.hess.ddot(&b.hess);
    }
    let refined = Triangulation::refined_cells(coarse, fine)?;
    Ok(refined
        .iter()
        .filter(|&&k| den[k] > 0.0)
        .map(|&k| num[k].sqrt() / (coarse.area(k) * den[k].sqrt()))
        .fold(0.0, f64::max))
}

/// The identities of the interpolation operators, their approximation
/// constants across levels, and the kernel lemma on adjacent pairs.
pub fn interpolation_suite(problem: &ProblemSpec, meshes: &[Arc<Triangulation>], cfg: &SuiteConfig) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("verify:interpolation", &problem.name);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = &problem.material;
    let fixed = TrigField::random(&mut rng);
    let (mut e32a, mut e32ab, mut e32b, mut e32bb) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for mesh in meshes {
        for _ in 0..cfg.samples.min(5) {
            let v = TrigField::random(&mut rng);
            e32a = e32a.max(edge_gradient_defect(&v, mesh));
            e32ab = e32ab.max(interpolation_orthogonality_defect(&v, &random_piecewise(mesh, &mut rng), m)?);
        }
        let c = match problem.exact() {
            Some(ex) => interpolation_constant(ex, mesh),
            None => interpolation_constant(&fixed, mesh),
        };
        rep.record("interpolation_constant", c);
    }
    for pair in meshes.windows(2) {
        let (coarse, fine) = (&pair[0], &pair[1]);
        let mut c = 0.0f64;
        for _ in 0..cfg.samples.min(5) {
            let vh = random_morley(fine, &mut rng);
            e32b = e32b.max(restriction_edge_defect(&vh, coarse)?);
            e32bb = e32bb.max(restriction_orthogonality_defect(&random_morley(coarse, &mut rng), &vh, m)?);
            c = c.max(restriction_constant(&vh, coarse)?);
        }
        rep.record("restriction_constant", c);
    }
    let detail = format!("{} meshes", meshes.len());
    rep.push(Check::at_most("edge integrals of grad(v - Pi_h v) vanish", CheckKind::Identity, e32a, 1e-12, detail.clone()));
    rep.push(Check::at_most("a_h(v - Pi_h v, w_h) = 0", CheckKind::Identity, e32ab, 1e-10, detail.clone()));
    rep.push(Check::at_most("edge integrals of grad(v_h - I_H v_h) vanish", CheckKind::Identity, e32b, IDENTITY_TOL, detail.clone()));
    rep.push(Check::at_most("a_h(v_H, v_h - I_H v_h) = 0", CheckKind::Identity, e32bb, IDENTITY_TOL, detail.clone()));
    for key in ["interpolation_constant", "restriction_constant"] {
        let v = rep.measured.get(key).cloned().unwrap_or_default();
        rep.push(Check::at_most(
            &format!("{key} max/median"),
            CheckKind::Bound,
            max_over_median(&v),
            CONSTANT_FACTOR,
            format!("{} levels", v.len()),
        ));
    }
    let (ok, detail) = kernel_lemma_check(meshes.last().expect("at least one mesh"), cfg.samples, &mut rng)?;
    rep.push(Check::holds("piecewise linear Morley functions on edge pairs are linear", ok, detail));
    Ok(rep)
}

/// On random interior edges: a global P1 function passes the kernel check,
/// a global quadratic with non-zero Hessian fails it, and a piecewise linear
/// function with a normal kink is rejected as not in the Morley space.
pub fn kernel_lemma_check(mesh: &Triangulation, samples: usize, rng: &mut impl Rng) -> Result<(bool, String)> {
    let interior: Vec<usize> = (0..mesh.num_edges()).filter(|&e| !mesh.edge(e).is_boundary()).collect();
    if interior.is_empty() {
        return Ok((true, "no interior edges".into()));
    }
    let mut failures = 0;
    for _ in 0..samples {
        let e = interior[rng.gen_range(0..interior.len())];
        let edge = mesh.edge(e);
        let (k1, k2) = (edge.minus, edge.plus.expect("interior").0);
        let (p1, p2) = (mesh.cell_points(k1), mesh.cell_points(k2));
        let lin = Quadratic {
            center: mesh.centroid(k1),
            value: rng.gen_range(-1.0..1.0),
            grad: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            hess: Sym2::ZERO,
        };
        let quad = Quadratic { hess: Sym2::new(1.0, rng.gen_range(-1.0..1.0), 0.5), ..lin };
        let a = mesh.vertex(edge.vertices[0]);
        let kink = Quadratic {
            center: a,
            value: lin.eval(a),
            grad: [lin.grad[0] + 0.5 * edge.normal[0], lin.grad[1] + 0.5 * edge.normal[1]],
            hess: Sym2::ZERO,
        };
        let ok = kernel_check((&p1, &lin), (&p2, &lin.recentered(mesh.centroid(k2))), 1e-10)?
            && !kernel_check((&p1, &quad), (&p2, &quad.recentered(mesh.centroid(k2))), 1e-10)?
            && kernel_check((&p1, &lin), (&p2, &kink), 1e-10).is_err();
        if !ok {
            failures += 1;
        }
    }
    Ok((failures == 0, format!("{samples} edge pairs, {failures} failures")))
}

/// Solutions on every mesh of a nested sequence.
pub fn solve_sequence(problem: &ProblemSpec, meshes: &[Arc<Triangulation>]) -> Result<Vec<MorleyFunction>> {
    meshes.iter().map(|m| solve_on(problem, m)).collect()
}

/// Ratio `|a_h(u_h − u_H, u − u_h)| / Σ_{K∈𝒯_H∖𝒯_h} h_K²‖f‖_{L²(K)}‖∇²_h(u − u_h)‖_{L²(K)}`
/// per consecutive pair, and the exact identity behind it.
pub fn quasi_orthogonality_suite(
    problem: &ProblemSpec,
    meshes: &[Arc<Triangulation>],
    truth: Truth<'_>,
    cfg: &SuiteConfig,
) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("verify:quasi-orthogonality", &problem.name);
    rep.reference_based = truth.is_reference();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = &problem.material;
    let f = problem.load();
    let sols = solve_sequence(problem, meshes)?;
    let mut id = 0.0f64;
    let mut zero = 0.0f64;
    let mut ratios = Vec::new();
    for (l, pair) in meshes.windows(2).enumerate() {
        let (coarse, fine) = (&pair[0], &pair[1]);
        let (uc, uf) = (&sols[l], &sols[l + 1]);
        for _ in 0..cfg.samples {
            let (a, b) = quasi_orthogonality_identity(uc, uf, f, m, &random_morley(fine, &mut rng))?;
            id = id.max(a);
            zero = zero.max(b);
        }
        if let Some(ex) = problem.exact() {
            // the test function from the proof, Π_h(u − u_h)
            let pi = interpolate_canonical(ex, fine).sub(uf)?.with_clamped_bc();
            let (a, b) = quasi_orthogonality_identity(uc, uf, f, m, &pi)?;
            id = id.max(a);
            zero = zero.max(b);
        }
        let uh = uf.piecewise();
        let w = uh.sub(&uc.piecewise().transfer_to(fine)?)?;
        let lhs = truth.cross(&w, &uh, m)?.abs();
        let herr = truth.hessian_error_on(&uh, coarse)?;
        let data = indicators_piecewise(&uc.piecewise(), f, BoundaryJumps::Zero);
        let refined = Triangulation::refined_cells(coarse, fine)?;
        let bound: f64 = refined.iter().map(|&k| data.volume[k] * herr[k]).sum();
        if bound > 0.0 {
            ratios.push(lhs / bound);
        } else if lhs > 0.0 {
            ratios.push(f64::INFINITY);
        }
        rep.record("lhs", lhs);
        rep.record("bound", bound);
    }
    rep.measured.insert("ratio".into(), ratios.clone());
    rep.push(Check::at_most("quasi-orthogonality identity", CheckKind::Identity, id, IDENTITY_TOL, format!("{} samples per pair", cfg.samples)));
    rep.push(Check::at_most("a_h(u_H, (I - I_H) v_h) = 0", CheckKind::Identity, zero, IDENTITY_TOL, ""));
    rep.push(Check::at_most(
        "quasi-orthogonality ratio max/median",
        CheckKind::Bound,
        max_over_median(&ratios),
        RATIO_FACTOR,
        format!("{} pairs", ratios.len()),
    ));
    Ok(rep)
}

/// `‖u_h − u_H‖²_{𝒞_h} / η²(u_H, 𝓜_{H,h})` for one pair; `None` when both
/// vanish.
pub fn discrete_reliability_ratio(
    problem: &ProblemSpec,
    u_coarse: &MorleyFunction,
    u_h: &MorleyFunction,
    mode: BoundaryJumps,
) -> Result<Option<f64>> {
    let coarse = u_coarse.mesh();
    let fine = u_h.mesh();
    let d = u_h.piecewise().sub(&u_coarse.piecewise().transfer_to(fine)?)?;
    let num = bilinear(&problem.material, &d, &d)?.max(0.0);
    let region = Triangulation::refined_region(coarse, fine)?;
    let field = indicators_piecewise(&u_coarse.piecewise(), problem.load(), mode);
    let den = field.eta_sq_on(&region);
    Ok(match (num > 0.0, den > 0.0) {
        (false, _) => None,
        (true, true) => Some(num / den),
        (true, false) => Some(f64::INFINITY),
    })
}

/// Nested meshes built by bisecting a random fraction of the elements at
/// every level, starting from `start_refinements` uniform refinements.
pub fn random_marking_sequence(
    initial: &Triangulation,
    start_refinements: usize,
    levels: usize,
    fraction: f64,
    seed: u64,
) -> Result<Vec<Arc<Triangulation>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mesh = initial.clone();
    for _ in 0..start_refinements {
        mesh = mesh.uniform_refine()?;
    }
    let mut out = vec![Arc::new(mesh)];
    for _ in 0..levels {
        let cur = out.last().expect("nonempty");
        let n = cur.num_cells();
        let count = ((fraction * n as f64).round() as usize).clamp(1, n);
        let mut ids: Vec<usize> = (0..n).collect();
        for i in 0..count {
            let j = rng.gen_range(i..n);
            ids.swap(i, j);
        }
        out.push(Arc::new(cur.bisect(&ids[..count])?));
    }
    Ok(out)
}

/// Discrete reliability ratios over nested sequences from random markings.
pub fn discrete_reliability_suite(
    problem: &ProblemSpec,
    sequences: &[Vec<Arc<Triangulation>>],
    mode: BoundaryJumps,
) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("verify:discrete-reliability", &problem.name);
    let mut ratios = Vec::new();
    for seq in sequences {
        let sols = solve_sequence(problem, seq)?;
        for pair in sols.windows(2) {
            if let Some(r) = discrete_reliability_ratio(problem, &pair[0], &pair[1], mode)? {
                ratios.push(r);
            }
        }
    }
    // identical meshes: 0/0, trivially satisfied
    let first = &sequences[0][0];
    let u = solve_on(problem, first)?;
    let same = discrete_reliability_ratio(problem, &u, &u, mode)?;
    rep.push(Check::holds("identical meshes give 0/0", same.is_none(), "guarded"));
    // uniform refinement marks the whole coarse mesh
    let uni = Arc::new(first.uniform_refine()?);
    let region = Triangulation::refined_region(first, &uni)?;
    rep.push(Check::holds("uniform refinement region is the whole mesh", region.len() == first.num_cells(), ""));
    let finite = ratios.iter().all(|r| r.is_finite());
    rep.push(Check::holds("no difference without estimator support", finite, ""));
    rep.measured.insert("ratio".into(), ratios.clone());
    rep.push(Check::at_most(
        "discrete reliability ratio max/median",
        CheckKind::Bound,
        max_over_median(&ratios),
        RATIO_FACTOR,
        format!("{} pairs", ratios.len()),
    ));
    Ok(rep)
}

/// Per-step estimator reduction for the transferred coarse solution, the
/// mesh-size reduction of the data term, and the continuity constant of
/// the estimator, on consecutive meshes of an adaptive run.
pub fn estimator_reduction_suite(problem: &ProblemSpec, run: &AdaptiveRun, mode: BoundaryJumps) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("verify:estimator", &problem.name);
    let f = problem.load();
    let factor = std::f64::consts::FRAC_1_SQRT_2;
    let mut local_ok = true;
    let mut global_ok = true;
    let mut mesh_ok = true;
    let mut mesh_local_ok = true;
    let mut worst_local = 0.0f64;
    let mut continuity = Vec::new();
    for k in 0..run.meshes.len().saturating_sub(1) {
        let (coarse, fine) = (&run.meshes[k], &run.meshes[k + 1]);
        let uc = &run.solutions[k];
        let coarse_field: &IndicatorField = &run.fields[k];
        let moved = uc.piecewise().transfer_to(fine)?;
        let fine_field = indicators_piecewise(&moved, f, mode);
        let anc = fine.ancestor_map(coarse)?;
        let refined = Triangulation::refined_cells(coarse, fine)?;
        let mut child_eta = vec![0.0; coarse.num_cells()];
        let mut child_f = vec![0.0; coarse.num_cells()];
        let mut min_depth = vec![u16::MAX; coarse.num_cells()];
        for fc in 0..fine.num_cells() {
            let c = anc[fc];
            child_eta[c] += fine_field.eta_sq[fc];
            child_f[c] += fine_field.fterm_sq[fc];
            let d = fine.cell(fc).generation() - coarse.cell(c).generation();
            min_depth[c] = min_depth[c].min(d);
        }
        for &c in &refined {
            let bound = factor * coarse_field.eta_sq[c];
            if child_eta[c] > bound * (1.0 + 1e-12) {
                local_ok = false;
            }
            if bound > 0.0 {
                worst_local = worst_local.max(child_eta[c] / coarse_field.eta_sq[c]);
            }
            let rho_k = 0.25f64.powi(i32::from(min_depth[c]));
            if child_f[c] > rho_k * coarse_field.fterm_sq[c] * (1.0 + 1e-12) {
                mesh_local_ok = false;
            }
        }
        let total_h = fine_field.eta_sq_total();
        let total_big = coarse_field.eta_sq_total();
        let refined_eta = coarse_field.eta_sq_on(&refined);
        if total_h > total_big - (1.0 - factor) * refined_eta + 1e-12 * total_big {
            global_ok = false;
        }
        let f_h = fine_field.fterm_sq_total();
        let f_big = coarse_field.fterm_sq_total();
        let f_ref: f64 = refined.iter().map(|&c| coarse_field.fterm_sq[c]).sum();
        if f_h > f_big - 0.75 * f_ref + 1e-12 * f_big {
            mesh_ok = false;
        }
        rep.record("eta_sq_transferred", total_h);
        rep.record("eta_sq_coarse", total_big);
        continuity.push(continuity_constant(&run.solutions[k + 1], &moved, &run.fields[k + 1], &fine_field)?);
    }
    let steps = format!("{} steps", run.meshes.len().saturating_sub(1));
    rep.push(Check::holds("children: sum eta^2 <= 2^(-1/2) eta_K^2", local_ok, format!("worst ratio {worst_local:.4}")));
    rep.push(Check::holds("eta^2(u_H,T_h) <= eta^2(u_H,T_H) - (1-2^(-1/2)) eta^2(u_H,T_H\\T_h)", global_ok, steps.clone()));
    rep.push(Check::holds("mesh-size reduction with rho = 3/4", mesh_ok, steps.clone()));
    rep.push(Check::holds("mesh-size reduction with rho = 1 - 4^(-levels) per element", mesh_local_ok, steps));
    let cont: Vec<f64> = continuity.into_iter().flatten().collect();
    rep.measured.insert("continuity_constant".into(), cont.clone());
    rep.push(Check::at_most(
        "estimator continuity constant max/median",
        CheckKind::Bound,
        max_over_median(&cont),
        CONSTANT_FACTOR,
        format!("{} pairs", cont.len()),
    ));
    Ok(rep)
}

/// `max_K |η_K(u_h) − η_K(u_H)| / ‖∇²_h(u_h − u_H)‖_{L²(ω_K)}` on the fine
/// mesh, `ω_K` the edge patch; `None` if the two functions coincide.
pub fn continuity_constant(
    u_h: &MorleyFunction,
    moved: &PiecewiseQuadratic,
    field_h: &IndicatorField,
    field_moved: &IndicatorField,
) -> Result<Option<f64>> {
    let mesh = u_h.mesh();
    let d = u_h.piecewise().sub(moved)?;
    let cell_sq: Vec<f64> = (0..mesh.num_cells()).map(|c| mesh.area(c) * d.hessian(c).ddot(&d.hessian(c))).collect();
    let scale = cell_sq.iter().sum::<f64>().sqrt();
    if scale == 0.0 {
        return Ok(None);
    }
    let mut worst = 0.0f64;
    for c in 0..mesh.num_cells() {
        let patch: f64 = mesh.element_patch(c).iter().map(|&k| cell_sq[k]).sum::<f64>().sqrt();
        let num = (field_h.eta[c] - field_moved.eta[c]).abs();
        if patch > 1e-12 * scale {
            worst = worst.max(num / patch);
        }
    }
    Ok(Some(worst))
}

/// Log grid `10^{j/4}`, `j = −12..=12`.
pub fn gamma_grid() -> Vec<f64> {
    (-12..=12).map(|j| 10f64.powf(j as f64 / 4.0)).collect()
}

#[derive(Clone, Debug)]
pub struct ContractionResult {
    pub gamma: f64,
    pub factors: Vec<f64>,
    pub mean_factor: f64,
}

/// For each `γ₁` on the grid, whether `‖u − u_k‖² + γ₁ η̃_k²` decreases
/// strictly for all `k ≥ 1`; returns the passing `γ₁` with the smallest
/// mean step factor, or `None`.
pub fn contraction_search(errors: &[f64], eta_tilde: &[f64]) -> (Option<ContractionResult>, Vec<ContractionResult>) {
    let mut all = Vec::new();
    for gamma in gamma_grid() {
        let total: Vec<f64> = errors.iter().zip(eta_tilde).map(|(e, t)| e * e + gamma * t * t).collect();
        let factors: Vec<f64> = total.windows(2).map(|w| w[1] / w[0]).collect();
        let mean = factors.iter().sum::<f64>() / factors.len().max(1) as f64;
        all.push(ContractionResult { gamma, factors, mean_factor: mean });
    }
    let best = all
        .iter()
        .filter(|r| !r.factors.is_empty() && r.factors.iter().all(|&q| q < 1.0))
        .min_by(|a, b| a.mean_factor.total_cmp(&b.mean_factor))
        .cloned();
    (best, all)
}

/// Contraction of `‖u − u_k‖² + γ₁ η̃_k²` from `k = 1` on.
pub fn contraction_suite(problem: &ProblemSpec, run: &AdaptiveRun, errors: &[f64], max_mean: f64) -> SuiteReport {
    let mut rep = SuiteReport::new("verify:contraction", &problem.name);
    let eta_t: Vec<f64> = run.history.records.iter().map(|r| r.eta_tilde).collect();
    let from = 1.min(errors.len());
    let (best, _) = contraction_search(&errors[from..], &eta_t[from..]);
    match best {
        Some(b) => {
            rep.measured.insert("factors".into(), b.factors.clone());
            rep.measured.insert("gamma1".into(), vec![b.gamma]);
            rep.push(Check::holds("strict decrease for some gamma_1 on the grid", true, format!("gamma_1 = {:.3e}", b.gamma)));
            rep.push(Check::at_most("mean contraction factor", CheckKind::Bound, b.mean_factor, max_mean, format!("{} steps", b.factors.len())));
        }
        None => {
            rep.push(Check::holds("strict decrease for some gamma_1 on the grid", false, "no grid value works"));
        }
    }
    rep
}

/// Conformity, NVB angle bound and area conservation for every mesh.
pub fn mesh_integrity(name: &str, meshes: &[Arc<Triangulation>]) -> SuiteReport {
    let mut rep = SuiteReport::new("verify:mesh", name);
    let Some(first) = meshes.first() else { return rep };
    let bound = first.nvb_min_angle_bound();
    let area0 = first.total_area();
    let mut conform = 0;
    let mut angle = 0;
    let mut worst_area = 0.0f64;
    for m in meshes {
        if m.check_conformity().is_err() {
            conform += 1;
        }
        let a = m.shape_metrics().min_angle_deg;
        if a < bound - 1e-9 {
            angle += 1;
        }
        rep.record("min_angle_deg", a);
        worst_area = worst_area.max((m.total_area() - area0).abs() / area0);
    }
    let n = meshes.len();
    rep.push(Check::holds("conforming", conform == 0, format!("{conform} of {n} meshes fail")));
    rep.push(Check::holds("min angle >= NVB bound", angle == 0, format!("bound {bound:.6} deg, {angle} of {n} below")));
    rep.push(Check::at_most("area conservation", CheckKind::Identity, worst_area, 1e-12, format!("{n} meshes")));
    rep
}

/// Greedy marking against exhaustive search on random small fields.
pub fn marking_suite(cases: usize, max_len: usize, seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("verify:marking", "random-fields");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agree = 0;
    for _ in 0..cases {
        let n = rng.gen_range(1..=max_len);
        let eta: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powi(2) + 1e-3).collect();
        let theta = rng.gen_range(0.05..0.95);
        let greedy = doerfler_mark(&eta, theta)?;
        let best = (0u32..(1 << n))
            .filter(|mask| {
                let picked: Vec<f64> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| eta[i]).collect();
                bulk_reached(&picked, theta, &eta)
            })
            .map(|mask| mask.count_ones() as usize)
            .min()
            .unwrap_or(n);
        if greedy.len() == best {
            agree += 1;
        }
    }
    rep.record("agree", agree as f64);
    rep.push(Check::holds("greedy cardinality is minimal", agree == cases, format!("{agree}/{cases}")));
    Ok(rep)
}

/// `(#𝒯_k − #𝒯_0)/Σ_j #𝓜_j` and its spread over `k ≥ 2`.
pub fn refinement_ratio_suite(problem: &ProblemSpec, run: &AdaptiveRun) -> SuiteReport {
    let mut rep = SuiteReport::new("verify:refinement-ratio", &problem.name);
    let ratios = marked_vs_refined(&run.history);
    rep.measured.insert("ratio".into(), ratios.clone());
    rep.push(Check::holds("ratio >= 1", ratios.iter().all(|&r| r >= 1.0), ""));
    let tail: Vec<f64> = ratios.iter().skip(1).copied().collect();
    let (lo, hi) = tail.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
    let spread = if tail.is_empty() { 1.0 } else { hi / lo };
    rep.push(Check::at_most("max/min over k >= 2", CheckKind::Bound, spread, 3.0, format!("{} values", tail.len())));
    rep
}

pub const SUITE_NAMES: [&str; 10] = [
    "identity",
    "interpolation",
    "quasi-orthogonality",
    "discrete-reliability",
    "estimator",
    "contraction",
    "mesh",
    "marking",
    "refinement-ratio",
    "all",
];

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub theta: f64,
    pub boundary_jumps: BoundaryJumps,
    pub seed: u64,
    pub samples: usize,
    /// Meshes per sequence.
    pub levels: usize,
    /// DOF bound of the adaptive runs the suites inspect.
    pub max_dofs: usize,
    pub reference: ReferenceConfig,
    pub cache_dir: Option<PathBuf>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            theta: 0.3,
            boundary_jumps: BoundaryJumps::Trace,
            seed: 2024,
            samples: 20,
            levels: 6,
            max_dofs: 20_000,
            reference: ReferenceConfig::default(),
            cache_dir: None,
        }
    }
}

fn suite_run(problem: &ProblemSpec, opts: &SuiteOptions) -> Result<AdaptiveRun> {
    let cfg = AdaptiveConfig {
        marking: MarkingConfig::new(opts.theta, 1)?,
        eps: 0.0,
        max_dofs: Some(opts.max_dofs),
        max_iters: Some(200),
        boundary_jumps: opts.boundary_jumps,
        ..Default::default()
    };
    anfem(problem.mesh.clone(), problem.load(), &problem.material, &cfg, problem.exact())
}

fn with_truth<T>(problem: &ProblemSpec, opts: &SuiteOptions, body: impl FnOnce(Truth<'_>) -> Result<T>) -> Result<T> {
    match problem.exact() {
        Some(u) => body(Truth::Exact(u)),
        None => {
            let r = reference_solution(problem, &opts.reference, opts.cache_dir.as_deref())?;
            body(Truth::Reference(&r.solution))
        }
    }
}

/// Runs the suite called `name` (one of [`SUITE_NAMES`]) on `problem`.
pub fn run_suite(name: &str, problem: &ProblemSpec, opts: &SuiteOptions) -> Result<SuiteReport> {
    let cfg = SuiteConfig { samples: opts.samples, seed: opts.seed };
    let levels = opts.levels.max(2);
    match name {
        "identity" => {
            let seq = random_marking_sequence(&problem.mesh, 1, levels - 1, 0.2, opts.seed)?;
            identity_suite(problem, &seq, &cfg)
        }
        "interpolation" => {
            let seq = random_marking_sequence(&problem.mesh, 1, levels - 1, 0.2, opts.seed)?;
            interpolation_suite(problem, &seq, &cfg)
        }
        "quasi-orthogonality" => {
            let run = suite_run(problem, opts)?;
            let n = run.meshes.len().min(levels + 1);
            let meshes = &run.meshes[run.meshes.len() - n..];
            with_truth(problem, opts, |t| quasi_orthogonality_suite(problem, meshes, t, &cfg))
        }
        "discrete-reliability" => {
            let seqs = (0..3)
                .map(|s| random_marking_sequence(&problem.mesh, 2, levels - 1, 0.2, opts.seed + s))
                .collect::<Result<Vec<_>>>()?;
            discrete_reliability_suite(problem, &seqs, opts.boundary_jumps)
        }
        "estimator" => estimator_reduction_suite(problem, &suite_run(problem, opts)?, opts.boundary_jumps),
        "contraction" => {
            let run = suite_run(problem, opts)?;
            let mut rep = with_truth(problem, opts, |t| {
                let errors = run
                    .solutions
                    .iter()
                    .map(|u| t.energy_error(&u.piecewise(), &problem.material))
                    .collect::<Result<Vec<_>>>()?;
                Ok(contraction_suite(problem, &run, &errors, 0.95))
            })?;
            rep.reference_based = problem.exact().is_none();
            Ok(rep)
        }
        "mesh" => Ok(mesh_integrity(&problem.name, &suite_run(problem, opts)?.meshes)),
        "marking" => marking_suite(200, 12, opts.seed),
        "refinement-ratio" => Ok(refinement_ratio_suite(problem, &suite_run(problem, opts)?)),
        "all" => {
            let mut all = SuiteReport::new("verify:all", &problem.name);
            for n in SUITE_NAMES.iter().filter(|n| **n != "all") {
                let mut rep = run_suite(n, problem, opts)?;
                rep.problem = n.to_string();
                all.merge(rep);
            }
            Ok(all)
        }
        _ => Err(AfemError::InvalidParameter(format!("unknown suite {name:?}; known suites: {}", SUITE_NAMES.join(", ")))),
    }
}
