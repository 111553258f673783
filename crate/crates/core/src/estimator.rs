//! Residual a posteriori estimator, oscillation, the modified estimator η̃
//! and the residual functional.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::element::{MorleyFunction, PiecewiseQuadratic, ScalarField, SmoothField};
use crate::error::{AfemError, Result};
use crate::geometry::{triangle_points, triangle_points_deg8, Sym2};
use crate::mesh::Triangulation;
use crate::system::{bilinear, bilinear_smooth, load_functional, PlateMaterial};

/// What a boundary edge contributes to the jump term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryJumps {
    /// The full trace `∇²u_h τ_e`.
    #[default]
    Trace,
    /// Nothing.
    Zero,
}

impl std::str::FromStr for BoundaryJumps {
    type Err = AfemError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trace" => Ok(BoundaryJumps::Trace),
            "zero" => Ok(BoundaryJumps::Zero),
            _ => Err(AfemError::InvalidParameter(format!("boundary jumps must be trace or zero, got {s:?}"))),
        }
    }
}

/// Per-element estimator contributions for one discrete function.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IndicatorField {
    /// `h_K² ‖f‖_{L²(K)}`.
    pub volume: Vec<f64>,
    /// `(Σ_{e⊂∂K} h_K ‖[∇²_h u_h τ_e]‖²_{L²(e)})^{1/2}`.
    pub jump: Vec<f64>,
    /// `η_K = volume + jump`.
    pub eta: Vec<f64>,
    pub eta_sq: Vec<f64>,
    /// `h_K⁴ ‖f − f_K‖²_{L²(K)}`.
    pub osc_sq: Vec<f64>,
    /// `h_K⁴ ‖f‖²_{L²(K)}`.
    pub fterm_sq: Vec<f64>,
}

impl IndicatorField {
    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    /// `Σ_{K∈S} η_K²`.
    pub fn eta_sq_on(&self, subset: &[usize]) -> f64 {
        subset.iter().map(|&k| self.eta_sq[k]).sum()
    }

    pub fn eta_sq_total(&self) -> f64 {
        self.eta_sq.iter().sum()
    }

    pub fn fterm_sq_total(&self) -> f64 {
        self.fterm_sq.iter().sum()
    }

    pub fn osc_sq_total(&self) -> f64 {
        self.osc_sq.iter().sum()
    }

    /// CSV with one row per element.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "element_id,eta_sq,osc_sq,fterm_sq,volume_term,jump_term")?;
        for k in 0..self.len() {
            writeln!(
                w,
                "{k},{:e},{:e},{:e},{:e},{:e}",
                self.eta_sq[k], self.osc_sq[k], self.fterm_sq[k], self.volume[k], self.jump[k]
            )?;
        }
        Ok(())
    }
}

/// `‖f‖²_{L²(K)}` and `‖f − f_K‖²_{L²(K)}`, exact for quartic `f`.
fn data_norms(f: &dyn ScalarField, mesh: &Triangulation, c: usize) -> (f64, f64) {
    let q = triangle_points_deg8(&mesh.cell_points(c));
    let vals: [f64; 25] = std::array::from_fn(|i| f.value(q[i].0));
    let area: f64 = q.iter().map(|p| p.1).sum();
    let mean = q.iter().zip(&vals).map(|(p, v)| p.1 * v).sum::<f64>() / area;
    let norm_sq = q.iter().zip(&vals).map(|(p, v)| p.1 * v * v).sum();
    let dev_sq = q.iter().zip(&vals).map(|(p, v)| p.1 * (v - mean).powi(2)).sum();
    (norm_sq, dev_sq)
}

/// Indicators for a broken quadratic (a Morley function, or a coarse
/// function carried onto a refinement).
pub fn indicators_piecewise(u: &PiecewiseQuadratic, f: &dyn ScalarField, mode: BoundaryJumps) -> IndicatorField {
    let mesh = u.mesh();
    let hess: Vec<Sym2> = (0..mesh.num_cells()).map(|c| u.hessian(c)).collect();
    // ‖[∇²u τ_e]‖²_{L²(e)} per edge; the jump is constant on the edge
    let edge_jump_sq: Vec<f64> = mesh
        .edges()
        .par_iter()
        .map(|edge| {
            let j = match edge.plus {
                Some((p, _)) => hess[p].sub(&hess[edge.minus]).apply(edge.tangent),
                None => match mode {
                    BoundaryJumps::Trace => hess[edge.minus].apply(edge.tangent),
                    BoundaryJumps::Zero => [0.0, 0.0],
                },
            };
            edge.length * (j[0] * j[0] + j[1] * j[1])
        })
        .collect();
    let rows: Vec<[f64; 6]> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let area = mesh.area(c);
            let h = area.sqrt();
            let (fn_sq, dev_sq) = data_norms(f, mesh, c);
            let volume = area * fn_sq.sqrt();
            let jump = mesh.cell_edges(c).iter().map(|&e| h * edge_jump_sq[e]).sum::<f64>().sqrt();
            let eta = volume + jump;
            [volume, jump, eta, eta * eta, area * area * dev_sq, area * area * fn_sq]
        })
        .collect();
    let col = |i: usize| rows.iter().map(|r| r[i]).collect::<Vec<f64>>();
    IndicatorField { volume: col(0), jump: col(1), eta: col(2), eta_sq: col(3), osc_sq: col(4), fterm_sq: col(5) }
}

pub fn indicators(u_h: &MorleyFunction, f: &dyn ScalarField, mode: BoundaryJumps) -> IndicatorField {
    indicators_piecewise(&u_h.piecewise(), f, mode)
}

/// `η(u_h, S) = (Σ_{K∈S} η_K²)^{1/2}`.
pub fn eta_total(field: &IndicatorField, subset: &[usize]) -> f64 {
    field.eta_sq_on(subset).sqrt()
}

/// `osc(f, S) = (Σ_{K∈S} h_K⁴ ‖f − f_K‖²)^{1/2}`.
pub fn oscillation(f: &dyn ScalarField, mesh: &Triangulation, subset: &[usize]) -> f64 {
    subset
        .iter()
        .map(|&c| {
            let a = mesh.area(c);
            a * a * data_norms(f, mesh, c).1
        })
        .sum::<f64>()
        .sqrt()
}

/// `η̃ = (Σ_K β₁ h_K⁴ ‖f‖² + η_K²)^{1/2}`.
pub fn eta_tilde(field: &IndicatorField, beta1: f64) -> Result<f64> {
    if !(beta1 > 0.0 && beta1.is_finite()) {
        return Err(AfemError::InvalidParameter(format!("β₁ must be positive, got {beta1}")));
    }
    Ok((beta1 * field.fterm_sq_total() + field.eta_sq_total()).sqrt())
}

/// Argument of the residual functional.
pub enum TestFunction<'a> {
    /// A Morley function on the coarse mesh or on a refinement of it.
    Discrete(&'a MorleyFunction),
    /// A broken quadratic on the coarse mesh or on a refinement of it.
    Piecewise(&'a PiecewiseQuadratic),
    /// A smooth function.
    Smooth(&'a dyn SmoothField),
}

/// `Res_H(v) = (f, v) − a_h(u_H, v)`. Discrete `v` is handled on its own
/// mesh, with `u_H` carried elementwise onto it; `(f, v)` uses the 6-point
/// rule on that mesh.
pub fn residual(
    u_coarse: &MorleyFunction,
    f: &dyn ScalarField,
    material: &PlateMaterial,
    v: TestFunction<'_>,
) -> Result<f64> {
    let coarse = u_coarse.mesh();
    match v {
        TestFunction::Discrete(v) => residual_piecewise(u_coarse, f, material, &v.piecewise()),
        TestFunction::Piecewise(v) => residual_piecewise(u_coarse, f, material, v),
        TestFunction::Smooth(v) => {
            let uh = u_coarse.piecewise();
            let fv = smooth_load(f, v, coarse);
            Ok(fv - bilinear_smooth(material, v, &uh))
        }
    }
}

fn residual_piecewise(
    u_coarse: &MorleyFunction,
    f: &dyn ScalarField,
    material: &PlateMaterial,
    v: &PiecewiseQuadratic,
) -> Result<f64> {
    let u = u_coarse.piecewise().transfer_to(v.mesh())?;
    Ok(load_functional(f, v) - bilinear(material, &u, v)?)
}

fn smooth_load(f: &dyn ScalarField, v: &dyn SmoothField, mesh: &Arc<Triangulation>) -> f64 {
    let per: Vec<f64> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| triangle_points(&mesh.cell_points(c)).iter().map(|(x, w)| w * f.value(*x) * v.value(*x)).sum())
        .collect();
    per.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::{Constant, FnField};
    use crate::geometry::{Point, Quadratic};
    use crate::system::{assemble, solve};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lshape(levels: usize, seed: u64) -> Arc<Triangulation> {
        let pts = [[-1.0, -1.0], [0.0, -1.0], [-1.0, 0.0], [0.0, 0.0], [1.0, 0.0], [-1.0, 1.0], [0.0, 1.0], [1.0, 1.0]];
        let cells = [[0, 1, 3], [0, 3, 2], [2, 3, 6], [2, 6, 5], [3, 4, 7], [3, 7, 6]];
        let mut m = Triangulation::build_initial(&pts, &cells).unwrap().uniform_refine().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..levels {
            let marked: Vec<usize> = (0..m.num_cells()).filter(|_| rng.gen::<f64>() < 0.3).collect();
            m = m.bisect(&marked).unwrap();
        }
        Arc::new(m)
    }

    fn random_morley(mesh: &Arc<Triangulation>, rng: &mut ChaCha8Rng) -> MorleyFunction {
        let coeffs = (0..mesh.num_vertices() + mesh.num_edges()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        MorleyFunction::from_coeffs(mesh.clone(), coeffs).unwrap().with_clamped_bc()
    }

    #[test]
    fn unit_load_on_half_unit_triangle() {
        let mesh = Arc::new(Triangulation::build_initial(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], &[[0, 1, 2]]).unwrap());
        let field = indicators(&MorleyFunction::zero(mesh), &Constant(1.0), BoundaryJumps::Trace);
        assert!((field.eta[0] - 0.5 * 0.5f64.sqrt()).abs() < 1e-15);
        assert!((field.eta[0] - 0.353553).abs() < 1e-6);
        assert_eq!(field.jump[0], 0.0);
    }

    #[test]
    fn global_quadratic_has_no_interior_jumps() {
        let mesh = lshape(2, 1);
        let q = Quadratic { center: [0.0, 0.0], value: 1.0, grad: [0.5, 0.1], hess: Sym2::new(1.0, 2.0, -1.0) };
        let u = PiecewiseQuadratic::from_global(mesh.clone(), &q);
        let zero = indicators_piecewise(&u, &Constant(0.0), BoundaryJumps::Zero);
        assert!(zero.eta.iter().all(|&e| e < 1e-12));
        let trace = indicators_piecewise(&u, &Constant(0.0), BoundaryJumps::Trace);
        for c in 0..mesh.num_cells() {
            let on_boundary = mesh.cell_edges(c).iter().any(|&e| mesh.edge(e).is_boundary());
            if !on_boundary {
                assert!(trace.eta[c] < 1e-12);
            }
        }
    }

    #[test]
    fn jump_norm_ignores_edge_orientation() {
        let mesh = lshape(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_morley(&mesh, &mut rng);
        let field = indicators(&u, &Constant(0.0), BoundaryJumps::Trace);
        // recompute each jump with the opposite normal and swapped sides
        for c in 0..mesh.num_cells() {
            let h = mesh.h(c);
            let mut s = 0.0;
            for e in mesh.cell_edges(c) {
                let edge = mesh.edge(e);
                let flipped_tangent = [-edge.tangent[0], -edge.tangent[1]];
                let j = match edge.plus {
                    Some((p, _)) => u.hessian(edge.minus).sub(&u.hessian(p)).apply(flipped_tangent),
                    None => u.hessian(edge.minus).apply(flipped_tangent),
                };
                s += h * edge.length * (j[0] * j[0] + j[1] * j[1]);
            }
            assert!((s.sqrt() - field.jump[c]).abs() <= 1e-12 * field.jump[c].max(1.0));
        }
    }

    #[test]
    fn totals_are_additive() {
        let mesh = lshape(2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_morley(&mesh, &mut rng);
        let f = FnField(|x: Point| 1.0 + x[0] - x[1] * x[1]);
        let field = indicators(&u, &f, BoundaryJumps::Trace);
        assert_eq!(eta_total(&field, &[]), 0.0);
        assert_eq!(eta_total(&field, &[3]), field.eta[3]);
        for _ in 0..10 {
            let (a, b): (Vec<usize>, Vec<usize>) = (0..field.len()).partition(|_| rng.gen::<bool>());
            let all: Vec<usize> = (0..field.len()).collect();
            let lhs = eta_total(&field, &all).powi(2);
            let rhs = eta_total(&field, &a).powi(2) + eta_total(&field, &b).powi(2);
            assert!((lhs - rhs).abs() <= 1e-12 * lhs);
        }
        for k in 0..field.len() {
            assert!(field.osc_sq[k] <= field.fterm_sq[k] * (1.0 + 1e-12));
            assert!((field.eta[k] - field.volume[k] - field.jump[k]).abs() == 0.0);
            assert!(field.eta_sq[k] >= 0.0 && field.osc_sq[k] >= 0.0);
        }
    }

    #[test]
    fn oscillation_cases() {
        let mesh = lshape(1, 6);
        let all: Vec<usize> = (0..mesh.num_cells()).collect();
        assert!(oscillation(&Constant(3.5), &mesh, &all) < 1e-14);
        // linear f = a + b·x: ∫_K (f − f̄)² = bᵀ M b with the second-moment
        // matrix M = |K|/12 Σ_i (p_i − c)(p_i − c)ᵀ
        let (a, b) = (0.7, [1.3, -2.1]);
        let f = FnField(move |x: Point| a + b[0] * x[0] + b[1] * x[1]);
        for c in 0..mesh.num_cells() {
            let p = mesh.cell_points(c);
            let cen = mesh.centroid(c);
            let area = mesh.area(c);
            let mut m = [[0.0; 2]; 2];
            for pi in p {
                let d = [pi[0] - cen[0], pi[1] - cen[1]];
                for r in 0..2 {
                    for s in 0..2 {
                        m[r][s] += area / 12.0 * d[r] * d[s];
                    }
                }
            }
            let oracle: f64 = (0..2).flat_map(|r| (0..2).map(move |s| (r, s))).map(|(r, s)| b[r] * m[r][s] * b[s]).sum();
            let osc = oscillation(&f, &mesh, &[c]);
            assert!((osc * osc - area * area * oracle).abs() <= 1e-13 * area * area * oracle);
        }
    }

    #[test]
    fn eta_tilde_properties() {
        let mesh = lshape(1, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = random_morley(&mesh, &mut rng);
        let field = indicators(&u, &FnField(|x: Point| 2.0 + x[0]), BoundaryJumps::Trace);
        let eta = field.eta_sq_total().sqrt();
        assert!((eta_tilde(&field, 1e-15).unwrap() - eta).abs() <= 1e-7 * eta);
        for beta in [0.1, 1.0, 7.0] {
            let t = eta_tilde(&field, beta).unwrap();
            assert!((t * t - eta * eta - beta * field.fterm_sq_total()).abs() <= 1e-12 * t * t);
        }
        let mut last = 0.0;
        for beta in [1e-3, 1e-2, 0.1, 1.0, 10.0] {
            let t = eta_tilde(&field, beta).unwrap();
            assert!(t >= last);
            last = t;
        }
        assert!(eta_tilde(&field, 0.0).is_err());
    }

    #[test]
    fn residual_vanishes_on_coarse_space() {
        let m = PlateMaterial::default();
        let f = FnField(|x: Point| 1.0 + 0.5 * x[0] * x[1]);
        let coarse = lshape(1, 9);
        let u = solve(&assemble(&coarse, &m, &f).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let v = random_morley(&coarse, &mut rng);
            let r = residual(&u, &f, &m, TestFunction::Discrete(&v)).unwrap();
            let scale = load_functional(&f, &v.piecewise()).abs().max(1e-3);
            assert!(r.abs() <= 1e-9 * scale, "{r}");
        }
        let other = lshape(0, 11);
        let v = random_morley(&other, &mut rng);
        if !other.is_refinement_of(&coarse) {
            assert!(residual(&u, &f, &m, TestFunction::Discrete(&v)).is_err());
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mesh = lshape(0, 12);
        let field = indicators(&MorleyFunction::zero(mesh.clone()), &Constant(1.0), BoundaryJumps::Zero);
        let mut out = Vec::new();
        field.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "element_id,eta_sq,osc_sq,fterm_sq,volume_term,jump_term");
        assert_eq!(lines.len(), mesh.num_cells() + 1);
    }
}
