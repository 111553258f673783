//! Benchmark problems.

use std::fmt;
use std::sync::Arc;

use crate::element::{Constant, ScalarField, SmoothField};
use crate::error::{AfemError, Result};
use crate::geometry::{Point, Sym2};
use crate::mesh::Triangulation;
use crate::system::PlateMaterial;

/// Polynomial in one variable, coefficients by ascending power.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly1(pub Vec<f64>);

impl Poly1 {
    pub fn eval(&self, t: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    pub fn derivative(&self) -> Poly1 {
        Poly1(self.0.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect())
    }

    pub fn nth_derivative(&self, n: usize) -> Poly1 {
        (0..n).fold(self.clone(), |p, _| p.derivative())
    }

    pub fn scaled(&self, s: f64) -> Poly1 {
        Poly1(self.0.iter().map(|c| s * c).collect())
    }
}

/// `Σ_i p_i(x) q_i(y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparablePoly {
    pub terms: Vec<(Poly1, Poly1)>,
}

impl SeparablePoly {
    /// `Δ²` applied term by term.
    pub fn bilaplacian(&self) -> SeparablePoly {
        let mut terms = Vec::new();
        for (p, q) in &self.terms {
            terms.push((p.nth_derivative(4), q.clone()));
            terms.push((p.nth_derivative(2).scaled(2.0), q.nth_derivative(2)));
            terms.push((p.clone(), q.nth_derivative(4)));
        }
        SeparablePoly { terms }
    }

    pub fn scaled(&self, s: f64) -> SeparablePoly {
        SeparablePoly { terms: self.terms.iter().map(|(p, q)| (p.scaled(s), q.clone())).collect() }
    }

    fn sum_with(&self, x: Point, dx: usize, dy: usize) -> f64 {
        self.terms.iter().map(|(p, q)| p.nth_derivative(dx).eval(x[0]) * q.nth_derivative(dy).eval(x[1])).sum()
    }
}

impl ScalarField for SeparablePoly {
    fn value(&self, x: Point) -> f64 {
        self.sum_with(x, 0, 0)
    }
}

impl SmoothField for SeparablePoly {
    fn gradient(&self, x: Point) -> Point {
        [self.sum_with(x, 1, 0), self.sum_with(x, 0, 1)]
    }

    fn hessian(&self, x: Point) -> Sym2 {
        Sym2::new(self.sum_with(x, 2, 0), self.sum_with(x, 1, 1), self.sum_with(x, 0, 2))
    }
}

/// A clamped plate problem: domain, load, material and, when known, the
/// exact solution.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub mesh: Arc<Triangulation>,
    pub f: Arc<dyn ScalarField + Send + Sync>,
    pub material: PlateMaterial,
    pub exact: Option<Arc<dyn SmoothField + Send + Sync>>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("cells", &self.mesh.num_cells())
            .field("material", &self.material)
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

impl ProblemSpec {
    pub fn exact(&self) -> Option<&dyn SmoothField> {
        self.exact.as_deref().map(|e| e as &dyn SmoothField)
    }

    pub fn load(&self) -> &dyn ScalarField {
        &*self.f
    }
}

/// `t²(1−t)²`.
pub fn bump() -> Poly1 {
    Poly1(vec![0.0, 0.0, 1.0, -2.0, 1.0])
}

/// Unit square, `u = x²(1−x)²y²(1−y)²`. For constant `𝒞` the plate operator
/// is `D Δ²`, so `f = D Δ²u` for any Poisson ratio. `u` and `∇u` vanish on
/// the boundary through the double roots of the bump at 0 and 1.
pub fn problem_square_smooth(material: PlateMaterial) -> ProblemSpec {
    let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
    let cells = [[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]];
    let mesh = Arc::new(Triangulation::build_initial(&pts, &cells).expect("valid square mesh"));
    let u = SeparablePoly { terms: vec![(bump(), bump())] };
    let f = u.bilaplacian().scaled(material.stiffness());
    ProblemSpec { name: "square_smooth".into(), mesh, f: Arc::new(f), material, exact: Some(Arc::new(u)) }
}

/// L-shaped domain `(−1,1)² ∖ [0,1)×(−1,0]` with `f = 1`; six triangles
/// whose diagonals meet at the re-entrant corner.
pub fn problem_lshape() -> ProblemSpec {
    let pts = [[-1.0, -1.0], [0.0, -1.0], [-1.0, 0.0], [0.0, 0.0], [1.0, 0.0], [-1.0, 1.0], [0.0, 1.0], [1.0, 1.0]];
    let cells = [[0, 1, 3], [0, 3, 2], [2, 3, 5], [3, 6, 5], [3, 4, 7], [3, 7, 6]];
    let mesh = Arc::new(Triangulation::build_initial(&pts, &cells).expect("valid L-shape mesh"));
    ProblemSpec {
        name: "lshape".into(),
        mesh,
        f: Arc::new(Constant(1.0)),
        material: PlateMaterial::default(),
        exact: None,
    }
}

/// A problem on a user mesh with unit load.
pub fn problem_from_mesh(name: &str, points: &[Point], cells: &[[usize; 3]], material: PlateMaterial) -> Result<ProblemSpec> {
    let mesh = Arc::new(Triangulation::build_initial(points, cells)?);
    Ok(ProblemSpec { name: name.into(), mesh, f: Arc::new(Constant(1.0)), material, exact: None })
}

pub const PROBLEM_NAMES: [&str; 2] = ["square_smooth", "lshape"];

pub fn problem_by_name(name: &str, material: Option<PlateMaterial>) -> Result<ProblemSpec> {
    match name {
        "square_smooth" => Ok(problem_square_smooth(material.unwrap_or_default())),
        "lshape" => {
            let mut p = problem_lshape();
            if let Some(m) = material {
                p.material = m;
            }
            Ok(p)
        }
        _ => Err(AfemError::InvalidParameter(format!(
            "unknown problem {name:?}; known problems: {}",
            PROBLEM_NAMES.join(", ")
        ))),
    }
}
