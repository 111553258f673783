//! Stand-ins for the exact solution: either the analytic one or a
//! reference solution on a much finer adaptive mesh, cached on disk.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::problems::ProblemSpec;
use crate::adapt::{anfem, AdaptiveConfig, MarkingConfig};
use crate::element::{MorleyFunction, PiecewiseQuadratic, SmoothField};
use crate::error::{AfemError, Result};
use crate::estimator::BoundaryJumps;
use crate::geometry::triangle_points;
use crate::mesh::{MeshSnapshot, Triangulation};
use crate::system::{
    bilinear, bilinear_smooth, energy_error_squared_per_cell, hessian_error_per_cell, PlateMaterial,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    /// The reference run stops at the first mesh with at least this many
    /// free DOFs.
    pub min_dofs: usize,
    pub theta: f64,
    pub boundary_jumps: BoundaryJumps,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig { min_dofs: 500_000, theta: 0.3, boundary_jumps: BoundaryJumps::Trace }
    }
}

#[derive(Clone, Debug)]
pub struct ReferenceSolution {
    pub solution: MorleyFunction,
    pub dofs: usize,
    pub from_cache: bool,
}

#[derive(Serialize, Deserialize)]
struct CachedReference {
    key: String,
    dofs: usize,
    snapshot: MeshSnapshot,
    coeffs: Vec<f64>,
}

/// Cache key from everything that determines the reference run.
pub fn reference_key(problem: &ProblemSpec, cfg: &ReferenceConfig) -> String {
    let mut h = DefaultHasher::new();
    problem.name.hash(&mut h);
    problem.mesh.mesh_hash().hash(&mut h);
    problem.material.young.to_bits().hash(&mut h);
    problem.material.poisson.to_bits().hash(&mut h);
    // sample the load on the initial mesh so different data never collide
    for c in 0..problem.mesh.num_cells() {
        for (x, _) in triangle_points(&problem.mesh.cell_points(c)) {
            problem.f.value(x).to_bits().hash(&mut h);
        }
    }
    cfg.min_dofs.hash(&mut h);
    cfg.theta.to_bits().hash(&mut h);
    (cfg.boundary_jumps == BoundaryJumps::Trace).hash(&mut h);
    format!("{:016x}", h.finish())
}

pub fn cache_path(dir: &Path, problem: &ProblemSpec, cfg: &ReferenceConfig) -> PathBuf {
    dir.join(format!("reference-{}-{}.json", problem.name, reference_key(problem, cfg)))
}

/// Solves on the adaptive mesh sequence of `problem` until `cfg.min_dofs`
/// is reached, reusing a cached result from `cache_dir` when present.
pub fn reference_solution(problem: &ProblemSpec, cfg: &ReferenceConfig, cache_dir: Option<&Path>) -> Result<ReferenceSolution> {
    let key = reference_key(problem, cfg);
    if let Some(dir) = cache_dir {
        let path = cache_path(dir, problem, cfg);
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(cached) = serde_json::from_str::<CachedReference>(&text) {
                if cached.key == key {
                    let mesh = Arc::new(Triangulation::from_snapshot(&problem.mesh, &cached.snapshot)?);
                    let solution = MorleyFunction::from_coeffs(mesh, cached.coeffs)?;
                    return Ok(ReferenceSolution { solution, dofs: cached.dofs, from_cache: true });
                }
            }
        }
    }
    let config = AdaptiveConfig {
        marking: MarkingConfig::new(cfg.theta, 1)?,
        eps: 0.0,
        max_dofs: Some(cfg.min_dofs),
        max_iters: None,
        boundary_jumps: cfg.boundary_jumps,
        beta1: 1.0,
        uniform: false,
    };
    let run = anfem(problem.mesh.clone(), problem.load(), &problem.material, &config, None)?;
    let dofs = run.history.records.last().map(|r| r.dofs).unwrap_or(0);
    let solution = run.final_solution().clone();
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir)?;
        let cached = CachedReference {
            key,
            dofs,
            snapshot: solution.mesh().snapshot(),
            coeffs: solution.coeffs().to_vec(),
        };
        let path = cache_path(dir, problem, cfg);
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string(&cached)?)?;
        std::fs::rename(&tmp, &path)?;
    }
    Ok(ReferenceSolution { solution, dofs, from_cache: false })
}

/// The solution `u` that errors are measured against.
#[derive(Clone, Copy)]
pub enum Truth<'a> {
    Exact(&'a dyn SmoothField),
    Reference(&'a MorleyFunction),
}

/// `u_h` and the reference on their smallest common refinement.
struct Common {
    mesh: Arc<Triangulation>,
    diff: PiecewiseQuadratic,
}

impl<'a> Truth<'a> {
    pub fn is_reference(&self) -> bool {
        matches!(self, Truth::Reference(_))
    }

    fn common(reference: &MorleyFunction, u_h: &PiecewiseQuadratic) -> Result<Common> {
        let mesh = if reference.mesh().is_refinement_of(u_h.mesh()) {
            reference.mesh().clone()
        } else {
            Arc::new(Triangulation::overlay(u_h.mesh(), reference.mesh())?)
        };
        let fine_u = u_h.transfer_to(&mesh)?;
        let diff = reference.piecewise().transfer_to(&mesh)?.sub(&fine_u)?;
        Ok(Common { mesh, diff })
    }

    /// `‖u − u_h‖_{𝒞_h}`.
    pub fn energy_error(&self, u_h: &PiecewiseQuadratic, material: &PlateMaterial) -> Result<f64> {
        match self {
            Truth::Exact(u) => Ok(energy_error_squared_per_cell(*u, u_h, material).iter().sum::<f64>().max(0.0).sqrt()),
            Truth::Reference(r) => {
                let c = Self::common(r, u_h)?;
                Ok(bilinear(material, &c.diff, &c.diff)?.max(0.0).sqrt())
            }
        }
    }

    /// `‖∇²_h(u − u_h)‖_{L²(K)}` for every element `K` of `target`, a mesh
    /// that `u_h`'s mesh refines.
    pub fn hessian_error_on(&self, u_h: &PiecewiseQuadratic, target: &Triangulation) -> Result<Vec<f64>> {
        let (per_cell, mesh) = match self {
            Truth::Exact(u) => (hessian_error_per_cell(*u, u_h), u_h.mesh().clone()),
            Truth::Reference(r) => {
                let c = Self::common(r, u_h)?;
                let v: Vec<f64> = (0..c.mesh.num_cells())
                    .map(|k| c.diff.hessian(k).frobenius() * c.mesh.area(k).sqrt())
                    .collect();
                (v, c.mesh)
            }
        };
        let anc = mesh.ancestor_map(target)?;
        let mut sq = vec![0.0; target.num_cells()];
        for (k, e) in per_cell.iter().enumerate() {
            sq[anc[k]] += e * e;
        }
        Ok(sq.into_iter().map(f64::sqrt).collect())
    }

    /// `a_h(w, u − u_h)` for a broken quadratic `w` on `u_h`'s mesh.
    pub fn cross(&self, w: &PiecewiseQuadratic, u_h: &PiecewiseQuadratic, material: &PlateMaterial) -> Result<f64> {
        match self {
            Truth::Exact(u) => Ok(bilinear_smooth(material, *u, w) - bilinear(material, u_h, w)?),
            Truth::Reference(r) => {
                let c = Self::common(r, u_h)?;
                bilinear(material, &w.transfer_to(&c.mesh)?, &c.diff)
            }
        }
    }
}

/// `‖u_ref − u_h‖_{𝒞_h}` on the overlay of the two meshes.
pub fn error_against_reference(u_h: &MorleyFunction, reference: &MorleyFunction, material: &PlateMaterial) -> Result<f64> {
    Truth::Reference(reference).energy_error(&u_h.piecewise(), material)
}

impl std::fmt::Debug for Truth<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Truth::Exact(_) => write!(f, "Truth::Exact"),
            Truth::Reference(r) => write!(f, "Truth::Reference({} cells)", r.mesh().num_cells()),
        }
    }
}

/// Fails unless the reference has at least `factor` times the DOFs of `dofs`.
pub fn check_reference_size(reference: &ReferenceSolution, dofs: usize, factor: usize) -> Result<()> {
    if reference.dofs < factor * dofs {
        return Err(AfemError::InvalidParameter(format!(
            "reference has {} DOFs, fewer than {factor} × {dofs}",
            reference.dofs
        )));
    }
    Ok(())
}
