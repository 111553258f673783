//! Dörfler marking and the adaptive loop Solve → Estimate → Mark → Refine.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::element::{MorleyFunction, ScalarField, SmoothField};
use crate::error::{AfemError, Result};
use crate::estimator::{eta_tilde, indicators, BoundaryJumps, IndicatorField};
use crate::mesh::Triangulation;
use crate::system::{assemble, energy_error, solve, PlateMaterial};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkingConfig {
    pub theta: f64,
    /// Bisections applied to each marked element per round (1 or 2).
    pub bisections_per_mark: u8,
}

impl Default for MarkingConfig {
    fn default() -> Self {
        MarkingConfig { theta: 0.3, bisections_per_mark: 1 }
    }
}

impl MarkingConfig {
    pub fn new(theta: f64, bisections_per_mark: u8) -> Result<Self> {
        let c = MarkingConfig { theta, bisections_per_mark };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(AfemError::InvalidParameter(format!("theta must lie in (0,1), got {}", self.theta)));
        }
        if !matches!(self.bisections_per_mark, 1 | 2) {
            return Err(AfemError::InvalidParameter(format!(
                "bisections_per_mark must be 1 or 2, got {}",
                self.bisections_per_mark
            )));
        }
        Ok(())
    }
}

/// `x · 2^1074` as an integer; every finite non-negative double is an
/// integer multiple of `2^-1074`.
fn exact_scaled(x: f64) -> BigUint {
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as u32;
    let frac = bits & ((1u64 << 52) - 1);
    if exp == 0 {
        BigUint::from(frac)
    } else {
        BigUint::from(frac | (1u64 << 52)) << (exp - 1)
    }
}

/// `a ≥ θ·b` decided exactly on the binary values of the inputs.
pub fn bulk_reached(a: &[f64], theta: f64, b: &[f64]) -> bool {
    let sa: BigUint = a.iter().map(|&x| exact_scaled(x)).sum();
    let sb: BigUint = b.iter().map(|&x| exact_scaled(x)).sum();
    (sa << 1074u32) >= exact_scaled(theta) * sb
}

/// Minimal set with `Σ_M η_K² ≥ θ Σ η_K²`: the shortest prefix of the
/// elements sorted by descending `η_K²`, ties by ascending id. An all-zero
/// field gives the empty set.
pub fn doerfler_mark(eta_sq: &[f64], theta: f64) -> Result<Vec<usize>> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(AfemError::InvalidParameter(format!("theta must lie in (0,1), got {theta}")));
    }
    if let Some(k) = eta_sq.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(AfemError::InvalidParameter(format!("indicator {k} is {}", eta_sq[k])));
    }
    if eta_sq.iter().all(|&v| v == 0.0) {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..eta_sq.len()).collect();
    order.sort_by(|&a, &b| eta_sq[b].total_cmp(&eta_sq[a]).then(a.cmp(&b)));
    let total: BigUint = eta_sq.iter().map(|&x| exact_scaled(x)).sum();
    let target = exact_scaled(theta) * total;
    let mut acc = BigUint::from(0u8);
    for (n, &k) in order.iter().enumerate() {
        acc += exact_scaled(eta_sq[k]);
        if (&acc << 1074u32) >= target {
            return Ok(order[..=n].to_vec());
        }
    }
    Ok(order)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub marking: MarkingConfig,
    /// Tolerance ε; the loop runs while η ≥ ε.
    pub eps: f64,
    /// Stop once the free DOF count reaches this bound.
    pub max_dofs: Option<usize>,
    /// Stop after this many refinement rounds.
    pub max_iters: Option<usize>,
    pub boundary_jumps: BoundaryJumps,
    /// Weight of the data term in the diagnostic η̃.
    pub beta1: f64,
    /// Refine every element twice instead of marking.
    pub uniform: bool,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            marking: MarkingConfig::default(),
            eps: 1e-6,
            max_dofs: Some(100_000),
            max_iters: Some(100),
            boundary_jumps: BoundaryJumps::Trace,
            beta1: 1.0,
            uniform: false,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        self.marking.validate()?;
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(AfemError::InvalidParameter(format!("eps must be a finite number ≥ 0, got {}", self.eps)));
        }
        if !(self.beta1 > 0.0 && self.beta1.is_finite()) {
            return Err(AfemError::InvalidParameter(format!("beta1 must be positive, got {}", self.beta1)));
        }
        if self.eps == 0.0 && self.max_dofs.is_none() && self.max_iters.is_none() {
            return Err(AfemError::InvalidParameter("eps = 0 needs max_dofs or max_iters".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub elements: usize,
    /// Free degrees of freedom.
    pub dofs: usize,
    pub eta: f64,
    pub eta_tilde: f64,
    pub osc: f64,
    pub energy_error: Option<f64>,
    pub marked: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveHistory {
    pub records: Vec<IterationRecord>,
}

impl AdaptiveHistory {
    pub const CSV_HEADER: &'static str = "k,elements,dofs,eta,eta_tilde,osc,energy_error,marked,seconds";

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            let err = r.energy_error.map(|e| format!("{e:e}")).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{:e},{:e},{:e},{},{},{:.6}",
                r.k, r.elements, r.dofs, r.eta, r.eta_tilde, r.osc, err, r.marked, r.seconds
            )?;
        }
        Ok(())
    }
}

/// Everything an adaptive run produced, one entry per iteration.
#[derive(Clone, Debug)]
pub struct AdaptiveRun {
    pub history: AdaptiveHistory,
    pub meshes: Vec<Arc<Triangulation>>,
    pub solutions: Vec<MorleyFunction>,
    pub fields: Vec<IndicatorField>,
    pub marked: Vec<Vec<usize>>,
}

impl AdaptiveRun {
    pub fn final_mesh(&self) -> &Arc<Triangulation> {
        self.meshes.last().expect("at least one iteration")
    }

    pub fn final_solution(&self) -> &MorleyFunction {
        self.solutions.last().expect("at least one iteration")
    }
}

/// Runs the adaptive loop from `initial`. The loop stops after the estimate
/// when η < ε, when the iteration or DOF bound is reached, or when nothing
/// can be marked.
pub fn anfem(
    initial: Arc<Triangulation>,
    f: &dyn ScalarField,
    material: &PlateMaterial,
    config: &AdaptiveConfig,
    exact: Option<&dyn SmoothField>,
) -> Result<AdaptiveRun> {
    config.validate()?;
    let mut run = AdaptiveRun {
        history: AdaptiveHistory::default(),
        meshes: Vec::new(),
        solutions: Vec::new(),
        fields: Vec::new(),
        marked: Vec::new(),
    };
    let mut mesh = initial;
    for k in 0.. {
        let start = Instant::now();
        let wrap = |e: AfemError| AfemError::Iteration { iteration: k, source: Box::new(e) };
        let system = assemble(&mesh, material, f).map_err(wrap)?;
        let dofs = system.dofs.num_free();
        let u = solve(&system).map_err(wrap)?;
        let field = indicators(&u, f, config.boundary_jumps);
        let eta = field.eta_sq_total().sqrt();
        let record = IterationRecord {
            k,
            elements: mesh.num_cells(),
            dofs,
            eta,
            eta_tilde: eta_tilde(&field, config.beta1)?,
            osc: field.osc_sq_total().sqrt(),
            energy_error: exact.map(|ex| energy_error(ex, &u, material)),
            marked: 0,
            seconds: 0.0,
        };
        let done = eta < config.eps
            || config.max_iters.is_some_and(|m| k >= m)
            || config.max_dofs.is_some_and(|m| dofs >= m);
        let (marked, next) = if done {
            (Vec::new(), None)
        } else if config.uniform {
            ((0..mesh.num_cells()).collect(), Some(mesh.uniform_refine()?))
        } else {
            let m = doerfler_mark(&field.eta_sq, config.marking.theta)?;
            if m.is_empty() {
                (m, None)
            } else {
                let next = mesh.refine_marked(&m, config.marking.bisections_per_mark)?;
                (m, Some(next))
            }
        };
        run.history.records.push(IterationRecord { marked: marked.len(), seconds: start.elapsed().as_secs_f64(), ..record });
        run.meshes.push(mesh.clone());
        run.solutions.push(u);
        run.fields.push(field);
        run.marked.push(marked);
        match next {
            Some(n) => mesh = Arc::new(n),
            None => break,
        }
    }
    Ok(run)
}

/// `(#𝒯_k − #𝒯_0) / Σ_{j<k} #𝓜_j` for k ≥ 1.
pub fn marked_vs_refined(history: &AdaptiveHistory) -> Vec<f64> {
    let Some(first) = history.records.first() else { return Vec::new() };
    let mut marks = 0usize;
    let mut out = Vec::new();
    for w in history.records.windows(2) {
        marks += w[0].marked;
        let added = w[1].elements - first.elements;
        out.push(if marks == 0 { f64::NAN } else { added as f64 / marks as f64 });
    }
    out
}
