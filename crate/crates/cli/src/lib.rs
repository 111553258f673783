//! Command-line front end: configuration, run modes and output files.

pub mod config;
pub mod vtk;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Parser;
use morley_afem::adapt::{anfem, AdaptiveConfig, AdaptiveRun, MarkingConfig};
use morley_afem::bench::suites::{estimator_reduction_suite, mesh_integrity, refinement_ratio_suite};
use morley_afem::bench::{
    problem_by_name, rate_fit, run_suite, ProblemSpec, RateAxis, ReferenceConfig, SuiteOptions, SuiteReport,
};
use morley_afem::estimator::BoundaryJumps;
use morley_afem::mesh::{read_mesh_file, write_mesh_text, MeshInput};
use morley_afem::AfemError;

pub use config::{parse_material, Mode, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Solver(AfemError),
    #[error("suite failed: {0}")]
    SuiteFailed(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::SuiteFailed(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<AfemError> for CliError {
    fn from(e: AfemError) -> Self {
        match e {
            AfemError::Io(io) => CliError::Io(io),
            AfemError::InvalidParameter(m) => CliError::Config(m),
            other => CliError::Solver(other),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "afem", about = "Adaptive Morley FEM for the clamped Kirchhoff plate")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// adaptive, uniform or verify:<suite>.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub max_dofs: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// E,nu
    #[arg(long)]
    pub material: Option<String>,
    /// trace or zero.
    #[arg(long)]
    pub boundary_jumps: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Refine every element instead of marking.
    #[arg(long)]
    pub uniform: bool,
    /// Skip the VTK file.
    #[arg(long)]
    pub no_vtk: bool,
}

/// The configuration file (if any) with the flags applied on top, plus
/// the file text for the echo.
pub fn resolve_config(cli: &Cli) -> Result<(RunConfig, Option<String>), CliError> {
    let (mut cfg, text) = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
            (RunConfig::parse(&text)?, Some(text))
        }
        None => (RunConfig::default(), None),
    };
    if let Some(m) = &cli.mode {
        cfg.mode = m.parse().map_err(CliError::Config)?;
    }
    if cli.uniform {
        cfg.mode = Mode::Uniform;
    }
    if let Some(t) = cli.theta {
        cfg.adaptive.theta = t;
    }
    if let Some(e) = cli.eps {
        cfg.adaptive.eps = e;
    }
    if let Some(n) = cli.max_dofs {
        cfg.adaptive.max_dofs = n;
    }
    if let Some(n) = cli.max_iters {
        cfg.adaptive.max_iters = n;
    }
    if let Some(p) = &cli.problem {
        cfg.problem.name = p.clone();
        cfg.problem.mesh = None;
    }
    if let Some(m) = &cli.mesh {
        cfg.problem.mesh = Some(m.clone());
        if cli.problem.is_none() {
            cfg.problem.name = m.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "mesh".into());
        }
    }
    if let Some(m) = &cli.material {
        cfg.material = parse_material(m).map_err(CliError::Config)?;
    }
    if let Some(b) = &cli.boundary_jumps {
        cfg.adaptive.boundary_jumps = b.parse::<BoundaryJumps>().map_err(|e| CliError::Config(e.to_string()))?;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.no_vtk {
        cfg.output.vtk = false;
    }
    cfg.validate()?;
    Ok((cfg, text))
}

pub fn load_problem(cfg: &RunConfig) -> Result<ProblemSpec, CliError> {
    match &cfg.problem.mesh {
        Some(path) => {
            let MeshInput { vertices, triangles } = read_mesh_file(path)
                .map_err(|e| CliError::Config(format!("mesh file {}: {e}", path.display())))?;
            morley_afem::bench::problems::problem_from_mesh(&cfg.problem.name, &vertices, &triangles, cfg.material)
                .map_err(|e| CliError::Config(format!("mesh file {}: {e}", path.display())))
        }
        None => problem_by_name(&cfg.problem.name, Some(cfg.material)).map_err(|e| CliError::Config(e.to_string())),
    }
}

/// A fresh directory `<out>/<timestamp>-<mode>`.
pub fn create_run_dir(out: &Path, mode: &Mode) -> Result<PathBuf, CliError> {
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S%.3f");
    let tag = mode.to_string().replace(':', "-");
    fs::create_dir_all(out)?;
    for n in 0.. {
        let name = if n == 0 { format!("{stamp}-{tag}") } else { format!("{stamp}-{tag}-{n}") };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("the directory counter is unbounded")
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub passed: bool,
    pub summary: String,
}

fn adaptive_config(cfg: &RunConfig, uniform: bool) -> Result<AdaptiveConfig, CliError> {
    let a = &cfg.adaptive;
    Ok(AdaptiveConfig {
        marking: MarkingConfig::new(a.theta, a.bisections_per_mark)?,
        eps: a.eps,
        max_dofs: Some(a.max_dofs),
        max_iters: Some(a.max_iters),
        boundary_jumps: a.boundary_jumps,
        uniform,
        ..Default::default()
    })
}

fn write_run_outputs(dir: &Path, problem: &ProblemSpec, run: &AdaptiveRun, cfg: &RunConfig) -> Result<String, CliError> {
    let mut csv = Vec::new();
    run.history.write_csv(&mut csv)?;
    fs::write(dir.join("history.csv"), csv)?;
    let u = run.final_solution();
    fs::write(dir.join("solution.json"), u.to_json()?)?;
    let mesh = run.final_mesh();
    let input = MeshInput {
        vertices: (0..mesh.num_vertices()).map(|v| mesh.vertex(v)).collect(),
        triangles: mesh.cells().iter().map(|c| c.vertices).collect(),
    };
    fs::write(dir.join("mesh.txt"), write_mesh_text(&input))?;
    let mut csv = Vec::new();
    run.fields.last().expect("at least one iteration").write_csv(&mut csv)?;
    fs::write(dir.join("indicators.csv"), csv)?;
    if cfg.output.vtk {
        vtk::export_vtk(u, run.fields.last(), &dir.join("solution.vtk"))?;
    }
    let mut checks = SuiteReport::new("checks", &problem.name);
    checks.merge(mesh_integrity("mesh", &run.meshes));
    checks.merge(estimator_reduction_suite(problem, run, cfg.adaptive.boundary_jumps)?);
    checks.merge(refinement_ratio_suite(problem, run));
    checks.write(dir)?;
    if let Ok(rates) = rate_fit(&run.history, RateAxis::Dofs, None) {
        fs::write(dir.join("rates.json"), serde_json::to_string_pretty(&rates).map_err(AfemError::from)?)?;
    }
    let last = run.history.records.last().expect("at least one iteration");
    Ok(format!(
        "{} iterations, {} elements, {} dofs, eta = {:.4e}{}",
        run.history.len(),
        last.elements,
        last.dofs,
        last.eta,
        last.energy_error.map(|e| format!(", energy error = {e:.4e}")).unwrap_or_default()
    ))
}

/// Executes the configured mode and writes every output under one new
/// directory. A failed suite yields [`CliError::SuiteFailed`] after its
/// reports are written.
pub fn run(cfg: &RunConfig, config_text: Option<&str>) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let problem = load_problem(cfg)?;
    let dir = create_run_dir(&cfg.output.dir, &cfg.mode)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    if let Some(text) = config_text {
        fs::write(dir.join("config.input.toml"), text)?;
    }
    match &cfg.mode {
        Mode::Adaptive | Mode::Uniform => {
            let acfg = adaptive_config(cfg, cfg.mode == Mode::Uniform)?;
            let run = anfem(Arc::clone(&problem.mesh), problem.load(), &problem.material, &acfg, problem.exact())?;
            let summary = write_run_outputs(&dir, &problem, &run, cfg)?;
            Ok(RunOutcome { dir, passed: true, summary })
        }
        Mode::Verify(suite) => {
            let opts = SuiteOptions {
                theta: cfg.adaptive.theta,
                boundary_jumps: cfg.adaptive.boundary_jumps,
                seed: cfg.seed,
                samples: cfg.verify.samples,
                levels: cfg.verify.levels,
                max_dofs: cfg.verify.max_dofs,
                reference: ReferenceConfig {
                    min_dofs: cfg.verify.reference_dofs,
                    theta: cfg.adaptive.theta,
                    boundary_jumps: cfg.adaptive.boundary_jumps,
                },
                cache_dir: cfg.verify.cache_dir.clone(),
            };
            let rep = run_suite(suite, &problem, &opts)?;
            rep.write(&dir)?;
            let failures: Vec<String> = rep.failures().iter().map(|c| c.name.clone()).collect();
            let summary = format!("{}: {} checks, {} failed", rep.suite, rep.checks.len(), failures.len());
            if failures.is_empty() {
                Ok(RunOutcome { dir, passed: true, summary })
            } else {
                Err(CliError::SuiteFailed(format!("{} ({}); reports in {}", summary, failures.join(", "), dir.display())))
            }
        }
    }
}

/// Caps the global thread pool from `AFEM_THREADS`.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("AFEM_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("AFEM_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}
