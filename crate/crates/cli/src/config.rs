//! Run configuration: a TOML file with sections, overridden by flags.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use morley_afem::bench::{PROBLEM_NAMES, SUITE_NAMES};
use morley_afem::estimator::BoundaryJumps;
use morley_afem::system::PlateMaterial;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    Adaptive,
    Uniform,
    Verify(String),
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adaptive" => Ok(Mode::Adaptive),
            "uniform" => Ok(Mode::Uniform),
            _ => match s.strip_prefix("verify:") {
                Some(suite) if SUITE_NAMES.contains(&suite) => Ok(Mode::Verify(suite.into())),
                Some(suite) => Err(format!("unknown suite {suite:?}; known suites: {}", SUITE_NAMES.join(", "))),
                None => Err(format!("unknown mode {s:?}; expected adaptive, uniform or verify:<suite>")),
            },
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Adaptive => f.write_str("adaptive"),
            Mode::Uniform => f.write_str("uniform"),
            Mode::Verify(s) => write!(f, "verify:{s}"),
        }
    }
}

impl Serialize for Mode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub name: String,
    /// Mesh file; the problem then uses `f = 1` on that mesh.
    pub mesh: Option<PathBuf>,
}

impl Default for ProblemSection {
    fn default() -> Self {
        ProblemSection { name: "square_smooth".into(), mesh: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveSection {
    pub theta: f64,
    pub eps: f64,
    pub max_dofs: usize,
    pub max_iters: usize,
    pub boundary_jumps: BoundaryJumps,
    pub bisections_per_mark: u8,
}

impl Default for AdaptiveSection {
    fn default() -> Self {
        AdaptiveSection {
            theta: 0.3,
            eps: 1e-6,
            max_dofs: 100_000,
            max_iters: 100,
            boundary_jumps: BoundaryJumps::Trace,
            bisections_per_mark: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub samples: usize,
    pub levels: usize,
    pub max_dofs: usize,
    pub reference_dofs: usize,
    pub cache_dir: Option<PathBuf>,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection { samples: 20, levels: 6, max_dofs: 20_000, reference_dofs: 500_000, cache_dir: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub vtk: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("afem-out"), vtk: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub problem: ProblemSection,
    pub material: PlateMaterial,
    pub adaptive: AdaptiveSection,
    pub verify: VerifySection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Adaptive,
            seed: 2024,
            problem: ProblemSection::default(),
            material: PlateMaterial::default(),
            adaptive: AdaptiveSection::default(),
            verify: VerifySection::default(),
            output: OutputSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {}", e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every numeric field against its legal range.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let a = &self.adaptive;
        if !(a.theta > 0.0 && a.theta < 1.0) {
            return bad(format!("theta must lie in the open interval (0,1), got {}", a.theta));
        }
        if !(a.eps >= 0.0 && a.eps.is_finite()) {
            return bad(format!("eps must be finite and non-negative, got {}", a.eps));
        }
        if a.max_dofs == 0 {
            return bad("max_dofs must be positive".into());
        }
        if !(1..=2).contains(&a.bisections_per_mark) {
            return bad(format!("bisections_per_mark must be 1 or 2, got {}", a.bisections_per_mark));
        }
        if let Err(e) = PlateMaterial::new(self.material.young, self.material.poisson) {
            return bad(e.to_string());
        }
        if self.problem.mesh.is_none() && !PROBLEM_NAMES.contains(&self.problem.name.as_str()) {
            return bad(format!("unknown problem {:?}; known problems: {}", self.problem.name, PROBLEM_NAMES.join(", ")));
        }
        let v = &self.verify;
        if v.samples == 0 || v.levels < 2 || v.max_dofs == 0 || v.reference_dofs == 0 {
            return bad("verify: samples, max_dofs and reference_dofs must be positive and levels at least 2".into());
        }
        Ok(())
    }
}

/// `E,nu` as given to `--material`.
pub fn parse_material(s: &str) -> Result<PlateMaterial, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [e, nu] = parts.as_slice() else {
        return Err(format!("expected E,nu, got {s:?}"));
    };
    let e: f64 = e.parse().map_err(|_| format!("bad Young modulus {e:?}"))?;
    let nu: f64 = nu.parse().map_err(|_| format!("bad Poisson ratio {nu:?}"))?;
    PlateMaterial::new(e, nu).map_err(|e| e.to_string())
}
