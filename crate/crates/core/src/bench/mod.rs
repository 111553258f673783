//! Benchmark problems, reference solutions, rate fits and verification
//! suites.

pub mod problems;
pub mod rates;
pub mod reference;
pub mod report;
pub mod suites;

pub use problems::{problem_by_name, problem_lshape, problem_square_smooth, ProblemSpec, PROBLEM_NAMES};
pub use rates::{decay_rate, loglog_fit, rate_fit, RateAxis, RateReport};
pub use reference::{reference_solution, ReferenceConfig, ReferenceSolution, Truth};
pub use report::{max_over_median, median, Check, CheckKind, SuiteReport};
pub use suites::{run_suite, SuiteConfig, SuiteOptions, SUITE_NAMES};
