//! Machine- and human-readable suite reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    /// `value ≤ tolerance` for a relative defect.
    Identity,
    /// `value ≤ tolerance` for a measured ratio such as max/median.
    Bound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub kind: CheckKind,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn at_most(name: &str, kind: CheckKind, value: f64, tolerance: f64, detail: impl Into<String>) -> Check {
        Check { name: name.into(), kind, value, tolerance, passed: value <= tolerance, detail: detail.into() }
    }

    /// A pass/fail fact with no numeric margin.
    pub fn holds(name: &str, passed: bool, detail: impl Into<String>) -> Check {
        let value = if passed { 0.0 } else { 1.0 };
        Check { name: name.into(), kind: CheckKind::Bound, value, tolerance: 0.0, passed, detail: detail.into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub problem: String,
    /// Errors measured against a reference solution instead of the exact one.
    pub reference_based: bool,
    pub checks: Vec<Check>,
    /// Measured sequences (constants per level, ratios per pair).
    pub measured: BTreeMap<String, Vec<f64>>,
}

impl SuiteReport {
    pub fn new(suite: &str, problem: &str) -> SuiteReport {
        SuiteReport { suite: suite.into(), problem: problem.into(), ..Default::default() }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn record(&mut self, key: &str, value: f64) {
        self.measured.entry(key.into()).or_default().push(value);
    }

    pub fn merge(&mut self, other: SuiteReport) {
        self.reference_based |= other.reference_based;
        for mut c in other.checks {
            c.name = format!("{}/{}", other.problem, c.name);
            self.checks.push(c);
        }
        for (k, v) in other.measured {
            self.measured.entry(format!("{}/{}", other.problem, k)).or_default().extend(v);
        }
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {} ({})\n", self.suite, self.problem);
        let _ = writeln!(s, "Result: **{}**\n", if self.passed() { "PASS" } else { "FAIL" });
        if self.reference_based {
            let _ = writeln!(s, "Errors are reference-based.\n");
        }
        let _ = writeln!(s, "| check | kind | value | tolerance | result | detail |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for c in &self.checks {
            let _ = writeln!(
                s,
                "| {} | {:?} | {:.3e} | {:.3e} | {} | {} |",
                c.name,
                c.kind,
                c.value,
                c.tolerance,
                if c.passed { "PASS" } else { "FAIL" },
                c.detail
            );
        }
        if !self.measured.is_empty() {
            let _ = writeln!(s, "\n## Measured\n");
            for (k, v) in &self.measured {
                let vals: Vec<String> = v.iter().map(|x| format!("{x:.4e}")).collect();
                let _ = writeln!(s, "- {k}: {}", vals.join(", "));
            }
        }
        s
    }

    /// Writes `<suite>.json` and `<suite>.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let stem = self.suite.replace([':', '/'], "_");
        let json = dir.join(format!("{stem}.json"));
        let md = dir.join(format!("{stem}.md"));
        std::fs::write(&json, self.to_json()?)?;
        std::fs::write(&md, self.to_markdown())?;
        Ok((json, md))
    }
}

/// Median of finite values (mean of the middle pair for even counts).
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `max / median`, the boundedness measure for empirical constants.
pub fn max_over_median(values: &[f64]) -> f64 {
    let m = median(values);
    let max = values.iter().copied().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if m > 0.0 {
        max / m
    } else if max <= 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}
