//! Files written for each experiment.

use std::io::Write;
use std::path::Path;

use landau_core::grid::write_field;
use landau_core::solver::Trajectory;
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::config::{ExperimentConfig, Scenario};
use crate::error::{io_err, Result};

/// One pass/fail comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable bound, e.g. `<= 1e-4` or `-1 +- 25%`.
    pub target: String,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, target: impl Into<String>, pass: bool) -> Self {
        Self { name: name.into(), value, target: target.into(), pass }
    }

    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::new(name, value, format!("<= {bound:e}"), value <= bound)
    }

    pub fn relative(name: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        let pass = crate::fits::within_relative(value, target, tol);
        Self::new(name, value, format!("{target} +- {}%", tol * 100.0), pass)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub scenario: Scenario,
    pub passed: bool,
    pub checks: Vec<Check>,
    /// Smallest coercivity estimate over the run, when a run was made.
    #[serde(rename = "K0")]
    pub k0: Option<f64>,
    pub c0: Option<f64>,
    pub elapsed_s: f64,
    pub metrics: serde_json::Value,
    pub config: ExperimentConfig,
}

impl Report {
    pub fn new(config: &ExperimentConfig, checks: Vec<Check>, metrics: serde_json::Value) -> Self {
        Self {
            name: config.name.clone(),
            scenario: config.scenario,
            passed: checks.iter().all(|c| c.pass),
            checks,
            k0: None,
            c0: None,
            elapsed_s: 0.0,
            metrics,
            config: config.clone(),
        }
    }

    pub fn with_k0(mut self, k0: f64) -> Self {
        self.k0 = Some(k0);
        self.c0 = Some(0.25 * k0);
        self
    }

    pub fn summary(&self) -> String {
        let mut out = format!("{} [{}]\n", self.name, if self.passed { "PASS" } else { "FAIL" });
        for c in &self.checks {
            out.push_str(&format!("  {} {} = {:.6e} (target {})\n", if c.pass { "ok  " } else { "FAIL" }, c.name, c.value, c.target));
        }
        out
    }
}

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn diagnostics_csv(traj: &Trajectory) -> String {
    let d = traj.spec().dim();
    let mut out = traj.csv_header();
    out.push_str(",min_f,entropy_flag\n");
    for r in traj.rows() {
        let mut cols = vec![num(r.time), num(r.dt), num(r.mass)];
        cols.extend(r.momentum.iter().take(d).map(|x| num(*x)));
        cols.extend([num(r.energy), num(r.entropy), num(r.k0)]);
        cols.extend(r.functionals.iter().map(|x| num(*x)));
        cols.push(num(r.min_f));
        cols.push(r.entropy_flag.to_string());
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |w| w.write_all(text.as_bytes()).map_err(io_err(path)))
}

pub fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<()> {
    write_text(&dir.join("diagnostics.csv"), &diagnostics_csv(traj))?;
    let path = dir.join("snapshots.bin");
    write_atomic(&path, |w| {
        for (t, f) in traj.snapshots() {
            write_field(w, f, *t)?;
        }
        Ok(())
    })
}

pub fn write_report(dir: &Path, report: &Report) -> Result<()> {
    write_text(&dir.join("report.json"), &serde_json::to_string_pretty(report)?)
}
