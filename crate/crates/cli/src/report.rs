//! Report assembly and emission: a versioned JSON document and a markdown summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use twoweight::corpus::MeasurePair;
use twoweight::energy::EnergyReport;
use twoweight::poisson::MuckenhouptReport;

use crate::run::{CoronaReport, FunctionalReport, OperatorReport, ReversalReport};
use crate::scenario::{Scenario, Suite};

pub const SCHEMA: u32 = 1;

const REL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    /// Unasserted checks are reported and never fail the run.
    pub asserted: bool,
    pub passed: bool,
    pub value: f64,
    pub bound: Option<f64>,
    pub witness: String,
}

impl Check {
    /// `value ≤ bound` up to a relative tolerance.
    pub fn asserted(name: &str, value: f64, bound: f64, witness: String) -> Self {
        Self { name: name.into(), asserted: true, passed: value <= bound * (1.0 + REL_TOL), value, bound: Some(bound), witness }
    }

    /// Asserted when a bound is configured, reported otherwise.
    pub fn optional(name: &str, value: f64, bound: Option<f64>, witness: String) -> Self {
        match bound {
            Some(b) => Self::asserted(name, value, b, witness),
            None => Self { name: name.into(), asserted: false, passed: true, value, bound: None, witness },
        }
    }

    pub fn flag(name: &str, holds: bool, witness: &str) -> Self {
        let value = if holds { 0.0 } else { 1.0 };
        Self { name: name.into(), asserted: true, passed: holds, value, bound: Some(0.0), witness: witness.into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct InstanceReport {
    pub index: usize,
    pub sigma_atoms: usize,
    pub omega_atoms: usize,
    pub muckenhoupt: Option<MuckenhouptReport>,
    pub energy: Option<EnergyReport>,
    pub operator: Option<OperatorReport>,
    /// `𝔑` when only the necessity suite asked for it.
    pub norm: Option<f64>,
    pub corona: Option<CoronaReport>,
    pub funcenergy: Option<FunctionalReport>,
    pub reversal: Option<ReversalReport>,
    pub checks: Vec<Check>,
    /// The measures of an instance with a failing check, for replay.
    pub replay: Option<MeasurePair>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub asserted: bool,
    pub evaluated: usize,
    pub failed: usize,
    pub worst: f64,
    pub worst_instance: Option<usize>,
    /// Bound at the worst instance; bounds may vary per instance.
    pub bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub schema: u32,
    pub scenario: String,
    /// Seconds since the epoch; the only field that varies between replays.
    pub generated_at: u64,
    pub dimension: usize,
    pub alpha: f64,
    pub map: String,
    pub grid_depth: u32,
    pub suites: Vec<Suite>,
    pub seed: Option<u64>,
    pub summary: Vec<CheckSummary>,
    pub passed: bool,
    pub instances: Vec<InstanceReport>,
}

impl Report {
    pub fn assemble(scenario: &Scenario, instances: Vec<InstanceReport>) -> Self {
        let mut summary: Vec<CheckSummary> = Vec::new();
        for inst in &instances {
            for c in &inst.checks {
                let slot = match summary.iter().position(|s| s.name == c.name) {
                    Some(i) => i,
                    None => {
                        summary.push(CheckSummary {
                            name: c.name.clone(),
                            asserted: c.asserted,
                            evaluated: 0,
                            failed: 0,
                            worst: f64::NEG_INFINITY,
                            worst_instance: None,
                            bound: c.bound,
                        });
                        summary.len() - 1
                    }
                };
                let s = &mut summary[slot];
                s.evaluated += 1;
                s.failed += usize::from(c.asserted && !c.passed);
                if c.value > s.worst || s.worst_instance.is_none() {
                    s.worst = c.value;
                    s.worst_instance = Some(inst.index);
                    s.bound = c.bound;
                }
            }
        }
        let passed = summary.iter().all(|s| s.failed == 0);
        Self {
            schema: SCHEMA,
            scenario: scenario.name.clone(),
            generated_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            dimension: scenario.dimension,
            alpha: scenario.alpha,
            map: scenario.map.name().into(),
            grid_depth: scenario.grid.depth,
            suites: scenario.suites(),
            seed: scenario.corpus.map(|c| c.seed),
            summary,
            passed,
            instances,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        let _ = writeln!(md, "# Scenario `{}`\n", self.scenario);
        let _ = writeln!(
            md,
            "n = {}, alpha = {}, map = {}, grid depth {}, {} instances, seed {}.\n",
            self.dimension,
            self.alpha,
            self.map,
            self.grid_depth,
            self.instances.len(),
            self.seed.map_or("none".into(), |s| s.to_string())
        );
        let _ = writeln!(md, "**Result: {}**\n", if self.passed { "PASS" } else { "FAIL" });
        let _ = writeln!(md, "| check | asserted | evaluated | failed | worst | bound | worst instance |");
        let _ = writeln!(md, "|---|---|---|---|---|---|---|");
        for s in &self.summary {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} |",
                s.name,
                s.asserted,
                s.evaluated,
                s.failed,
                num(s.worst),
                s.bound.map_or("-".into(), num),
                s.worst_instance.map_or("-".into(), |i| i.to_string())
            );
        }
        let _ = writeln!(md, "\n| instance | offset A2 | punct A2 | energy A2 | norm | testing² | dual testing² | WBP | strong energy | functional energy² | reversal |");
        let _ = writeln!(md, "|---|---|---|---|---|---|---|---|---|---|---|");
        for i in &self.instances {
            let m = i.muckenhoupt.as_ref();
            let o = i.operator.as_ref();
            let cell = |v: Option<f64>| v.map_or("-".into(), num);
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                i.index,
                cell(m.map(|m| m.offset_a2.value)),
                cell(m.map(|m| m.punct_a2.value)),
                cell(m.map(|m| m.energy_a2.value)),
                cell(o.map(|o| o.norm.value).or(i.norm)),
                cell(o.map(|o| o.testing_sq.value)),
                cell(o.map(|o| o.testing_dual_sq.value)),
                cell(o.map(|o| o.weak_boundedness.value)),
                cell(i.energy.as_ref().map(|e| e.strong_energy.value)),
                cell(i.funcenergy.as_ref().map(|f| f.functional_energy_sq)),
                cell(i.reversal.as_ref().map(|r| r.check.ratio)),
            );
        }
        md
    }

    /// Writes `report.json` and `report.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let (json, md) = (dir.join("report.json"), dir.join("report.md"));
        std::fs::write(&json, self.to_json()).with_context(|| format!("writing {}", json.display()))?;
        std::fs::write(&md, self.to_markdown()).with_context(|| format!("writing {}", md.display()))?;
        Ok((json, md))
    }
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6e}")
    } else {
        v.to_string()
    }
}
