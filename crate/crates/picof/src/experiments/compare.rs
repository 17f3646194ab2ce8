//! Matched-seed comparison reports, computed from serialized run artifacts
//! (no re-simulation).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RunMode, RunSummary};
use crate::error::{Error, Result};
use crate::trace::violations_in_csv;

/// Tolerance factor for the hydrogen-consumption dominance check.
pub const H2_DOMINANCE_FACTOR: f64 = 1.01;

/// One matched-seed pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub violations_picof: usize,
    pub violations_baseline: usize,
    /// `violations(picof) <= violations(baseline)`.
    pub violations_dominant: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cumulative_h2_picof_mol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cumulative_h2_baseline_mol: Option<f64>,
    /// `h2(picof) <= 1.01 * h2(baseline)`, when hydrogen totals exist.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h2_dominant: Option<bool>,
    pub final_objective_picof: f64,
    pub final_objective_baseline: f64,
    pub wall_clock_picof_s: f64,
    pub wall_clock_baseline_s: f64,
    /// wall(picof) / wall(baseline).
    pub runtime_ratio: f64,
}

/// Cross-run report: per-seed rows plus aggregate verdicts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scenario_name: String,
    pub scenario_hash: String,
    pub seeds: Vec<SeedComparison>,
    pub all_violations_dominant: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub all_h2_dominant: Option<bool>,
}

impl ComparisonReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// A run's artifacts as read back from its output directory.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub summary: RunSummary,
    /// Violations recounted from the trace (plant truth), not the summary.
    pub trace_violations: usize,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let summary = RunSummary::load(&dir.join("summary.json"))?;
    let trace = std::fs::read_to_string(dir.join("trace.csv"))?;
    Ok(LoadedRun {
        summary,
        trace_violations: violations_in_csv(&trace)?,
    })
}

/// Compares a matched pair of runs given their summaries and recounted
/// violation totals.
pub fn compare_loaded(picof: &LoadedRun, baseline: &LoadedRun) -> Result<ComparisonReport> {
    if picof.summary.mode != RunMode::Picof || baseline.summary.mode != RunMode::Baseline {
        return Err(Error::config(
            "compare expects a picof run directory then a baseline run directory",
        ));
    }
    if picof.summary.scenario_hash != baseline.summary.scenario_hash {
        return Err(Error::ScenarioMismatch(format!(
            "scenario hashes differ: {} vs {}",
            picof.summary.scenario_hash, baseline.summary.scenario_hash
        )));
    }
    if picof.summary.seed != baseline.summary.seed {
        return Err(Error::ScenarioMismatch(format!(
            "seeds differ: {} vs {}",
            picof.summary.seed, baseline.summary.seed
        )));
    }
    let h2 = match (
        picof.summary.cumulative_h2_mol,
        baseline.summary.cumulative_h2_mol,
    ) {
        (Some(p), Some(b)) => Some((p, b)),
        _ => None,
    };
    let row = SeedComparison {
        seed: picof.summary.seed,
        violations_picof: picof.trace_violations,
        violations_baseline: baseline.trace_violations,
        violations_dominant: picof.trace_violations <= baseline.trace_violations,
        cumulative_h2_picof_mol: h2.map(|(p, _)| p),
        cumulative_h2_baseline_mol: h2.map(|(_, b)| b),
        h2_dominant: h2.map(|(p, b)| p <= H2_DOMINANCE_FACTOR * b),
        final_objective_picof: picof.summary.final_objective,
        final_objective_baseline: baseline.summary.final_objective,
        wall_clock_picof_s: picof.summary.wall_clock_s,
        wall_clock_baseline_s: baseline.summary.wall_clock_s,
        runtime_ratio: picof.summary.wall_clock_s / baseline.summary.wall_clock_s,
    };
    Ok(ComparisonReport {
        scenario_name: picof.summary.scenario_name.clone(),
        scenario_hash: picof.summary.scenario_hash.clone(),
        all_violations_dominant: row.violations_dominant,
        all_h2_dominant: row.h2_dominant,
        seeds: vec![row],
    })
}

/// Compares two run directories (picof first, baseline second).
pub fn compare_pair(picof_dir: &Path, baseline_dir: &Path) -> Result<ComparisonReport> {
    compare_loaded(&load_run(picof_dir)?, &load_run(baseline_dir)?)
}

/// Merges single-pair reports for the same scenario into one multi-seed
/// report.
pub fn merge_reports(reports: Vec<ComparisonReport>) -> Result<ComparisonReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::config("no reports to merge"))?
        .clone();
    let mut merged = ComparisonReport {
        scenario_name: first.scenario_name,
        scenario_hash: first.scenario_hash,
        seeds: Vec::new(),
        all_violations_dominant: true,
        all_h2_dominant: None,
    };
    for report in reports {
        if report.scenario_hash != merged.scenario_hash {
            return Err(Error::ScenarioMismatch(
                "cannot merge reports from different scenarios".into(),
            ));
        }
        for row in report.seeds {
            merged.all_violations_dominant &= row.violations_dominant;
            merged.all_h2_dominant = match (merged.all_h2_dominant, row.h2_dominant) {
                (None, v) => v,
                (Some(acc), Some(v)) => Some(acc && v),
                (Some(acc), None) => Some(acc),
            };
            merged.seeds.push(row);
        }
    }
    merged.seeds.sort_by_key(|r| r.seed);
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{run_toy, RunPaths, ToyScenario};

    fn quick_scenario() -> ToyScenario {
        let mut sc = ToyScenario::default();
        sc.trials = 2;
        sc.solver.candidate_count = 48;
        sc.solver.local_refine = 30;
        sc.solver.restarts = 2;
        sc.gp.restarts = 2;
        sc.gp.search_iters = 50;
        sc
    }

    fn write_run(dir: &Path, seed: u64, picof: bool) -> std::path::PathBuf {
        let run = run_toy(&quick_scenario(), seed, picof).unwrap();
        let mode = if picof { RunMode::Picof } else { RunMode::Baseline };
        let paths = RunPaths::prepare(dir, "toy", seed, mode, false).unwrap();
        super::super::write_run_outputs(&paths, &run.trace, &run.summary).unwrap();
        paths.dir
    }

    #[test]
    fn pair_comparison_reads_back_run_directories() {
        let dir = tempfile::tempdir().unwrap();
        let picof_dir = write_run(dir.path(), 0, true);
        let baseline_dir = write_run(dir.path(), 0, false);
        let report = compare_pair(&picof_dir, &baseline_dir).unwrap();
        assert_eq!(report.seeds.len(), 1);
        assert_eq!(report.seeds[0].seed, 0);
        assert!(report.seeds[0].runtime_ratio > 0.0);
        // The toy scenario has no hydrogen totals.
        assert!(report.all_h2_dominant.is_none());
    }

    #[test]
    fn mismatched_seeds_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let picof_dir = write_run(dir.path(), 0, true);
        let baseline_dir = write_run(dir.path(), 1, false);
        let err = compare_pair(&picof_dir, &baseline_dir).unwrap_err();
        assert!(matches!(err, Error::ScenarioMismatch(_)));
    }

    #[test]
    fn swapped_modes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let picof_dir = write_run(dir.path(), 0, true);
        let baseline_dir = write_run(dir.path(), 0, false);
        assert!(compare_pair(&baseline_dir, &picof_dir).is_err());
    }

    #[test]
    fn merge_aggregates_verdicts_across_seeds() {
        let mk = |seed, dominant| ComparisonReport {
            scenario_name: "toy".into(),
            scenario_hash: "h".into(),
            seeds: vec![SeedComparison {
                seed,
                violations_picof: if dominant { 0 } else { 3 },
                violations_baseline: 1,
                violations_dominant: dominant,
                cumulative_h2_picof_mol: None,
                cumulative_h2_baseline_mol: None,
                h2_dominant: None,
                final_objective_picof: -1.0,
                final_objective_baseline: -1.0,
                wall_clock_picof_s: 2.0,
                wall_clock_baseline_s: 1.0,
                runtime_ratio: 2.0,
            }],
            all_violations_dominant: dominant,
            all_h2_dominant: None,
        };
        let merged = merge_reports(vec![mk(0, true), mk(1, false)]).unwrap();
        assert_eq!(merged.seeds.len(), 2);
        assert!(!merged.all_violations_dominant);
    }
}
