//! Plot-ready summaries of a run directory.
//!
//! The report depends only on files in the directory, so regenerating it is
//! byte-for-byte reproducible.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::Phase;
use crate::codesign::{load_log, EvalRecord};
use crate::config::ExperimentConfig;
use crate::error::ReportError;
use crate::rewards::CommandFrame;
use crate::scenario::{alignment_from_series, median, stop_time_from_series, ScenarioResult};
use crate::sim::TrajectoryRecord;

pub const EVAL_LOG: &str = "evals.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const CONVERGENCE_CSV: &str = "convergence.csv";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const SWEEP_TSV: &str = "sweep.tsv";
pub const SELF_ALIGN_JSON: &str = "self_align.json";

pub fn hockey_stop_file(frame: CommandFrame) -> &'static str {
    match frame {
        CommandFrame::BaseFrame => "hockey_stop_base.json",
        CommandFrame::WorldFrame => "hockey_stop_world.json",
    }
}

/// One evaluation with the best J seen up to and including it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub iteration: usize,
    pub phase: Phase,
    pub j: f64,
    pub best_j: f64,
    pub failed: bool,
    pub angles_deg: Vec<f64>,
}

pub fn convergence(records: &[EvalRecord]) -> Vec<ConvergenceRow> {
    let mut best = f64::INFINITY;
    records
        .iter()
        .map(|r| {
            best = best.min(r.j);
            ConvergenceRow {
                iteration: r.iteration,
                phase: r.phase,
                j: r.j,
                best_j: best,
                failed: r.failed,
                angles_deg: r.design.angles_deg.clone(),
            }
        })
        .collect()
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("iteration,phase,j,best_j,failed,angles_deg\n");
    for r in rows {
        let angles: Vec<String> = r.angles_deg.iter().map(|a| a.to_string()).collect();
        let _ = writeln!(out, "{},{},{},{},{},{}", r.iteration, r.phase.label(), r.j, r.best_j, u8::from(r.failed), angles.join(";"));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// Present when the directory holds an evaluation log.
    pub convergence_csv: Option<String>,
    pub summary: String,
}

fn read(path: &Path) -> Result<String, ReportError> {
    fs::read_to_string(path).map_err(|source| ReportError::Io { path: path.to_path_buf(), source })
}

fn read_scenario(path: &Path) -> Result<ScenarioResult, ReportError> {
    serde_json::from_str(&read(path)?).map_err(|e| ReportError::Malformed { path: path.to_path_buf(), reason: e.to_string() })
}

fn read_series(path: &Path) -> Result<Vec<TrajectoryRecord>, ReportError> {
    read(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| ReportError::Malformed { path: path.to_path_buf(), reason: e.to_string() }))
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

/// Trials whose stored value disagrees with the value recomputed from their
/// series. Discarded trials and trials without a series are skipped.
fn recheck<F>(dir: &Path, result: &ScenarioResult, recompute: F) -> Result<(usize, usize), ReportError>
where
    F: Fn(&[TrajectoryRecord], f64) -> Option<f64>,
{
    let (mut checked, mut mismatched) = (0, 0);
    for t in &result.trials {
        let (Some(rel), Some(_)) = (&t.series, t.value) else { continue };
        let series = read_series(&dir.join(rel))?;
        checked += 1;
        let again = recompute(&series, t.t_switch);
        if again.map(f64::to_bits) != t.value.map(f64::to_bits) {
            mismatched += 1;
        }
    }
    Ok((checked, mismatched))
}

fn scenario_lines(out: &mut String, name: &str, unit: &str, r: &ScenarioResult, recheck: (usize, usize)) {
    let valid = r.trials.iter().filter(|t| t.value.is_some()).count();
    let flagged = r.trials.iter().filter(|t| t.flagged).count();
    let _ = writeln!(out, "{name} ({:?}): trials {}, with value {valid}, flagged {flagged}", r.frame, r.trials.len());
    let _ = writeln!(out, "  median {} {unit}", fmt_opt(r.median()));
    let unflagged: Vec<f64> = r.trials.iter().filter(|t| !t.flagged).filter_map(|t| t.value).collect();
    let _ = writeln!(out, "  median over unflagged trials {} {unit}", fmt_opt(median(&unflagged)));
    if recheck.0 > 0 {
        let _ = writeln!(out, "  recomputed from series: {} of {} trials agree", recheck.0 - recheck.1, recheck.0);
    }
}

/// Builds the report for `dir` from whatever results it holds.
pub fn build_report(dir: &Path) -> Result<Report, ReportError> {
    if !dir.is_dir() {
        return Err(ReportError::MissingDir(dir.to_path_buf()));
    }
    let config = {
        let p = dir.join(CONFIG_FILE);
        if p.exists() {
            ExperimentConfig::load(&p).map_err(|e| ReportError::Malformed { path: p.clone(), reason: e.to_string() })?
        } else {
            ExperimentConfig::default()
        }
    };
    let mut summary = String::new();
    let mut found = false;
    let mut csv = None;

    let log = dir.join(EVAL_LOG);
    if log.exists() {
        found = true;
        let records = load_log(&log)?;
        let rows = convergence(&records);
        let _ = writeln!(summary, "evaluations: {}", rows.len());
        if let Some(best) = crate::codesign::best_record(&records) {
            let _ = writeln!(
                summary,
                "best: iteration {}, J {:.6}, {} angles_deg {:?}",
                best.iteration, best.j, best.design.mode, best.design.angles_deg
            );
        }
        for phase in [Phase::Initial, Phase::Ucb, Phase::UcbAnneal, Phase::Ei] {
            let in_phase: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.phase == phase).collect();
            if let (Some(first), Some(last)) = (in_phase.first(), in_phase.last()) {
                let _ = writeln!(
                    summary,
                    "phase {}: iterations {}..={}, best J at end {:.6}",
                    phase.label(),
                    first.iteration,
                    last.iteration,
                    last.best_j
                );
            }
        }
        let failed = rows.iter().filter(|r| r.failed).count();
        let _ = writeln!(summary, "failed evaluations: {failed}");
        csv = Some(convergence_csv(&rows));
    }

    let threshold = config.scenario.hockey_stop.stop_threshold;
    let timeout = config.scenario.hockey_stop.stop_timeout;
    let mut stop_medians = [None, None];
    for (i, frame) in [CommandFrame::BaseFrame, CommandFrame::WorldFrame].into_iter().enumerate() {
        let p = dir.join(hockey_stop_file(frame));
        if !p.exists() {
            continue;
        }
        found = true;
        let r = read_scenario(&p)?;
        let check = recheck(dir, &r, |s, t_switch| {
            // Nothing is recorded when the body starts at rest.
            if s.is_empty() {
                return Some(0.0);
            }
            Some(stop_time_from_series(s, t_switch, threshold).unwrap_or(timeout))
        })?;
        scenario_lines(&mut summary, "hockey-stop", "s", &r, check);
        stop_medians[i] = r.median();
    }
    if let [Some(base), Some(world)] = stop_medians {
        let ratio = if base > 0.0 { Some(world / base) } else { None };
        let _ = writeln!(summary, "hockey-stop median ratio world/base: {}", fmt_opt(ratio));
    }

    let p = dir.join(SELF_ALIGN_JSON);
    if p.exists() {
        found = true;
        let r = read_scenario(&p)?;
        let check = recheck(dir, &r, |s, _| alignment_from_series(s))?;
        scenario_lines(&mut summary, "self-align", "rad", &r, check);
    }

    let p = dir.join(SWEEP_TSV);
    if p.exists() {
        found = true;
        let text = read(&p)?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let cols: Vec<&str> = line.split('\t').collect();
            let parsed = (cols.len() == 3)
                .then(|| Some((cols[0].parse::<f64>().ok()?, cols[1].parse::<f64>().ok()?, cols[2] == "1")))
                .flatten();
            let Some(row) = parsed else {
                return Err(ReportError::Malformed { path: p.clone(), reason: format!("line {}", i + 1) });
            };
            rows.push(row);
        }
        let failed = rows.iter().filter(|r| r.2).count();
        let best = rows.iter().filter(|r| !r.2 && r.1.is_finite()).min_by(|a, b| a.1.total_cmp(&b.1));
        let _ = writeln!(summary, "directional sweep: {} directions, {failed} failed", rows.len());
        if let Some((alpha, cot, _)) = best {
            let _ = writeln!(summary, "  lowest CoT {cot:.4} at alpha {alpha} deg");
        }
    }

    if !found {
        return Err(ReportError::NoInputs {
            dir: dir.to_path_buf(),
            expected: [EVAL_LOG, "hockey_stop_base.json", "hockey_stop_world.json", SELF_ALIGN_JSON, SWEEP_TSV]
                .join(", "),
        });
    }
    Ok(Report { convergence_csv: csv, summary })
}

/// Builds the report and writes it into `dir`. Returns the files written.
pub fn write_report(dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let report = build_report(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: &str| -> Result<(), ReportError> {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|source| ReportError::Io { path: p.clone(), source })?;
        written.push(p);
        Ok(())
    };
    if let Some(csv) = &report.convergence_csv {
        put(CONVERGENCE_CSV, csv)?;
    }
    put(SUMMARY_TXT, &report.summary)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{CouplingMode, DesignRecord, DesignVector};

    fn rec(i: usize, j: f64, phase: Phase) -> EvalRecord {
        EvalRecord {
            iteration: i,
            phase,
            design: DesignRecord::from_reduced(&[0.1 * i as f64], CouplingMode::Coupled1D),
            expanded: DesignVector::parallel(),
            seed: i as u64,
            j,
            failed: false,
            checkpoint: None,
            gp_hyper: None,
        }
    }

    #[test]
    fn best_so_far_is_non_increasing() {
        let recs: Vec<EvalRecord> =
            [3.0, 1.0, 2.0, 0.5, 0.7].iter().enumerate().map(|(i, &j)| rec(i, j, Phase::Ucb)).collect();
        let rows = convergence(&recs);
        assert_eq!(rows.iter().map(|r| r.best_j).collect::<Vec<_>>(), vec![3.0, 1.0, 1.0, 0.5, 0.5]);
        let csv = convergence_csv(&rows);
        assert_eq!(csv.lines().count(), 1 + recs.len());
    }

    #[test]
    fn empty_log_gives_valid_report() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(EVAL_LOG), "").unwrap();
        let r = build_report(dir.path()).unwrap();
        assert_eq!(r.convergence_csv.as_deref(), Some("iteration,phase,j,best_j,failed,angles_deg\n"));
        assert!(r.summary.contains("evaluations: 0"));
    }

    #[test]
    fn missing_inputs_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = build_report(dir.path()).unwrap_err();
        assert!(err.to_string().contains(EVAL_LOG), "{err}");
        let err = build_report(&dir.path().join("nope")).unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }
}
