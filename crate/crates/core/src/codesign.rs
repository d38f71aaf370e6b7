//! Outer loop: Bayesian optimization over wheel designs with an append-only,
//! resumable evaluation log.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::acquisition::{propose_next, AcquisitionSchedule, Phase};
use crate::design::{expand_design, from_unit_cube, to_unit_cube, CouplingMode, DesignRecord, DesignVector};
use crate::error::CodesignError;
use crate::gp::{halton, GpConfig, GpHyper, GpModel};
use crate::policy::{Checkpoint, CheckpointMeta};
use crate::train::{mix_seed, train_policy, InnerLoopConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoConfig {
    pub mode: CouplingMode,
    /// Total evaluations, initial design included.
    pub budget: usize,
    /// Initial design size; `2 d + 2` when absent.
    pub initial_points: Option<usize>,
    pub ucb_fraction: f64,
    pub anneal_fraction: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Inner-loop runs averaged per design, each with its own seed.
    pub seeds_per_design: usize,
    pub gp: GpConfig,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            mode: CouplingMode::Coupled1D,
            budget: 12,
            initial_points: None,
            ucb_fraction: 0.4,
            anneal_fraction: 0.4,
            beta_start: 4.0,
            beta_end: 1.0,
            seeds_per_design: 1,
            gp: GpConfig::default(),
        }
    }
}

impl BoConfig {
    pub fn initial_size(&self) -> usize {
        self.initial_points.unwrap_or(2 * self.mode.free_dims() + 2)
    }

    pub fn schedule(&self) -> AcquisitionSchedule {
        let steps = self.budget.saturating_sub(self.initial_size());
        AcquisitionSchedule::from_fractions(steps, self.ucb_fraction, self.anneal_fraction, self.beta_start, self.beta_end)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.initial_size() < 2 {
            return Err("initial_points must be >= 2".into());
        }
        if self.budget < self.initial_size() {
            return Err(format!("budget {} is below the initial design size {}", self.budget, self.initial_size()));
        }
        if !(self.ucb_fraction >= 0.0 && self.anneal_fraction >= 0.0 && self.ucb_fraction + self.anneal_fraction <= 1.0) {
            return Err("phase fractions must be non-negative and sum to at most 1".into());
        }
        if self.seeds_per_design == 0 {
            return Err("seeds_per_design must be >= 1".into());
        }
        self.schedule().validate()?;
        self.gp.validate()
    }
}

/// One line of the evaluation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub iteration: usize,
    pub phase: Phase,
    /// Free coordinates as proposed.
    pub design: DesignRecord,
    /// The four wheel angles that were evaluated, rad.
    pub expanded: DesignVector,
    pub seed: u64,
    pub j: f64,
    pub failed: bool,
    pub checkpoint: Option<String>,
    /// Hyperparameters of the surrogate that proposed this design.
    pub gp_hyper: Option<GpHyper>,
}

/// Result of scoring one design.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub j: f64,
    pub failed: bool,
    pub checkpoint: Option<String>,
}

pub trait DesignEvaluator {
    fn evaluate(&mut self, iteration: usize, design: &DesignVector, seed: u64) -> Result<Evaluation, CodesignError>;
}

/// Wraps a plain objective `J(design, seed)`.
pub struct FnEvaluator<F>(pub F);

impl<F: FnMut(&DesignVector, u64) -> f64> DesignEvaluator for FnEvaluator<F> {
    fn evaluate(&mut self, _iteration: usize, design: &DesignVector, seed: u64) -> Result<Evaluation, CodesignError> {
        Ok(Evaluation { j: (self.0)(design, seed), failed: false, checkpoint: None })
    }
}

/// Scores designs by training a policy with [`train_policy`].
pub struct TrainingEvaluator {
    pub inner: InnerLoopConfig,
    pub seeds_per_design: usize,
    /// Where checkpoints go; none are written when absent.
    pub checkpoint_dir: Option<PathBuf>,
}

impl DesignEvaluator for TrainingEvaluator {
    fn evaluate(&mut self, iteration: usize, design: &DesignVector, seed: u64) -> Result<Evaluation, CodesignError> {
        let mut js = Vec::new();
        let mut failed = false;
        let mut checkpoint = None;
        for k in 0..self.seeds_per_design.max(1) {
            let run_seed = if k == 0 { seed } else { mix_seed(seed, k as u64) };
            match train_policy(design, &self.inner, run_seed) {
                Ok(out) => {
                    failed |= out.failed;
                    js.push(out.j.unwrap_or(self.inner.metric.failure_j));
                    if k == 0 {
                        if let Some(dir) = &self.checkpoint_dir {
                            let name = format!("checkpoint_{iteration:04}.json");
                            let path = dir.join(&name);
                            let meta = CheckpointMeta { design: *design, frame: self.inner.task.frame, seed: run_seed };
                            Checkpoint { params: out.params, meta }
                                .save(&path)
                                .map_err(|e| CodesignError::Evaluator(e.to_string()))?;
                            checkpoint = Some(name);
                        }
                    }
                }
                Err(_) => {
                    failed = true;
                    js.push(self.inner.metric.failure_j);
                }
            }
        }
        let j = if failed { self.inner.metric.failure_j } else { js.iter().sum::<f64>() / js.len() as f64 };
        Ok(Evaluation { j, failed, checkpoint })
    }
}

/// Parses an evaluation log. Blank lines are ignored, and so is an
/// unterminated last line that does not parse: records are written whole with
/// their newline, so such a line is a write cut short by a crash.
pub fn load_log(path: &Path) -> Result<Vec<EvalRecord>, CodesignError> {
    let text = fs::read_to_string(path).map_err(|source| CodesignError::Io { path: path.to_path_buf(), source })?;
    let n_lines = text.lines().count();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<EvalRecord>(line) {
            Ok(rec) => out.push(rec),
            Err(_) if i + 1 == n_lines && !text.ends_with('\n') => break,
            Err(e) => {
                return Err(CodesignError::CorruptLog { path: path.to_path_buf(), line: i + 1, reason: e.to_string() })
            }
        }
    }
    Ok(out)
}

/// Lowest J, earliest on ties.
pub fn best_record(records: &[EvalRecord]) -> Option<&EvalRecord> {
    records.iter().fold(None, |best: Option<&EvalRecord>, r| match best {
        Some(b) if b.j <= r.j => Some(b),
        _ => Some(r),
    })
}

/// Proposal for evaluation `iteration` given all earlier records.
fn propose(
    config: &BoConfig,
    iteration: usize,
    previous: &[EvalRecord],
) -> Result<(Vec<f64>, Phase, Option<GpHyper>), CodesignError> {
    let dim = config.mode.free_dims();
    let n_init = config.initial_size();
    if iteration < n_init {
        let u = halton(iteration as u64 + 1, dim);
        return Ok((from_unit_cube(&u, config.mode)?, Phase::Initial, None));
    }
    let x: Vec<Vec<f64>> = previous
        .iter()
        .map(|r| to_unit_cube(&r.design.reduced_radians(), config.mode))
        .collect::<Result<_, _>>()?;
    let y: Vec<f64> = previous.iter().map(|r| -r.j).collect();
    let fallback = previous
        .iter()
        .rev()
        .find_map(|r| r.gp_hyper.clone())
        .unwrap_or_else(|| GpHyper::new(&vec![0.2; dim], 1.0, 1e-2));
    let model = GpModel::fit(x, &y, &config.gp, Some(&fallback))?;
    let schedule = config.schedule();
    let step = iteration - n_init;
    let u = propose_next(&model, &schedule, step);
    Ok((from_unit_cube(&u, config.mode)?, schedule.phase(step), Some(model.hyper().clone())))
}

fn append_line(file: &mut File, path: &Path, line: &str) -> Result<(), CodesignError> {
    let io = |source| CodesignError::Io { path: path.to_path_buf(), source };
    file.write_all(line.as_bytes()).map_err(io)?;
    file.write_all(b"\n").map_err(io)?;
    file.flush().map_err(io)?;
    file.sync_data().map_err(io)
}

#[derive(Debug, Clone)]
pub struct CodesignOutcome {
    pub best: EvalRecord,
    pub records: Vec<EvalRecord>,
}

/// Sidecar file holding per-evaluation wall time for `log`.
pub fn timings_path(log: &Path) -> PathBuf {
    log.with_file_name("timings.jsonl")
}

/// Runs the outer loop until `config.budget` evaluations exist.
///
/// With `log` set, each record is appended and synced before the next
/// evaluation starts. With `resume`, existing records are checked against the
/// proposals they should have been and the loop continues after them.
pub fn run_codesign(
    config: &BoConfig,
    seed: u64,
    evaluator: &mut dyn DesignEvaluator,
    log: Option<&Path>,
    resume: bool,
) -> Result<CodesignOutcome, CodesignError> {
    if config.budget < config.initial_size() {
        return Err(CodesignError::Budget { budget: config.budget, initial: config.initial_size() });
    }
    let mut records = Vec::new();
    if resume {
        if let Some(path) = log.filter(|p| p.exists()) {
            records = load_log(path)?;
        }
        if records.len() > config.budget {
            return Err(CodesignError::LogMismatch {
                iteration: config.budget,
                reason: format!("log holds {} records, budget is {}", records.len(), config.budget),
            });
        }
        for i in 0..records.len() {
            let rec = &records[i];
            let mismatch = |reason: String| CodesignError::LogMismatch { iteration: i, reason };
            if rec.iteration != i {
                return Err(mismatch(format!("record carries iteration {}", rec.iteration)));
            }
            if rec.design.mode != config.mode {
                return Err(mismatch(format!("record mode {} differs from {}", rec.design.mode, config.mode)));
            }
            if rec.seed != mix_seed(seed, i as u64) {
                return Err(mismatch("seed does not derive from the master seed".into()));
            }
            let (reduced, phase, _) = propose(config, i, &records[..i])?;
            if DesignRecord::from_reduced(&reduced, config.mode) != rec.design || phase != rec.phase {
                return Err(mismatch("design differs from the replayed proposal".into()));
            }
        }
    }

    let mut files = match log {
        Some(path) => {
            let open = |p: &Path, append: bool| {
                OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(append)
                    .truncate(!append)
                    .open(p)
                    .map_err(|source| CodesignError::Io { path: p.to_path_buf(), source })
            };
            // Rewrite the validated prefix, then swap it in atomically.
            let tmp = path.with_extension("jsonl.tmp");
            let mut f = open(&tmp, false)?;
            for r in &records {
                append_line(&mut f, &tmp, &serde_json::to_string(r)?)?;
            }
            drop(f);
            fs::rename(&tmp, path).map_err(|source| CodesignError::Io { path: path.to_path_buf(), source })?;
            let f = open(path, true)?;
            let t = timings_path(path);
            Some((f, path.to_path_buf(), open(&t, resume)?, t))
        }
        None => None,
    };

    for iteration in records.len()..config.budget {
        let (reduced, phase, gp_hyper) = propose(config, iteration, &records)?;
        let design = expand_design(&reduced, config.mode)?;
        let run_seed = mix_seed(seed, iteration as u64);
        let started = Instant::now();
        let eval = evaluator.evaluate(iteration, &design, run_seed)?;
        let elapsed = started.elapsed().as_secs_f64();
        let rec = EvalRecord {
            iteration,
            phase,
            design: DesignRecord::from_reduced(&reduced, config.mode),
            expanded: design,
            seed: run_seed,
            j: eval.j,
            failed: eval.failed,
            checkpoint: eval.checkpoint,
            gp_hyper,
        };
        if let Some((f, path, tf, tpath)) = files.as_mut() {
            append_line(f, path, &serde_json::to_string(&rec)?)?;
            append_line(tf, tpath, &format!("{{\"iteration\":{iteration},\"wall_time_s\":{elapsed}}}"))?;
        }
        records.push(rec);
    }
    let best = best_record(&records).cloned().expect("budget covers at least the initial design");
    Ok(CodesignOutcome { best, records })
}
