//! `skate`: train skating policies, search wheel designs, and evaluate
//! trained controllers.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use skate_core::codesign::{run_codesign, DesignEvaluator, Evaluation, TrainingEvaluator};
use skate_core::config::ExperimentConfig;
use skate_core::design::{expand_design, CouplingMode, DesignVector};
use skate_core::error::CodesignError;
use skate_core::policy::{Checkpoint, CheckpointMeta, MeanPolicy};
use skate_core::report::{self, hockey_stop_file, CONFIG_FILE, EVAL_LOG, SELF_ALIGN_JSON, SWEEP_TSV};
use skate_core::rewards::CommandFrame;
use skate_core::scenario::{directional_cot_sweep, hockey_stop, self_align, sweep_table, ScenarioResult};
use skate_core::sim::TrajectoryRecord;
use skate_core::train::train_policy;

#[derive(Parser)]
#[command(name = "skate", version, about = "Wheel-design search and skating-policy training for a planar skating quadruped")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); defaults are used for anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy for one design.
    Train {
        #[command(flatten)]
        common: Common,
        /// Wheel angles in degrees: one value (coupled), two (front,rear) or four (FR,FL,RR,RL).
        #[arg(long, allow_hyphen_values = true)]
        design: Option<String>,
    },
    /// Bayesian optimization over designs, training a policy per evaluation.
    Codesign {
        #[command(flatten)]
        common: Common,
        /// Continue from the evaluation log in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Cost of transport of a base-frame policy over command directions.
    SweepDirection {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides the design stored in the checkpoint, degrees.
        #[arg(long, allow_hyphen_values = true)]
        design: Option<String>,
        /// Command speed, m/s.
        #[arg(long)]
        speed: Option<f64>,
        #[arg(long)]
        n_angles: Option<usize>,
    },
    /// Behavior scenarios for trained policies.
    Scenario {
        #[command(subcommand)]
        which: Scenario,
    },
    /// Summaries and plot-ready CSVs for a run directory.
    Report {
        /// Run directory; defaults to --out or the config's output_dir.
        dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum Scenario {
    /// Drive at speed, command a stop, time it. Pass a base-frame and a
    /// world-frame checkpoint to compare them on identical seeds.
    HockeyStop {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        /// Initial speed, m/s.
        #[arg(long)]
        speed: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Angle between the body's backward axis and a world-frame command.
    SelfAlign {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        design: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
    },
}

/// Failures split by exit status.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome = Result<(), Failure>;

fn usage<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Usage(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).map_err(usage)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn parse_design(text: &str) -> anyhow::Result<DesignVector> {
    let degs: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("`{s}` is not a number")))
        .collect::<anyhow::Result<_>>()?;
    let mode = match degs.len() {
        1 => CouplingMode::Coupled1D,
        2 => CouplingMode::Symmetric2D,
        4 => CouplingMode::Full4D,
        n => bail!("--design takes 1, 2 or 4 angles, got {n}"),
    };
    let rad: Vec<f64> = degs.iter().map(|d| d.to_radians()).collect();
    Ok(expand_design(&rad, mode)?)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display())).map_err(runtime)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(runtime)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display())).map_err(usage)
}

fn fmt_deg(d: &DesignVector) -> String {
    let a = d.angles().map(|r| format!("{:.2}", r.to_degrees()));
    format!("FR {} FL {} RR {} RL {} deg", a[0], a[1], a[2], a[3])
}

fn cmd_train(common: &Common, design: Option<&str>) -> Outcome {
    let cfg = load_config(common)?;
    let design = match design {
        Some(t) => parse_design(t).map_err(usage)?,
        None => DesignVector::parallel(),
    };
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;
    write(&dir.join(CONFIG_FILE), &cfg.to_toml())?;
    eprintln!("training {} for {} steps, seed {}", fmt_deg(&design), cfg.ppo.total_steps, cfg.seed);
    let out = train_policy(&design, &cfg.inner_loop(), cfg.seed).map_err(runtime)?;
    let meta = CheckpointMeta { design, frame: cfg.task.frame, seed: cfg.seed };
    Checkpoint { params: out.params, meta }.save(&dir.join("checkpoint.json")).map_err(runtime)?;
    write(&dir.join("training_log.jsonl"), &out.log.to_jsonl())?;
    let summary = serde_json::json!({
        "design_rad": design.angles(),
        "frame": cfg.task.frame,
        "seed": cfg.seed,
        "updates": out.log.entries.len(),
        "j": out.j,
        "failed": out.failed,
        "divergence_rate": out.divergence_rate,
    });
    write(&dir.join("train_summary.json"), &(summary.to_string() + "\n"))?;
    println!("J {}", out.j.map_or_else(|| "n/a (no training steps)".into(), |j| format!("{j:.6}")));
    if out.failed {
        return Err(runtime(anyhow!("training failed; J set to the failure value {}", cfg.metric.failure_j)));
    }
    Ok(())
}

/// Prints one line per finished evaluation.
struct Verbose<E>(E);

impl<E: DesignEvaluator> DesignEvaluator for Verbose<E> {
    fn evaluate(&mut self, iteration: usize, design: &DesignVector, seed: u64) -> Result<Evaluation, CodesignError> {
        let e = self.0.evaluate(iteration, design, seed)?;
        eprintln!("eval {iteration}: {} J {:.6}{}", fmt_deg(design), e.j, if e.failed { " (failed)" } else { "" });
        Ok(e)
    }
}

fn cmd_codesign(common: &Common, resume: bool) -> Outcome {
    let cfg = load_config(common)?;
    let dir = cfg.output_dir.clone();
    let log = dir.join(EVAL_LOG);
    let config_path = dir.join(CONFIG_FILE);
    let text = cfg.to_toml();
    if resume {
        // The directory may have been moved since, so its path is not compared.
        if config_path.exists() {
            let mut previous = ExperimentConfig::load(&config_path).map_err(usage)?;
            previous.output_dir = cfg.output_dir.clone();
            if previous.to_toml() != text {
                return Err(usage(anyhow!("config differs from the one recorded in {}", config_path.display())));
            }
        }
    } else if log.exists() {
        return Err(usage(anyhow!("{} already exists; pass --resume to continue it", log.display())));
    }
    let ckpt_dir = dir.join("checkpoints");
    create_dir(&ckpt_dir)?;
    write(&config_path, &text)?;
    let mut eval = Verbose(TrainingEvaluator {
        inner: cfg.inner_loop(),
        seeds_per_design: cfg.bo.seeds_per_design,
        checkpoint_dir: Some(ckpt_dir),
    });
    let out = run_codesign(&cfg.bo, cfg.seed, &mut eval, Some(&log), resume).map_err(|e| match e {
        CodesignError::CorruptLog { .. } | CodesignError::LogMismatch { .. } | CodesignError::Budget { .. } => usage(e),
        other => runtime(other),
    })?;
    write(&dir.join("best.json"), &(serde_json::to_string(&out.best).map_err(runtime)? + "\n"))?;
    println!(
        "best: iteration {} J {:.6} {} ({})",
        out.best.iteration,
        out.best.j,
        fmt_deg(&out.best.expanded),
        out.best.design.mode
    );
    Ok(())
}

fn cmd_sweep(common: &Common, checkpoint: &Path, design: Option<&str>, speed: Option<f64>, n_angles: Option<usize>) -> Outcome {
    let mut cfg = load_config(common)?;
    let ck = load_checkpoint(checkpoint)?;
    if ck.meta.frame != CommandFrame::BaseFrame {
        eprintln!("warning: the sweep issues base-frame commands; this checkpoint was trained on world-frame ones");
    }
    let design = match design {
        Some(t) => parse_design(t).map_err(usage)?,
        None => ck.meta.design,
    };
    if let Some(s) = speed {
        cfg.scenario.sweep.speed = s;
    }
    if let Some(n) = n_angles {
        cfg.scenario.sweep.n_angles = n;
    }
    cfg.validate().map_err(usage)?;
    let mut ctl = MeanPolicy { params: ck.params };
    let rows = directional_cot_sweep(&mut ctl, &design, &cfg.sim, &cfg.scenario.sweep).map_err(runtime)?;
    let table = sweep_table(&rows);
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;
    write(&dir.join(CONFIG_FILE), &cfg.to_toml())?;
    write(&dir.join(SWEEP_TSV), &table)?;
    print!("{table}");
    Ok(())
}

/// Writes each trial's series next to the result and records the reference.
fn save_scenario(dir: &Path, stem: &str, mut result: ScenarioResult, series: &[Vec<TrajectoryRecord>]) -> Result<ScenarioResult, Failure> {
    let sdir = dir.join("series");
    create_dir(&sdir)?;
    for (t, s) in result.trials.iter_mut().zip(series) {
        let name = format!("series/{stem}_trial{:03}.jsonl", t.trial);
        let text: String = s.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect();
        write(&dir.join(&name), &text)?;
        t.series = Some(name);
    }
    let text = serde_json::to_string_pretty(&result).map_err(runtime)? + "\n";
    let file = if result.scenario == "self-align" { SELF_ALIGN_JSON.to_string() } else { hockey_stop_file(result.frame).to_string() };
    write(&dir.join(file), &text)?;
    Ok(result)
}

fn fmt_median(r: &ScenarioResult) -> String {
    r.median().map_or_else(|| "n/a".into(), |m| format!("{m:.4}"))
}

fn cmd_hockey_stop(common: &Common, checkpoints: &[PathBuf], speed: Option<f64>, trials: Option<usize>) -> Outcome {
    let mut cfg = load_config(common)?;
    if let Some(s) = speed {
        cfg.scenario.hockey_stop.speed = s;
    }
    if let Some(n) = trials {
        cfg.scenario.hockey_stop.trials = n;
    }
    cfg.validate().map_err(usage)?;
    if checkpoints.len() > 2 {
        return Err(usage(anyhow!("pass at most two checkpoints, one per command frame")));
    }
    let loaded: Vec<Checkpoint> = checkpoints.iter().map(|p| load_checkpoint(p)).collect::<Result<_, _>>()?;
    if loaded.len() == 2 && loaded[0].meta.frame == loaded[1].meta.frame {
        return Err(usage(anyhow!("both checkpoints were trained with {:?} commands", loaded[0].meta.frame)));
    }
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;
    write(&dir.join(CONFIG_FILE), &cfg.to_toml())?;
    let mut medians = Vec::new();
    for ck in loaded {
        let frame = ck.meta.frame;
        let design = ck.meta.design;
        let mut ctl = MeanPolicy { params: ck.params };
        let (result, series) =
            hockey_stop(&mut ctl, &design, &cfg.sim, frame, &cfg.scenario.hockey_stop, cfg.seed).map_err(runtime)?;
        let stem = match frame {
            CommandFrame::BaseFrame => "hockey_stop_base",
            CommandFrame::WorldFrame => "hockey_stop_world",
        };
        let result = save_scenario(&dir, stem, result, &series)?;
        let flagged = result.trials.iter().filter(|t| t.flagged).count();
        println!("hockey-stop {frame:?}: median stop time {} s, {flagged} of {} trials flagged", fmt_median(&result), result.trials.len());
        medians.push((frame, result.median()));
    }
    let base = medians.iter().find(|m| m.0 == CommandFrame::BaseFrame).and_then(|m| m.1);
    let world = medians.iter().find(|m| m.0 == CommandFrame::WorldFrame).and_then(|m| m.1);
    if let (Some(b), Some(w)) = (base, world) {
        if b > 0.0 {
            println!("median stop-time ratio world/base: {:.4}", w / b);
        }
    }
    Ok(())
}

fn cmd_self_align(common: &Common, checkpoint: &Path, design: Option<&str>, trials: Option<usize>) -> Outcome {
    let mut cfg = load_config(common)?;
    if let Some(n) = trials {
        cfg.scenario.self_align.trials = n;
    }
    cfg.validate().map_err(usage)?;
    let ck = load_checkpoint(checkpoint)?;
    if ck.meta.frame != CommandFrame::WorldFrame {
        eprintln!("warning: self-alignment uses world-frame commands; this checkpoint was trained on base-frame ones");
    }
    let design = match design {
        Some(t) => parse_design(t).map_err(usage)?,
        None => ck.meta.design,
    };
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;
    write(&dir.join(CONFIG_FILE), &cfg.to_toml())?;
    let mut ctl = MeanPolicy { params: ck.params };
    let (result, series) = self_align(&mut ctl, &design, &cfg.sim, &cfg.scenario.self_align, cfg.seed).map_err(runtime)?;
    let result = save_scenario(&dir, "self_align", result, &series)?;
    let flagged = result.trials.iter().filter(|t| t.flagged).count();
    println!("self-align: median angle {} rad, {flagged} of {} trials flagged", fmt_median(&result), result.trials.len());
    Ok(())
}

fn cmd_report(dir: Option<&Path>, common: &Common) -> Outcome {
    let dir = match dir {
        Some(d) => d.to_path_buf(),
        None => load_config(common)?.output_dir,
    };
    let written = report::write_report(&dir).map_err(|e| match e {
        skate_core::error::ReportError::Io { .. } => runtime(e),
        other => usage(other),
    })?;
    print!("{}", fs::read_to_string(dir.join(report::SUMMARY_TXT)).map_err(runtime)?);
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match &cli.command {
        Command::Train { common, design } => cmd_train(common, design.as_deref()),
        Command::Codesign { common, resume } => cmd_codesign(common, *resume),
        Command::SweepDirection { common, checkpoint, design, speed, n_angles } => {
            cmd_sweep(common, checkpoint, design.as_deref(), *speed, *n_angles)
        }
        Command::Scenario { which: Scenario::HockeyStop { common, checkpoint, speed, trials } } => {
            cmd_hockey_stop(common, checkpoint, *speed, *trials)
        }
        Command::Scenario { which: Scenario::SelfAlign { common, checkpoint, design, trials } } => {
            cmd_self_align(common, checkpoint, design.as_deref(), *trials)
        }
        Command::Report { dir, common } => cmd_report(dir.as_deref(), common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
