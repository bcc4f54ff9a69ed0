//! Command-line surface: `train`, `sample`, `analyze`, `sweep`, `verify`.
//!
//! The binary stays thin; everything here delegates to the library so the
//! same entry points are exercised by the integration tests.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{decompose_gains, GainDecomposition};
use crate::error::{Error, Result};
use crate::sampler::{
    draw_initial_latent, end2end_inject, resample_baseline, standard_sample, zigzag_sample,
    SamplerConfig, TrajectoryRecord,
};
use crate::schedule::{ScheduleKind, ScheduleParams};
use crate::score::{
    sample_mixture_dataset, train_score_net, Condition, MixtureSpec, ScoreModel, ScoreNet,
    TrainingSettings,
};

use super::{run_experiment, verify, RunConfig};

#[derive(Parser)]
#[command(
    name = "zigzag",
    version,
    about = "Desk-scale diffusion sampling laboratory: zigzag sampling, baselines, and gain analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a small score network to mixture samples and save a checkpoint.
    Train(TrainArgs),
    /// Run one trajectory and emit it, with its gain decomposition, as JSON.
    Sample(SampleArgs),
    /// Recompute the decomposition and identity checks of a recorded trajectory.
    Analyze(AnalyzeArgs),
    /// Run a sweep experiment from a config file; writes CSV and summary.
    Sweep(SweepArgs),
    /// Run the invariant suite; exits nonzero on any failure.
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScheduleKindArg {
    Linear,
    Cosine,
}

impl From<ScheduleKindArg> for ScheduleKind {
    fn from(k: ScheduleKindArg) -> Self {
        match k {
            ScheduleKindArg::Linear => ScheduleKind::Linear,
            ScheduleKindArg::Cosine => ScheduleKind::Cosine,
        }
    }
}

/// Mixture and schedule flags shared by `train` and `sample`.
#[derive(Args, Debug)]
struct SetupArgs {
    /// Component means, semicolon-separated points: "2,0;-2,0"
    #[arg(long, default_value = "2,0;-2,0")]
    means: String,
    /// Shared component variance.
    #[arg(long, default_value_t = 0.25)]
    sigma2: f64,
    /// Comma-separated mixture weights; equal weights when omitted.
    #[arg(long)]
    weights: Option<String>,
    /// Inference steps T.
    #[arg(long, default_value_t = 10)]
    num_steps: usize,
    #[arg(long, value_enum, default_value_t = ScheduleKindArg::Linear)]
    schedule: ScheduleKindArg,
    #[arg(long, default_value_t = 0.0005)]
    beta_min: f64,
    #[arg(long, default_value_t = 0.005)]
    beta_max: f64,
}

impl SetupArgs {
    fn mixture(&self) -> Result<MixtureSpec> {
        let means: Vec<Vec<f64>> = self
            .means
            .split(';')
            .map(|point| {
                point
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::InvalidConfig(format!("bad mean '{v}': {e}")))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        match &self.weights {
            Some(w) => {
                let weights: Vec<f64> = w
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::InvalidConfig(format!("bad weight '{v}': {e}")))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                MixtureSpec::new(means, self.sigma2, weights)
            }
            None => MixtureSpec::equal_weight(means, self.sigma2),
        }
    }

    fn schedule_params(&self) -> ScheduleParams {
        ScheduleParams {
            kind: self.schedule.into(),
            num_steps: self.num_steps,
            beta_min: self.beta_min,
            beta_max: self.beta_max,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    setup: SetupArgs,
    /// Training points drawn from the mixture.
    #[arg(long, default_value_t = 1024)]
    samples: usize,
    #[arg(long, default_value_t = 2000)]
    train_steps: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Standard,
    Zigzag,
    End2end,
    Resample,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[command(flatten)]
    setup: SetupArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Zigzag)]
    mode: ModeArg,
    /// Denoising guidance scale.
    #[arg(long, default_value_t = 5.5)]
    gamma1: f64,
    /// Inversion guidance scale.
    #[arg(long, default_value_t = 0.0)]
    gamma2: f64,
    /// Zigzag window length.
    #[arg(long, default_value_t = 9)]
    lambda: usize,
    /// Backtracking stepsize.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    /// Gaussian error-injection coefficient.
    #[arg(long, default_value_t = 0.0)]
    error_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Conditioned component label.
    #[arg(long, default_value_t = 0)]
    condition: usize,
    /// Re-noise rounds for resample mode.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Solve the inversion implicit equation by fixed-point iteration.
    #[arg(long, default_value_t = false)]
    exact_inversion: bool,
    /// Drive sampling with a trained checkpoint instead of the oracle.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write the record here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit only the committed per-step latents (stable across modes).
    #[arg(long, default_value_t = false)]
    latents_only: bool,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// A record produced by `sample`.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory override (the ZIGZAG_OUT_DIR environment variable
    /// still wins over this).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// A self-describing record of one sampled trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub mixture: MixtureSpec,
    pub schedule: ScheduleParams,
    pub condition: usize,
    pub mode: String,
    pub trajectory: TrajectoryRecord,
    pub decomposition: Option<GainDecomposition>,
}

/// Only the latents a sampling run commits, for byte-level comparisons
/// across modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentsRecord {
    pub x_init: Vec<f64>,
    pub committed: Vec<Vec<f64>>,
    pub x_final: Vec<f64>,
}

/// Parse and dispatch; returns the process exit status.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Entry point shared with tests.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own usage/help text
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Verify => return cmd_verify(),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mixture = args.setup.mixture()?;
    let sched = args.setup.schedule_params().build()?;
    let dataset = sample_mixture_dataset(&mixture, args.samples, args.seed);
    let settings = TrainingSettings {
        steps: args.train_steps,
        batch_size: args.batch_size,
        hidden_dim: args.hidden,
        learning_rate: args.learning_rate,
        seed: args.seed,
        ..TrainingSettings::default()
    };
    let run = train_score_net(&dataset, &sched, &settings)?;
    run.net.save_checkpoint(&args.out)?;
    let head = run.losses.first().copied().unwrap_or(f64::NAN);
    let tail = run.losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} steps on {} points: loss {head:.6} -> {tail:.6}",
        run.losses.len(),
        args.samples
    );
    println!("checkpoint: {}", args.out.display());
    Ok(())
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let mixture = args.setup.mixture()?;
    let schedule_params = args.setup.schedule_params();
    let sched = schedule_params.build()?;
    let cfg = SamplerConfig {
        num_steps: args.setup.num_steps,
        denoise_guidance: args.gamma1,
        invert_guidance: args.gamma2,
        zigzag_steps: args.lambda,
        backtrack: args.k,
        eta: args.eta,
        error_scale: args.error_scale,
        seed: args.seed,
        exact_inversion: args.exact_inversion,
        ..SamplerConfig::default()
    };

    let analytic;
    let net;
    let model: &dyn ScoreModel = match &args.checkpoint {
        None => {
            analytic =
                crate::score::AnalyticMixtureModel::new(mixture.clone(), &sched)?;
            &analytic
        }
        Some(path) => {
            net = ScoreNet::load_checkpoint(path)?;
            &net
        }
    };

    let cond = Condition::Component(args.condition);
    let x_init = draw_initial_latent(model.dim(), cfg.num_steps, args.seed);
    let (_, trajectory) = match args.mode {
        ModeArg::Standard => standard_sample(model, &cond, &cfg, &sched, &x_init)?,
        ModeArg::Zigzag => zigzag_sample(model, &cond, &cfg, &sched, &x_init)?,
        ModeArg::End2end => end2end_inject(model, &cond, &cfg, &sched, &x_init)?,
        ModeArg::Resample => {
            resample_baseline(model, &cond, &cfg, &sched, &x_init, args.repeats)?
        }
    };

    let body = if args.latents_only {
        let committed: Vec<Vec<f64>> = trajectory
            .steps
            .iter()
            .map(|s| s.x_committed().to_vec())
            .collect();
        let record = LatentsRecord {
            x_init: trajectory.x_init.clone(),
            committed,
            x_final: trajectory.x_final.clone(),
        };
        serde_json::to_string_pretty(&record).map_err(|e| Error::Serde(e.to_string()))?
    } else {
        let decomposition = match args.mode {
            ModeArg::Zigzag if cfg.zigzag_steps > 0 => Some(decompose_gains(&trajectory, &sched)?),
            ModeArg::End2end => Some(decompose_gains(&trajectory, &sched)?),
            _ => None,
        };
        let record = SampleRecord {
            mixture,
            schedule: schedule_params,
            condition: args.condition,
            mode: format!("{:?}", args.mode).to_lowercase(),
            trajectory,
            decomposition,
        };
        serde_json::to_string_pretty(&record).map_err(|e| Error::Serde(e.to_string()))?
    };

    match &args.out {
        Some(path) => {
            fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))?;
            println!("record: {}", path.display());
        }
        None => println!("{body}"),
    }
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let body = fs::read_to_string(&args.input)
        .map_err(|e| Error::io(args.input.display().to_string(), e))?;
    let record: SampleRecord =
        serde_json::from_str(&body).map_err(|e| Error::Serde(e.to_string()))?;
    let sched = record.schedule.build()?;
    record.trajectory.validate()?;
    println!(
        "mode {} | steps {} | score steps {}",
        record.mode,
        record.trajectory.steps.len(),
        record.trajectory.score_steps
    );
    match decompose_gains(&record.trajectory, &sched) {
        Ok(dec) => {
            println!(
                "stepwise: measured {:.6e}, from scores {:.6e} (residual {:.3e})",
                dec.measured_stepwise,
                dec.stepwise_from_scores,
                dec.stepwise_residual()
            );
            if let Some(measured) = dec.measured_end_to_end {
                println!(
                    "end-to-end: measured {:.6e}, from scores {:.6e} (residual {:.3e})",
                    measured,
                    dec.end_to_end_from_scores,
                    dec.end_to_end_residual().unwrap_or(f64::INFINITY)
                );
            }
            println!("guidance-gap closed form: {:.6e}", dec.gap_closed_form);
            if let Some(stored) = &record.decomposition {
                if stored != &dec {
                    return Err(Error::IdentityCheckFailed(
                        "stored decomposition differs from recomputation".into(),
                    ));
                }
                println!("stored decomposition matches recomputation");
            }
            let residual = dec.identity_residual();
            if residual > super::IDENTITY_GATE {
                return Err(Error::IdentityCheckFailed(format!(
                    "identity residual {residual:.3e} exceeds {:.0e}",
                    super::IDENTITY_GATE
                )));
            }
            println!("identity check passed ({residual:.3e})");
        }
        Err(Error::MissingInstrumentation(_)) => {
            println!("no inversion instrumentation; nothing to decompose");
        }
        Err(e) => return Err(e),
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(dir) = args.out_dir {
        config.output_dir = dir;
    }
    let outcome = run_experiment(&config)?;
    println!(
        "{}: {} sweep over {:?} ({} trajectories per value, {:.2}s total)",
        config.name,
        config.sweep.name(),
        config.grid,
        config.trajectories,
        outcome.total_seconds
    );
    for row in &outcome.rows {
        println!(
            "  {} = {:<8} alignment {:.4} (baseline {:.4}, gain {:+.4} +- {:.4}) energy {:.4}",
            config.sweep.name(),
            row.sweep_value,
            row.quality.alignment,
            row.baseline_alignment,
            row.alignment_gain,
            row.alignment_gain_se,
            row.quality.energy_distance
        );
    }
    println!("csv: {}", outcome.csv_path.display());
    println!("summary: {}", outcome.summary_path.display());
    Ok(())
}

fn cmd_verify() -> i32 {
    let results = verify::run_all();
    let mut failed = 0;
    for r in &results {
        if r.passed {
            println!("PASS {:<28} {}", r.name, r.detail);
        } else {
            failed += 1;
            println!("FAIL {:<28} {}", r.name, r.detail);
        }
    }
    if failed > 0 {
        eprintln!("{failed} of {} checks failed", results.len());
        1
    } else {
        println!("all {} checks passed", results.len());
        0
    }
}
