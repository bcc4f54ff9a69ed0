//! Experiment harness: declarative run configuration, seeded Monte-Carlo
//! sweeps with a paired plain-sampling baseline, aggregation with standard
//! errors, and deterministic CSV/summary persistence.
//!
//! Per-trajectory seeds derive from the master seed as `seed ^ index`, so a
//! sweep is reproducible and embarrassingly parallel: trajectories fan out
//! across workers while the reduction stays in index order, making the CSV
//! byte-stable in deterministic mode.

pub mod cli;
pub mod verify;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{decompose_gains, quality_report, GainDecomposition, QualityReport};
use crate::error::{Error, Result};
use crate::sampler::{
    draw_initial_latent, end2end_inject, resample_baseline, standard_sample, zigzag_sample,
    SamplerConfig, TrajectoryRecord,
};
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::score::{AnalyticMixtureModel, Condition, MixtureSpec, ScoreModel, ScoreNet};

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "ZIGZAG_OUT_DIR";

/// Relative tolerance of the per-trajectory identity gate applied before a
/// row is written.
pub const IDENTITY_GATE: f64 = 1e-8;

/// The swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Guidance gap: the inversion guidance becomes `gamma1 - value`.
    Gap,
    /// Zigzag window length.
    Lambda,
    /// Backtracking stepsize.
    K,
    /// Gaussian error-injection coefficient.
    S,
    /// Stochasticity of the denoise steps.
    Eta,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Gap => "gap",
            SweepAxis::Lambda => "lambda",
            SweepAxis::K => "k",
            SweepAxis::S => "s",
            SweepAxis::Eta => "eta",
        }
    }
}

/// Which instrumented sampler the sweep runs (a paired plain-sampling
/// baseline always runs alongside).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Zigzag,
    EndToEnd,
    Resample,
}

/// Which score model drives the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "path")]
pub enum ModelSource {
    /// Exact closed-form mixture oracle.
    #[default]
    Analytic,
    /// A trained checkpoint produced by `train`.
    Checkpoint(PathBuf),
}

fn default_repeats() -> usize {
    1
}

/// Declarative description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Experiment name; output files derive from it.
    pub name: String,
    pub mixture: MixtureSpec,
    pub schedule: ScheduleParams,
    pub sampler: SamplerConfig,
    /// Conditioned component label.
    pub condition: usize,
    pub sweep: SweepAxis,
    /// Sweep grid; `lambda` and `k` values must be integral.
    pub grid: Vec<f64>,
    /// Trajectories per sweep value.
    pub trajectories: usize,
    pub output_dir: PathBuf,
    pub master_seed: u64,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_repeats")]
    pub resample_repeats: usize,
    #[serde(default)]
    pub model: ModelSource,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.mixture.validate()?;
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("sweep grid is empty".into()));
        }
        if self.trajectories == 0 {
            return Err(Error::InvalidConfig("trajectories must be >= 1".into()));
        }
        if self.condition >= self.mixture.num_components() {
            return Err(Error::BadCondition {
                label: self.condition,
                num_components: self.mixture.num_components(),
            });
        }
        if self.resample_repeats == 0 {
            return Err(Error::InvalidConfig("resample_repeats must be >= 1".into()));
        }
        let sched = self.schedule.build()?;
        for &v in &self.grid {
            let cfg = apply_sweep(&self.sampler, self.sweep, v)?;
            cfg.validate(&sched)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: RunConfig = toml::from_str(&body).map_err(|e| Error::Serde(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Output directory after applying the environment override.
    pub fn effective_output_dir(&self) -> PathBuf {
        std::env::var(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|_| self.output_dir.clone())
    }
}

/// The canonical desk-scale setup every documented experiment starts from:
/// two 2D components at `(+-2, 0)` with variance 0.25, ten gentle linear
/// steps, strong denoising guidance 5.5 against unguided inversion, a full
/// zigzag window, and 256 trajectories per sweep value.
///
/// The gentle schedule (cumulative product ~0.97 at the noise side) keeps
/// the ten-step flow from fully transporting the standard-normal
/// initialization onto the conditioned component, so the initial latent
/// retains semantic content and alignment stays measurably below 1 for
/// plain sampling. That is the regime where the guidance-gap injection has
/// observable room to act.
pub fn reference_config() -> RunConfig {
    RunConfig {
        name: "reference".into(),
        mixture: MixtureSpec::equal_weight(vec![vec![2.0, 0.0], vec![-2.0, 0.0]], 0.25)
            .expect("reference mixture"),
        schedule: ScheduleParams {
            kind: crate::schedule::ScheduleKind::Linear,
            num_steps: 10,
            beta_min: 0.0005,
            beta_max: 0.005,
        },
        sampler: SamplerConfig {
            num_steps: 10,
            denoise_guidance: 5.5,
            invert_guidance: 0.0,
            zigzag_steps: 9,
            backtrack: 1,
            ..SamplerConfig::default()
        },
        condition: 0,
        sweep: SweepAxis::Gap,
        grid: vec![0.0, 1.0, 2.5, 5.5],
        trajectories: 256,
        output_dir: PathBuf::from("runs"),
        master_seed: 2024,
        method: Method::Zigzag,
        resample_repeats: 1,
        model: ModelSource::Analytic,
    }
}

/// Companion setup for the backtracking and error-injection sweeps: same
/// mixture, guidance, and window as [`reference_config`], but a coarse
/// schedule (cumulative product ~0.31 at the noise side). Per-step
/// inversion-error effects scale with the step coefficients, so they are
/// invisible under the gentle reference schedule and need coarse steps to
/// register in the distribution metrics.
pub fn coarse_companion_config() -> RunConfig {
    let mut cfg = reference_config();
    cfg.name = "coarse".into();
    cfg.schedule.beta_min = 0.02;
    cfg.schedule.beta_max = 0.2;
    cfg
}

/// Set one sweep value on a sampler configuration.
pub fn apply_sweep(base: &SamplerConfig, axis: SweepAxis, value: f64) -> Result<SamplerConfig> {
    let mut cfg = base.clone();
    let integral = |v: f64, what: &str| -> Result<usize> {
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::InvalidConfig(format!(
                "{what} sweep value {v} must be a nonnegative integer"
            )));
        }
        Ok(v as usize)
    };
    match axis {
        SweepAxis::Gap => cfg.invert_guidance = cfg.denoise_guidance - value,
        SweepAxis::Lambda => cfg.zigzag_steps = integral(value, "lambda")?,
        SweepAxis::K => cfg.backtrack = integral(value, "k")?,
        SweepAxis::S => cfg.error_scale = value,
        SweepAxis::Eta => cfg.eta = value,
    }
    Ok(cfg)
}

/// Aggregated results for one sweep value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_value: f64,
    pub quality: QualityReport,
    pub alignment_se: f64,
    pub mean_shift_se: f64,
    pub energy_distance_se: f64,
    pub baseline_alignment: f64,
    pub baseline_alignment_se: f64,
    /// Paired per-trajectory alignment difference (method minus baseline).
    pub alignment_gain: f64,
    pub alignment_gain_se: f64,
    pub stepwise_gap: f64,
    pub stepwise_gap_se: f64,
    pub end_to_end_gap: f64,
    pub end_to_end_gap_se: f64,
    pub gap_closed_form: f64,
    pub gap_closed_form_se: f64,
    pub measured_stepwise: f64,
    pub measured_stepwise_se: f64,
    /// Seconds per trajectory; reported in the summary, never in the CSV.
    pub wall_clock_per_trajectory: f64,
}

/// Fixed CSV column order; the sweep axis name substitutes for the first
/// column header.
pub const CSV_COLUMNS: [&str; 19] = [
    "sweep_value",
    "alignment",
    "alignment_se",
    "mean_shift",
    "mean_shift_se",
    "energy_distance",
    "energy_distance_se",
    "baseline_alignment",
    "baseline_alignment_se",
    "alignment_gain",
    "alignment_gain_se",
    "stepwise_gap",
    "stepwise_gap_se",
    "end_to_end_gap",
    "end_to_end_gap_se",
    "gap_closed_form",
    "gap_closed_form_se",
    "measured_stepwise",
    "measured_stepwise_se",
];

impl ResultRow {
    fn csv_values(&self) -> [f64; 19] {
        [
            self.sweep_value,
            self.quality.alignment,
            self.alignment_se,
            self.quality.mean_shift,
            self.mean_shift_se,
            self.quality.energy_distance,
            self.energy_distance_se,
            self.baseline_alignment,
            self.baseline_alignment_se,
            self.alignment_gain,
            self.alignment_gain_se,
            self.stepwise_gap,
            self.stepwise_gap_se,
            self.end_to_end_gap,
            self.end_to_end_gap_se,
            self.gap_closed_form,
            self.gap_closed_form_se,
            self.measured_stepwise,
            self.measured_stepwise_se,
        ]
    }
}

/// Everything a finished experiment produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub rows: Vec<ResultRow>,
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
    pub total_seconds: f64,
}

/// One trajectory's contribution to a row.
struct TrajectoryOutcome {
    sample: Vec<f64>,
    aligned: f64,
    baseline_aligned: f64,
    decomposition: Option<GainDecomposition>,
}

/// Run one instrumented trajectory plus its paired baseline.
fn run_one(
    model: &dyn ScoreModel,
    config: &RunConfig,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<TrajectoryOutcome> {
    let cond = Condition::Component(config.condition);
    let cfg = SamplerConfig {
        seed,
        ..cfg.clone()
    };
    let x_init = draw_initial_latent(model.dim(), cfg.num_steps, seed);

    let (x_method, traj): (_, TrajectoryRecord) = match config.method {
        Method::Zigzag => zigzag_sample(model, &cond, &cfg, sched, &x_init)?,
        Method::EndToEnd => end2end_inject(model, &cond, &cfg, sched, &x_init)?,
        Method::Resample => {
            resample_baseline(model, &cond, &cfg, sched, &x_init, config.resample_repeats)?
        }
    };
    let (x_base, _) = standard_sample(model, &cond, &cfg, sched, &x_init)?;

    let wants_decomposition = match config.method {
        Method::Zigzag => cfg.zigzag_steps > 0,
        Method::EndToEnd => true,
        Method::Resample => false,
    };
    let decomposition = if wants_decomposition {
        let dec = decompose_gains(&traj, sched)?;
        let residual = dec.identity_residual();
        if residual > IDENTITY_GATE {
            return Err(Error::IdentityCheckFailed(format!(
                "identity residual {residual:.3e} exceeds {IDENTITY_GATE:.0e} (seed {seed})"
            )));
        }
        Some(dec)
    } else {
        None
    };

    let aligned = (config.mixture.nearest_component(&x_method.x) == config.condition) as u8 as f64;
    let baseline_aligned =
        (config.mixture.nearest_component(&x_base.x) == config.condition) as u8 as f64;
    Ok(TrajectoryOutcome {
        sample: x_method.x,
        aligned,
        baseline_aligned,
        decomposition,
    })
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard error of the mean from per-trajectory values.
fn standard_error(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Batch-means standard error for set-level statistics (mean shift, energy
/// distance): split the samples into contiguous blocks, evaluate the
/// statistic per block, and take the spread of the block estimates.
fn batch_se<F>(samples: &[Vec<f64>], batches: usize, stat: F) -> f64
where
    F: Fn(&[Vec<f64>]) -> f64,
{
    let n = samples.len();
    let b = batches.min(n).max(1);
    if b < 2 {
        return 0.0;
    }
    let mut estimates = Vec::with_capacity(b);
    let base = n / b;
    let mut start = 0;
    for i in 0..b {
        let len = base + usize::from(i < n % b);
        estimates.push(stat(&samples[start..start + len]));
        start += len;
    }
    // spread of B block estimates around their mean, scaled to the full set
    standard_error(&estimates)
}

/// Execute the full sweep described by `config`.
///
/// For each grid value, `trajectories` seeded runs of the configured method
/// and the paired plain-sampling baseline are executed (in parallel, seeds
/// `master_seed ^ index`), gated by the per-trajectory identity check, and
/// aggregated into one [`ResultRow`]. Writes `<name>.csv` (deterministic
/// bytes under a deterministic configuration) and `<name>_summary.json`
/// (which additionally carries wall-clock timings) into the output
/// directory.
pub fn run_experiment(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let started = Instant::now();
    let sched = config.schedule.build()?;

    let analytic;
    let net;
    let model: &dyn ScoreModel = match &config.model {
        ModelSource::Analytic => {
            analytic = AnalyticMixtureModel::new(config.mixture.clone(), &sched)?;
            &analytic
        }
        ModelSource::Checkpoint(path) => {
            net = ScoreNet::load_checkpoint(path)?;
            &net
        }
    };

    let mut rows = Vec::with_capacity(config.grid.len());
    for (value_idx, &value) in config.grid.iter().enumerate() {
        let cfg = apply_sweep(&config.sampler, config.sweep, value)?;
        let row_started = Instant::now();
        let outcomes: Vec<TrajectoryOutcome> = (0..config.trajectories)
            .into_par_iter()
            .map(|i| run_one(model, config, &sched, &cfg, config.master_seed ^ i as u64))
            .collect::<Result<_>>()?;
        let elapsed = row_started.elapsed().as_secs_f64();

        let samples: Vec<Vec<f64>> = outcomes.iter().map(|o| o.sample.clone()).collect();
        let cond = Condition::Component(config.condition);
        let ref_seed = config
            .master_seed
            .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(value_idx as u64 + 1));
        let quality = quality_report(&samples, &config.mixture, &cond, ref_seed)?;

        let aligned: Vec<f64> = outcomes.iter().map(|o| o.aligned).collect();
        let base_aligned: Vec<f64> = outcomes.iter().map(|o| o.baseline_aligned).collect();
        let gains: Vec<f64> = outcomes
            .iter()
            .map(|o| o.aligned - o.baseline_aligned)
            .collect();

        let scalar = |f: &dyn Fn(&GainDecomposition) -> f64| -> Vec<f64> {
            outcomes
                .iter()
                .filter_map(|o| o.decomposition.as_ref())
                .map(f)
                .collect()
        };
        let stepwise = scalar(&|d| d.stepwise_from_scores);
        let end_to_end = scalar(&|d| d.end_to_end_from_scores);
        let closed = scalar(&|d| d.gap_closed_form);
        let measured = scalar(&|d| d.measured_stepwise);

        let mixture = config.mixture.clone();
        let label = config.condition;
        let mean_shift_stat = move |chunk: &[Vec<f64>]| -> f64 {
            let dim = mixture.dim();
            let mut m = vec![0.0; dim];
            for s in chunk {
                for (mi, v) in m.iter_mut().zip(s) {
                    *mi += v;
                }
            }
            for mi in m.iter_mut() {
                *mi /= chunk.len() as f64;
            }
            m.iter()
                .zip(&mixture.means[label])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let spec2 = config.mixture.clone();
        let energy_stat = move |chunk: &[Vec<f64>]| -> f64 {
            let reference = crate::score::sample_component(&spec2, label, chunk.len(), ref_seed);
            crate::analysis::energy_distance(chunk, &reference)
        };

        rows.push(ResultRow {
            sweep_value: value,
            quality,
            alignment_se: standard_error(&aligned),
            mean_shift_se: batch_se(&samples, 8, mean_shift_stat),
            energy_distance_se: batch_se(&samples, 8, energy_stat),
            baseline_alignment: mean(&base_aligned),
            baseline_alignment_se: standard_error(&base_aligned),
            alignment_gain: mean(&gains),
            alignment_gain_se: standard_error(&gains),
            stepwise_gap: mean(&stepwise),
            stepwise_gap_se: standard_error(&stepwise),
            end_to_end_gap: mean(&end_to_end),
            end_to_end_gap_se: standard_error(&end_to_end),
            gap_closed_form: mean(&closed),
            gap_closed_form_se: standard_error(&closed),
            measured_stepwise: mean(&measured),
            measured_stepwise_se: standard_error(&measured),
            wall_clock_per_trajectory: elapsed / config.trajectories as f64,
        });
    }

    let out_dir = config.effective_output_dir();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let csv_path = out_dir.join(format!("{}.csv", config.name));
    fs::write(&csv_path, render_csv(config.sweep, &rows))
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;

    let summary_path = out_dir.join(format!("{}_summary.json", config.name));
    let outcome = RunOutcome {
        config: config.clone(),
        rows,
        csv_path: csv_path.clone(),
        summary_path: summary_path.clone(),
        total_seconds: started.elapsed().as_secs_f64(),
    };
    let summary =
        serde_json::to_string_pretty(&outcome).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(&summary_path, summary)
        .map_err(|e| Error::io(summary_path.display().to_string(), e))?;
    Ok(outcome)
}

/// Format a value with 12 significant digits, locale-free.
pub fn format_sig12(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    format!("{v:.11e}")
}

/// Render rows as CSV with the fixed column order, sweep axis first.
pub fn render_csv(axis: SweepAxis, rows: &[ResultRow]) -> String {
    let mut out = String::new();
    let mut header: Vec<&str> = CSV_COLUMNS.to_vec();
    header[0] = axis.name();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.csv_values().iter().map(|v| format_sig12(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// One point of a trend: the aggregated mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendPoint {
    pub value: f64,
    pub mean: f64,
    pub se: f64,
}

/// Count adjacent violations of a non-decreasing trend: pairs where the next
/// mean falls below the previous one by more than `sigmas` combined standard
/// errors.
pub fn isotonic_violations(points: &[TrendPoint], sigmas: f64) -> usize {
    points
        .windows(2)
        .filter(|w| {
            let tol = sigmas * (w[0].se * w[0].se + w[1].se * w[1].se).sqrt();
            w[1].mean < w[0].mean - tol
        })
        .count()
}

/// Difference `b - a` measured in combined standard errors.
pub fn difference_in_se(a: &TrendPoint, b: &TrendPoint) -> f64 {
    let denom = (a.se * a.se + b.se * b.se).sqrt();
    if denom == 0.0 {
        if b.mean == a.mean {
            0.0
        } else if b.mean > a.mean {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    } else {
        (b.mean - a.mean) / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleKind;

    fn tiny_config(dir: &Path) -> RunConfig {
        RunConfig {
            name: "tiny".into(),
            mixture: MixtureSpec::equal_weight(vec![vec![2.0, 0.0], vec![-2.0, 0.0]], 0.25)
                .unwrap(),
            schedule: ScheduleParams {
                kind: ScheduleKind::Linear,
                num_steps: 10,
                beta_min: 0.04,
                beta_max: 0.45,
            },
            sampler: SamplerConfig {
                num_steps: 10,
                ..SamplerConfig::default()
            },
            condition: 0,
            sweep: SweepAxis::Gap,
            grid: vec![0.0, 5.5],
            trajectories: 16,
            output_dir: dir.to_path_buf(),
            master_seed: 7,
            method: Method::Zigzag,
            resample_repeats: 1,
            model: ModelSource::Analytic,
        }
    }

    #[test]
    fn csv_bytes_reproduce_in_deterministic_mode() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let a = run_experiment(&cfg).unwrap();
        let bytes_a = fs::read(&a.csv_path).unwrap();
        let b = run_experiment(&cfg).unwrap();
        let bytes_b = fs::read(&b.csv_path).unwrap();
        assert_eq!(bytes_a, bytes_b);
        let text = String::from_utf8(bytes_a).unwrap();
        assert!(text.starts_with("gap,alignment,alignment_se,"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn per_trajectory_seeds_are_distinct() {
        let master: u64 = 42;
        let seeds: Vec<u64> = (0..1000u64).map(|i| master ^ i).collect();
        let mut dedup = seeds.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), seeds.len());
    }

    #[test]
    fn sweep_application() {
        let base = SamplerConfig {
            num_steps: 10,
            denoise_guidance: 5.5,
            ..SamplerConfig::default()
        };
        let g = apply_sweep(&base, SweepAxis::Gap, 2.5).unwrap();
        assert_eq!(g.invert_guidance, 3.0);
        let l = apply_sweep(&base, SweepAxis::Lambda, 4.0).unwrap();
        assert_eq!(l.zigzag_steps, 4);
        assert!(apply_sweep(&base, SweepAxis::Lambda, 4.5).is_err());
        let k = apply_sweep(&base, SweepAxis::K, 2.0).unwrap();
        assert_eq!(k.backtrack, 2);
        let s = apply_sweep(&base, SweepAxis::S, 0.5).unwrap();
        assert_eq!(s.error_scale, 0.5);
        let e = apply_sweep(&base, SweepAxis::Eta, 1.0).unwrap();
        assert_eq!(e.eta, 1.0);
    }

    #[test]
    fn trend_utilities() {
        let p = |m: f64, se: f64| TrendPoint {
            value: 0.0,
            mean: m,
            se,
        };
        let increasing = [p(0.1, 0.01), p(0.2, 0.01), p(0.3, 0.01)];
        assert_eq!(isotonic_violations(&increasing, 2.0), 0);
        let dip = [p(0.3, 0.01), p(0.1, 0.01), p(0.4, 0.01)];
        assert_eq!(isotonic_violations(&dip, 2.0), 1);
        let noisy_dip = [p(0.3, 0.2), p(0.25, 0.2), p(0.4, 0.2)];
        assert_eq!(isotonic_violations(&noisy_dip, 2.0), 0);
        assert!(difference_in_se(&p(0.1, 0.01), &p(0.2, 0.01)) > 3.0);
    }

    #[test]
    fn config_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        assert!(cfg.validate().is_ok());
        cfg.grid.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config(dir.path());
        cfg.trajectories = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config(dir.path());
        cfg.condition = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config(dir.path());
        cfg.grid = vec![99.0];
        cfg.sweep = SweepAxis::Lambda;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let text = toml::to_string(&cfg).unwrap();
        let parsed: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, parsed);
    }

    #[test]
    fn format_sig12_is_stable() {
        assert_eq!(format_sig12(0.0), "0");
        assert_eq!(format_sig12(1.0 / 3.0), "3.33333333333e-1");
        assert_eq!(format_sig12(-256.5), "-2.56500000000e2");
    }
}
