//! Forward-noising schedules and the per-step coefficients used by the
//! deterministic denoise/invert step maps.
//!
//! Index convention: steps run `t = 1..=T`. `alpha_bars` has length `T + 1`
//! with `alpha_bars[0] = 1`, so the step maps need no special case at `t = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Schedule family accepted by [`build_schedule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// Per-step variances interpolate uniformly from `beta_min` to `beta_max`.
    Linear,
    /// Squared-cosine cumulative-product profile, with per-step variances
    /// clamped into `[beta_min, beta_max]`.
    Cosine,
}

/// The forward-noising table: per-step variances and their cumulative
/// products.
///
/// Immutable after construction; shareable across parallel workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    num_steps: usize,
}

impl NoiseSchedule {
    /// Build a schedule directly from per-step variances.
    ///
    /// Accepts `beta = 0` (a degenerate no-noise step) so diagnostic
    /// schedules where consecutive cumulative products coincide can be
    /// constructed; [`build_schedule`] itself never produces one.
    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidSchedule("zero steps".into()));
        }
        if betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::InvalidSchedule(
                "every beta must lie in [0, 1)".into(),
            ));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut prod = 1.0;
        for &b in betas {
            prod *= 1.0 - b;
            alpha_bars.push(prod);
        }
        if prod <= 0.0 {
            return Err(Error::InvalidSchedule(
                "cumulative product underflowed to zero".into(),
            ));
        }
        Ok(NoiseSchedule {
            betas: betas.to_vec(),
            alpha_bars,
            num_steps: betas.len(),
        })
    }

    /// Number of steps `T`.
    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    /// Per-step variance `beta_t`, `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// Cumulative product at `t` in `0..=T`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Check a step index against `1..=T`.
    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_steps {
            return Err(Error::StepOutOfRange {
                t,
                max: self.num_steps,
            });
        }
        Ok(())
    }
}

/// Parameters from which a [`NoiseSchedule`] is built; mirrors the schedule
/// section of the run configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub kind: ScheduleKind,
    pub num_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        build_schedule(self.kind, self.num_steps, self.beta_min, self.beta_max)
    }
}

/// Construct a schedule of the given family.
///
/// Rejects `T = 0`, `beta_min > beta_max`, and bounds outside `(0, 1)`.
pub fn build_schedule(
    kind: ScheduleKind,
    num_steps: usize,
    beta_min: f64,
    beta_max: f64,
) -> Result<NoiseSchedule> {
    if num_steps == 0 {
        return Err(Error::InvalidSchedule("num_steps must be >= 1".into()));
    }
    if !(beta_min > 0.0 && beta_max < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "beta bounds ({beta_min}, {beta_max}) must lie inside (0, 1)"
        )));
    }
    if beta_min > beta_max {
        return Err(Error::InvalidSchedule(format!(
            "beta_min {beta_min} exceeds beta_max {beta_max}"
        )));
    }
    let t_count = num_steps;
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => (0..t_count)
            .map(|i| {
                if t_count == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * i as f64 / (t_count - 1) as f64
                }
            })
            .collect(),
        ScheduleKind::Cosine => {
            // Squared-cosine cumulative profile; betas derived from the
            // ratio of consecutive profile values, then clamped so the
            // resulting schedule still satisfies the invariants exactly.
            let offset = 0.008;
            let f = |u: f64| ((u + offset) / (1.0 + offset) * std::f64::consts::FRAC_PI_2)
                .cos()
                .powi(2);
            let f0 = f(0.0);
            (0..t_count)
                .map(|i| {
                    let a_prev = f(i as f64 / t_count as f64) / f0;
                    let a_cur = f((i + 1) as f64 / t_count as f64) / f0;
                    (1.0 - a_cur / a_prev).clamp(beta_min, beta_max)
                })
                .collect()
        }
    };
    NoiseSchedule::from_betas(&betas)
}

/// Precomputed per-step coefficients of the deterministic step maps.
///
/// For each `t` (stored at index `t - 1`):
/// - `h[t-1] = sqrt(1/alpha_bar_t - 1) - sqrt(1/alpha_bar_{t-1} - 1)`
/// - `m[t-1] = sqrt(alpha_bar_t / alpha_bar_{t-1})`
/// - `n[t-1] = sqrt(alpha_bar_t) * h[t-1]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdimCoefficients {
    pub h: Vec<f64>,
    pub m: Vec<f64>,
    pub n: Vec<f64>,
}

impl DdimCoefficients {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

/// Compute the coefficient tables for a schedule, once.
pub fn coefficients(sched: &NoiseSchedule) -> DdimCoefficients {
    let t_count = sched.num_steps();
    let mut h = Vec::with_capacity(t_count);
    let mut m = Vec::with_capacity(t_count);
    let mut n = Vec::with_capacity(t_count);
    for t in 1..=t_count {
        let a_prev = sched.alpha_bar(t - 1);
        let a_cur = sched.alpha_bar(t);
        let h_t = (1.0 / a_cur - 1.0).sqrt() - (1.0 / a_prev - 1.0).sqrt();
        h.push(h_t);
        m.push((a_cur / a_prev).sqrt());
        n.push(a_cur.sqrt() * h_t);
    }
    DdimCoefficients { h, m, n }
}
