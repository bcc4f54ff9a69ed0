//! Instrumented trajectory records.
//!
//! Every sampling loop records, for each outer step, the pre-step latent,
//! every model evaluation (both guidance branches plus the prediction
//! actually applied), and the latents produced. The analysis module
//! reconstructs all gain/error quantities from these records alone, without
//! re-evaluating the model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::SamplerConfig;

/// A latent vector paired with its noise level `t` (0 = clean side).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub x: Vec<f64>,
    pub t: usize,
}

impl LatentState {
    pub fn new(x: Vec<f64>, t: usize) -> Self {
        LatentState { x, t }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// One model evaluation: where it happened, both guidance branches, and the
/// prediction fed to the step map (after guidance combination and any
/// perturbation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Step index the prediction was requested for.
    pub t: usize,
    /// Latent the model was evaluated at.
    pub point: Vec<f64>,
    pub u_cond: Vec<f64>,
    pub u_uncond: Vec<f64>,
    /// Prediction actually applied by the step map.
    pub eps_used: Vec<f64>,
    /// Gaussian term the consuming denoise step added (already scaled);
    /// empty for deterministic steps and for inversion evaluations. Recorded
    /// so the latent-difference identities stay exact under stochastic
    /// sampling.
    #[serde(default)]
    pub noise: Vec<f64>,
}

/// The zigzag cycle recorded at one step: the optional deeper backtracking
/// dive, the inversion climb, and the re-denoise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZigzagRecord {
    /// Denoise evaluations below the current step (backtrack depth > 1),
    /// descending step order.
    pub extra_denoise: Vec<EvalRecord>,
    /// Latent at the bottom of the dive.
    pub x_bottom: Vec<f64>,
    /// Inversion evaluations, ascending step order back up to `t`.
    pub inversions: Vec<EvalRecord>,
    /// Re-inverted latent at the current step.
    pub x_inverted: Vec<f64>,
    /// Re-denoise evaluation at the inverted latent.
    pub redenoise: EvalRecord,
    /// Committed latent after the cycle (one level below `t`).
    pub x_after: Vec<f64>,
}

/// One re-noise/denoise round of the resampling baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleRound {
    pub x_renoised: Vec<f64>,
    pub denoise: EvalRecord,
    pub x_after: Vec<f64>,
}

/// One outer step of a sampling loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// Latent entering the step (level `t`).
    pub x_before: Vec<f64>,
    /// First denoise evaluation at `x_before`.
    pub denoise: EvalRecord,
    /// Latent after the first denoise (level `t - 1`).
    pub x_after_denoise: Vec<f64>,
    /// Present exactly when the zigzag window covers this step.
    pub zigzag: Option<ZigzagRecord>,
    /// Present only for the resampling baseline.
    pub resample: Vec<ResampleRound>,
}

impl StepRecord {
    /// Latent the loop actually carried forward out of this step.
    pub fn x_committed(&self) -> &[f64] {
        if let Some(z) = &self.zigzag {
            &z.x_after
        } else if let Some(r) = self.resample.last() {
            &r.x_after
        } else {
            &self.x_after_denoise
        }
    }
}

/// Which loop produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Standard,
    Zigzag,
    EndToEnd,
    Resample,
}

/// Extra instrumentation for the end-to-end injection loop: the first
/// denoising pass and the full inversion pass. The record's `steps` hold the
/// second (final) denoising pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct End2EndRecord {
    /// First denoising pass from the original noise latent.
    pub first_pass: Vec<StepRecord>,
    /// Inversion evaluations, ascending `t = 1..=T`; each eval point is the
    /// inverted latent one level below.
    pub inversions: Vec<EvalRecord>,
    /// Inverted latents by level, index `0..=T` (index 0 is the clean sample
    /// the inversion pass started from).
    pub inverted_latents: Vec<Vec<f64>>,
    /// The original noise-side latent the first pass started from.
    pub x_start: Vec<f64>,
    /// The re-injected noise-side latent the second pass started from.
    pub x_reinjected: Vec<f64>,
}

/// Full instrumentation of one sampled trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub kind: TrajectoryKind,
    /// Sampler configuration the trajectory was produced under.
    pub config: SamplerConfig,
    /// Outer steps, exactly `config.num_steps` of them, descending `t`.
    pub steps: Vec<StepRecord>,
    /// End-to-end instrumentation, present only for [`TrajectoryKind::EndToEnd`].
    pub end2end: Option<End2EndRecord>,
    /// Number of score steps taken (one conditional plus one unconditional
    /// model evaluation each).
    pub score_steps: usize,
    pub x_init: Vec<f64>,
    pub x_final: Vec<f64>,
}

impl TrajectoryRecord {
    /// Number of steps carrying zigzag instrumentation.
    pub fn zigzag_step_count(&self) -> usize {
        self.steps.iter().filter(|s| s.zigzag.is_some()).count()
    }

    /// Structural invariants: entry count equals `T`, and zigzag entries
    /// appear exactly where the window condition `t > T - lambda` holds.
    pub fn validate(&self) -> Result<()> {
        let t_count = self.config.num_steps;
        if self.steps.len() != t_count {
            return Err(Error::MissingInstrumentation(format!(
                "expected {t_count} step entries, found {}",
                self.steps.len()
            )));
        }
        for step in &self.steps {
            let in_window =
                self.kind == TrajectoryKind::Zigzag && step.t > t_count - self.config.zigzag_steps;
            if in_window != step.zigzag.is_some() {
                return Err(Error::MissingInstrumentation(format!(
                    "zigzag instrumentation mismatch at t = {}",
                    step.t
                )));
            }
        }
        if self.kind == TrajectoryKind::EndToEnd && self.end2end.is_none() {
            return Err(Error::MissingInstrumentation(
                "end-to-end record missing inversion pass".into(),
            ));
        }
        Ok(())
    }
}
