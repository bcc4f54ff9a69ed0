//! Decomposition of recorded trajectories into semantic-gain and
//! approximation-error terms, closed-form guidance-gap predictions, the
//! accumulation inequality, and distributional quality metrics.
//!
//! Everything here is a pure function over immutable trajectory records;
//! no model evaluations happen during analysis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::sampler::{StepRecord, TrajectoryKind, TrajectoryRecord, ZigzagRecord};
use crate::schedule::NoiseSchedule;
use crate::score::{cfg_epsilon, Condition, MixtureSpec, ScorePair};

/// Per-trajectory decomposition of the latent differences produced by the
/// inversion cycles.
///
/// `semantic_gain[i]` is the guidance-gap component of the prediction
/// difference at `active_steps[i]` (both branches evaluated at the same
/// pre-step latent); `approx_error[i]` is the remainder attributable to the
/// inversion's score-evaluation approximation, scaled into the same
/// per-step convention so that the stepwise identity is exact for every
/// backtrack depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainDecomposition {
    pub kind: TrajectoryKind,
    /// Steps carrying inversion instrumentation, in trajectory order.
    pub active_steps: Vec<usize>,
    pub semantic_gain: Vec<Vec<f64>>,
    pub approx_error: Vec<Vec<f64>>,
    /// Score-based stepwise aggregation: `sum_t ab_t * h_t^2 * |g1 + g2|^2`.
    pub stepwise_from_scores: f64,
    /// Score-based end-to-end aggregation: `ab_T * |sum_t h_t (g1 + g2)|^2`.
    pub end_to_end_from_scores: f64,
    /// Closed-form guidance-gap prediction:
    /// `sum_t ab_t * h_t^2 * |(gamma1 - gamma2) (u_cond - u_uncond)|^2`.
    pub gap_closed_form: f64,
    /// Measured `sum_t |x_t - x~_t|^2` from raw latents.
    pub measured_stepwise: f64,
    /// Measured `|x_T - x~_T|^2`; end-to-end trajectories only.
    pub measured_end_to_end: Option<f64>,
    /// Unweighted diagnostics over the semantic terms.
    pub semantic_sum_sq: f64,
    pub semantic_sq_sum: f64,
}

impl GainDecomposition {
    /// Relative residual of the stepwise identity (measured vs score-based).
    pub fn stepwise_residual(&self) -> f64 {
        rel_diff(self.measured_stepwise, self.stepwise_from_scores)
    }

    /// Relative residual of the end-to-end identity, when measured.
    pub fn end_to_end_residual(&self) -> Option<f64> {
        self.measured_end_to_end
            .map(|m| rel_diff(m, self.end_to_end_from_scores))
    }

    /// The identity appropriate to the trajectory kind.
    pub fn identity_residual(&self) -> f64 {
        match self.kind {
            TrajectoryKind::EndToEnd => self.end_to_end_residual().unwrap_or(f64::INFINITY),
            _ => self.stepwise_residual(),
        }
    }
}

fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn pair_of(step: &StepRecord) -> ScorePair {
    ScorePair {
        u_cond: step.denoise.u_cond.clone(),
        u_uncond: step.denoise.u_uncond.clone(),
    }
}

fn h_coefficient(sched: &NoiseSchedule, t: usize) -> f64 {
    let ab_t = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t - 1);
    (1.0 / ab_t - 1.0).sqrt() - (1.0 / ab_prev - 1.0).sqrt()
}

/// The exact per-sub-step contribution to `(x_t - x~_t) / sqrt(ab_t)`, from
/// the recorded denoise/invert pair at step `t`:
/// `h_den * eps_denoise - h_t * eps_invert - noise / sqrt(ab_{t-1})`,
/// where `h_den` shrinks with the stochastic split of the direction term so
/// the identity remains exact for every eta.
fn step_bracket(
    den: &crate::sampler::EvalRecord,
    inv_eps: &[f64],
    sched: &NoiseSchedule,
    t: usize,
    eta: f64,
) -> Vec<f64> {
    let ab_t = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t - 1);
    let h = h_coefficient(sched, t);
    let h_den = if den.noise.is_empty() {
        h
    } else {
        let sigma = crate::sampler::eta_sigma(sched, t, eta);
        (1.0 / ab_t - 1.0).sqrt() - ((1.0 - ab_prev - sigma * sigma).max(0.0) / ab_prev).sqrt()
    };
    let noise_scale = 1.0 / ab_prev.sqrt();
    (0..den.eps_used.len())
        .map(|i| {
            let mut v = h_den * den.eps_used[i] - h * inv_eps[i];
            if !den.noise.is_empty() {
                v -= noise_scale * den.noise[i];
            }
            v
        })
        .collect()
}

/// Weighted prediction difference accumulated over one inversion cycle:
/// the sum of [`step_bracket`] over the cycle's sub-steps.
fn cycle_weighted_diff(
    step: &StepRecord,
    z: &ZigzagRecord,
    sched: &NoiseSchedule,
    eta: f64,
) -> Vec<f64> {
    let dim = step.x_before.len();
    let mut acc = vec![0.0; dim];
    // denoise evaluations by step index: the top step, then the dive
    let mut denoise_by_t = vec![(step.t, &step.denoise)];
    for ev in &z.extra_denoise {
        denoise_by_t.push((ev.t, ev));
    }
    for inv in &z.inversions {
        let den = denoise_by_t
            .iter()
            .find(|(t, _)| *t == inv.t)
            .map(|(_, e)| *e)
            .expect("matching denoise sub-step");
        let bracket = step_bracket(den, &inv.eps_used, sched, inv.t, eta);
        for i in 0..dim {
            acc[i] += bracket[i];
        }
    }
    acc
}

/// Decompose a recorded trajectory into per-step semantic-gain and
/// approximation-error terms and the score-based aggregates.
///
/// Requires inversion instrumentation: a zigzag trajectory with a nonempty
/// window, or an end-to-end trajectory. The measured quantities come from
/// raw latents; the score-based quantities are assembled purely from the
/// recorded predictions, so comparing the two tests the step-map algebra.
pub fn decompose_gains(
    traj: &TrajectoryRecord,
    sched: &NoiseSchedule,
) -> Result<GainDecomposition> {
    traj.validate()?;
    match traj.kind {
        TrajectoryKind::Zigzag => decompose_zigzag(traj, sched),
        TrajectoryKind::EndToEnd => decompose_end2end(traj, sched),
        _ => Err(Error::MissingInstrumentation(
            "trajectory has no inversion cycles to decompose".into(),
        )),
    }
}

fn decompose_zigzag(traj: &TrajectoryRecord, sched: &NoiseSchedule) -> Result<GainDecomposition> {
    if traj.zigzag_step_count() == 0 {
        return Err(Error::MissingInstrumentation(
            "zigzag window is empty".into(),
        ));
    }
    let cfg = &traj.config;
    let mut dec = GainDecomposition {
        kind: traj.kind,
        active_steps: Vec::new(),
        semantic_gain: Vec::new(),
        approx_error: Vec::new(),
        stepwise_from_scores: 0.0,
        end_to_end_from_scores: 0.0,
        gap_closed_form: 0.0,
        measured_stepwise: 0.0,
        measured_end_to_end: None,
        semantic_sum_sq: 0.0,
        semantic_sq_sum: 0.0,
    };
    let dim = traj.x_init.len();
    let mut weighted_sum = vec![0.0; dim];
    let mut semantic_sum = vec![0.0; dim];
    for step in &traj.steps {
        let Some(z) = &step.zigzag else {
            continue;
        };
        let t = step.t;
        let ab_t = sched.alpha_bar(t);
        let h_t = h_coefficient(sched, t);
        let pair = pair_of(step);
        let tau1 = linalg::sub(
            &cfg_epsilon(&pair, cfg.denoise_guidance),
            &cfg_epsilon(&pair, cfg.invert_guidance),
        );
        let diff = cycle_weighted_diff(step, z, sched, cfg.eta);
        // residual after the top-step semantic part, in the h_t convention
        let tau2: Vec<f64> = diff
            .iter()
            .zip(&tau1)
            .map(|(d, s)| d / h_t - s)
            .collect();

        dec.measured_stepwise += linalg::sub(&step.x_before, &z.x_inverted)
            .iter()
            .map(|v| v * v)
            .sum::<f64>();
        dec.stepwise_from_scores += ab_t * linalg::norm_sq(&diff);
        dec.gap_closed_form += ab_t * h_t * h_t * linalg::norm_sq(&tau1);
        dec.semantic_sum_sq += linalg::norm_sq(&tau1);
        for i in 0..dim {
            weighted_sum[i] += diff[i];
            semantic_sum[i] += tau1[i];
        }
        dec.active_steps.push(t);
        dec.semantic_gain.push(tau1);
        dec.approx_error.push(tau2);
    }
    let ab_last = sched.alpha_bar(sched.num_steps());
    dec.end_to_end_from_scores = ab_last * linalg::norm_sq(&weighted_sum);
    dec.semantic_sq_sum = linalg::norm_sq(&semantic_sum);
    Ok(dec)
}

fn decompose_end2end(traj: &TrajectoryRecord, sched: &NoiseSchedule) -> Result<GainDecomposition> {
    let e2e = traj
        .end2end
        .as_ref()
        .ok_or_else(|| Error::MissingInstrumentation("missing inversion pass".into()))?;
    let cfg = &traj.config;
    let t_count = cfg.num_steps;
    let mut dec = GainDecomposition {
        kind: traj.kind,
        active_steps: Vec::new(),
        semantic_gain: Vec::new(),
        approx_error: Vec::new(),
        stepwise_from_scores: 0.0,
        end_to_end_from_scores: 0.0,
        gap_closed_form: 0.0,
        measured_stepwise: 0.0,
        measured_end_to_end: None,
        semantic_sum_sq: 0.0,
        semantic_sq_sum: 0.0,
    };
    let dim = traj.x_init.len();
    let mut weighted_sum = vec![0.0; dim];
    let mut semantic_sum = vec![0.0; dim];
    // first pass runs t = T..1; inversions run t = 1..T
    for step in &e2e.first_pass {
        let t = step.t;
        let ab_t = sched.alpha_bar(t);
        let h_t = h_coefficient(sched, t);
        let inv = &e2e.inversions[t - 1];
        debug_assert_eq!(inv.t, t);
        let bracket = step_bracket(&step.denoise, &inv.eps_used, sched, t, cfg.eta);
        let pair = pair_of(step);
        let tau1 = linalg::sub(
            &cfg_epsilon(&pair, cfg.denoise_guidance),
            &cfg_epsilon(&pair, cfg.invert_guidance),
        );
        // residual beyond the semantic part, in the per-step convention
        let tau2: Vec<f64> = bracket
            .iter()
            .zip(&tau1)
            .map(|(b, s)| b / h_t - s)
            .collect();

        // latent gap at level t: first-pass latent vs inverted latent
        let x_t = &step.x_before;
        let x_inv_t = &e2e.inverted_latents[t];
        dec.measured_stepwise += linalg::sub(x_t, x_inv_t)
            .iter()
            .map(|v| v * v)
            .sum::<f64>();

        dec.stepwise_from_scores += ab_t * linalg::norm_sq(&bracket);
        dec.gap_closed_form += ab_t * h_t * h_t * linalg::norm_sq(&tau1);
        dec.semantic_sum_sq += linalg::norm_sq(&tau1);
        for i in 0..dim {
            weighted_sum[i] += bracket[i];
            semantic_sum[i] += tau1[i];
        }
        dec.active_steps.push(t);
        dec.semantic_gain.push(tau1);
        dec.approx_error.push(tau2);
    }
    let ab_last = sched.alpha_bar(t_count);
    dec.end_to_end_from_scores = ab_last * linalg::norm_sq(&weighted_sum);
    dec.measured_end_to_end = Some(linalg::norm_sq(&linalg::sub(
        &e2e.x_start,
        &e2e.x_reinjected,
    )));
    dec.semantic_sq_sum = linalg::norm_sq(&semantic_sum);
    Ok(dec)
}

/// Closed-form cumulative guidance-gap gain evaluated from recorded
/// branches: `sum_t ab_t * h_t^2 * |(gamma1 - gamma2)(u_cond - u_uncond)|^2`
/// at the pre-step latents.
///
/// The sum runs over the steps with inversion instrumentation when any is
/// present (so it is directly comparable to the measured stepwise quantity)
/// and over all recorded steps otherwise.
pub fn guidance_gap_closed_form(
    traj: &TrajectoryRecord,
    sched: &NoiseSchedule,
    gamma1: f64,
    gamma2: f64,
) -> Result<f64> {
    let steps: Vec<&StepRecord> = match traj.kind {
        TrajectoryKind::EndToEnd => traj
            .end2end
            .as_ref()
            .ok_or_else(|| Error::MissingInstrumentation("missing inversion pass".into()))?
            .first_pass
            .iter()
            .collect(),
        TrajectoryKind::Zigzag if traj.zigzag_step_count() > 0 => traj
            .steps
            .iter()
            .filter(|s| s.zigzag.is_some())
            .collect(),
        _ => traj.steps.iter().collect(),
    };
    if steps.is_empty() {
        return Err(Error::MissingInstrumentation("no recorded steps".into()));
    }
    let gap = gamma1 - gamma2;
    let mut total = 0.0;
    for step in steps {
        let t = step.t;
        let ab_t = sched.alpha_bar(t);
        let h_t = h_coefficient(sched, t);
        let term: f64 = step
            .denoise
            .u_cond
            .iter()
            .zip(&step.denoise.u_uncond)
            .map(|(c, u)| {
                let v = gap * (c - u);
                v * v
            })
            .sum();
        total += ab_t * h_t * h_t * term;
    }
    Ok(total)
}

/// The per-step magnitudes and both sides of the accumulation comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccumulationReport {
    /// `s_t = h_t * |semantic_gain(t)|` per active step.
    pub step_magnitudes: Vec<f64>,
    /// Number of terms in the sums.
    pub terms: usize,
    /// `sum s_t^2`.
    pub sum_of_squares: f64,
    /// `(sum s_t)^2`.
    pub square_of_sum: f64,
    /// Exact nonnegative gap `n * sum s^2 - (sum s)^2` evaluated through the
    /// pairwise-difference identity, immune to cancellation.
    pub pairwise_gap: f64,
    /// Weighted aggregates from the decomposition, reported without
    /// asserting an ordering.
    pub stepwise_from_scores: f64,
    pub end_to_end_from_scores: f64,
    /// Unweighted semantic comparison.
    pub semantic_sum_sq: f64,
    pub semantic_sq_sum: f64,
}

impl AccumulationReport {
    /// The universal inequality `n * sum s_t^2 >= (sum s_t)^2`, allowing
    /// only floating-point rounding at the equality boundary.
    pub fn holds(&self) -> bool {
        let lhs = self.terms as f64 * self.sum_of_squares;
        lhs >= self.square_of_sum - 1e-12 * self.square_of_sum.abs()
    }

    /// The same inequality with the trajectory's full step count `T >= n`.
    pub fn holds_with_factor(&self, factor: usize) -> bool {
        let lhs = factor as f64 * self.sum_of_squares;
        factor >= self.terms && lhs >= self.square_of_sum - 1e-12 * self.square_of_sum.abs()
    }
}

/// Compare stepwise against end-to-end accumulation of the semantic terms.
///
/// Returns the per-step magnitudes `s_t = h_t * |gain(t)|` together with the
/// two sides of the universally valid comparison `n * sum s_t^2 >= (sum
/// s_t)^2`, plus the weighted aggregates for reporting.
pub fn accumulation_inequality(
    traj: &TrajectoryRecord,
    sched: &NoiseSchedule,
) -> Result<AccumulationReport> {
    let dec = decompose_gains(traj, sched)?;
    let mut magnitudes = Vec::with_capacity(dec.active_steps.len());
    for (t, gain) in dec.active_steps.iter().zip(&dec.semantic_gain) {
        magnitudes.push(h_coefficient(sched, *t) * linalg::norm(gain));
    }
    Ok(accumulation_from_magnitudes(&magnitudes, &dec))
}

fn accumulation_from_magnitudes(
    magnitudes: &[f64],
    dec: &GainDecomposition,
) -> AccumulationReport {
    let n = magnitudes.len();
    let sum: f64 = magnitudes.iter().sum();
    let sum_sq: f64 = magnitudes.iter().map(|s| s * s).sum();
    let mut pairwise = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = magnitudes[i] - magnitudes[j];
            pairwise += d * d;
        }
    }
    AccumulationReport {
        step_magnitudes: magnitudes.to_vec(),
        terms: n,
        sum_of_squares: sum_sq,
        square_of_sum: sum * sum,
        pairwise_gap: pairwise,
        stepwise_from_scores: dec.stepwise_from_scores,
        end_to_end_from_scores: dec.end_to_end_from_scores,
        semantic_sum_sq: dec.semantic_sum_sq,
        semantic_sq_sum: dec.semantic_sq_sum,
    }
}

/// Distributional quality of a sample set against the conditioned mixture
/// component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// Fraction of samples whose nearest component mean is the conditioned
    /// one.
    pub alignment: f64,
    /// Euclidean distance from the sample mean to the conditioned mean.
    pub mean_shift: f64,
    /// Energy distance to an exact same-size reference sample from the
    /// conditional component.
    pub energy_distance: f64,
}

/// Compute alignment, mean shift, and energy distance for a sample set.
///
/// The reference sample for the energy distance is drawn exactly from the
/// conditioned component with `ref_seed`.
pub fn quality_report(
    samples: &[Vec<f64>],
    spec: &MixtureSpec,
    cond: &Condition,
    ref_seed: u64,
) -> Result<QualityReport> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("empty sample set".into()));
    }
    let label = cond
        .label()
        .ok_or_else(|| Error::InvalidConfig("quality report needs a component condition".into()))?;
    if label >= spec.num_components() {
        return Err(Error::BadCondition {
            label,
            num_components: spec.num_components(),
        });
    }
    let dim = spec.dim();
    for s in samples {
        if s.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: s.len(),
            });
        }
    }
    let aligned = samples
        .iter()
        .filter(|s| spec.nearest_component(s) == label)
        .count();
    let alignment = aligned as f64 / samples.len() as f64;

    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= samples.len() as f64;
    }
    let mean_shift = linalg::dist(&mean, &spec.means[label]);

    let reference = crate::score::sample_component(spec, label, samples.len(), ref_seed);
    let energy = energy_distance(samples, &reference);

    Ok(QualityReport {
        alignment,
        mean_shift,
        energy_distance: energy,
    })
}

/// Unbiased two-sample energy distance
/// `2 E|X-Y| - E|X-X'| - E|Y-Y'|` with within-sample means over distinct
/// pairs.
pub fn energy_distance(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let m = y.len();
    if n == 0 || m == 0 {
        return 0.0;
    }
    let mut sum_xy = 0.0;
    for xi in x {
        for yj in y {
            sum_xy += linalg::dist(xi, yj);
        }
    }
    let mean_xy = sum_xy / (n as f64 * m as f64);

    let within = |s: &[Vec<f64>]| -> f64 {
        let k = s.len();
        if k < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for i in 0..k {
            for j in (i + 1)..k {
                total += linalg::dist(&s[i], &s[j]);
            }
        }
        2.0 * total / (k as f64 * (k - 1) as f64)
    };

    2.0 * mean_xy - within(x) - within(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{
        draw_initial_latent, end2end_inject, zigzag_sample, SamplerConfig,
    };
    use crate::schedule::{build_schedule, NoiseSchedule, ScheduleKind};
    use crate::score::{
        sample_component, AnalyticMixtureModel, ConstantModel, MixtureSpec, ScoreModel,
    };
    use crate::Result as CrateResult;

    fn reference() -> (NoiseSchedule, AnalyticMixtureModel, SamplerConfig) {
        let sched = build_schedule(ScheduleKind::Linear, 10, 0.04, 0.45).unwrap();
        let spec =
            MixtureSpec::equal_weight(vec![vec![2.0, 0.0], vec![-2.0, 0.0]], 0.25).unwrap();
        let model = AnalyticMixtureModel::new(spec, &sched).unwrap();
        let cfg = SamplerConfig {
            num_steps: 10,
            ..SamplerConfig::default()
        };
        (sched, model, cfg)
    }

    #[test]
    fn equal_guidance_zeroes_semantic_terms() {
        let (sched, model, cfg) = reference();
        let cfg = SamplerConfig {
            invert_guidance: cfg.denoise_guidance,
            ..cfg
        };
        let x_init = draw_initial_latent(2, 10, 1);
        let (_, traj) =
            zigzag_sample(&model, &Condition::Component(0), &cfg, &sched, &x_init).unwrap();
        let dec = decompose_gains(&traj, &sched).unwrap();
        for gain in &dec.semantic_gain {
            assert!(gain.iter().all(|v| *v == 0.0));
        }
        assert_eq!(dec.gap_closed_form, 0.0);
    }

    #[test]
    fn constant_model_zeroes_approx_error_and_matches_closed_form() {
        let sched = build_schedule(ScheduleKind::Linear, 10, 0.04, 0.45).unwrap();
        let model = ConstantModel::new(vec![0.9, -0.2], vec![0.1, 0.4]);
        let cfg = SamplerConfig {
            num_steps: 10,
            denoise_guidance: 5.5,
            invert_guidance: 0.0,
            zigzag_steps: 9,
            ..SamplerConfig::default()
        };
        let x_init = draw_initial_latent(2, 10, 2);
        let (_, traj) =
            zigzag_sample(&model, &Condition::Component(0), &cfg, &sched, &x_init).unwrap();
        let dec = decompose_gains(&traj, &sched).unwrap();
        for err in &dec.approx_error {
            for v in err {
                assert!(v.abs() < 1e-12, "approx error should vanish, got {v}");
            }
        }
        let rel = rel_diff(dec.measured_stepwise, dec.gap_closed_form);
        assert!(rel <= 1e-10, "closed form vs measured: rel {rel}");
    }

    #[test]
    fn stepwise_identity_on_analytic_model() {
        let (sched, model, cfg) = reference();
        for seed in 0..8u64 {
            let cfg = SamplerConfig { seed, ..cfg.clone() };
            let x_init = draw_initial_latent(2, 10, 1000 + seed);
            let (_, traj) =
                zigzag_sample(&model, &Condition::Component(0), &cfg, &sched, &x_init).unwrap();
            let dec = decompose_gains(&traj, &sched).unwrap();
            assert!(
                dec.stepwise_residual() <= 1e-8,
                "stepwise identity residual {} at seed {seed}",
                dec.stepwise_residual()
            );
        }
    }

    #[test]
    fn stepwise_identity_with_deep_backtracking() {
        let (sched, model, cfg) = reference();
        let cfg = SamplerConfig {
            backtrack: 3,
            ..cfg
        };
        let x_init = draw_initial_latent(2, 10, 77);
        let (_, traj) =
            zigzag_sample(&model, &Condition::Component(0), &cfg, &sched, &x_init).unwrap();
        let dec = decompose_gains(&traj, &sched).unwrap();
        assert!(dec.stepwise_residual() <= 1e-8);
    }

    #[test]
    fn stepwise_identity_survives_stochastic_steps() {
        let (sched, model, cfg) = reference();
        for (eta, s_coef) in [(1.0, 0.0), (0.5, 0.0), (1.0, 0.5)] {
            let cfg = SamplerConfig {
                eta,
                error_scale: s_coef,
                ..cfg.clone()
            };
            let x_init = draw_initial_latent(2, 10, 303);
            let (_, traj) =
                zigzag_sample(&model, &Condition::Component(0), &cfg, &sched, &x_init).unwrap();
            let dec = decompose_gains(&traj, &sched).unwrap();
            assert!(
                dec.stepwise_residual() <= 1e-8,
                "eta {eta} s {s_coef}: residual {}",
                dec.stepwise_residual()
            );
        }
    }

    #[test]
    fn end_to_end_identity_on_analytic_model() {
        let (sched, model, cfg) = reference();
        let x_init = draw_initial_latent(2, 10, 5);
        let (_, traj) =
            end2end_inject(&model, &Condition::Component(0), &cfg, &sched, &x_init).unwrap();
        let dec = decompose_gains(&traj, &sched).unwrap();
        let res = dec.end_to_end_residual().unwrap();
        assert!(res <= 1e-8, "end-to-end identity residual {res}");
    }

    #[test]
    fn closed_form_is_exactly_quadratic_in_the_gap() {
        let (sched, model, cfg) = reference();
        let x_init = draw_initial_latent(2, 10, 9);
        let (_, traj) =
            zigzag_sample(&model, &Condition::Component(0), &cfg, &sched, &x_init).unwrap();
        let base = guidance_gap_closed_form(&traj, &sched, 3.0, 1.0).unwrap();
        let doubled = guidance_gap_closed_form(&traj, &sched, 5.0, 1.0).unwrap();
        assert!(base > 0.0);
        assert!(((doubled / base) - 4.0).abs() <= 1e-9);
        let zero = guidance_gap_closed_form(&traj, &sched, 2.5, 2.5).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn closed_form_single_step_hand_value() {
        // T = 1, alpha_bar_1 = 0.9 so h_1 = 1/3; branch difference 1.0 and
        // gap 2 give 0.9 * (1/9) * 4 = 0.4.
        let sched = NoiseSchedule::from_betas(&[0.1]).unwrap();
        let model = ConstantModel::new(vec![1.0], vec![0.0]);
        let cfg = SamplerConfig {
            num_steps: 1,
            zigzag_steps: 0,
            denoise_guidance: 2.0,
            invert_guidance: 0.0,
            ..SamplerConfig::default()
        };
        let x_init = crate::sampler::LatentState::new(vec![0.5], 1);
        let (_, traj) = crate::sampler::standard_sample(
            &model,
            &Condition::Component(0),
            &cfg,
            &sched,
            &x_init,
        )
        .unwrap();
        let v = guidance_gap_closed_form(&traj, &sched, 2.0, 0.0).unwrap();
        assert!((v - 0.4).abs() < 1e-12);
    }

    #[test]
    fn accumulation_inequality_universal() -> CrateResult<()> {
        let (sched, model, cfg) = reference();
        for seed in 0..6u64 {
            let cfg = SamplerConfig { seed, ..cfg.clone() };
            let x_init = draw_initial_latent(2, 10, 4000 + seed);
            let (_, traj) =
                zigzag_sample(&model, &Condition::Component(0), &cfg, &sched, &x_init)?;
            let rep = accumulation_inequality(&traj, &sched)?;
            assert!(rep.holds());
            assert!(rep.holds_with_factor(cfg.num_steps));
            assert!(rep.pairwise_gap >= 0.0);
        }
        Ok(())
    }

    #[test]
    fn accumulation_equality_when_terms_equal() {
        let dec = GainDecomposition {
            kind: TrajectoryKind::Zigzag,
            active_steps: vec![4, 3, 2, 1],
            semantic_gain: vec![],
            approx_error: vec![],
            stepwise_from_scores: 0.0,
            end_to_end_from_scores: 0.0,
            gap_closed_form: 0.0,
            measured_stepwise: 0.0,
            measured_end_to_end: None,
            semantic_sum_sq: 0.0,
            semantic_sq_sum: 0.0,
        };
        let rep = accumulation_from_magnitudes(&[0.1, 0.1, 0.1, 0.1], &dec);
        assert_eq!(rep.pairwise_gap, 0.0);
        let lhs = rep.terms as f64 * rep.sum_of_squares;
        assert!((lhs - rep.square_of_sum).abs() <= 1e-12 * lhs);
        assert!(rep.holds());
    }

    /// A model whose branch difference flips sign with the step index:
    /// stepwise accumulation keeps every term while the end-to-end sum
    /// cancels.
    struct AlternatingModel;

    impl ScoreModel for AlternatingModel {
        fn dim(&self) -> usize {
            1
        }
        fn num_components(&self) -> usize {
            1
        }
        fn epsilon(&self, _x: &[f64], t: usize, cond: &Condition) -> crate::Result<Vec<f64>> {
            let sign = if t.is_multiple_of(2) { 1.0 } else { -1.0 };
            Ok(match cond {
                Condition::Component(_) => vec![0.5 * sign],
                Condition::Null => vec![-0.5 * sign],
            })
        }
    }

    #[test]
    fn alternating_gains_cancel_end_to_end() {
        let sched = build_schedule(ScheduleKind::Linear, 10, 0.2, 0.2001).unwrap();
        let cfg = SamplerConfig {
            num_steps: 10,
            denoise_guidance: 2.0,
            invert_guidance: 0.0,
            zigzag_steps: 9,
            ..SamplerConfig::default()
        };
        let x_init = draw_initial_latent(1, 10, 3);
        let (_, traj) =
            zigzag_sample(&AlternatingModel, &Condition::Component(0), &cfg, &sched, &x_init)
                .unwrap();
        let dec = decompose_gains(&traj, &sched).unwrap();
        assert!(
            dec.end_to_end_from_scores < 0.2 * dec.stepwise_from_scores,
            "cancellation should shrink the end-to-end form: {} vs {}",
            dec.end_to_end_from_scores,
            dec.stepwise_from_scores
        );
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn accumulation_inequality_never_fails(
            u_cond in proptest::collection::vec(-2.0f64..2.0, 2),
            u_uncond in proptest::collection::vec(-2.0f64..2.0, 2),
            seed in 0u64..1_000_000,
            beta_hi in 0.05f64..0.6,
            gamma1 in -1.0f64..6.0,
            gamma2 in -1.0f64..6.0,
        ) {
            let sched = build_schedule(ScheduleKind::Linear, 8, 0.01, beta_hi).unwrap();
            let model = ConstantModel::new(u_cond, u_uncond);
            let cfg = SamplerConfig {
                num_steps: 8,
                denoise_guidance: gamma1,
                invert_guidance: gamma2,
                zigzag_steps: 7,
                seed,
                ..SamplerConfig::default()
            };
            let x_init = draw_initial_latent(2, 8, seed);
            let (_, traj) =
                zigzag_sample(&model, &Condition::Component(0), &cfg, &sched, &x_init).unwrap();
            let rep = accumulation_inequality(&traj, &sched).unwrap();
            proptest::prop_assert!(rep.holds());
            proptest::prop_assert!(rep.holds_with_factor(8));
            proptest::prop_assert!(rep.pairwise_gap >= 0.0);
        }
    }

    #[test]
    fn quality_report_basics() {
        let spec =
            MixtureSpec::equal_weight(vec![vec![2.0, 0.0], vec![-2.0, 0.0]], 0.25).unwrap();
        // exact conditional draws align almost surely for well-separated means
        let samples = sample_component(&spec, 0, 400, 99);
        let q = quality_report(&samples, &spec, &Condition::Component(0), 123).unwrap();
        assert!(q.alignment >= 0.95);
        assert!(q.mean_shift < 0.2);

        // all samples exactly at the mean: zero mean shift
        let at_mean = vec![spec.means[0].clone(); 32];
        let q = quality_report(&at_mean, &spec, &Condition::Component(0), 123).unwrap();
        assert_eq!(q.mean_shift, 0.0);

        assert!(quality_report(&[], &spec, &Condition::Component(0), 1).is_err());
        assert!(quality_report(&at_mean, &spec, &Condition::Null, 1).is_err());
    }

    #[test]
    fn energy_distance_control_pair() {
        let spec = MixtureSpec::equal_weight(vec![vec![0.0, 0.0]], 1.0).unwrap();
        let a = sample_component(&spec, 0, 256, 1);
        let b = sample_component(&spec, 0, 256, 2);
        let c = sample_component(&spec, 0, 256, 1);
        // identical sets: |statistic| = 2 E|X-X'| / n, inside the noise floor
        let same = energy_distance(&a, &c);
        assert!(same.abs() < 0.05, "identical-set energy {same}");
        // same distribution: within the Monte-Carlo noise floor
        let control = energy_distance(&a, &b);
        assert!(control.abs() < 0.15, "control pair energy {control}");
        assert!(same.abs() <= control.abs().max(0.02));
        // a clearly shifted set is far beyond the control floor
        let shifted: Vec<Vec<f64>> = a.iter().map(|p| vec![p[0] + 3.0, p[1]]).collect();
        let far = energy_distance(&shifted, &b);
        assert!(far > 10.0 * control.abs().max(1e-6));
    }

    #[test]
    fn decompose_rejects_uninstrumented_trajectories() {
        let (sched, model, cfg) = reference();
        let x_init = draw_initial_latent(2, 10, 55);
        let (_, traj) = crate::sampler::standard_sample(
            &model,
            &Condition::Component(0),
            &cfg,
            &sched,
            &x_init,
        )
        .unwrap();
        assert!(decompose_gains(&traj, &sched).is_err());
        let cfg0 = SamplerConfig {
            zigzag_steps: 0,
            ..cfg
        };
        let (_, traj0) =
            zigzag_sample(&model, &Condition::Component(0), &cfg0, &sched, &x_init).unwrap();
        assert!(decompose_gains(&traj0, &sched).is_err());
    }
}
