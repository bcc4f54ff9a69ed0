//! Single-step denoise/invert maps and the sampling loops built from them:
//! plain deterministic sampling, the zigzag loop (per-step denoise, invert
//! under a lower guidance scale, re-denoise), end-to-end injection (full
//! denoise, full inversion, full denoise), and the re-noising resampling
//! baseline.

mod trajectory;

pub use trajectory::{
    End2EndRecord, EvalRecord, LatentState, ResampleRound, StepRecord, TrajectoryKind,
    TrajectoryRecord, ZigzagRecord,
};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::schedule::NoiseSchedule;
use crate::score::{cfg_epsilon, Condition, ScoreModel};

fn default_backtrack() -> usize {
    1
}
fn default_fp_tol() -> f64 {
    1e-10
}
fn default_fp_iters() -> usize {
    50
}

/// Settings shared by every sampling loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Inference steps `T`.
    pub num_steps: usize,
    /// Guidance scale applied while denoising.
    pub denoise_guidance: f64,
    /// Guidance scale applied while inverting.
    pub invert_guidance: f64,
    /// Zigzag window: the earliest `lambda` steps (largest `t`) run the
    /// cycle. Must satisfy `lambda <= T - 1`.
    #[serde(default)]
    pub zigzag_steps: usize,
    /// Backtracking stepsize `k >= 1`: the cycle denoises `k` single steps
    /// and inverts the same `k` back.
    #[serde(default = "default_backtrack")]
    pub backtrack: usize,
    /// Stochasticity in `[0, 1]`; 0 keeps every denoise step deterministic.
    #[serde(default)]
    pub eta: f64,
    /// Coefficient of the Gaussian error injected into the inversion
    /// prediction; 0 disables injection.
    #[serde(default)]
    pub error_scale: f64,
    #[serde(default)]
    pub seed: u64,
    /// Solve the inversion's implicit equation by fixed-point iteration
    /// instead of evaluating the score at the lower-noise latent.
    #[serde(default)]
    pub exact_inversion: bool,
    #[serde(default = "default_fp_tol")]
    pub fixed_point_tol: f64,
    #[serde(default = "default_fp_iters")]
    pub fixed_point_max_iter: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            num_steps: 10,
            denoise_guidance: 5.5,
            invert_guidance: 0.0,
            zigzag_steps: 9,
            backtrack: 1,
            eta: 0.0,
            error_scale: 0.0,
            seed: 0,
            exact_inversion: false,
            fixed_point_tol: default_fp_tol(),
            fixed_point_max_iter: default_fp_iters(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.num_steps != sched.num_steps() {
            return Err(Error::InvalidConfig(format!(
                "config steps {} != schedule steps {}",
                self.num_steps,
                sched.num_steps()
            )));
        }
        if self.num_steps == 0 {
            return Err(Error::InvalidConfig("num_steps must be >= 1".into()));
        }
        if self.zigzag_steps + 1 > self.num_steps {
            return Err(Error::InvalidConfig(format!(
                "zigzag_steps {} exceeds T - 1 = {}",
                self.zigzag_steps,
                self.num_steps - 1
            )));
        }
        if self.backtrack == 0 || self.backtrack > self.num_steps {
            return Err(Error::InvalidConfig(format!(
                "backtrack {} outside 1..=T",
                self.backtrack
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidConfig(format!("eta {} outside [0, 1]", self.eta)));
        }
        if self.error_scale < 0.0 || !self.error_scale.is_finite() {
            return Err(Error::InvalidConfig("error_scale must be finite and >= 0".into()));
        }
        if !self.denoise_guidance.is_finite() || !self.invert_guidance.is_finite() {
            return Err(Error::InvalidConfig("guidance scales must be finite".into()));
        }
        if self.fixed_point_tol <= 0.0 || self.fixed_point_max_iter == 0 {
            return Err(Error::InvalidConfig(
                "fixed-point settings must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Whether the zigzag/resample window covers step `t`.
    pub fn in_window(&self, t: usize) -> bool {
        t > self.num_steps - self.zigzag_steps
    }

    /// Guidance gap between denoising and inversion.
    pub fn guidance_gap(&self) -> f64 {
        self.denoise_guidance - self.invert_guidance
    }
}

/// Standard deviation of the Gaussian injected by a denoise step at level
/// `t` under stochasticity `eta` (0 at `eta = 0` and at `t = 1`).
pub fn eta_sigma(sched: &NoiseSchedule, t: usize, eta: f64) -> f64 {
    if eta <= 0.0 {
        return 0.0;
    }
    let ab_t = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t - 1);
    eta * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt() * (1.0 - ab_t / ab_prev).sqrt()
}

/// One deterministic (or, with `eta > 0`, partially stochastic) denoise step
/// from level `t` to `t - 1`.
///
/// With `eta = 0` this is exactly
/// `sqrt(ab_{t-1}) * (x - sqrt(1 - ab_t) * eps) / sqrt(ab_t) + sqrt(1 - ab_{t-1}) * eps`;
/// with `eta > 0` the direction term is split into a deterministic part and
/// a fresh Gaussian with the usual eta-scaled variance. The arithmetic is
/// arranged so a degenerate step (`ab_t = ab_{t-1}`) is the exact identity.
pub fn ddim_denoise_step(
    state: &LatentState,
    eps: &[f64],
    sched: &NoiseSchedule,
    eta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LatentState> {
    denoise_step_recorded(state, eps, sched, eta, rng).map(|(next, _)| next)
}

/// The denoise step plus the scaled Gaussian term it injected (empty when
/// the step was deterministic), so records can reproduce the step exactly.
fn denoise_step_recorded(
    state: &LatentState,
    eps: &[f64],
    sched: &NoiseSchedule,
    eta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(LatentState, Vec<f64>)> {
    let t = state.t;
    if t == 0 {
        return Err(Error::StepOutOfRange {
            t,
            max: sched.num_steps(),
        });
    }
    sched.check_step(t)?;
    if eps.len() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            got: eps.len(),
        });
    }
    let ab_t = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t - 1);
    let sigma = eta_sigma(sched, t, eta);
    let scale = (ab_prev / ab_t).sqrt();
    // coefficient on eps: sqrt(1 - ab_{t-1} - sigma^2) - sqrt(ab_{t-1} (1 - ab_t) / ab_t)
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let coeff = dir - (ab_prev * (1.0 - ab_t) / ab_t).sqrt();
    let mut x = linalg::axpy(&linalg::scale(&state.x, scale), coeff, eps);
    let mut noise = Vec::new();
    if sigma > 0.0 {
        noise = (0..x.len())
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        for (xi, z) in x.iter_mut().zip(&noise) {
            *xi += z;
        }
    }
    Ok((LatentState::new(x, t - 1), noise))
}

/// One inversion step from level `t - 1` back to `t`:
/// `m_t * x + n_t * eps` with the precomputed-coefficient definitions.
pub fn ddim_invert_step(
    state: &LatentState,
    eps: &[f64],
    sched: &NoiseSchedule,
) -> Result<LatentState> {
    let t = state.t + 1;
    sched.check_step(t)?;
    if eps.len() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            got: eps.len(),
        });
    }
    let ab_t = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t - 1);
    let m = (ab_t / ab_prev).sqrt();
    let h = (1.0 / ab_t - 1.0).sqrt() - (1.0 / ab_prev - 1.0).sqrt();
    let n = ab_t.sqrt() * h;
    let x = linalg::axpy(&linalg::scale(&state.x, m), n, eps);
    Ok(LatentState::new(x, t))
}

/// Draw a standard-normal noise-side latent at level `t`.
pub fn draw_initial_latent(dim: usize, t: usize, seed: u64) -> LatentState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let x = (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    LatentState::new(x, t)
}

/// Shared loop state: the model, guidance condition, rng stream, and the
/// score-step counter.
struct LoopCtx<'a> {
    model: &'a dyn ScoreModel,
    cond: Condition,
    cfg: &'a SamplerConfig,
    sched: &'a NoiseSchedule,
    rng: ChaCha8Rng,
    score_steps: usize,
}

impl<'a> LoopCtx<'a> {
    fn new(
        model: &'a dyn ScoreModel,
        cond: &Condition,
        cfg: &'a SamplerConfig,
        sched: &'a NoiseSchedule,
    ) -> Result<Self> {
        cfg.validate(sched)?;
        model.check_condition(cond)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(LoopCtx {
            model,
            cond: *cond,
            cfg,
            sched,
            rng,
            score_steps: 0,
        })
    }

    fn check_init(&self, x_init: &LatentState) -> Result<()> {
        if x_init.t != self.cfg.num_steps {
            return Err(Error::InvalidConfig(format!(
                "initial latent at level {}, expected {}",
                x_init.t, self.cfg.num_steps
            )));
        }
        if x_init.dim() != self.model.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.model.dim(),
                got: x_init.dim(),
            });
        }
        Ok(())
    }

    /// Evaluate both branches at `x` and combine them at guidance `gamma`.
    fn eval(&mut self, x: &[f64], t: usize, gamma: f64) -> Result<EvalRecord> {
        let pair = self.model.branches(x, t, &self.cond)?;
        self.score_steps += 1;
        let eps_used = cfg_epsilon(&pair, gamma);
        Ok(EvalRecord {
            t,
            point: x.to_vec(),
            u_cond: pair.u_cond,
            u_uncond: pair.u_uncond,
            eps_used,
            noise: Vec::new(),
        })
    }

    fn denoise(&mut self, state: &LatentState, eps: &[f64]) -> Result<(LatentState, Vec<f64>)> {
        denoise_step_recorded(state, eps, self.sched, self.cfg.eta, &mut self.rng)
    }

    /// One inversion step from `from` (level `t - 1`) up to `t`, at the
    /// inversion guidance scale.
    ///
    /// In the default mode the score is evaluated at the lower-noise latent
    /// itself. In exact mode the implicit equation `y = m_t * x + n_t *
    /// eps(y)` is solved by fixed-point iteration; every iteration costs one
    /// score step. `denoise_norm` scales the optional Gaussian error
    /// injection.
    fn invert(
        &mut self,
        from: &LatentState,
        t: usize,
        denoise_norm: f64,
    ) -> Result<(EvalRecord, LatentState)> {
        debug_assert_eq!(from.t + 1, t);
        let gamma = self.cfg.invert_guidance;
        let mut ev = self.eval(&from.x, t, gamma)?;
        let mut up = ddim_invert_step(from, &ev.eps_used, self.sched)?;
        if self.cfg.exact_inversion {
            for _ in 1..self.cfg.fixed_point_max_iter {
                if linalg::dist(&up.x, &ev.point) <= self.cfg.fixed_point_tol {
                    break;
                }
                ev = self.eval(&up.x, t, gamma)?;
                up = ddim_invert_step(from, &ev.eps_used, self.sched)?;
            }
        }
        if self.cfg.error_scale > 0.0 && denoise_norm > 0.0 {
            let g: Vec<f64> = (0..from.dim())
                .map(|_| self.rng.sample::<f64, _>(StandardNormal))
                .collect();
            let g_norm = linalg::norm(&g);
            if g_norm > 0.0 {
                let scale = self.cfg.error_scale * denoise_norm / g_norm;
                ev.eps_used = linalg::axpy(&ev.eps_used, scale, &g);
                up = ddim_invert_step(from, &ev.eps_used, self.sched)?;
            }
        }
        Ok((ev, up))
    }

    /// One plain denoising pass from `x_init` down to level 0, recording
    /// every step.
    fn denoise_pass(&mut self, x_init: &LatentState) -> Result<(LatentState, Vec<StepRecord>)> {
        let mut steps = Vec::with_capacity(self.cfg.num_steps);
        let mut cur = x_init.clone();
        for t in (1..=self.cfg.num_steps).rev() {
            let mut ev = self.eval(&cur.x, t, self.cfg.denoise_guidance)?;
            let (next, noise) = self.denoise(&cur, &ev.eps_used)?;
            ev.noise = noise;
            steps.push(StepRecord {
                t,
                x_before: cur.x.clone(),
                denoise: ev,
                x_after_denoise: next.x.clone(),
                zigzag: None,
                resample: Vec::new(),
            });
            cur = next;
        }
        Ok((cur, steps))
    }
}

/// Plain sampling: `T` sequential denoise steps under the denoising
/// guidance. `zigzag_steps`, `invert_guidance`, `backtrack`, and
/// `error_scale` are ignored.
pub fn standard_sample(
    model: &dyn ScoreModel,
    cond: &Condition,
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
    x_init: &LatentState,
) -> Result<(LatentState, TrajectoryRecord)> {
    let mut ctx = LoopCtx::new(model, cond, cfg, sched)?;
    ctx.check_init(x_init)?;
    let (x_final, steps) = ctx.denoise_pass(x_init)?;
    let record = TrajectoryRecord {
        kind: TrajectoryKind::Standard,
        config: cfg.clone(),
        steps,
        end2end: None,
        score_steps: ctx.score_steps,
        x_init: x_init.x.clone(),
        x_final: x_final.x.clone(),
    };
    record.validate()?;
    Ok((x_final, record))
}

/// The zigzag loop: at each of the earliest `lambda` steps, denoise under
/// the strong guidance, invert back under the weak guidance, and denoise
/// again; remaining steps are plain denoising.
///
/// With `backtrack = k > 1` the cycle denoises `k` single steps before
/// inverting the same `k` in reverse order (clamped so the dive never passes
/// level 0). With `error_scale > 0` each inversion prediction is perturbed
/// by a fresh Gaussian scaled to `error_scale` times the norm of the
/// matching denoise prediction.
pub fn zigzag_sample(
    model: &dyn ScoreModel,
    cond: &Condition,
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
    x_init: &LatentState,
) -> Result<(LatentState, TrajectoryRecord)> {
    let mut ctx = LoopCtx::new(model, cond, cfg, sched)?;
    ctx.check_init(x_init)?;
    let t_count = cfg.num_steps;
    let mut steps = Vec::with_capacity(t_count);
    let mut cur = x_init.clone();
    for t in (1..=t_count).rev() {
        let mut ev = ctx.eval(&cur.x, t, cfg.denoise_guidance)?;
        let (stepped, noise) = ctx.denoise(&cur, &ev.eps_used)?;
        ev.noise = noise;
        let mut next = stepped;
        let mut rec = StepRecord {
            t,
            x_before: cur.x.clone(),
            denoise: ev,
            x_after_denoise: next.x.clone(),
            zigzag: None,
            resample: Vec::new(),
        };
        if cfg.in_window(t) {
            let k_eff = cfg.backtrack.min(t);
            let mut denoise_norms = vec![(t, linalg::norm(&rec.denoise.eps_used))];
            let mut extra_denoise = Vec::new();
            let mut low = next.clone();
            for dive_t in (t - k_eff + 1..t).rev() {
                let mut ev_d = ctx.eval(&low.x, dive_t, cfg.denoise_guidance)?;
                denoise_norms.push((dive_t, linalg::norm(&ev_d.eps_used)));
                let (stepped, noise) = ctx.denoise(&low, &ev_d.eps_used)?;
                ev_d.noise = noise;
                low = stepped;
                extra_denoise.push(ev_d);
            }
            let x_bottom = low.x.clone();
            let mut inversions = Vec::with_capacity(k_eff);
            for climb_t in low.t + 1..=t {
                let norm_ref = denoise_norms
                    .iter()
                    .find(|(tt, _)| *tt == climb_t)
                    .map(|(_, n)| *n)
                    .unwrap_or(0.0);
                let (ev_i, up) = ctx.invert(&low, climb_t, norm_ref)?;
                inversions.push(ev_i);
                low = up;
            }
            let x_inverted = low.x.clone();
            let mut ev_re = ctx.eval(&low.x, t, cfg.denoise_guidance)?;
            let (stepped, noise) = ctx.denoise(&low, &ev_re.eps_used)?;
            ev_re.noise = noise;
            next = stepped;
            rec.zigzag = Some(ZigzagRecord {
                extra_denoise,
                x_bottom,
                inversions,
                x_inverted,
                redenoise: ev_re,
                x_after: next.x.clone(),
            });
        }
        steps.push(rec);
        cur = next;
    }
    let record = TrajectoryRecord {
        kind: TrajectoryKind::Zigzag,
        config: cfg.clone(),
        steps,
        end2end: None,
        score_steps: ctx.score_steps,
        x_init: x_init.x.clone(),
        x_final: cur.x.clone(),
    };
    record.validate()?;
    Ok((cur, record))
}

/// End-to-end injection: a full denoising pass under the strong guidance, a
/// full inversion pass under the weak guidance, and a second full denoising
/// pass from the re-injected noise latent. Both the intermediate noise-side
/// latent and the final output are recorded. The error-injection coefficient
/// belongs to the per-step cycles and is ignored here.
pub fn end2end_inject(
    model: &dyn ScoreModel,
    cond: &Condition,
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
    x_init: &LatentState,
) -> Result<(LatentState, TrajectoryRecord)> {
    let mut ctx = LoopCtx::new(model, cond, cfg, sched)?;
    ctx.check_init(x_init)?;
    let t_count = cfg.num_steps;

    let (x0_first, first_pass) = ctx.denoise_pass(x_init)?;

    let mut inversions = Vec::with_capacity(t_count);
    let mut inverted_latents = vec![x0_first.x.clone()];
    let mut low = LatentState::new(x0_first.x.clone(), 0);
    for t in 1..=t_count {
        let (ev, up) = ctx.invert(&low, t, 0.0)?;
        inversions.push(ev);
        low = up;
        inverted_latents.push(low.x.clone());
    }
    let x_reinjected = low.x.clone();

    let (x_final, second_pass) = ctx.denoise_pass(&low)?;

    let record = TrajectoryRecord {
        kind: TrajectoryKind::EndToEnd,
        config: cfg.clone(),
        steps: second_pass,
        end2end: Some(End2EndRecord {
            first_pass,
            inversions,
            inverted_latents,
            x_start: x_init.x.clone(),
            x_reinjected,
        }),
        score_steps: ctx.score_steps,
        x_init: x_init.x.clone(),
        x_final: x_final.x.clone(),
    };
    record.validate()?;
    Ok((x_final, record))
}

/// Resampling baseline: at each windowed step, after denoising, re-noise one
/// level up through the single-step forward kernel (`sqrt(1 - beta_t) * x +
/// sqrt(beta_t) * z`) and denoise again, `repeats` times.
pub fn resample_baseline(
    model: &dyn ScoreModel,
    cond: &Condition,
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
    x_init: &LatentState,
    repeats: usize,
) -> Result<(LatentState, TrajectoryRecord)> {
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be >= 1".into()));
    }
    let mut ctx = LoopCtx::new(model, cond, cfg, sched)?;
    ctx.check_init(x_init)?;
    let t_count = cfg.num_steps;
    let mut steps = Vec::with_capacity(t_count);
    let mut cur = x_init.clone();
    for t in (1..=t_count).rev() {
        let mut ev = ctx.eval(&cur.x, t, cfg.denoise_guidance)?;
        let (stepped, noise) = ctx.denoise(&cur, &ev.eps_used)?;
        ev.noise = noise;
        let mut next = stepped;
        let mut rec = StepRecord {
            t,
            x_before: cur.x.clone(),
            denoise: ev,
            x_after_denoise: next.x.clone(),
            zigzag: None,
            resample: Vec::new(),
        };
        if cfg.in_window(t) {
            let beta = sched.beta(t);
            for _ in 0..repeats {
                let renoised: Vec<f64> = next
                    .x
                    .iter()
                    .map(|x| {
                        (1.0 - beta).sqrt() * x
                            + beta.sqrt() * ctx.rng.sample::<f64, _>(StandardNormal)
                    })
                    .collect();
                let up = LatentState::new(renoised.clone(), t);
                let mut ev_r = ctx.eval(&up.x, t, cfg.denoise_guidance)?;
                let (stepped, noise) = ctx.denoise(&up, &ev_r.eps_used)?;
                ev_r.noise = noise;
                next = stepped;
                rec.resample.push(ResampleRound {
                    x_renoised: renoised,
                    denoise: ev_r,
                    x_after: next.x.clone(),
                });
            }
        }
        steps.push(rec);
        cur = next;
    }
    let record = TrajectoryRecord {
        kind: TrajectoryKind::Resample,
        config: cfg.clone(),
        steps,
        end2end: None,
        score_steps: ctx.score_steps,
        x_init: x_init.x.clone(),
        x_final: cur.x.clone(),
    };
    record.validate()?;
    Ok((cur, record))
}
