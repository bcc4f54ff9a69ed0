//! The runtime invariant suite behind `zigzag verify`: algebraic identity
//! checks, degeneracy limits, the accumulation inequality, oracle
//! cross-validation, cost accounting, and checkpoint round-tripping.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{accumulation_inequality, decompose_gains, guidance_gap_closed_form};
use crate::linalg;
use crate::sampler::{
    ddim_denoise_step, ddim_invert_step, draw_initial_latent, end2end_inject, standard_sample,
    zigzag_sample, LatentState, SamplerConfig,
};
use crate::schedule::NoiseSchedule;
use crate::score::{
    analytic_epsilon, finite_difference_epsilon, sample_mixture_dataset, train_score_net,
    AnalyticMixtureModel, Condition, ConstantModel, MixtureSpec, ScoreNet, TrainingSettings,
};

use super::{reference_config, RunConfig};

/// Outcome of one named invariant check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn pass(name: &'static str, detail: impl Into<String>) -> Self {
        CheckResult {
            name,
            passed: true,
            detail: detail.into(),
        }
    }

    fn fail(name: &'static str, detail: impl Into<String>) -> Self {
        CheckResult {
            name,
            passed: false,
            detail: detail.into(),
        }
    }
}

fn catch(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> CheckResult {
    match f() {
        Ok(detail) => CheckResult::pass(name, detail),
        Err(detail) => CheckResult::fail(name, detail),
    }
}

fn reference_pieces(cfg: &RunConfig) -> (NoiseSchedule, AnalyticMixtureModel, SamplerConfig) {
    let sched = cfg.schedule.build().expect("reference schedule");
    let model =
        AnalyticMixtureModel::new(cfg.mixture.clone(), &sched).expect("reference model");
    (sched, model, cfg.sampler.clone())
}

/// Run the whole invariant suite; every check reports independently.
pub fn run_all() -> Vec<CheckResult> {
    let reference = reference_config();
    vec![
        round_trip_identity(),
        stepwise_identity(&reference),
        end_to_end_identity(&reference),
        constant_model_closed_form(&reference),
        quadratic_gap_ratio(&reference),
        degeneration_limits(&reference),
        accumulation_holds(&reference),
        score_oracle_cross_check(&reference),
        call_count_accounting(&reference),
        exact_inversion_round_trip(&reference),
        checkpoint_round_trip(&reference),
    ]
}

/// invert(denoise(x, eps), eps) returns x for random tuples.
pub fn round_trip_identity() -> CheckResult {
    catch("round_trip_identity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let mut worst = 0.0f64;
        for case in 0..1000 {
            let t_count = rng.random_range(1..=20);
            let betas: Vec<f64> = (0..t_count)
                .map(|_| rng.random_range(1e-4..0.95))
                .collect();
            let sched = NoiseSchedule::from_betas(&betas)
                .map_err(|e| format!("case {case}: {e}"))?;
            let dim = rng.random_range(1..=3);
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
            let eps: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            let t = rng.random_range(1..=t_count);
            let state = LatentState::new(x.clone(), t);
            let mut noise_rng = ChaCha8Rng::seed_from_u64(0);
            let down = ddim_denoise_step(&state, &eps, &sched, 0.0, &mut noise_rng)
                .map_err(|e| format!("case {case}: {e}"))?;
            let up = ddim_invert_step(&down, &eps, &sched)
                .map_err(|e| format!("case {case}: {e}"))?;
            let rel = linalg::dist(&up.x, &x) / linalg::norm(&x).max(1.0);
            worst = worst.max(rel);
            if rel > 1e-10 {
                return Err(format!("case {case}: relative error {rel:.3e} > 1e-10"));
            }
        }
        Ok(format!("1000 tuples, worst relative error {worst:.3e}"))
    })
}

/// Measured per-step latent gaps equal the score-based form on the
/// reference setup.
pub fn stepwise_identity(reference: &RunConfig) -> CheckResult {
    catch("stepwise_identity", || {
        let (sched, model, cfg) = reference_pieces(reference);
        let mut worst = 0.0f64;
        for seed in 0..8u64 {
            let cfg = SamplerConfig { seed, ..cfg.clone() };
            let x_init = draw_initial_latent(model.spec().dim(), cfg.num_steps, seed);
            let (_, traj) =
                zigzag_sample(&model, &Condition::Component(0), &cfg, &sched, &x_init)
                    .map_err(|e| e.to_string())?;
            let dec = decompose_gains(&traj, &sched).map_err(|e| e.to_string())?;
            let res = dec.stepwise_residual();
            worst = worst.max(res);
            if res > 1e-8 {
                return Err(format!("seed {seed}: residual {res:.3e} > 1e-8"));
            }
        }
        Ok(format!("8 trajectories, worst residual {worst:.3e}"))
    })
}

/// Measured noise-side gap equals the score-based end-to-end form.
pub fn end_to_end_identity(reference: &RunConfig) -> CheckResult {
    catch("end_to_end_identity", || {
        let (sched, model, cfg) = reference_pieces(reference);
        let mut worst = 0.0f64;
        for seed in 0..8u64 {
            let cfg = SamplerConfig { seed, ..cfg.clone() };
            let x_init = draw_initial_latent(model.spec().dim(), cfg.num_steps, seed);
            let (_, traj) =
                end2end_inject(&model, &Condition::Component(0), &cfg, &sched, &x_init)
                    .map_err(|e| e.to_string())?;
            let dec = decompose_gains(&traj, &sched).map_err(|e| e.to_string())?;
            let res = dec.end_to_end_residual().unwrap_or(f64::INFINITY);
            worst = worst.max(res);
            if res > 1e-8 {
                return Err(format!("seed {seed}: residual {res:.3e} > 1e-8"));
            }
        }
        Ok(format!("8 trajectories, worst residual {worst:.3e}"))
    })
}

/// With a constant prediction the approximation error vanishes and the
/// measured cumulative gap equals the guidance-gap closed form.
pub fn constant_model_closed_form(reference: &RunConfig) -> CheckResult {
    catch("constant_model_closed_form", || {
        let sched = reference.schedule.build().map_err(|e| e.to_string())?;
        let model = ConstantModel::new(vec![0.9, -0.2], vec![0.1, 0.4]);
        let cfg = reference.sampler.clone();
        let x_init = draw_initial_latent(2, cfg.num_steps, 13);
        let (_, traj) = zigzag_sample(&model, &Condition::Component(0), &cfg, &sched, &x_init)
            .map_err(|e| e.to_string())?;
        let dec = decompose_gains(&traj, &sched).map_err(|e| e.to_string())?;
        let rel = (dec.measured_stepwise - dec.gap_closed_form).abs()
            / dec.measured_stepwise.abs().max(dec.gap_closed_form.abs());
        if rel > 1e-10 {
            return Err(format!("measured vs closed form residual {rel:.3e} > 1e-10"));
        }
        Ok(format!("residual {rel:.3e}"))
    })
}

/// The closed form is exactly quadratic in the guidance gap.
pub fn quadratic_gap_ratio(reference: &RunConfig) -> CheckResult {
    catch("quadratic_gap_ratio", || {
        let (sched, model, cfg) = reference_pieces(reference);
        let x_init = draw_initial_latent(model.spec().dim(), cfg.num_steps, 3);
        let (_, traj) = zigzag_sample(&model, &Condition::Component(0), &cfg, &sched, &x_init)
            .map_err(|e| e.to_string())?;
        let base = guidance_gap_closed_form(&traj, &sched, 3.0, 1.0).map_err(|e| e.to_string())?;
        let doubled =
            guidance_gap_closed_form(&traj, &sched, 5.0, 1.0).map_err(|e| e.to_string())?;
        let ratio = doubled / base;
        if (ratio - 4.0).abs() > 1e-9 {
            return Err(format!("ratio {ratio} differs from 4 beyond 1e-9"));
        }
        Ok(format!("doubling the gap scales the form by {ratio}"))
    })
}

/// An empty window reproduces plain sampling bitwise; equal guidance with a
/// constant model reproduces it within 1e-10.
pub fn degeneration_limits(reference: &RunConfig) -> CheckResult {
    catch("degeneration_limits", || {
        let (sched, model, cfg) = reference_pieces(reference);
        let cfg0 = SamplerConfig {
            zigzag_steps: 0,
            ..cfg.clone()
        };
        let x_init = draw_initial_latent(model.spec().dim(), cfg.num_steps, 8);
        let (xs, _) = standard_sample(&model, &Condition::Component(0), &cfg0, &sched, &x_init)
            .map_err(|e| e.to_string())?;
        let (xz, _) = zigzag_sample(&model, &Condition::Component(0), &cfg0, &sched, &x_init)
            .map_err(|e| e.to_string())?;
        if xs.x != xz.x {
            return Err("empty window does not reproduce plain sampling bitwise".into());
        }

        let constant = ConstantModel::new(vec![0.8, -0.1], vec![0.3, 0.2]);
        let cfg_eq = SamplerConfig {
            invert_guidance: cfg.denoise_guidance,
            ..cfg.clone()
        };
        let (cs, _) =
            standard_sample(&constant, &Condition::Component(0), &cfg_eq, &sched, &x_init)
                .map_err(|e| e.to_string())?;
        let (cz, _) = zigzag_sample(&constant, &Condition::Component(0), &cfg_eq, &sched, &x_init)
            .map_err(|e| e.to_string())?;
        let err = linalg::dist(&cs.x, &cz.x) / linalg::norm(&cs.x).max(1.0);
        if err > 1e-10 {
            return Err(format!("equal-guidance constant model deviates by {err:.3e}"));
        }
        Ok(format!("empty window bitwise; equal-guidance deviation {err:.3e}"))
    })
}

/// `n * sum s_t^2 >= (sum s_t)^2` on random trajectories, also with the `T`
/// factor.
pub fn accumulation_holds(reference: &RunConfig) -> CheckResult {
    catch("accumulation_inequality", || {
        let (sched, model, cfg) = reference_pieces(reference);
        for seed in 0..16u64 {
            let cfg = SamplerConfig { seed, ..cfg.clone() };
            let x_init = draw_initial_latent(model.spec().dim(), cfg.num_steps, 600 + seed);
            let (_, traj) =
                zigzag_sample(&model, &Condition::Component(0), &cfg, &sched, &x_init)
                    .map_err(|e| e.to_string())?;
            let rep = accumulation_inequality(&traj, &sched).map_err(|e| e.to_string())?;
            if !rep.holds() || !rep.holds_with_factor(cfg.num_steps) {
                return Err(format!(
                    "violated at seed {seed}: n*sum_sq = {}, square_sum = {}",
                    rep.terms as f64 * rep.sum_of_squares,
                    rep.square_of_sum
                ));
            }
        }
        Ok("16 trajectories, no violations".into())
    })
}

/// Closed-form predictions match finite differences of the log-density.
pub fn score_oracle_cross_check(reference: &RunConfig) -> CheckResult {
    catch("score_oracle_cross_check", || {
        let sched = reference.schedule.build().map_err(|e| e.to_string())?;
        let spec = reference.mixture.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut worst = 0.0f64;
        for probe in 0..100 {
            let x: Vec<f64> = (0..spec.dim())
                .map(|_| rng.random_range(-3.0..3.0))
                .collect();
            let t = rng.random_range(1..=sched.num_steps());
            let cond = if probe % 3 == 0 {
                Condition::Null
            } else {
                Condition::Component(probe % spec.num_components())
            };
            let exact =
                analytic_epsilon(&spec, &sched, &x, t, &cond).map_err(|e| e.to_string())?;
            let fd = finite_difference_epsilon(&spec, &sched, &x, t, &cond)
                .map_err(|e| e.to_string())?;
            let rel = linalg::dist(&exact, &fd) / linalg::norm(&exact).max(1e-3);
            worst = worst.max(rel);
            if rel > 1e-5 {
                return Err(format!("probe {probe}: relative error {rel:.3e} > 1e-5"));
            }
        }
        Ok(format!("100 probes, worst relative error {worst:.3e}"))
    })
}

/// Plain sampling takes `T` score steps; the zigzag loop takes `T + 2k*lambda`.
pub fn call_count_accounting(reference: &RunConfig) -> CheckResult {
    catch("call_count_accounting", || {
        let (sched, model, cfg) = reference_pieces(reference);
        let t_count = cfg.num_steps;
        let x_init = draw_initial_latent(model.spec().dim(), t_count, 12);
        let (_, rs) = standard_sample(&model, &Condition::Component(0), &cfg, &sched, &x_init)
            .map_err(|e| e.to_string())?;
        if rs.score_steps != t_count {
            return Err(format!(
                "plain sampling took {} score steps, expected {t_count}",
                rs.score_steps
            ));
        }
        for lambda in [0usize, 3, 9] {
            let cfg = SamplerConfig {
                zigzag_steps: lambda,
                ..cfg.clone()
            };
            let (_, rz) = zigzag_sample(&model, &Condition::Component(0), &cfg, &sched, &x_init)
                .map_err(|e| e.to_string())?;
            let expected = t_count + 2 * lambda;
            if rz.score_steps != expected {
                return Err(format!(
                    "zigzag with lambda {lambda} took {} score steps, expected {expected}",
                    rz.score_steps
                ));
            }
        }
        Ok("plain = T, zigzag = T + 2*lambda".into())
    })
}

/// With equal guidance, solving the inversion's implicit equation makes the
/// full cycle recover the pre-step latent to the fixed-point tolerance.
pub fn exact_inversion_round_trip(reference: &RunConfig) -> CheckResult {
    catch("exact_inversion_round_trip", || {
        let (sched, model, cfg) = reference_pieces(reference);
        let cfg = SamplerConfig {
            denoise_guidance: 2.0,
            invert_guidance: 2.0,
            exact_inversion: true,
            fixed_point_tol: 1e-12,
            ..cfg
        };
        let x_init = draw_initial_latent(model.spec().dim(), cfg.num_steps, 19);
        let (_, traj) = zigzag_sample(&model, &Condition::Component(0), &cfg, &sched, &x_init)
            .map_err(|e| e.to_string())?;
        let mut worst = 0.0f64;
        for step in &traj.steps {
            if let Some(z) = &step.zigzag {
                let err = linalg::dist(&z.x_inverted, &step.x_before);
                worst = worst.max(err);
                if err > 1e-9 {
                    return Err(format!("residual {err:.3e} at t = {}", step.t));
                }
            }
        }
        Ok(format!("{} cycles, worst residual {worst:.3e}", traj.zigzag_step_count()))
    })
}

/// A trained checkpoint reloads with identical weights and outputs.
pub fn checkpoint_round_trip(reference: &RunConfig) -> CheckResult {
    catch("checkpoint_round_trip", || {
        let sched = reference.schedule.build().map_err(|e| e.to_string())?;
        let data = sample_mixture_dataset(&reference.mixture, 64, 5);
        let settings = TrainingSettings {
            steps: 30,
            batch_size: 16,
            ..TrainingSettings::default()
        };
        let run = train_score_net(&data, &sched, &settings).map_err(|e| e.to_string())?;
        let dir = std::env::temp_dir().join(format!("zigzag-verify-{}", std::process::id()));
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let path = dir.join("checkpoint.json");
        run.net.save_checkpoint(&path).map_err(|e| e.to_string())?;
        let loaded = ScoreNet::load_checkpoint(&path).map_err(|e| e.to_string())?;
        let _ = std::fs::remove_file(&path);
        if loaded != run.net {
            return Err("reloaded checkpoint differs from the saved model".into());
        }
        let x = vec![0.4, -1.1];
        for t in 1..=sched.num_steps() {
            let a = run.net.forward(&x, t, &Condition::Component(1));
            let b = loaded.forward(&x, t, &Condition::Component(1));
            if a != b {
                return Err(format!("outputs differ at t = {t}"));
            }
        }
        Ok("save/load is bit-exact".into())
    })
}

/// Helper so callers can reuse the reference mixture as a dataset source.
pub fn reference_mixture() -> MixtureSpec {
    reference_config().mixture
}
