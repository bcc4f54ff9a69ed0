//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured margin. Identity criteria run at fixed tolerances; trend
//! criteria run the documented experiment configurations at their pinned
//! master seed and gate on standard-error margins.

use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zigzag_sampling::analysis::{
    accumulation_inequality, decompose_gains, guidance_gap_closed_form,
};
use zigzag_sampling::harness::{
    apply_sweep, coarse_companion_config, difference_in_se, isotonic_violations,
    reference_config, run_experiment, ResultRow, RunConfig, SweepAxis, TrendPoint,
};
use zigzag_sampling::sampler::{
    ddim_denoise_step, ddim_invert_step, draw_initial_latent, end2end_inject, standard_sample,
    zigzag_sample, LatentState, SamplerConfig,
};
use zigzag_sampling::schedule::NoiseSchedule;
use zigzag_sampling::score::{
    analytic_epsilon, finite_difference_epsilon, AnalyticMixtureModel, Condition, ConstantModel,
};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn reference_pieces() -> (RunConfig, NoiseSchedule, AnalyticMixtureModel) {
    let cfg = reference_config();
    let sched = cfg.schedule.build().unwrap();
    let model = AnalyticMixtureModel::new(cfg.mixture.clone(), &sched).unwrap();
    (cfg, sched, model)
}

fn alignment_points(rows: &[ResultRow]) -> Vec<TrendPoint> {
    rows.iter()
        .map(|r| TrendPoint {
            value: r.sweep_value,
            mean: r.quality.alignment,
            se: r.alignment_se,
        })
        .collect()
}

fn energy_points(rows: &[ResultRow]) -> Vec<TrendPoint> {
    rows.iter()
        .map(|r| TrendPoint {
            value: r.sweep_value,
            mean: r.quality.energy_distance,
            se: r.energy_distance_se,
        })
        .collect()
}

fn sweep_in_tempdir(cfg: &RunConfig) -> Vec<ResultRow> {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = cfg.clone();
    cfg.output_dir = dir.path().to_path_buf();
    run_experiment(&cfg).unwrap().rows
}

/// 1. invert(denoise(x, eps)) returns x to 1e-10 relative error for 1000
///    random tuples, in under a second.
#[test]
fn criterion_01_round_trip_identity() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(424242);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t_count = rng.random_range(1..=20);
        let betas: Vec<f64> = (0..t_count)
            .map(|_| rng.random_range(1e-4..0.95))
            .collect();
        let sched = NoiseSchedule::from_betas(&betas).unwrap();
        let dim = rng.random_range(1..=3);
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let eps: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let t = rng.random_range(1..=t_count);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(0);
        let down = ddim_denoise_step(&LatentState::new(x.clone(), t), &eps, &sched, 0.0, &mut noise_rng)
            .unwrap();
        let up = ddim_invert_step(&down, &eps, &sched).unwrap();
        let rel = dist(&up.x, &x) / norm(&x).max(1.0);
        worst = worst.max(rel);
        assert!(rel <= 1e-10, "round trip relative error {rel:.3e}");
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!("ACCEPTANCE 01 round-trip identity: PASS (worst {worst:.3e}, {elapsed:?})");
}

/// 2. Stepwise identity: measured cumulative latent gap equals the
///    score-based form for 64 seeded reference trajectories, within 1e-8,
///    in under ten seconds.
#[test]
fn criterion_02_stepwise_identity() {
    let started = Instant::now();
    let (cfg, sched, model) = reference_pieces();
    let mut worst = 0.0f64;
    for i in 0..64u64 {
        let seed = cfg.master_seed ^ i;
        let scfg = SamplerConfig {
            seed,
            ..cfg.sampler.clone()
        };
        let x_init = draw_initial_latent(2, scfg.num_steps, seed);
        let (_, traj) =
            zigzag_sample(&model, &Condition::Component(0), &scfg, &sched, &x_init).unwrap();
        let dec = decompose_gains(&traj, &sched).unwrap();
        let res = dec.stepwise_residual();
        worst = worst.max(res);
        assert!(res <= 1e-8, "seed {seed}: stepwise residual {res:.3e}");
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!("ACCEPTANCE 02 stepwise identity: PASS (64 trajectories, worst {worst:.3e}, {elapsed:?})");
}

/// 3. End-to-end identity: measured noise-side gap equals the score-based
///    form for 64 seeded end-to-end trajectories, within 1e-8.
#[test]
fn criterion_03_end_to_end_identity() {
    let (cfg, sched, model) = reference_pieces();
    let mut worst = 0.0f64;
    for i in 0..64u64 {
        let seed = cfg.master_seed ^ i;
        let scfg = SamplerConfig {
            seed,
            ..cfg.sampler.clone()
        };
        let x_init = draw_initial_latent(2, scfg.num_steps, seed);
        let (_, traj) =
            end2end_inject(&model, &Condition::Component(0), &scfg, &sched, &x_init).unwrap();
        let dec = decompose_gains(&traj, &sched).unwrap();
        let res = dec.end_to_end_residual().unwrap();
        worst = worst.max(res);
        assert!(res <= 1e-8, "seed {seed}: end-to-end residual {res:.3e}");
    }
    println!("ACCEPTANCE 03 end-to-end identity: PASS (64 trajectories, worst {worst:.3e})");
}

/// 4. With a constant prediction the approximation error vanishes: the
///    measured cumulative gap equals the guidance-gap closed form within
///    1e-10, and the closed form is quadratic in the gap (ratio 4 within
///    1e-9 when the gap doubles).
#[test]
fn criterion_04_constant_model_closed_form() {
    let (cfg, sched, _) = reference_pieces();
    let model = ConstantModel::new(vec![0.9, -0.2], vec![0.1, 0.4]);
    let scfg = cfg.sampler.clone();
    let x_init = draw_initial_latent(2, scfg.num_steps, 31);
    let (_, traj) =
        zigzag_sample(&model, &Condition::Component(0), &scfg, &sched, &x_init).unwrap();
    let dec = decompose_gains(&traj, &sched).unwrap();
    let rel = (dec.measured_stepwise - dec.gap_closed_form).abs()
        / dec.measured_stepwise.abs().max(dec.gap_closed_form.abs());
    assert!(rel <= 1e-10, "measured vs closed form residual {rel:.3e}");

    let base = guidance_gap_closed_form(&traj, &sched, 3.0, 1.0).unwrap();
    let doubled = guidance_gap_closed_form(&traj, &sched, 5.0, 1.0).unwrap();
    let ratio = doubled / base;
    assert!((ratio - 4.0).abs() <= 1e-9, "quadratic ratio {ratio}");
    println!("ACCEPTANCE 04 closed-form identity: PASS (residual {rel:.3e}, ratio {ratio})");
}

/// 5. Degeneration to plain sampling: an empty zigzag window reproduces the
///    plain sampler byte-for-byte; equal guidance with a constant model
///    reproduces it within 1e-10.
#[test]
fn criterion_05_degeneration_to_standard() {
    let (cfg, sched, model) = reference_pieces();
    let scfg = SamplerConfig {
        zigzag_steps: 0,
        ..cfg.sampler.clone()
    };
    let x_init = draw_initial_latent(2, scfg.num_steps, 77);
    let (xs, rs) =
        standard_sample(&model, &Condition::Component(0), &scfg, &sched, &x_init).unwrap();
    let (xz, rz) =
        zigzag_sample(&model, &Condition::Component(0), &scfg, &sched, &x_init).unwrap();
    assert_eq!(xs.x, xz.x, "final latents must be byte-identical");
    for (a, b) in rs.steps.iter().zip(&rz.steps) {
        assert_eq!(a.x_before, b.x_before);
        assert_eq!(a.x_after_denoise, b.x_after_denoise);
    }

    let constant = ConstantModel::new(vec![0.8, -0.1], vec![0.3, 0.2]);
    let eqcfg = SamplerConfig {
        invert_guidance: cfg.sampler.denoise_guidance,
        ..cfg.sampler.clone()
    };
    let (cs, _) =
        standard_sample(&constant, &Condition::Component(0), &eqcfg, &sched, &x_init).unwrap();
    let (cz, _) =
        zigzag_sample(&constant, &Condition::Component(0), &eqcfg, &sched, &x_init).unwrap();
    let rel = dist(&cs.x, &cz.x) / norm(&cs.x).max(1.0);
    assert!(rel <= 1e-10, "equal-guidance deviation {rel:.3e}");
    println!("ACCEPTANCE 05 degeneration: PASS (bitwise at lambda 0, equal-guidance residual {rel:.3e})");
}

/// 6. Gap-sweep trend at the reference setup: alignment non-decreasing in
///    the guidance gap (no 2-SE violations), the largest gap beats gap zero
///    by more than 3 SE, and the gap-zero point sits within noise of the
///    plain-sampling baseline. Runs in under two minutes.
#[test]
fn criterion_06_gap_sweep_trend() {
    let started = Instant::now();
    let mut cfg = reference_config();
    cfg.sweep = SweepAxis::Gap;
    cfg.grid = vec![0.0, 1.0, 2.5, 5.5];
    let rows = sweep_in_tempdir(&cfg);
    let align = alignment_points(&rows);
    let violations = isotonic_violations(&align, 2.0);
    assert_eq!(violations, 0, "alignment trend violations: {violations}");
    let margin = difference_in_se(&align[0], &align[3]);
    assert!(margin > 3.0, "gap 5.5 vs 0 margin {margin:.2} SE <= 3");
    // at zero gap the zigzag loop statistically matches plain sampling
    let zero_gap = &rows[0];
    let base = TrendPoint {
        value: 0.0,
        mean: zero_gap.baseline_alignment,
        se: zero_gap.baseline_alignment_se,
    };
    let closeness = difference_in_se(&base, &align[0]).abs();
    assert!(closeness <= 3.0, "zero-gap vs baseline {closeness:.2} SE");
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 06 gap-sweep trend: PASS (alignment {:?}, margin {margin:.2} SE, {elapsed:?})",
        align.iter().map(|p| p.mean).collect::<Vec<_>>()
    );
}

/// 7. Window-sweep trend: alignment non-decreasing in the window length,
///    and the full window beats the empty one by more than 3 SE.
#[test]
fn criterion_07_lambda_sweep_trend() {
    let mut cfg = reference_config();
    cfg.name = "lambda".into();
    cfg.sweep = SweepAxis::Lambda;
    cfg.grid = vec![0.0, 2.0, 5.0, 9.0];
    let rows = sweep_in_tempdir(&cfg);
    let align = alignment_points(&rows);
    assert_eq!(isotonic_violations(&align, 2.0), 0);
    let margin = difference_in_se(&align[0], &align[3]);
    assert!(margin > 3.0, "lambda 9 vs 0 margin {margin:.2} SE <= 3");
    // the empty window reproduces the baseline exactly (same seeds)
    assert_eq!(rows[0].quality.alignment, rows[0].baseline_alignment);
    println!(
        "ACCEPTANCE 07 lambda-sweep trend: PASS (alignment {:?}, margin {margin:.2} SE)",
        align.iter().map(|p| p.mean).collect::<Vec<_>>()
    );
}

/// 8. Backtracking sweep on the coarse companion setup: single-step
///    backtracking beats depth three on the energy distance by at least
///    2 SE.
#[test]
fn criterion_08_backtrack_sweep_trend() {
    let mut cfg = coarse_companion_config();
    cfg.name = "backtrack".into();
    cfg.sweep = SweepAxis::K;
    cfg.grid = vec![1.0, 2.0, 3.0];
    let rows = sweep_in_tempdir(&cfg);
    let energy = energy_points(&rows);
    let margin = difference_in_se(&energy[0], &energy[2]);
    assert!(
        margin >= 2.0,
        "energy at k=3 vs k=1 margin {margin:.2} SE < 2"
    );
    println!(
        "ACCEPTANCE 08 backtrack-sweep trend: PASS (energy {:?}, margin {margin:.2} SE)",
        energy.iter().map(|p| p.mean).collect::<Vec<_>>()
    );
}

/// 9. Error-injection sweep on the coarse companion setup: energy distance
///    non-decreasing in the injection coefficient (no 2-SE violations).
#[test]
fn criterion_09_error_injection_trend() {
    let mut cfg = coarse_companion_config();
    cfg.name = "error_injection".into();
    cfg.sweep = SweepAxis::S;
    cfg.grid = vec![0.0, 0.5, 1.0];
    let rows = sweep_in_tempdir(&cfg);
    let energy = energy_points(&rows);
    let violations = isotonic_violations(&energy, 2.0);
    assert_eq!(violations, 0, "energy trend violations: {violations}");
    println!(
        "ACCEPTANCE 09 error-injection trend: PASS (energy {:?})",
        energy.iter().map(|p| p.mean).collect::<Vec<_>>()
    );
}

/// 10. Stochasticity degrades the zigzag gain: the paired alignment gain
///     over plain sampling is at least 2 SE smaller at eta = 1 than at
///     eta = 0.
#[test]
fn criterion_10_stochasticity_degrades_gain() {
    let mut cfg = reference_config();
    cfg.name = "eta".into();
    cfg.sweep = SweepAxis::Eta;
    cfg.grid = vec![0.0, 1.0];
    let rows = sweep_in_tempdir(&cfg);
    let gain: Vec<TrendPoint> = rows
        .iter()
        .map(|r| TrendPoint {
            value: r.sweep_value,
            mean: r.alignment_gain,
            se: r.alignment_gain_se,
        })
        .collect();
    let margin = difference_in_se(&gain[1], &gain[0]);
    assert!(
        margin >= 2.0,
        "gain eta0 {:.4} vs eta1 {:.4}: margin {margin:.2} SE < 2",
        gain[0].mean,
        gain[1].mean
    );
    println!(
        "ACCEPTANCE 10 stochastic degradation: PASS (gain {:.4} -> {:.4}, margin {margin:.2} SE)",
        gain[0].mean, gain[1].mean
    );
}

/// 11. Accumulation inequality `n * sum s_t^2 >= (sum s_t)^2` (and with the
///     full step count as the factor) holds on every trajectory across the
///     reference grid, the coarse companion variants, and stochastic runs.
#[test]
fn criterion_11_accumulation_inequality() {
    let (refc, sched, model) = reference_pieces();
    let coarse = coarse_companion_config();
    let csched = coarse.schedule.build().unwrap();
    let cmodel = AnalyticMixtureModel::new(coarse.mixture.clone(), &csched).unwrap();
    let mut checked = 0usize;

    let mut run_batch = |base: &SamplerConfig,
                         sched: &NoiseSchedule,
                         model: &AnalyticMixtureModel,
                         axis: SweepAxis,
                         value: f64,
                         count: u64| {
        let cfg = apply_sweep(base, axis, value).unwrap();
        for i in 0..count {
            let seed = 555 ^ (i.wrapping_mul(7919));
            let cfg = SamplerConfig { seed, ..cfg.clone() };
            let x_init = draw_initial_latent(2, cfg.num_steps, seed);
            let (_, traj) =
                zigzag_sample(model, &Condition::Component(0), &cfg, sched, &x_init).unwrap();
            let rep = accumulation_inequality(&traj, sched).unwrap();
            assert!(rep.holds(), "violated at seed {seed} {axis:?}={value}");
            assert!(rep.holds_with_factor(cfg.num_steps));
            checked += 1;
        }
    };

    for v in [1.0, 2.5, 5.5] {
        run_batch(&refc.sampler, &sched, &model, SweepAxis::Gap, v, 32);
    }
    for v in [1.0, 3.0] {
        run_batch(&coarse.sampler, &csched, &cmodel, SweepAxis::K, v, 16);
    }
    run_batch(&coarse.sampler, &csched, &cmodel, SweepAxis::S, 1.0, 16);
    run_batch(&refc.sampler, &sched, &model, SweepAxis::Eta, 1.0, 16);
    println!("ACCEPTANCE 11 accumulation inequality: PASS ({checked} trajectories)");
}

/// 12. The analytic predictions match finite differences of the log-density
///     to 1e-5 relative error on 100 random probes.
#[test]
fn criterion_12_score_oracle_validity() {
    let (cfg, sched, _) = reference_pieces();
    let spec = cfg.mixture.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
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
        let exact = analytic_epsilon(&spec, &sched, &x, t, &cond).unwrap();
        let fd = finite_difference_epsilon(&spec, &sched, &x, t, &cond).unwrap();
        let rel = dist(&exact, &fd) / norm(&exact).max(1e-3);
        worst = worst.max(rel);
        assert!(rel <= 1e-5, "probe {probe}: relative error {rel:.3e}");
    }
    println!("ACCEPTANCE 12 score-oracle validity: PASS (worst {worst:.3e})");
}

/// 13. Cost accounting: plain sampling takes exactly `T` score steps and the
///     zigzag loop exactly `T + 2 * lambda`.
#[test]
fn criterion_13_call_count_accounting() {
    let (cfg, sched, model) = reference_pieces();
    let t_count = cfg.sampler.num_steps;
    let x_init = draw_initial_latent(2, t_count, 9);
    let (_, rs) =
        standard_sample(&model, &Condition::Component(0), &cfg.sampler, &sched, &x_init).unwrap();
    assert_eq!(rs.score_steps, t_count);
    for lambda in [0usize, 2, 5, 9] {
        let scfg = SamplerConfig {
            zigzag_steps: lambda,
            ..cfg.sampler.clone()
        };
        let (_, rz) =
            zigzag_sample(&model, &Condition::Component(0), &scfg, &sched, &x_init).unwrap();
        assert_eq!(rz.score_steps, t_count + 2 * lambda, "lambda {lambda}");
    }
    println!("ACCEPTANCE 13 call-count accounting: PASS (T and T + 2*lambda exact)");
}
