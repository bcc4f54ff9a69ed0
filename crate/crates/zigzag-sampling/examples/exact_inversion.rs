//! Exact inversion by fixed-point iteration: solving the implicit equation
//! removes the evaluation-point approximation, so the measured cumulative
//! gap approaches the guidance-gap closed form as the tolerance tightens
//! (down to the score-curvature remainder).
//!
//! ```bash
//! cargo run --release --example exact_inversion
//! ```

use zigzag_sampling::analysis::decompose_gains;
use zigzag_sampling::harness::coarse_companion_config;
use zigzag_sampling::sampler::{draw_initial_latent, zigzag_sample, SamplerConfig};
use zigzag_sampling::score::{AnalyticMixtureModel, Condition};

fn main() -> zigzag_sampling::Result<()> {
    let coarse = coarse_companion_config();
    let sched = coarse.schedule.build()?;
    let model = AnalyticMixtureModel::new(coarse.mixture.clone(), &sched)?;
    let cond = Condition::Component(coarse.condition);
    let seeds: Vec<u64> = (0..16).map(|i| 4242 ^ i).collect();

    let mean_error = |exact: bool, tol: f64| -> zigzag_sampling::Result<(f64, usize)> {
        let mut total = 0.0;
        let mut calls = 0;
        for &seed in &seeds {
            let cfg = SamplerConfig {
                seed,
                exact_inversion: exact,
                fixed_point_tol: tol,
                ..coarse.sampler.clone()
            };
            let x_init = draw_initial_latent(2, cfg.num_steps, seed);
            let (_, traj) = zigzag_sample(&model, &cond, &cfg, &sched, &x_init)?;
            let dec = decompose_gains(&traj, &sched)?;
            total += (dec.measured_stepwise - dec.gap_closed_form).abs() / dec.gap_closed_form;
            calls += traj.score_steps;
        }
        Ok((total / seeds.len() as f64, calls / seeds.len()))
    };

    let (approx, approx_calls) = mean_error(false, 1e-10)?;
    println!("evaluation-point mode: |measured - closed|/closed = {approx:.4}  ({approx_calls} score steps)");
    println!("\nfixed-point mode:");
    println!("  tolerance | relative gap | score steps");
    for tol in [1e-1, 1e-2, 1e-4, 1e-6, 1e-10] {
        let (err, calls) = mean_error(true, tol)?;
        println!("  {tol:>9.0e} |      {err:.4} | {calls}");
    }
    println!("\nthe residual plateau is the curvature remainder: the closed form evaluates");
    println!("both branches at the pre-step latent, the solved inversion at its own output");
    Ok(())
}
