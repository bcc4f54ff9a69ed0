//! The zigzag loop against plain sampling, paired seed by seed: at each of
//! the earliest steps the latent is denoised under strong guidance,
//! inverted back under weak guidance, and denoised again, accumulating the
//! guidance gap into the latent.
//!
//! ```bash
//! cargo run --release --example zigzag_sampling
//! ```

use zigzag_sampling::analysis::quality_report;
use zigzag_sampling::harness::reference_config;
use zigzag_sampling::sampler::{
    draw_initial_latent, standard_sample, zigzag_sample, SamplerConfig,
};
use zigzag_sampling::score::{AnalyticMixtureModel, Condition};

fn main() -> zigzag_sampling::Result<()> {
    let refc = reference_config();
    let sched = refc.schedule.build()?;
    let model = AnalyticMixtureModel::new(refc.mixture.clone(), &sched)?;
    let cond = Condition::Component(refc.condition);
    let n = 256;

    let mut plain = Vec::with_capacity(n);
    let mut zigzag = Vec::with_capacity(n);
    let mut plain_steps = 0;
    let mut zigzag_steps = 0;
    for i in 0..n {
        let seed = refc.master_seed ^ i as u64;
        let cfg = SamplerConfig {
            seed,
            ..refc.sampler.clone()
        };
        let x_init = draw_initial_latent(2, cfg.num_steps, seed);
        let (xs, rs) = standard_sample(&model, &cond, &cfg, &sched, &x_init)?;
        let (xz, rz) = zigzag_sample(&model, &cond, &cfg, &sched, &x_init)?;
        plain_steps = rs.score_steps;
        zigzag_steps = rz.score_steps;
        plain.push(xs.x);
        zigzag.push(xz.x);
    }

    let q_plain = quality_report(&plain, &refc.mixture, &cond, 7)?;
    let q_zigzag = quality_report(&zigzag, &refc.mixture, &cond, 7)?;
    println!(
        "plain  : alignment {:.3}  mean shift {:.3}  ({} score steps per trajectory)",
        q_plain.alignment, q_plain.mean_shift, plain_steps
    );
    println!(
        "zigzag : alignment {:.3}  mean shift {:.3}  ({} score steps per trajectory)",
        q_zigzag.alignment, q_zigzag.mean_shift, zigzag_steps
    );
    println!(
        "\nwindow {} of {} steps at guidance gap {}; cost T + 2*lambda = {}",
        refc.sampler.zigzag_steps,
        refc.sampler.num_steps,
        refc.sampler.guidance_gap(),
        refc.sampler.num_steps + 2 * refc.sampler.zigzag_steps
    );
    Ok(())
}
