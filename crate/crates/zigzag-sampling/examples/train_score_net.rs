//! Denoising score matching on mixture samples: train the small network,
//! compare it against the analytic oracle on a probe grid, and round-trip
//! the checkpoint.
//!
//! ```bash
//! cargo run --release --example train_score_net
//! ```

use zigzag_sampling::harness::reference_config;
use zigzag_sampling::score::{
    sample_mixture_dataset, train_score_net, AnalyticMixtureModel, Condition, ScoreModel,
    ScoreNet, TrainingSettings,
};

fn main() -> zigzag_sampling::Result<()> {
    let refc = reference_config();
    let sched = refc.schedule.build()?;
    let oracle = AnalyticMixtureModel::new(refc.mixture.clone(), &sched)?;
    let dataset = sample_mixture_dataset(&refc.mixture, 1024, 42);

    let settings = TrainingSettings {
        steps: 2000,
        seed: 42,
        ..TrainingSettings::default()
    };
    let run = train_score_net(&dataset, &sched, &settings)?;
    let head = run.losses[..50].iter().sum::<f64>() / 50.0;
    let tail = run.losses[run.losses.len() - 50..].iter().sum::<f64>() / 50.0;
    println!("denoising score matching: loss {head:.4} -> {tail:.4} over {} steps", settings.steps);

    let mut mad = 0.0;
    let mut count = 0usize;
    for ix in 0..5 {
        for iy in 0..5 {
            let x = vec![-3.0 + 1.5 * ix as f64, -3.0 + 1.5 * iy as f64];
            for t in [2usize, 5, 9] {
                for cond in [Condition::Component(0), Condition::Null] {
                    let a = run.net.epsilon(&x, t, &cond)?;
                    let b = oracle.epsilon(&x, t, &cond)?;
                    mad += a.iter().zip(&b).map(|(u, v)| (u - v).abs()).sum::<f64>();
                    count += a.len();
                }
            }
        }
    }
    println!("mean absolute deviation from the oracle on a 5x5x3 probe grid: {:.4}", mad / count as f64);

    let dir = std::env::temp_dir().join("zigzag-example");
    std::fs::create_dir_all(&dir).ok();
    let path = dir.join("score_net.json");
    run.net.save_checkpoint(&path)?;
    let loaded = ScoreNet::load_checkpoint(&path)?;
    assert_eq!(loaded, run.net);
    println!("checkpoint round-trips bit-exactly: {}", path.display());
    Ok(())
}
