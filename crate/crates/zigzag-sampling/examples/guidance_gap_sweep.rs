//! The full harness: run the reference guidance-gap sweep (256 seeded
//! trajectories per grid value, paired with a plain-sampling baseline),
//! write the CSV and summary, and print the trend statistics.
//!
//! ```bash
//! cargo run --release --example guidance_gap_sweep
//! ```

use zigzag_sampling::harness::{
    difference_in_se, isotonic_violations, reference_config, run_experiment, TrendPoint,
};

fn main() -> zigzag_sampling::Result<()> {
    let mut config = reference_config();
    config.name = "gap_sweep_example".into();
    config.output_dir = std::path::PathBuf::from("runs");
    let outcome = run_experiment(&config)?;

    println!("gap   alignment (se)      baseline   gain (se)          energy");
    for row in &outcome.rows {
        println!(
            "{:<5} {:.4} ({:.4})    {:.4}     {:+.4} ({:.4})   {:.4}",
            row.sweep_value,
            row.quality.alignment,
            row.alignment_se,
            row.baseline_alignment,
            row.alignment_gain,
            row.alignment_gain_se,
            row.quality.energy_distance
        );
    }

    let points: Vec<TrendPoint> = outcome
        .rows
        .iter()
        .map(|r| TrendPoint {
            value: r.sweep_value,
            mean: r.quality.alignment,
            se: r.alignment_se,
        })
        .collect();
    println!(
        "\ntrend: {} violations of non-decrease at 2 SE; widest gap beats zero gap by {:.2} SE",
        isotonic_violations(&points, 2.0),
        difference_in_se(&points[0], &points[points.len() - 1])
    );
    println!("csv: {}", outcome.csv_path.display());
    println!("summary: {}", outcome.summary_path.display());
    println!("total: {:.2}s", outcome.total_seconds);
    Ok(())
}
