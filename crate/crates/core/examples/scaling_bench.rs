//! Forward-pass time and parameter count as the number of scenes grows.
//!
//! Usage: cargo run --release --example scaling_bench -- [counts, e.g. 4,10,100]

use c2f_pose::harness::{bench_scaling, bench_to_csv, BenchOptions};
use c2f_pose::model::ModelConfig;

fn main() -> c2f_pose::Result<()> {
    let counts: Vec<usize> = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "4,10,100".into())
        .split(',')
        .map(|s| s.trim().parse().expect("scene count"))
        .collect();
    let rows = bench_scaling(
        &ModelConfig::default(),
        &counts,
        &BenchOptions {
            trials: 3,
            warmup: 1,
            ..BenchOptions::default()
        },
    )?;
    print!("{}", bench_to_csv(&rows));
    let base = &rows[0];
    for r in &rows[1..] {
        println!(
            "N={} vs N={}: runtime x{:.2}, parameters +{:.2}%",
            r.num_scenes,
            base.num_scenes,
            r.min_ms / base.min_ms,
            100.0 * (r.num_params - base.num_params) as f64 / base.num_params as f64
        );
    }
    Ok(())
}
