//! Time one-step dual conditioning as the number of new points grows.

use dualgp::commands::cmd_bench_conditioning;
use dualgp::config::ExperimentConfig;

fn main() -> dualgp::error::Result<()> {
    let dir = std::env::temp_dir().join("dualgp-bench-example");
    let cfg = ExperimentConfig {
        output_dir: dir.clone(),
        ..ExperimentConfig::default()
    };
    let s = cmd_bench_conditioning(&cfg)?;
    for r in &s.series {
        println!("{}:", r.likelihood);
        for (n, t) in r.n_new.iter().zip(&r.median_ms) {
            println!("  n_new {n:5}  {t:8.3} ms");
        }
        println!("  ratio {:.2}, log-log slope {:.2}", r.ratio, r.loglog_slope);
    }
    println!("results in {}", dir.display());
    Ok(())
}
