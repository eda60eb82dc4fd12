//! Stream four batches of banana data through dual conditioning and compare
//! against an offline fit with the same inducing points and hyperparameters.

use dualgp::bo::{run_streaming, StreamConfig};
use dualgp::data::generate_banana;

fn main() -> dualgp::error::Result<()> {
    let stream = generate_banana(100, 4, 22)?;
    let r = run_streaming(&stream, &StreamConfig::banana_default(), 22)?;
    for (b, gap) in r.summary.grid_gaps.iter().enumerate() {
        println!("after batch {}: mean |p_stream - p_offline| = {gap:.4}", b + 1);
    }
    println!(
        "training accuracy: streamed {:.3}, offline {:.3}",
        r.summary.stream_accuracy.unwrap_or(f64::NAN),
        r.summary.offline_accuracy.unwrap_or(f64::NAN)
    );
    Ok(())
}
