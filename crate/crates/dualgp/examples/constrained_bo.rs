//! Batch and sequential BO on the noisy Branin problem with a disk-shaped
//! feasible region, using EI times the success probability.

use dualgp::bo::{run_bo, BoConfig, Problem};
use dualgp::data::generate_constrained_problem;

fn main() -> dualgp::error::Result<()> {
    let seed = 1;
    let problem = generate_constrained_problem("noisy-branin-disk", seed)?;
    println!(
        "best feasible value {:.4} at {:?}",
        problem.best_feasible_value, problem.best_feasible_x
    );
    let problem = Problem::SyntheticStochastic(problem);
    for k in [1, 5] {
        let cfg = BoConfig {
            batch_size: k,
            iterations: 6,
            ..BoConfig::default()
        };
        let h = run_bo(&problem, &cfg, seed)?;
        let trace: Vec<String> = h
            .records
            .iter()
            .map(|r| r.incumbent.map_or("-".into(), |v| format!("{v:.2}")))
            .collect();
        println!("batch {k}: incumbent per iteration {}", trace.join(" "));
    }
    Ok(())
}
