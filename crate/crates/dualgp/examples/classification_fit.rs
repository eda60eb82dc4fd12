//! Probit classification by natural-gradient steps on the synthetic banana set.

use dualgp::data::generate_banana;
use dualgp::kernels::Kernel;
use dualgp::likelihoods::Likelihood;
use dualgp::optim::kmeans;
use dualgp::svgp::{DualState, FitOptions, InducingSet};

fn main() -> dualgp::error::Result<()> {
    let data = generate_banana(100, 4, 22)?.concatenated()?;
    let z = kmeans(data.x(), 25, 25, 1);
    let prior = DualState::new(
        Kernel::matern52(1.0, vec![1.0, 1.0])?,
        Likelihood::Bernoulli,
        InducingSet::new(z)?,
    )?;
    let opts = FitOptions {
        trace_elbo: true,
        ..FitOptions::default()
    };
    let out = prior.fit(&data, &opts)?;
    for (i, e) in out.elbo_trace.iter().enumerate().step_by(5) {
        println!("iter {:3}  ELBO {e:.4}", i + 1);
    }
    println!("converged: {} after {} iterations", out.converged, out.iterations);

    let p = out.state.predict_y(data.x())?;
    let hits = p
        .iter()
        .zip(data.y())
        .filter(|(p, y)| (**p >= 0.5) == (**y == 1.0))
        .count();
    println!("training accuracy {:.3}", hits as f64 / data.len() as f64);
    Ok(())
}
