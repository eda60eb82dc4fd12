//! Expected log-likelihoods under a Gaussian marginal and their gradients,
//! for the Gaussian and probit observation models.

use dualgp::likelihoods::{GaussHermite, Likelihood, MarginalMoments};

fn main() -> dualgp::error::Result<()> {
    let gauss = Likelihood::gaussian(0.1)?;
    let probit = Likelihood::Bernoulli;
    println!(
        "{:>6} {:>6} {:>12} {:>12} {:>12}",
        "mu", "s2", "E[log p]", "d/dmu", "d/ds2"
    );
    for &(mu, s2) in &[(-2.0, 0.1), (0.0, 0.5), (1.5, 1.0), (-6.0, 0.2)] {
        let mm = MarginalMoments::new(mu, s2);
        for (name, lik, y) in [("gauss", &gauss, 0.3), ("probit", &probit, 1.0)] {
            let e = lik.expected_log_prob(y, mm)?;
            let g = lik.expectation_grads(y, mm)?;
            println!("{mu:>6.2} {s2:>6.2} {e:>12.6} {:>12.6} {:>12.6}  {name}", g.d1, g.d2);
        }
    }
    // the default 20-node rule against a much finer one
    let fine = GaussHermite::new(80);
    let mm = MarginalMoments::new(0.4, 1.0);
    let coarse = probit.expected_log_prob(1.0, mm)?;
    let reference = probit.expected_log_prob_with(1.0, mm, &fine);
    println!("20 vs 80 nodes at s2 = 1: {:.2e}", (coarse - reference).abs());
    Ok(())
}
