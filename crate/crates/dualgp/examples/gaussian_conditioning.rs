//! Conjugate regression: conditioning on two halves of the data in either
//! order gives the same posterior as one fit on everything.

use dualgp::data::{Dataset, Domain};
use dualgp::kernels::Kernel;
use dualgp::likelihoods::Likelihood;
use dualgp::svgp::{DualState, FitOptions, InducingSet};
use nalgebra::DMatrix;

fn main() -> dualgp::error::Result<()> {
    let n = 40;
    let x = DMatrix::from_fn(n, 1, |i, _| 6.0 * i as f64 / (n - 1) as f64);
    let y: Vec<f64> = (0..n).map(|i| x[(i, 0)].sin() + 0.05 * ((7 * i) % 5) as f64).collect();
    let all = Dataset::new(x, y, Domain::Real)?;
    let (d1, d2) = (all.slice(0, 25), all.slice(25, 15));

    let z = DMatrix::from_fn(10, 1, |i, _| 6.0 * i as f64 / 9.0);
    let prior = DualState::new(
        Kernel::matern52(1.0, vec![1.0])?,
        Likelihood::gaussian(0.01)?,
        InducingSet::new(z)?,
    )?;

    let offline = prior.fit(&all, &FitOptions::default())?.state;
    let forward = prior.dual_condition(&d1)?.dual_condition(&d2)?;
    let backward = prior.dual_condition(&d2)?.dual_condition(&d1)?;

    let gap = |s: &DualState| (s.to_moments().m_star - offline.to_moments().m_star).amax();
    println!("max |m*| gap, D1 then D2: {:.2e}", gap(&forward));
    println!("max |m*| gap, D2 then D1: {:.2e}", gap(&backward));
    println!(
        "ELBO offline {:.6}, streamed {:.6}",
        offline.elbo(&all)?,
        forward.elbo(&all)?
    );

    let probe = DMatrix::from_row_slice(3, 1, &[0.5, 3.0, 5.5]);
    let p = forward.predict(&probe, false)?;
    for i in 0..3 {
        println!("f({:.1}) ~ N({:.4}, {:.2e})", probe[(i, 0)], p.mean[i], p.variance[i]);
    }
    Ok(())
}
