//! Build a batch of five points with fantasized observations and show how
//! conditioning on the first pick removes its expected improvement.

use dualgp::acquisition::{eval_acquisition, AcquisitionSpec, BoxBounds, Surrogates};
use dualgp::data::{Dataset, Domain};
use dualgp::fantasy::fantasize_batch;
use dualgp::kernels::Kernel;
use dualgp::likelihoods::Likelihood;
use dualgp::svgp::{DualState, FitOptions, InducingSet};
use nalgebra::DMatrix;

fn main() -> dualgp::error::Result<()> {
    let x = DMatrix::from_row_slice(5, 1, &[0.5, 1.0, 1.5, 2.0, 2.5]);
    let data = Dataset::new(x, vec![0.2, 0.8, 1.0, 0.7, 0.1], Domain::Real)?;
    let z = DMatrix::from_fn(21, 1, |i, _| i as f64 * 0.5);
    let reg = DualState::new(
        Kernel::matern52(1.0, vec![1.0])?,
        Likelihood::gaussian(1e-4)?,
        InducingSet::new(z)?,
    )?
    .fit(&data, &FitOptions::default())?
    .state;
    let models = Surrogates::regression(reg.clone());
    let bounds = BoxBounds::new(vec![0.0], vec![10.0])?;
    let spec = AcquisitionSpec::ei(1.0);

    let batch = fantasize_batch(&models, &spec, &bounds, 5, 4, 7)?;
    for (i, (p, a)) in batch.points.iter().zip(&batch.acq_values).enumerate() {
        println!("pick {}: x = {:.4}  EI = {a:.4e}", i + 1, p[0]);
    }

    let x1 = &batch.points[0];
    let y1 = batch.fantasized_values[0].expect("regression fantasy");
    let fantasy = Dataset::new(DMatrix::from_row_slice(1, 1, x1), vec![y1], Domain::Real)?;
    let before = eval_acquisition(&spec, &models, x1)?;
    let after = eval_acquisition(&spec, &Surrogates::regression(reg.dual_condition(&fantasy)?), x1)?;
    println!("EI at x1: {before:.3e} before, {after:.3e} after conditioning");
    Ok(())
}
