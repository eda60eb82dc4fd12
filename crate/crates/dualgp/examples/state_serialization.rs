//! Save a fitted state to JSON and load it back bit for bit.

use dualgp::data::generate_banana;
use dualgp::kernels::Kernel;
use dualgp::likelihoods::Likelihood;
use dualgp::state_io;
use dualgp::svgp::{DualState, FitOptions, InducingSet};

fn main() -> dualgp::error::Result<()> {
    let data = generate_banana(20, 1, 5)?.concatenated()?;
    let z = data.x().rows(0, 8).into_owned();
    let state = DualState::new(
        Kernel::matern52(1.0, vec![1.0, 1.0])?,
        Likelihood::Bernoulli,
        InducingSet::new(z)?,
    )?
    .fit(&data, &FitOptions::default())?
    .state;

    let text = state_io::to_json(&state)?;
    println!("{}", &text[..text.len().min(400)]);
    let back = state_io::from_json(&text)?;
    println!("identical after round trip: {}", back == state);
    println!(
        "identical predictions: {}",
        back.predict_y(data.x())? == state.predict_y(data.x())?
    );
    Ok(())
}
