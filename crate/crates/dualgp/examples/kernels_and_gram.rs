//! Evaluate Matérn-5/2 and squared-exponential kernels and build Gram matrices.

use dualgp::kernels::Kernel;
use nalgebra::DMatrix;

fn main() -> dualgp::error::Result<()> {
    let matern = Kernel::matern52(1.5, vec![0.5, 2.0])?;
    let se = Kernel::squared_exponential(1.5, vec![0.5, 2.0])?;
    let (a, b) = ([0.0, 0.0], [0.3, 1.0]);
    println!("matern52(a, b)            = {:.6}", matern.eval(&a, &b)?);
    println!("squared_exponential(a, b) = {:.6}", se.eval(&a, &b)?);

    let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.3, 1.0, -1.0, 0.5, 2.0, -2.0]);
    let k = matern.gram_sym(&x)?;
    println!("Gram matrix:{k:.4}");
    let eig = k.symmetric_eigenvalues();
    println!("smallest eigenvalue {:.3e}", eig.min());
    Ok(())
}
