//! Independent dense oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls into the library's numerics: kernels are re-derived from
//! their closed forms and posteriors are computed with textbook dense algebra.
//! The jitter a state reports is treated as a white-noise nugget on the kernel.

#![allow(dead_code)]

use dualgp::data::{Dataset, Domain};
use dualgp::kernels::Kernel;
use dualgp::likelihoods::Likelihood;
use dualgp::svgp::{DualState, InducingSet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn matern52(variance: f64, ls: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let r = a
        .iter()
        .zip(b)
        .zip(ls)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum::<f64>()
        .sqrt();
    let s = 5f64.sqrt() * r;
    variance * (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn row(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

/// Kernel matrix with a nugget added wherever two inputs coincide exactly.
pub fn gram(variance: f64, ls: &[f64], nugget: f64, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let (p, q) = (row(a, i), row(b, j));
        matern52(variance, ls, &p, &q) + if p == q { nugget } else { 0.0 }
    })
}

pub struct SgprOracle {
    pub m_star: DVector<f64>,
    pub v_star: DMatrix<f64>,
    pub elbo: f64,
}

fn chol_logdet(a: &DMatrix<f64>) -> f64 {
    let l = a.clone().cholesky().expect("oracle matrix is positive definite");
    2.0 * l.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Optimal Gaussian q(u) of the sparse variational GP and the collapsed bound
/// `log N(y | 0, Q + s²I) - tr(K - Q) / (2 s²)`.
pub fn sgpr_oracle(
    variance: f64,
    ls: &[f64],
    nugget: f64,
    noise: f64,
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &[f64],
) -> SgprOracle {
    let n = x.nrows();
    let kzz = gram(variance, ls, nugget, z, z);
    let kzx = gram(variance, ls, nugget, z, x);
    let yv = DVector::from_column_slice(y);
    let a = &kzz + &kzx * kzx.transpose() / noise;
    let a_chol = a.cholesky().expect("A is positive definite");
    let a_inv_kzz = a_chol.solve(&kzz);
    let v_star = &kzz * &a_inv_kzz;
    let m_star = &kzz * a_chol.solve(&(&kzx * &yv)) / noise;

    let kzz_inv_kzx = kzz.clone().cholesky().expect("Kzz positive definite").solve(&kzx);
    let q = kzx.transpose() * &kzz_inv_kzx;
    let c = &q + DMatrix::identity(n, n) * noise;
    let c_chol = c.clone().cholesky().expect("Q + s2 I positive definite");
    let alpha = c_chol.solve(&yv);
    let log_ml = -0.5 * yv.dot(&alpha) - 0.5 * chol_logdet(&c) - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let trace = (0..n).map(|i| variance + nugget - q[(i, i)]).sum::<f64>();
    SgprOracle {
        m_star,
        v_star,
        elbo: log_ml - trace / (2.0 * noise),
    }
}

/// Exact GP log marginal likelihood with kernel `K + nugget I`.
pub fn exact_log_marginal(variance: f64, ls: &[f64], nugget: f64, noise: f64, x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let n = x.nrows();
    let k = gram(variance, ls, nugget, x, x) + DMatrix::identity(n, n) * noise;
    let yv = DVector::from_column_slice(y);
    let alpha = k.clone().cholesky().expect("K + s2 I positive definite").solve(&yv);
    -0.5 * yv.dot(&alpha) - 0.5 * chol_logdet(&k) - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Exact GP predictive mean and latent variance at `xs`.
pub fn exact_predict(
    variance: f64,
    ls: &[f64],
    nugget: f64,
    noise: f64,
    x: &DMatrix<f64>,
    y: &[f64],
    xs: &DMatrix<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = x.nrows();
    let k = gram(variance, ls, nugget, x, x) + DMatrix::identity(n, n) * noise;
    let ch = k.cholesky().expect("positive definite");
    let ksx = gram(variance, ls, nugget, xs, x);
    let mean = &ksx * ch.solve(&DVector::from_column_slice(y));
    let var = DVector::from_fn(xs.nrows(), |i, _| {
        let kx = ksx.row(i).transpose();
        variance + nugget - kx.dot(&ch.solve(&kx))
    });
    (mean, var)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// A random regression problem with its state and the parameters needed by
/// the oracles.
pub struct Instance {
    pub variance: f64,
    pub ls: Vec<f64>,
    pub noise: f64,
    pub z: DMatrix<f64>,
    pub data: Dataset,
    pub prior: DualState,
}

impl Instance {
    pub fn nugget(&self) -> f64 {
        self.prior.jitter()
    }
}

fn spread_points(rng: &mut ChaCha8Rng, n: usize, d: usize, lo: f64, hi: f64, min_gap: f64) -> DMatrix<f64> {
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n);
    while pts.len() < n {
        let p: Vec<f64> = (0..d).map(|_| rng.random_range(lo..hi)).collect();
        let far = pts
            .iter()
            .all(|q| q.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= min_gap);
        if far {
            pts.push(p);
        }
    }
    DMatrix::from_fn(n, d, |i, j| pts[i][j])
}

/// Random Gaussian-likelihood instance with `n <= 50`, `m <= 10` and random
/// Matérn-5/2 hyperparameters.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..=3usize);
    let n = rng.random_range(5..=50usize);
    let m = rng.random_range(2..=10usize);
    let variance = rng.random_range(0.3..3.0);
    let ls: Vec<f64> = (0..d).map(|_| rng.random_range(0.4..2.0)).collect();
    let noise = rng.random_range(0.01..0.5);
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
    let y: Vec<f64> = (0..n)
        .map(|i| (1.3f64 * x[(i, 0)]).sin() + 0.2 * rng.random_range(-1.0..1.0))
        .collect();
    let z = spread_points(&mut rng, m, d, -2.0, 2.0, 0.15);
    let prior = DualState::new(
        Kernel::matern52(variance, ls.clone()).unwrap(),
        Likelihood::gaussian(noise).unwrap(),
        InducingSet::new(z.clone()).unwrap(),
    )
    .unwrap();
    Instance {
        variance,
        ls,
        noise,
        z,
        data: Dataset::new(x, y, Domain::Real).unwrap(),
        prior,
    }
}

/// Random probit classification instance on `[-2, 2]^d`.
pub fn random_classification(seed: u64, n: usize, m: usize) -> (DualState, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 2;
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let f = (1.5f64 * x[(i, 0)]).sin() + 0.5 * x[(i, 1)];
            f64::from(u8::from(f + 0.4 * rng.random_range(-1.0..1.0) > 0.0))
        })
        .collect();
    let z = spread_points(&mut rng, m, d, -2.0, 2.0, 0.2);
    let prior = DualState::new(
        Kernel::matern52(rng.random_range(0.5..2.0), vec![rng.random_range(0.5..1.5); d]).unwrap(),
        Likelihood::Bernoulli,
        InducingSet::new(z).unwrap(),
    )
    .unwrap();
    (prior, Dataset::new(x, y, Domain::Binary).unwrap())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig(a: &DMatrix<f64>) -> f64 {
    a.clone().symmetric_eigenvalues().min()
}

/// Training accuracy of a linear probit model fitted by Newton's method.
pub fn linear_probit_accuracy(data: &Dataset) -> f64 {
    let n = data.len();
    let d = data.dim() + 1;
    let x = DMatrix::from_fn(n, d, |i, j| if j == 0 { 1.0 } else { data.x()[(i, j - 1)] });
    let mut w = DVector::zeros(d);
    for _ in 0..50 {
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        for i in 0..n {
            let xi = x.row(i).transpose();
            let s = if data.y()[i] == 1.0 { 1.0 } else { -1.0 };
            let z = s * xi.dot(&w);
            // phi(z) / Phi(z) through erfc for stability
            let big_phi = 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
            let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let r = phi / big_phi.max(1e-300);
            g += &xi * (s * r);
            h += &xi * xi.transpose() * (r * (z + r));
        }
        let step = h.lu().solve(&g).expect("probit Hessian invertible");
        w += &step;
        if step.norm() < 1e-12 {
            break;
        }
    }
    (0..n)
        .filter(|&i| (x.row(i).transpose().dot(&w) >= 0.0) == (data.y()[i] == 1.0))
        .count() as f64
        / n as f64
}

/// Relative errors of `expectation_grads` against central differences of
/// `expected_log_prob` in the mean and the variance.
pub fn fd_grad_errors(lik: &Likelihood, y: f64, mu: f64, s2: f64) -> (f64, f64) {
    use dualgp::likelihoods::MarginalMoments;
    let g = lik.expectation_grads(y, MarginalMoments::new(mu, s2)).unwrap();
    let e = |m: f64, v: f64| lik.expected_log_prob(y, MarginalMoments::new(m, v)).unwrap();
    let h = 1e-5;
    let fd1 = (e(mu + h, s2) - e(mu - h, s2)) / (2.0 * h);
    let fd2 = (e(mu, s2 + h) - e(mu, s2 - h)) / (2.0 * h);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-6);
    (rel(g.d1, fd1), rel(g.d2, fd2))
}

/// A random likelihood, label and marginal for the gradient sweep.
pub fn grad_case(rng: &mut ChaCha8Rng, case: usize) -> (Likelihood, f64, f64, f64) {
    let mu = rng.random_range(-3.0..3.0);
    let s2 = rng.random_range(0.05..2.0);
    if case % 2 == 0 {
        (Likelihood::Bernoulli, f64::from(u8::from(rng.random_bool(0.5))), mu, s2)
    } else {
        let lik = Likelihood::gaussian(rng.random_range(0.05..1.0)).unwrap();
        (lik, rng.random_range(-2.0..2.0), mu, s2)
    }
}

/// Monte-Carlo estimate of `E[max(f - incumbent, 0)]` for `f ~ N(mu, sd²)`
/// with its standard error.
pub fn ei_monte_carlo(rng: &mut ChaCha8Rng, mu: f64, sd: f64, incumbent: f64, samples: usize) -> (f64, f64) {
    use rand_distr::StandardNormal;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..samples {
        let e: f64 = rng.sample(StandardNormal);
        let g = (mu + sd * e - incumbent).max(0.0);
        sum += g;
        sq += g * g;
    }
    let mean = sum / samples as f64;
    (mean, ((sq / samples as f64 - mean * mean) / samples as f64).sqrt())
}

/// Smooth 1-d regression surrogate fitted on six points in `[0, 1]`.
pub fn smooth_regression_model() -> DualState {
    smooth_regression_model_with_noise(0.05)
}

pub fn smooth_regression_model_with_noise(noise: f64) -> DualState {
    let x = DMatrix::from_row_slice(6, 1, &[0.05, 0.2, 0.35, 0.6, 0.8, 0.95]);
    let y = vec![0.3, -0.4, 0.9, 0.1, -0.2, 0.5];
    let data = Dataset::new(x, y, Domain::Real).unwrap();
    let z = DMatrix::from_fn(8, 1, |i, _| i as f64 / 7.0);
    DualState::new(
        Kernel::matern52(1.0, vec![0.2]).unwrap(),
        Likelihood::gaussian(noise).unwrap(),
        InducingSet::new(z).unwrap(),
    )
    .unwrap()
    .fit(&data, &dualgp::svgp::FitOptions::default())
    .unwrap()
    .state
}
