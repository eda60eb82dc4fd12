//! Sparse variational GP held in dual form.
//!
//! A [`DualState`] stores the dual parameters `(lambda, Lambda)` of the
//! variational posterior over the inducing outputs `u = f(Z)`. The optimal
//! Gaussian `q(u) = N(m*, V*)` follows from
//!
//! ```text
//! V* = (Kzz⁻¹ + Lambda)⁻¹ = L (I + Lᵀ Lambda L)⁻¹ Lᵀ,    m* = V* lambda,
//! ```
//!
//! with `Kzz = L Lᵀ`. Both parameters are sums of per-observation
//! contributions, which is what makes conditioning on new data a single
//! additive step.
//!
//! The jitter that stabilises `Kzz` is treated as a white-noise component of
//! the latent prior: it appears on the diagonal of `Kzz`, on prior variances at
//! test points and on cross-covariances where a test input coincides exactly
//! with an inducing input. With that convention the predictive at `Z` is
//! exactly `(m*, V*)` and the `Z = X` model is an exact GP.

use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{Kernel, DEFAULT_JITTER};
use crate::likelihoods::{ExpectationGrads, Likelihood, MarginalMoments};
use crate::linalg;

/// Tolerance of the PSD check on `Lambda`, relative to its largest diagonal.
const PSD_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct InducingSet {
    z: DMatrix<f64>,
}

impl InducingSet {
    pub fn new(z: DMatrix<f64>) -> Result<Self> {
        if z.nrows() == 0 || z.ncols() == 0 {
            return Err(Error::input("inducing set needs at least one point"));
        }
        for i in 0..z.nrows() {
            for j in 0..i {
                if z.row(i) == z.row(j) {
                    return Err(Error::input(format!("inducing points {j} and {i} coincide")));
                }
            }
        }
        Ok(InducingSet { z })
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }
}

/// Gaussian over the inducing outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentState {
    pub m_star: DVector<f64>,
    pub v_star: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    pub cov: Option<DMatrix<f64>>,
    /// Number of marginal variances that came out negative and were clamped.
    pub clamped: usize,
}

impl Prediction {
    pub fn marginal(&self, i: usize) -> MarginalMoments {
        MarginalMoments::new(self.mean[i], self.variance[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub max_iters: usize,
    pub rho: f64,
    pub tol: f64,
    /// Record the ELBO after every iteration.
    pub trace_elbo: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iters: 100,
            rho: 0.5,
            tol: 1e-6,
            trace_elbo: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub state: DualState,
    pub converged: bool,
    pub iterations: usize,
    pub elbo_trace: Vec<f64>,
}

/// Quantities derived from the duals, recomputed whenever they change.
#[derive(Clone, Debug)]
struct Posterior {
    /// Cholesky factor of `B = I + Lᵀ Lambda L`.
    b_chol: DMatrix<f64>,
    m_star: DVector<f64>,
    /// `L⁻¹ m*`, so predictive means are `sᵀ alpha` with `s = L⁻¹ k_zx`.
    alpha: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct DualState {
    kernel: Kernel,
    likelihood: Likelihood,
    inducing: InducingSet,
    jitter: f64,
    kzz_chol: DMatrix<f64>,
    lambda: DVector<f64>,
    big_lambda: DMatrix<f64>,
    post: Posterior,
}

impl PartialEq for DualState {
    fn eq(&self, other: &Self) -> bool {
        self.kernel == other.kernel
            && self.likelihood == other.likelihood
            && self.inducing == other.inducing
            && self.jitter.to_bits() == other.jitter.to_bits()
            && self.lambda == other.lambda
            && self.big_lambda == other.big_lambda
    }
}

/// Latent marginals at a batch of inputs together with `S = L⁻¹ Kzx`.
struct Projection {
    s: DMatrix<f64>,
    marginals: Vec<MarginalMoments>,
}

impl DualState {
    /// Fresh state (`lambda = 0`, `Lambda = 0`, posterior equals prior).
    pub fn new(kernel: Kernel, likelihood: Likelihood, inducing: InducingSet) -> Result<Self> {
        Self::with_jitter(kernel, likelihood, inducing, DEFAULT_JITTER)
    }

    /// Fresh state whose jitter escalation starts at `rel_jitter`.
    pub fn with_jitter(kernel: Kernel, likelihood: Likelihood, inducing: InducingSet, rel_jitter: f64) -> Result<Self> {
        check_compat(&kernel, &likelihood, &inducing)?;
        let kzz = kernel.gram_sym(inducing.points())?;
        let (kzz_chol, jitter) = linalg::jittered_cholesky(&kzz, rel_jitter)?;
        let m = inducing.len();
        Self::assemble(
            kernel,
            likelihood,
            inducing,
            jitter,
            kzz_chol,
            DVector::zeros(m),
            DMatrix::zeros(m, m),
        )
    }

    /// Rebuild a state from stored parts; `jitter` is the absolute diagonal
    /// inflation that was in effect when the duals were computed.
    pub fn from_parts(
        kernel: Kernel,
        likelihood: Likelihood,
        inducing: InducingSet,
        jitter: f64,
        lambda: DVector<f64>,
        big_lambda: DMatrix<f64>,
    ) -> Result<Self> {
        check_compat(&kernel, &likelihood, &inducing)?;
        let m = inducing.len();
        if lambda.len() != m || big_lambda.shape() != (m, m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: lambda.len(),
            });
        }
        if !(jitter >= 0.0) {
            return Err(Error::input("jitter must be non-negative"));
        }
        let mut kzz = kernel.gram_sym(inducing.points())?;
        for i in 0..m {
            kzz[(i, i)] += jitter;
        }
        let kzz_chol = linalg::cholesky(kzz, "inducing covariance").map_err(|_| Error::Numerical {
            message: "stored jitter does not make Kzz positive definite".into(),
            jitter_levels: vec![jitter],
        })?;
        if big_lambda != big_lambda.transpose() {
            return Err(Error::input("Lambda must be symmetric"));
        }
        Self::assemble(kernel, likelihood, inducing, jitter, kzz_chol, lambda, big_lambda)
    }

    fn assemble(
        kernel: Kernel,
        likelihood: Likelihood,
        inducing: InducingSet,
        jitter: f64,
        kzz_chol: DMatrix<f64>,
        lambda: DVector<f64>,
        big_lambda: DMatrix<f64>,
    ) -> Result<Self> {
        if !linalg::is_psd(&big_lambda, PSD_TOL) {
            return Err(Error::numerical("Lambda lost positive semi-definiteness"));
        }
        let post = Posterior::compute(&kzz_chol, &lambda, &big_lambda)?;
        Ok(DualState {
            kernel,
            likelihood,
            inducing,
            jitter,
            kzz_chol,
            lambda,
            big_lambda,
            post,
        })
    }

    /// Same `Z`, kernel and likelihood with new duals.
    fn with_duals(&self, lambda: DVector<f64>, mut big_lambda: DMatrix<f64>) -> Result<Self> {
        linalg::symmetrize(&mut big_lambda);
        Self::assemble(
            self.kernel.clone(),
            self.likelihood,
            self.inducing.clone(),
            self.jitter,
            self.kzz_chol.clone(),
            lambda,
            big_lambda,
        )
    }

    /// Zero duals at the same `Z` and hyperparameters.
    pub fn reset(&self) -> Result<Self> {
        let m = self.num_inducing();
        self.with_duals(DVector::zeros(m), DMatrix::zeros(m, m))
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn likelihood(&self) -> &Likelihood {
        &self.likelihood
    }

    pub fn inducing(&self) -> &InducingSet {
        &self.inducing
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.len()
    }

    pub fn dim(&self) -> usize {
        self.inducing.dim()
    }

    /// Absolute jitter on the diagonal of `Kzz`.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    pub fn big_lambda(&self) -> &DMatrix<f64> {
        &self.big_lambda
    }

    /// Lower Cholesky factor of `Kzz + jitter·I`.
    pub fn kzz_cholesky(&self) -> &DMatrix<f64> {
        &self.kzz_chol
    }

    /// Hash of everything held fixed during conditioning (`Z`, kernel,
    /// likelihood, jitter).
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.inducing.z.iter().for_each(|v| v.to_bits().hash(&mut h));
        format!("{:?}", self.kernel.kind).hash(&mut h);
        self.kernel.params.variance.to_bits().hash(&mut h);
        self.kernel
            .params
            .lengthscales
            .iter()
            .for_each(|v| v.to_bits().hash(&mut h));
        match self.likelihood {
            Likelihood::Gaussian { noise_variance } => noise_variance.to_bits().hash(&mut h),
            Likelihood::Bernoulli => 1u8.hash(&mut h),
        }
        self.jitter.to_bits().hash(&mut h);
        h.finish()
    }

    pub fn to_moments(&self) -> MomentState {
        // V* = W Wᵀ with W = L L_B⁻ᵀ
        let w = linalg::solve_lower(&self.post.b_chol, &self.kzz_chol.transpose()).transpose();
        let mut v_star = &w * w.transpose();
        linalg::symmetrize(&mut v_star);
        MomentState {
            m_star: self.post.m_star.clone(),
            v_star,
        }
    }

    /// `Kzx` including the white-noise jitter where inputs coincide with `Z`.
    fn cross_cov(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let z = self.inducing.points();
        let mut kzx = self.kernel.gram(z, x)?;
        if self.jitter > 0.0 {
            for j in 0..x.nrows() {
                for i in 0..z.nrows() {
                    if z.row(i) == x.row(j) {
                        kzx[(i, j)] += self.jitter;
                    }
                }
            }
        }
        Ok(kzx)
    }

    fn prior_var(&self) -> f64 {
        self.kernel.variance() + self.jitter
    }

    fn project(&self, x: &DMatrix<f64>) -> Result<Projection> {
        let kzx = self.cross_cov(x)?;
        let s = linalg::solve_lower(&self.kzz_chol, &kzx);
        let t = linalg::solve_lower(&self.post.b_chol, &s);
        let mean = s.transpose() * &self.post.alpha;
        let prior = self.prior_var();
        let marginals = (0..x.nrows())
            .map(|j| {
                let var = prior - s.column(j).norm_squared() + t.column(j).norm_squared();
                MarginalMoments::new(mean[j], var.max(0.0))
            })
            .collect();
        Ok(Projection { s, marginals })
    }

    /// Latent predictive at test inputs.
    pub fn predict(&self, x: &DMatrix<f64>, full_cov: bool) -> Result<Prediction> {
        let kzx = self.cross_cov(x)?;
        let s = linalg::solve_lower(&self.kzz_chol, &kzx);
        let t = linalg::solve_lower(&self.post.b_chol, &s);
        let mean = s.transpose() * &self.post.alpha;
        let prior = self.prior_var();
        let n = x.nrows();
        let mut clamped = 0;
        let variance = DVector::from_iterator(
            n,
            (0..n).map(|j| {
                let v = prior - s.column(j).norm_squared() + t.column(j).norm_squared();
                if v < 0.0 {
                    clamped += 1;
                    0.0
                } else {
                    v
                }
            }),
        );
        if n > 0 && clamped * 100 > n {
            log::warn!("{clamped} of {n} predictive variances clamped at zero");
        }
        let cov = if full_cov {
            let mut kxx = self.kernel.gram_sym(x)?;
            for i in 0..n {
                for j in 0..n {
                    if i == j || x.row(i) == x.row(j) {
                        kxx[(i, j)] += self.jitter;
                    }
                }
            }
            let mut c = kxx - s.transpose() * &s + t.transpose() * &t;
            linalg::symmetrize(&mut c);
            Some(c)
        } else {
            None
        };
        Ok(Prediction {
            mean,
            variance,
            cov,
            clamped,
        })
    }

    /// Predictive mean of the observation: the latent mean for Gaussian
    /// likelihoods, `Phi(mu / sqrt(1 + s2))` for the probit model.
    pub fn predict_y(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let p = self.predict(x, false)?;
        Ok((0..x.nrows())
            .map(|i| self.likelihood.predictive_mean(p.marginal(i)))
            .collect())
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.is_empty() {
            return Err(Error::input("dataset is empty"));
        }
        if data.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: data.dim(),
            });
        }
        data.y().iter().try_for_each(|y| self.likelihood.check_observation(*y))
    }

    /// Sum of the data's contributions to `(lambda, Lambda)` evaluated at the
    /// current posterior marginals.
    fn data_sites(&self, data: &Dataset) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let proj = self.project(data.x())?;
        let n = data.len();
        let mut g = DVector::zeros(n);
        let mut sqrt_w = DVector::zeros(n);
        for (i, (mm, y)) in proj.marginals.iter().zip(data.y()).enumerate() {
            let ExpectationGrads { d1, d2 } = self.likelihood.expectation_grads_unchecked(*y, *mm);
            // gradients with respect to the expectation parameters (m, V + m mᵀ)
            g[i] = d1 - 2.0 * d2 * mm.mean;
            sqrt_w[i] = (-2.0 * d2).max(0.0).sqrt();
        }
        // Aᵀ = Kzz⁻¹ Kzx = L⁻ᵀ S
        let mut at = linalg::solve_lower_transpose(&self.kzz_chol, &proj.s);
        let lam = &at * g;
        for (j, w) in sqrt_w.iter().enumerate() {
            at.column_mut(j).scale_mut(*w);
        }
        let big = &at * at.transpose();
        Ok((lam, big))
    }

    /// One damped natural-gradient step on `data`.
    pub fn natgrad_step(&self, data: &Dataset, rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::input(format!("step size must lie in [0, 1], got {rho}")));
        }
        self.check_data(data)?;
        if rho == 0.0 {
            return Ok(self.clone());
        }
        let (lam, big) = self.data_sites(data)?;
        let lambda = &self.lambda * (1.0 - rho) + lam * rho;
        let big_lambda = &self.big_lambda * (1.0 - rho) + big * rho;
        self.with_duals(lambda, big_lambda)
    }

    /// Iterate natural-gradient steps until the duals stop moving. Gaussian
    /// likelihoods need exactly one full step.
    pub fn fit(&self, data: &Dataset, opts: &FitOptions) -> Result<FitOutcome> {
        self.check_data(data)?;
        let mut trace = Vec::new();
        if self.likelihood.is_gaussian() {
            let state = self.natgrad_step(data, 1.0)?;
            if opts.trace_elbo {
                trace.push(state.elbo(data)?);
            }
            return Ok(FitOutcome {
                state,
                converged: true,
                iterations: 1,
                elbo_trace: trace,
            });
        }
        let mut state = self.clone();
        for it in 1..=opts.max_iters {
            let next = state.natgrad_step(data, opts.rho)?;
            let dl = (&next.lambda - &state.lambda).norm() / (1.0 + next.lambda.norm());
            let dbl = (&next.big_lambda - &state.big_lambda).norm() / (1.0 + next.big_lambda.norm());
            state = next;
            if opts.trace_elbo {
                trace.push(state.elbo(data)?);
            }
            if dl < opts.tol && dbl < opts.tol {
                return Ok(FitOutcome {
                    state,
                    converged: true,
                    iterations: it,
                    elbo_trace: trace,
                });
            }
        }
        Ok(FitOutcome {
            state,
            converged: false,
            iterations: opts.max_iters,
            elbo_trace: trace,
        })
    }

    /// One-step update from new data only. `Z` and the hyperparameters stay
    /// fixed; old data is never revisited. Cost is `O(n_new m² + m³)`.
    pub fn dual_condition(&self, new_data: &Dataset) -> Result<Self> {
        self.check_data(new_data)?;
        let (lam, big) = self.data_sites(new_data)?;
        self.with_duals(&self.lambda + lam, &self.big_lambda + big)
    }

    /// `KL(q(u) || p(u))` in closed form.
    pub fn kl_divergence(&self) -> f64 {
        let m = self.num_inducing() as f64;
        let b_inv_l = linalg::solve_lower(
            &self.post.b_chol,
            &DMatrix::identity(self.num_inducing(), self.num_inducing()),
        );
        let trace_b_inv = b_inv_l.norm_squared();
        let maha = self.post.alpha.norm_squared();
        let log_det_b = linalg::log_det_from_cholesky(&self.post.b_chol);
        0.5 * (trace_b_inv + maha - m + log_det_b)
    }

    /// Evidence lower bound on `data`.
    pub fn elbo(&self, data: &Dataset) -> Result<f64> {
        self.check_data(data)?;
        let proj = self.project(data.x())?;
        let expected: f64 = proj
            .marginals
            .iter()
            .zip(data.y())
            .map(|(mm, y)| self.likelihood.expected_log_prob(*y, *mm))
            .sum::<Result<f64>>()?;
        Ok(expected - self.kl_divergence())
    }

    /// Latent marginals at the inputs of a dataset, as used by the updates.
    pub fn marginals(&self, x: &DMatrix<f64>) -> Result<Vec<MarginalMoments>> {
        Ok(self.project(x)?.marginals)
    }

    /// Fresh state on new hyperparameters or inducing points, same likelihood
    /// family. Jitter escalation restarts from the default level.
    pub fn rebuild(&self, kernel: Kernel, likelihood: Likelihood, inducing: InducingSet) -> Result<Self> {
        Self::new(kernel, likelihood, inducing)
    }
}

impl Posterior {
    fn compute(l: &DMatrix<f64>, lambda: &DVector<f64>, big_lambda: &DMatrix<f64>) -> Result<Self> {
        let m = l.nrows();
        let mut b = l.transpose() * big_lambda * l;
        linalg::symmetrize(&mut b);
        for i in 0..m {
            b[(i, i)] += 1.0;
        }
        let b_chol = linalg::cholesky(b, "I + Lᵀ Lambda L")?;
        // m* = L B⁻¹ Lᵀ lambda, alpha = L⁻¹ m* = B⁻¹ Lᵀ lambda
        let rhs = l.transpose() * lambda;
        let tmp = linalg::solve_lower_vec(&b_chol, &rhs);
        let alpha = linalg::solve_lower_transpose_vec(&b_chol, &tmp);
        let m_star = l * &alpha;
        Ok(Posterior { b_chol, m_star, alpha })
    }
}

fn check_compat(kernel: &Kernel, likelihood: &Likelihood, inducing: &InducingSet) -> Result<()> {
    kernel.params.validate()?;
    likelihood.validate()?;
    if kernel.dim() != inducing.dim() {
        return Err(Error::DimensionMismatch {
            expected: kernel.dim(),
            found: inducing.dim(),
        });
    }
    Ok(())
}
