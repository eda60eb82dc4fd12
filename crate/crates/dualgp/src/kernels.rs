//! Stationary ARD covariance functions and Gram-matrix assembly.
//!
//! Points are rows of a `DMatrix<f64>` (`n × d`).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative diagonal inflation applied before every factorization of a
/// kernel matrix.
pub const DEFAULT_JITTER: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Matern52,
    SquaredExponential,
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matern52" => Ok(KernelKind::Matern52),
            "squared_exponential" => Ok(KernelKind::SquaredExponential),
            other => Err(Error::Config(format!("unknown kernel kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    pub variance: f64,
    pub lengthscales: Vec<f64>,
}

impl KernelParams {
    pub fn new(variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        let p = KernelParams { variance, lengthscales };
        p.validate()?;
        Ok(p)
    }

    pub fn isotropic(variance: f64, lengthscale: f64, dim: usize) -> Result<Self> {
        Self::new(variance, vec![lengthscale; dim])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::input(format!(
                "kernel variance must be positive, got {}",
                self.variance
            )));
        }
        if self.lengthscales.is_empty() {
            return Err(Error::input("kernel needs at least one lengthscale"));
        }
        if let Some(l) = self.lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::input(format!("lengthscales must be positive, got {l}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }
}

/// A covariance function: kind plus hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Kernel {
    pub kind: KernelKind,
    #[serde(flatten)]
    pub params: KernelParams,
}

impl Kernel {
    pub fn new(kind: KernelKind, params: KernelParams) -> Result<Self> {
        params.validate()?;
        Ok(Kernel { kind, params })
    }

    pub fn matern52(variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        Self::new(KernelKind::Matern52, KernelParams::new(variance, lengthscales)?)
    }

    pub fn squared_exponential(variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        Self::new(
            KernelKind::SquaredExponential,
            KernelParams::new(variance, lengthscales)?,
        )
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn variance(&self) -> f64 {
        self.params.variance
    }

    /// Covariance between two points.
    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        let d = self.dim();
        for p in [x, x2] {
            if p.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: p.len(),
                });
            }
        }
        Ok(self.eval_unchecked(x.iter().copied(), x2.iter().copied()))
    }

    fn eval_unchecked(&self, x: impl Iterator<Item = f64>, x2: impl Iterator<Item = f64>) -> f64 {
        let r2 = x
            .zip(x2)
            .zip(&self.params.lengthscales)
            .map(|((a, b), l)| {
                let t = (a - b) / l;
                t * t
            })
            .sum::<f64>()
            .max(0.0);
        self.from_scaled_sq_dist(r2)
    }

    fn from_scaled_sq_dist(&self, r2: f64) -> f64 {
        let v = self.params.variance;
        match self.kind {
            KernelKind::SquaredExponential => v * (-0.5 * r2).exp(),
            KernelKind::Matern52 => {
                let s5r = (5.0 * r2).sqrt();
                v * (1.0 + s5r + 5.0 * r2 / 3.0) * (-s5r).exp()
            }
        }
    }

    fn check_points(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    /// Cross-covariance matrix, entry `(i, j) = k(x[i], x2[j])`.
    pub fn gram(&self, x: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_points(x)?;
        self.check_points(x2)?;
        Ok(DMatrix::from_fn(x.nrows(), x2.nrows(), |i, j| {
            self.eval_unchecked(x.row(i).iter().copied(), x2.row(j).iter().copied())
        }))
    }

    /// Symmetric Gram matrix of a point set; only the lower half is evaluated
    /// and mirrored, so the result is exactly symmetric.
    pub fn gram_sym(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_points(x)?;
        let n = x.nrows();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval_unchecked(x.row(i).iter().copied(), x.row(j).iter().copied());
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    /// Prior variance at each point; constant for stationary kernels.
    pub fn diag(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_points(x)?;
        Ok(vec![self.params.variance; x.nrows()])
    }
}
