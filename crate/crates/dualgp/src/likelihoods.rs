//! Observation models and the per-point expectation gradients that drive the
//! dual updates.
//!
//! For an observation `y` and a Gaussian latent marginal `N(mu, s2)`, every
//! likelihood provides `E[log p(y | f)]` and its derivatives with respect to
//! `mu` and `s2`. The model turns those into expectation-parameter gradients
//! over the inducing outputs.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// Gauss–Hermite nodes used for Bernoulli expectations.
pub const QUADRATURE_NODES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Likelihood {
    Gaussian {
        noise_variance: f64,
    },
    /// Probit link, labels in {0, 1}.
    Bernoulli,
}

/// Latent marginal at one input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginalMoments {
    pub mean: f64,
    pub variance: f64,
}

impl MarginalMoments {
    pub fn new(mean: f64, variance: f64) -> Self {
        MarginalMoments { mean, variance }
    }

    pub fn point(mean: f64) -> Self {
        MarginalMoments { mean, variance: 0.0 }
    }
}

/// Physicists' Gauss–Hermite rule: `∫ e^{-t²} g(t) dt ≈ Σ w_i g(t_i)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Newton iteration on the orthonormal Hermite recurrence, seeded with the
    /// usual asymptotic guesses for the largest roots.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let pim4 = PI.powf(-0.25);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        GaussHermite { nodes, weights }
    }

    /// `E[g(f)]` for `f ~ N(mean, variance)`.
    pub fn expect(&self, mm: MarginalMoments, mut g: impl FnMut(f64) -> f64) -> f64 {
        let scale = (2.0 * mm.variance.max(0.0)).sqrt();
        let norm = PI.sqrt().recip();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| w * g(mm.mean + scale * t))
            .sum::<f64>()
            * norm
    }
}

fn default_rule() -> &'static GaussHermite {
    static RULE: OnceLock<GaussHermite> = OnceLock::new();
    RULE.get_or_init(|| GaussHermite::new(QUADRATURE_NODES))
}

/// Derivative of `E[log p]` with respect to the marginal mean (`d1`) and the
/// marginal variance (`d2`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpectationGrads {
    pub d1: f64,
    pub d2: f64,
}

impl Likelihood {
    pub fn gaussian(noise_variance: f64) -> Result<Self> {
        let l = Likelihood::Gaussian { noise_variance };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Likelihood::Gaussian { noise_variance } if !(noise_variance > 0.0) => Err(Error::input(format!(
                "noise variance must be positive, got {noise_variance}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, Likelihood::Gaussian { .. })
    }

    pub fn check_observation(&self, y: f64) -> Result<()> {
        match self {
            Likelihood::Gaussian { .. } if !y.is_finite() => Err(Error::input(format!("non-finite observation {y}"))),
            Likelihood::Bernoulli if y != 0.0 && y != 1.0 => {
                Err(Error::input(format!("Bernoulli observations must be 0 or 1, got {y}")))
            }
            _ => Ok(()),
        }
    }

    pub fn log_prob(&self, y: f64, f: f64) -> Result<f64> {
        self.check_observation(y)?;
        Ok(self.log_prob_unchecked(y, f))
    }

    fn log_prob_unchecked(&self, y: f64, f: f64) -> f64 {
        match *self {
            Likelihood::Gaussian { noise_variance } => {
                let r = y - f;
                -0.5 * (2.0 * PI * noise_variance).ln() - 0.5 * r * r / noise_variance
            }
            Likelihood::Bernoulli => normal::ln_cdf(sign(y) * f),
        }
    }

    pub fn expected_log_prob(&self, y: f64, mm: MarginalMoments) -> Result<f64> {
        self.check_observation(y)?;
        Ok(self.expected_log_prob_with(y, mm, default_rule()))
    }

    /// Same as [`Likelihood::expected_log_prob`] with an explicit rule; the
    /// Gaussian case ignores it.
    pub fn expected_log_prob_with(&self, y: f64, mm: MarginalMoments, rule: &GaussHermite) -> f64 {
        match *self {
            Likelihood::Gaussian { noise_variance } => {
                let r = y - mm.mean;
                -0.5 * (2.0 * PI * noise_variance).ln() - 0.5 * (r * r + mm.variance.max(0.0)) / noise_variance
            }
            Likelihood::Bernoulli => {
                let s = sign(y);
                rule.expect(mm, |f| normal::ln_cdf(s * f))
            }
        }
    }

    /// `(dE/dmu, dE/ds2)`. For the probit model these are the expectations of
    /// the first and half the second derivative of `log Phi(s f)`.
    pub fn expectation_grads(&self, y: f64, mm: MarginalMoments) -> Result<ExpectationGrads> {
        self.check_observation(y)?;
        Ok(self.expectation_grads_unchecked(y, mm))
    }

    pub(crate) fn expectation_grads_unchecked(&self, y: f64, mm: MarginalMoments) -> ExpectationGrads {
        match *self {
            Likelihood::Gaussian { noise_variance } => ExpectationGrads {
                d1: (y - mm.mean) / noise_variance,
                d2: -0.5 / noise_variance,
            },
            Likelihood::Bernoulli => {
                let s = sign(y);
                let rule = default_rule();
                let mut d1 = 0.0;
                let mut d2 = 0.0;
                let scale = (2.0 * mm.variance.max(0.0)).sqrt();
                for (t, w) in rule.nodes.iter().zip(&rule.weights) {
                    let z = s * (mm.mean + scale * t);
                    let h = normal::inv_mills(z);
                    d1 += w * s * h;
                    d2 += w * (-h * (z + h));
                }
                let norm = PI.sqrt().recip();
                ExpectationGrads {
                    d1: d1 * norm,
                    d2: (0.5 * d2 * norm).min(0.0),
                }
            }
        }
    }

    /// Predictive mean of `y` given a latent marginal.
    pub fn predictive_mean(&self, mm: MarginalMoments) -> f64 {
        match self {
            Likelihood::Gaussian { .. } => mm.mean,
            Likelihood::Bernoulli => normal::cdf(mm.mean / (1.0 + mm.variance.max(0.0)).sqrt()),
        }
    }

    pub fn noise_variance(&self) -> Option<f64> {
        match *self {
            Likelihood::Gaussian { noise_variance } => Some(noise_variance),
            Likelihood::Bernoulli => None,
        }
    }
}

#[inline]
fn sign(y: f64) -> f64 {
    2.0 * y - 1.0
}
