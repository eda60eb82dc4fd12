//! Expected Improvement, success probability, their product, and a
//! derivative-free multi-start maximizer.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihoods::Likelihood;
use crate::normal;
use crate::optim::{self, NelderMeadOptions};
use crate::svgp::DualState;

/// Below this predictive standard deviation EI falls back to plain improvement.
pub const SIGMA_CUTOFF: f64 = 1e-12;
/// Candidates in the space-filling sweep per unit of budget.
pub const CANDIDATES_PER_BUDGET: usize = 50;
/// Local refinements started from the best sweep candidates.
pub const REFINEMENT_STARTS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = BoxBounds { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(Error::input("bounds need matching, non-empty lower and upper"));
        }
        if self
            .lower
            .iter()
            .zip(&self.upper)
            .any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite())
        {
            return Err(Error::input("degenerate bounds: need lower < upper in every dimension"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    pub fn clip(&self, x: &mut [f64]) {
        for (j, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[j], self.upper[j]);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .enumerate()
                .all(|(j, v)| *v >= self.lower[j] && *v <= self.upper[j])
    }

    /// Euclidean distance after scaling every axis to unit width.
    pub fn scaled_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(j, (x, y))| ((x - y) / self.width(j)).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AcquisitionKind {
    ExpectedImprovement { incumbent: f64 },
    SuccessProbability,
    ProductEiSuccess { incumbent: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcquisitionSpec {
    pub kind: AcquisitionKind,
    /// Objective direction for EI.
    pub maximize: bool,
}

impl AcquisitionSpec {
    pub fn ei(incumbent: f64) -> Self {
        AcquisitionSpec {
            kind: AcquisitionKind::ExpectedImprovement { incumbent },
            maximize: true,
        }
    }

    pub fn success() -> Self {
        AcquisitionSpec {
            kind: AcquisitionKind::SuccessProbability,
            maximize: true,
        }
    }

    pub fn product(incumbent: f64) -> Self {
        AcquisitionSpec {
            kind: AcquisitionKind::ProductEiSuccess { incumbent },
            maximize: true,
        }
    }

    pub fn with_incumbent(self, incumbent: f64) -> Self {
        let kind = match self.kind {
            AcquisitionKind::ExpectedImprovement { .. } => AcquisitionKind::ExpectedImprovement { incumbent },
            AcquisitionKind::ProductEiSuccess { .. } => AcquisitionKind::ProductEiSuccess { incumbent },
            k => k,
        };
        AcquisitionSpec { kind, ..self }
    }

    pub fn needs_regression(&self) -> bool {
        !matches!(self.kind, AcquisitionKind::SuccessProbability)
    }

    pub fn needs_classifier(&self) -> bool {
        !matches!(self.kind, AcquisitionKind::ExpectedImprovement { .. })
    }
}

/// Regression and/or classification surrogate over the same input space.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Surrogates {
    pub regression: Option<DualState>,
    pub classifier: Option<DualState>,
}

impl Surrogates {
    pub fn regression(state: DualState) -> Self {
        Surrogates {
            regression: Some(state),
            classifier: None,
        }
    }

    pub fn both(regression: DualState, classifier: DualState) -> Self {
        Surrogates {
            regression: Some(regression),
            classifier: Some(classifier),
        }
    }

    fn check(&self, spec: &AcquisitionSpec) -> Result<()> {
        if spec.needs_regression() {
            match &self.regression {
                None => return Err(Error::Config("acquisition needs a regression model".into())),
                Some(s) if !s.likelihood().is_gaussian() => {
                    return Err(Error::Config("regression model must have a Gaussian likelihood".into()))
                }
                _ => {}
            }
        }
        if spec.needs_classifier() {
            match &self.classifier {
                None => return Err(Error::Config("acquisition needs a classification model".into())),
                Some(s) if *s.likelihood() != Likelihood::Bernoulli => {
                    return Err(Error::Config("classifier must have a Bernoulli likelihood".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Closed-form EI for a Gaussian predictive `N(mu, sigma²)`.
pub fn ei_from_moments(mu: f64, sigma: f64, incumbent: f64, maximize: bool) -> f64 {
    let gain = if maximize { mu - incumbent } else { incumbent - mu };
    if sigma < SIGMA_CUTOFF {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    (sigma * (z * normal::cdf(z) + normal::pdf(z))).max(0.0)
}

fn row(x: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, x.len(), x)
}

/// EI of the latent regression predictive at `x` (maximization).
pub fn expected_improvement(reg: &DualState, x: &[f64], incumbent: f64) -> Result<f64> {
    let p = reg.predict(&row(x), false)?;
    Ok(ei_from_moments(p.mean[0], p.variance[0].sqrt(), incumbent, true))
}

pub fn success_probability(clf: &DualState, x: &[f64]) -> Result<f64> {
    Ok(clf.predict_y(&row(x))?[0])
}

/// Acquisition values at every row of `x`.
pub fn eval_acquisition_batch(spec: &AcquisitionSpec, models: &Surrogates, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    models.check(spec)?;
    let n = x.nrows();
    let ei = |incumbent: f64| -> Result<Vec<f64>> {
        let reg = models.regression.as_ref().expect("checked");
        let p = reg.predict(x, false)?;
        Ok((0..n)
            .map(|i| ei_from_moments(p.mean[i], p.variance[i].sqrt(), incumbent, spec.maximize))
            .collect())
    };
    let prob = || -> Result<Vec<f64>> { models.classifier.as_ref().expect("checked").predict_y(x) };
    match spec.kind {
        AcquisitionKind::ExpectedImprovement { incumbent } => ei(incumbent),
        AcquisitionKind::SuccessProbability => prob(),
        AcquisitionKind::ProductEiSuccess { incumbent } => {
            let e = ei(incumbent)?;
            let p = prob()?;
            Ok(e.iter().zip(&p).map(|(a, b)| a * b).collect())
        }
    }
}

pub fn eval_acquisition(spec: &AcquisitionSpec, models: &Surrogates, x: &[f64]) -> Result<f64> {
    Ok(eval_acquisition_batch(spec, models, &row(x))?[0])
}

/// Result of a maximization: best point and its acquisition value.
#[derive(Clone, Debug, PartialEq)]
pub struct Maximum {
    pub x: Vec<f64>,
    pub value: f64,
}

/// Maximise an arbitrary batch-evaluable function over `bounds` with a
/// scrambled Sobol sweep of `budget * 50` points followed by Nelder–Mead from
/// the best five. Ties go to the earliest candidate.
pub fn maximize_fn(
    mut f: impl FnMut(&DMatrix<f64>) -> Result<Vec<f64>>,
    bounds: &BoxBounds,
    budget: usize,
    seed: u64,
) -> Result<Maximum> {
    bounds.validate()?;
    if budget == 0 {
        return Err(Error::input("acquisition budget must be at least 1"));
    }
    let d = bounds.dim();
    let cands = optim::sobol_points(budget * CANDIDATES_PER_BUDGET, bounds, seed);
    let xs = DMatrix::from_fn(cands.len(), d, |i, j| cands[i][j]);
    let values = f(&xs)?;
    let mut order: Vec<usize> = (0..cands.len()).collect();
    // NaN ranks last
    let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    order.sort_by(|a, b| key(values[*b]).total_cmp(&key(values[*a])).then(a.cmp(b)));

    let mut best = Maximum {
        x: cands[order[0]].clone(),
        value: key(values[order[0]]),
    };
    let opts = NelderMeadOptions {
        max_evals: 40 * (d + 1),
        step: (0..d).map(|j| 0.05 * bounds.width(j)).collect(),
        f_tol: 1e-12,
        x_tol: (0..d).map(|j| 1e-7 * bounds.width(j)).fold(f64::INFINITY, f64::min),
    };
    let mut failure = None;
    for &start in order.iter().take(REFINEMENT_STARTS) {
        let res = optim::nelder_mead(
            |x| match f(&row(x)) {
                Ok(v) => -v[0],
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            },
            &cands[start],
            Some(bounds),
            &opts,
        );
        if -res.value > best.value {
            best = Maximum {
                x: res.x,
                value: -res.value,
            };
        }
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let value = f(&row(&best.x))?[0];
    Ok(Maximum { x: best.x, value })
}

/// Maximise the acquisition over `bounds`; deterministic in `seed`.
pub fn maximize_acquisition(
    spec: &AcquisitionSpec,
    models: &Surrogates,
    bounds: &BoxBounds,
    budget: usize,
    seed: u64,
) -> Result<Maximum> {
    models.check(spec)?;
    maximize_fn(|x| eval_acquisition_batch(spec, models, x), bounds, budget, seed)
}
