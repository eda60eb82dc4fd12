//! Greedy Kriging-Believer batch construction.
//!
//! Each pick maximises the acquisition, pretends the surrogate's own
//! prediction at the pick was observed, and conditions working copies of the
//! surrogates on it with a single dual update before the next pick. `Z` and
//! the hyperparameters never change inside the loop.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::acquisition::{maximize_acquisition, AcquisitionSpec, BoxBounds, Surrogates};
use crate::data::{mix_seed, Dataset, Domain};
use crate::error::{Error, Result};

/// Minimum scaled distance between batch members.
pub const MIN_SEPARATION: f64 = 1e-9;
const MAX_RETRIES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FantasyBatch {
    pub points: Vec<Vec<f64>>,
    /// Fantasized regression observations (`None` without a regression model).
    pub fantasized_values: Vec<Option<f64>>,
    /// Fantasized success labels (`None` without a classifier).
    pub fantasized_labels: Vec<Option<f64>>,
    pub acq_values: Vec<f64>,
    /// Set when a pick still duplicated an earlier member after all retries.
    pub duplicate_warning: bool,
}

impl FantasyBatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn single(x: &[f64], y: f64, domain: Domain) -> Result<Dataset> {
    Dataset::new(DMatrix::from_row_slice(1, x.len(), x), vec![y], domain)
}

/// Build a batch of `k` query points. The input surrogates are not modified.
pub fn fantasize_batch(
    models: &Surrogates,
    spec: &AcquisitionSpec,
    bounds: &BoxBounds,
    k: usize,
    budget: usize,
    seed: u64,
) -> Result<FantasyBatch> {
    if k == 0 {
        return Err(Error::input("batch size must be at least 1"));
    }
    let mut working = models.clone();
    let fingerprints = (
        working.regression.as_ref().map(|s| s.fingerprint()),
        working.classifier.as_ref().map(|s| s.fingerprint()),
    );
    let mut batch = FantasyBatch {
        points: Vec::with_capacity(k),
        fantasized_values: Vec::with_capacity(k),
        fantasized_labels: Vec::with_capacity(k),
        acq_values: Vec::with_capacity(k),
        duplicate_warning: false,
    };

    for i in 0..k {
        let mut pick = None;
        for attempt in 0..=MAX_RETRIES {
            let sub_seed = mix_seed(seed, (i as u64) << 8 | attempt as u64);
            let m = maximize_acquisition(spec, &working, bounds, budget, sub_seed)?;
            let clash = batch
                .points
                .iter()
                .any(|p| bounds.scaled_distance(p, &m.x) < MIN_SEPARATION);
            if !clash {
                pick = Some(m);
                break;
            }
            if attempt == MAX_RETRIES {
                log::warn!("batch point {i} duplicates an earlier pick after {MAX_RETRIES} retries");
                batch.duplicate_warning = true;
                pick = Some(m);
            }
        }
        let m = pick.expect("loop always yields a pick");
        if !m.value.is_finite() {
            return Err(Error::numerical(format!(
                "acquisition value {} at batch point {i}",
                m.value
            )));
        }

        let x = m.x;
        let row = DMatrix::from_row_slice(1, x.len(), &x);
        let mut y_fant = None;
        let mut label_fant = None;
        if let Some(reg) = &working.regression {
            let y = reg.predict(&row, false)?.mean[0];
            working.regression = Some(reg.dual_condition(&single(&x, y, Domain::Real)?)?);
            y_fant = Some(y);
        }
        if let Some(clf) = &working.classifier {
            let p = clf.predict_y(&row)?[0];
            let label = if p >= 0.5 { 1.0 } else { 0.0 };
            working.classifier = Some(clf.dual_condition(&single(&x, label, Domain::Binary)?)?);
            label_fant = Some(label);
        }
        batch.points.push(x);
        batch.fantasized_values.push(y_fant);
        batch.fantasized_labels.push(label_fant);
        batch.acq_values.push(m.value);
    }

    debug_assert_eq!(
        fingerprints,
        (
            working.regression.as_ref().map(|s| s.fingerprint()),
            working.classifier.as_ref().map(|s| s.fingerprint()),
        ),
        "conditioning must not touch Z or hyperparameters"
    );
    Ok(batch)
}
