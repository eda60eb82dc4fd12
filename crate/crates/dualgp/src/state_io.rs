//! Versioned JSON encoding of a [`DualState`].
//!
//! Matrices are stored row-major as base64 of little-endian `f64` bytes with
//! explicit shapes, so a round trip is bit-identical.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::likelihoods::Likelihood;
use crate::svgp::{DualState, InducingSet};

pub const STATE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: String,
}

impl EncodedMatrix {
    pub fn encode(m: &DMatrix<f64>) -> Self {
        let mut bytes = Vec::with_capacity(m.len() * 8);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                bytes.extend_from_slice(&m[(i, j)].to_le_bytes());
            }
        }
        EncodedMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<DMatrix<f64>> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::input(format!("bad base64 matrix payload: {e}")))?;
        if bytes.len() != self.rows * self.cols * 8 {
            return Err(Error::input(format!(
                "matrix payload holds {} bytes, shape {}x{} needs {}",
                bytes.len(),
                self.rows,
                self.cols,
                self.rows * self.cols * 8
            )));
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &vals))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDocument {
    pub version: u32,
    pub kernel: Kernel,
    pub likelihood: Likelihood,
    pub jitter: f64,
    #[serde(rename = "Z")]
    pub z: EncodedMatrix,
    pub lambda: EncodedMatrix,
    #[serde(rename = "Lambda")]
    pub big_lambda: EncodedMatrix,
}

impl StateDocument {
    pub fn from_state(s: &DualState) -> Self {
        let lam = DMatrix::from_column_slice(s.num_inducing(), 1, s.lambda().as_slice());
        StateDocument {
            version: STATE_VERSION,
            kernel: s.kernel().clone(),
            likelihood: *s.likelihood(),
            jitter: s.jitter(),
            z: EncodedMatrix::encode(s.inducing().points()),
            lambda: EncodedMatrix::encode(&lam),
            big_lambda: EncodedMatrix::encode(s.big_lambda()),
        }
    }

    pub fn into_state(self) -> Result<DualState> {
        if self.version != STATE_VERSION {
            return Err(Error::input(format!(
                "unsupported state version {} (expected {STATE_VERSION})",
                self.version
            )));
        }
        let lam = self.lambda.decode()?;
        if lam.ncols() != 1 {
            return Err(Error::input("lambda must be a column"));
        }
        DualState::from_parts(
            self.kernel,
            self.likelihood,
            InducingSet::new(self.z.decode()?)?,
            self.jitter,
            DVector::from_column_slice(lam.as_slice()),
            self.big_lambda.decode()?,
        )
    }
}

pub fn to_json(s: &DualState) -> Result<String> {
    Ok(serde_json::to_string_pretty(&StateDocument::from_state(s))?)
}

pub fn from_json(text: &str) -> Result<DualState> {
    serde_json::from_str::<StateDocument>(text)?.into_state()
}

pub fn save_state(s: &DualState, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_json(s)?)?;
    Ok(())
}

pub fn load_state(path: impl AsRef<Path>) -> Result<DualState> {
    from_json(&std::fs::read_to_string(path)?)
}
