//! Datasets, synthetic generators and file codecs.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::acquisition::BoxBounds;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Real,
    Binary,
}

/// Inputs as rows of `x`, one observation per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: Vec<f64>,
    domain: Domain,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, domain: Domain) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::input(format!(
                "{} inputs but {} observations",
                x.nrows(),
                y.len()
            )));
        }
        if domain == Domain::Binary {
            if let Some(v) = y.iter().find(|v| **v != 0.0 && **v != 1.0) {
                return Err(Error::input(format!("binary labels must be 0 or 1, got {v}")));
            }
        }
        Ok(Dataset { x, y, domain })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>, domain: Domain) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::input("ragged input rows"));
        }
        let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(x, y, domain)
    }

    pub fn empty(dim: usize, domain: Domain) -> Self {
        Dataset {
            x: DMatrix::zeros(0, dim),
            y: Vec::new(),
            domain,
        }
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Rows `range` as a new dataset.
    pub fn slice(&self, start: usize, len: usize) -> Dataset {
        Dataset {
            x: self.x.rows(start, len).into_owned(),
            y: self.y[start..start + len].to_vec(),
            domain: self.domain,
        }
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.is_empty() {
            return Ok(other.clone());
        }
        if other.is_empty() {
            return Ok(self.clone());
        }
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        if self.domain != other.domain {
            return Err(Error::input("cannot concatenate datasets of different domains"));
        }
        let n = self.len();
        let x = DMatrix::from_fn(n + other.len(), self.dim(), |i, j| {
            if i < n {
                self.x[(i, j)]
            } else {
                other.x[(i - n, j)]
            }
        });
        let mut y = self.y.clone();
        y.extend_from_slice(&other.y);
        Ok(Dataset {
            x,
            y,
            domain: self.domain,
        })
    }

    /// Same inputs, different observations.
    pub fn with_targets(&self, y: Vec<f64>, domain: Domain) -> Result<Dataset> {
        Dataset::new(self.x.clone(), y, domain)
    }
}

/// Ordered batches sharing domain and dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamBatches {
    batches: Vec<Dataset>,
}

impl StreamBatches {
    pub fn new(batches: Vec<Dataset>) -> Result<Self> {
        if let Some(first) = batches.first() {
            if batches
                .iter()
                .any(|b| b.dim() != first.dim() || b.domain() != first.domain())
            {
                return Err(Error::input("stream batches must share domain and dimension"));
            }
        }
        Ok(StreamBatches { batches })
    }

    pub fn batches(&self) -> &[Dataset] {
        &self.batches
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn concatenated(&self) -> Result<Dataset> {
        let first = self.batches.first().ok_or_else(|| Error::input("empty stream"))?;
        self.batches[1..].iter().try_fold(first.clone(), |acc, b| acc.concat(b))
    }
}

/// Contiguous, order-preserving split; the last batch may be short.
pub fn partition_stream(data: &Dataset, batch_size: usize) -> Result<StreamBatches> {
    if batch_size == 0 {
        return Err(Error::input("batch size must be at least 1"));
    }
    let batches = (0..data.len())
        .step_by(batch_size)
        .map(|start| data.slice(start, batch_size.min(data.len() - start)))
        .collect();
    StreamBatches::new(batches)
}

/// Two interleaved crescents in 2-d.
///
/// Class `c` lies on the upper half of a radius-2 circle centred at
/// `(0, -0.5)` for `c = 0` and `(0, 0.5)` for `c = 1`, with isotropic noise of
/// standard deviation 0.35. The pooled inputs are standardised to zero mean and
/// unit variance per coordinate, then dealt round-robin into batches.
pub fn generate_banana(n_per_batch: usize, n_batches: usize, seed: u64) -> Result<StreamBatches> {
    if n_per_batch < 10 {
        return Err(Error::input("banana batches need at least 10 points"));
    }
    if n_batches == 0 {
        return Err(Error::input("need at least one batch"));
    }
    let n = n_per_batch * n_batches;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.35).expect("valid sd");
    let mut pts = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..2u8);
        let angle = rng.random_range(0.0..PI);
        let cy = if c == 0 { -0.5 } else { 0.5 };
        pts.push([
            2.0 * angle.cos() + noise.sample(&mut rng),
            cy + 2.0 * angle.sin() + noise.sample(&mut rng),
        ]);
        labels.push(f64::from(c));
    }
    for j in 0..2 {
        let mean = pts.iter().map(|p| p[j]).sum::<f64>() / n as f64;
        let var = pts.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        pts.iter_mut().for_each(|p| p[j] = (p[j] - mean) / sd);
    }
    let batches = (0..n_batches)
        .map(|b| {
            let idx: Vec<usize> = (b..n).step_by(n_batches).collect();
            let x = DMatrix::from_fn(idx.len(), 2, |i, j| pts[idx[i]][j]);
            Dataset::new(x, idx.iter().map(|i| labels[*i]).collect(), Domain::Binary)
        })
        .collect::<Result<Vec<_>>>()?;
    StreamBatches::new(batches)
}

/// Standard Branin function on `[-5, 10] × [0, 15]`.
pub fn branin(x: &[f64]) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

/// Noisy objective with a noisy binary feasibility label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedProblem {
    pub name: String,
    pub bounds: BoxBounds,
    pub noise_sd: f64,
    pub flip_prob: f64,
    pub disk_center: Vec<f64>,
    pub disk_radius: f64,
    pub seed: u64,
    /// Best noiseless feasible point found on a dense grid.
    pub best_feasible_x: Vec<f64>,
    pub best_feasible_value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub y: f64,
    pub success: f64,
}

impl ConstrainedProblem {
    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    /// Objective without noise.
    pub fn objective(&self, x: &[f64]) -> f64 {
        -branin(x)
    }

    pub fn feasible(&self, x: &[f64]) -> bool {
        let d2: f64 = x.iter().zip(&self.disk_center).map(|(a, c)| (a - c).powi(2)).sum();
        d2 <= self.disk_radius * self.disk_radius
    }

    /// Noisy evaluation; deterministic in `(x, eval_seed)`.
    pub fn evaluate(&self, x: &[f64], eval_seed: u64) -> Result<Observation> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, eval_seed));
        let noise: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut rng);
        let y = self.objective(x) + self.noise_sd * noise;
        let mut success = self.feasible(x);
        if rng.random::<f64>() < self.flip_prob {
            success = !success;
        }
        if !y.is_finite() {
            return Err(Error::numerical(format!("objective not finite at {x:?}")));
        }
        Ok(Observation {
            y,
            success: f64::from(u8::from(success)),
        })
    }
}

/// Build a named synthetic constrained problem.
pub fn generate_constrained_problem(name: &str, seed: u64) -> Result<ConstrainedProblem> {
    generate_constrained_problem_with(name, seed, 5.0, 0.05)
}

pub fn generate_constrained_problem_with(
    name: &str,
    seed: u64,
    noise_sd: f64,
    flip_prob: f64,
) -> Result<ConstrainedProblem> {
    match name {
        "noisy-branin-disk" => {
            if !(noise_sd >= 0.0) || !(0.0..=1.0).contains(&flip_prob) {
                return Err(Error::input("noise_sd must be >= 0 and flip_prob in [0, 1]"));
            }
            let bounds = BoxBounds::new(vec![-5.0, 0.0], vec![10.0, 15.0])?;
            let mut p = ConstrainedProblem {
                name: name.to_string(),
                bounds,
                noise_sd,
                flip_prob,
                disk_center: vec![3.0, 7.5],
                disk_radius: 4.0,
                seed,
                best_feasible_x: vec![],
                best_feasible_value: f64::NEG_INFINITY,
            };
            let steps = 600;
            for i in 0..=steps {
                for j in 0..=steps {
                    let x = [-5.0 + 15.0 * i as f64 / steps as f64, 15.0 * j as f64 / steps as f64];
                    if p.feasible(&x) && p.objective(&x) > p.best_feasible_value {
                        p.best_feasible_value = p.objective(&x);
                        p.best_feasible_x = x.to_vec();
                    }
                }
            }
            Ok(p)
        }
        other => Err(Error::input(format!("unknown problem `{other}`"))),
    }
}

/// SplitMix64-style combination of two seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Read `x1,...,xd,y` CSV. The domain is binary when every label is 0 or 1.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path.as_ref())
        .map_err(csv_err)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let width = headers.len();
    if width < 2 || headers.get(width - 1) != Some("y") {
        return Err(Error::Parse {
            line: 1,
            message: "header must be x1,...,xd,y".into(),
        });
    }
    let d = width - 1;
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let vals = rec
            .iter()
            .map(|c| {
                c.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("non-numeric cell `{c}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        y.push(vals[d]);
        rows.push(vals[..d].to_vec());
    }
    let domain = if !y.is_empty() && y.iter().all(|v| *v == 0.0 || *v == 1.0) {
        Domain::Binary
    } else {
        Domain::Real
    };
    let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    Dataset::new(x, y, domain)
}

/// Write `x1,...,xd,y` CSV with shortest round-trip float formatting.
pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
    let mut header: Vec<String> = (1..=data.dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.x().row(i).iter().map(|v| format!("{v:?}")).collect();
        row.push(format!("{:?}", data.y()[i]));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Values on a regular 2-d grid, row-major with `ys` as the slow axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub shape: [usize; 2],
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Grid {
    /// `n × n` points spanning `[lo, hi]²`, in the same order as `probs`.
    pub fn points(lo: f64, hi: f64, n: usize) -> (Vec<f64>, DMatrix<f64>) {
        let axis: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64)
            .collect();
        let pts = DMatrix::from_fn(n * n, 2, |k, j| if j == 0 { axis[k % n] } else { axis[k / n] });
        (axis, pts)
    }

    pub fn new(axis: Vec<f64>, probs: Vec<f64>) -> Self {
        let n = axis.len();
        Grid {
            shape: [n, n],
            xs: axis.clone(),
            ys: axis,
            probs,
        }
    }

    pub fn mean_abs_gap(&self, other: &Grid) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.probs.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn banana_shape_and_balance() {
        let s = generate_banana(100, 4, 0).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.batches().iter().all(|b| b.len() == 100));
        let all = s.concatenated().unwrap();
        assert_eq!(all.len(), 400);
        let frac = all.y().iter().sum::<f64>() / 400.0;
        assert!((0.4..=0.6).contains(&frac), "class balance {frac}");
        for j in 0..2 {
            let col = all.x().column(j);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 400.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn banana_is_deterministic() {
        assert_eq!(generate_banana(20, 3, 9).unwrap(), generate_banana(20, 3, 9).unwrap());
        assert_ne!(generate_banana(20, 3, 9).unwrap(), generate_banana(20, 3, 10).unwrap());
        assert!(generate_banana(5, 3, 0).is_err());
    }

    #[test]
    fn branin_optimum() {
        assert!((-branin(&[PI, 2.275]) - (-0.397_887_357_729_738)).abs() < 1e-9);
    }

    #[test]
    fn constrained_problem_properties() {
        let p = generate_constrained_problem("noisy-branin-disk", 3).unwrap();
        assert!(generate_constrained_problem("lunar", 3).is_err());
        let centre = [3.0, 7.5];
        let a = p.evaluate(&centre, 17).unwrap();
        assert_eq!(a, p.evaluate(&centre, 17).unwrap());
        let n = 20_000;
        let hits: f64 = (0..n).map(|s| p.evaluate(&centre, s).unwrap().success).sum();
        let rate = hits / n as f64;
        assert!((rate - 0.95).abs() < 0.01, "success rate {rate}");
        assert!(p.feasible(&p.best_feasible_x));
        assert!(p.best_feasible_value < -0.397_887);
    }

    #[test]
    fn partition_sizes() {
        let d = Dataset::from_rows(
            &(0..5).map(|i| vec![i as f64]).collect::<Vec<_>>(),
            (0..5).map(f64::from).collect(),
            Domain::Real,
        )
        .unwrap();
        let s = partition_stream(&d, 2).unwrap();
        let sizes: Vec<usize> = s.batches().iter().map(Dataset::len).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        assert_eq!(s.concatenated().unwrap(), d);
        assert!(partition_stream(&d, 0).is_err());
        let big = generate_banana(100, 4, 1).unwrap().concatenated().unwrap();
        let s = partition_stream(&big, 100).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.batches().iter().all(|b| b.len() == 100));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_banana(10, 2, 5).unwrap().concatenated().unwrap();
        let path = dir.path().join("b.csv");
        save_csv(&data, &path).unwrap();
        assert_eq!(load_csv(&path).unwrap(), data);

        let empty = dir.path().join("e.csv");
        std::fs::write(&empty, "x1,x2,y\n").unwrap();
        let e = load_csv(&empty).unwrap();
        assert!(e.is_empty());
        assert_eq!(e.dim(), 2);

        let bad = dir.path().join("bad.csv");
        let mut f = std::fs::File::create(&bad).unwrap();
        writeln!(f, "x1,y").unwrap();
        for i in 0..5 {
            writeln!(f, "{i},1").unwrap();
        }
        writeln!(f, "oops,1").unwrap();
        drop(f);
        match load_csv(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected parse error, got {other:?}"),
        }

        let ragged = dir.path().join("r.csv");
        std::fs::write(&ragged, "x1,y\n1,2\n1,2,3\n").unwrap();
        assert!(matches!(load_csv(&ragged), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn binary_labels_validated() {
        let x = DMatrix::zeros(2, 1);
        assert!(Dataset::new(x.clone(), vec![1.0, -1.0], Domain::Binary).is_err());
        assert!(Dataset::new(x, vec![1.0], Domain::Real).is_err());
    }

    #[test]
    fn grid_layout() {
        let (axis, pts) = Grid::points(-1.0, 1.0, 3);
        assert_eq!(axis, vec![-1.0, 0.0, 1.0]);
        assert_eq!(pts.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, -1.0]);
        assert_eq!(pts.row(3).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0]);
    }
}
