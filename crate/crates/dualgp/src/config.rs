//! Experiment configuration: one JSON file, parsed strictly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bo::{AcquisitionChoice, BoConfig, IncumbentRule, ModelOptions, StreamConfig};
use crate::data::{self, Dataset, StreamBatches};
use crate::error::{Error, Result};
use crate::kernels::{Kernel, KernelKind, KernelParams, DEFAULT_JITTER};
use crate::likelihoods::Likelihood;
use crate::svgp::FitOptions;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "DUALGP_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kernel: KernelKind,
    pub variance: f64,
    /// One value per input dimension, or a single value for all.
    pub lengthscales: Vec<f64>,
    pub likelihood: Likelihood,
    pub m: usize,
    pub jitter: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kernel: KernelKind::Matern52,
            variance: 1.0,
            lengthscales: vec![1.0],
            likelihood: Likelihood::Bernoulli,
            m: 25,
            jitter: DEFAULT_JITTER,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub max_iters: usize,
    pub rho: f64,
    pub tol: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        let f = FitOptions::default();
        FitSection {
            max_iters: f.max_iters,
            rho: f.rho,
            tol: f.tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionSection {
    pub kind: AcquisitionChoice,
    pub budget: usize,
    pub incumbent: IncumbentRule,
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        AcquisitionSection {
            kind: AcquisitionChoice::Product,
            budget: 4,
            incumbent: IncumbentRule::Observed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoSection {
    pub batch_size: usize,
    pub iterations: usize,
    pub init_size: Option<usize>,
    pub hyper_max_evals: usize,
    /// Starting noise variance of the regression surrogate on standardised
    /// objective values.
    pub noise_variance: f64,
    /// Starting lengthscales in unit-cube units.
    pub lengthscales: Vec<f64>,
}

impl Default for BoSection {
    fn default() -> Self {
        let b = BoConfig::default();
        BoSection {
            batch_size: b.batch_size,
            iterations: b.iterations,
            init_size: b.init_size,
            hyper_max_evals: b.hyper_max_evals,
            noise_variance: b.noise_variance,
            lengthscales: b.lengthscales,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ProblemSection {
    #[serde(rename = "banana")]
    Banana {
        #[serde(default = "default_per_batch")]
        n_per_batch: usize,
        #[serde(default = "default_batches")]
        n_batches: usize,
        /// Generator seed; the run seed when absent.
        #[serde(default)]
        data_seed: Option<u64>,
    },
    #[serde(rename = "noisy-branin-disk")]
    NoisyBraninDisk {
        #[serde(default = "default_noise_sd")]
        noise_sd: f64,
        #[serde(default = "default_flip")]
        flip_prob: f64,
    },
    #[serde(rename = "csv")]
    Csv {
        path: PathBuf,
        /// Stream batch size; the whole file is one batch when absent.
        #[serde(default)]
        batch_size: Option<usize>,
    },
}

fn default_per_batch() -> usize {
    100
}
fn default_batches() -> usize {
    4
}
fn default_noise_sd() -> f64 {
    5.0
}
fn default_flip() -> f64 {
    0.05
}

impl Default for ProblemSection {
    fn default() -> Self {
        ProblemSection::Banana {
            n_per_batch: default_per_batch(),
            n_batches: default_batches(),
            data_seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub n_new: Vec<usize>,
    pub m: usize,
    pub reps: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            n_new: vec![1000, 2000, 4000],
            m: 50,
            reps: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub fit: FitSection,
    pub acquisition: AcquisitionSection,
    pub bo: BoSection,
    pub problem: ProblemSection,
    pub bench: BenchSection,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelSection::default(),
            fit: FitSection::default(),
            acquisition: AcquisitionSection::default(),
            bo: BoSection::default(),
            problem: ProblemSection::default(),
            bench: BenchSection::default(),
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.m == 0 {
            return Err(config_err("model.m must be at least 1"));
        }
        if m.lengthscales.is_empty() {
            return Err(config_err("model.lengthscales must not be empty"));
        }
        if !(m.jitter > 0.0) {
            return Err(config_err("model.jitter must be positive"));
        }
        KernelParams::new(m.variance, m.lengthscales.clone()).map_err(config_err)?;
        m.likelihood.validate().map_err(config_err)?;
        if !(self.fit.rho > 0.0 && self.fit.rho <= 1.0) {
            return Err(config_err("fit.rho must lie in (0, 1]"));
        }
        if self.fit.max_iters == 0 || !(self.fit.tol >= 0.0) {
            return Err(config_err("fit.max_iters must be >= 1 and fit.tol >= 0"));
        }
        if self.acquisition.budget == 0 {
            return Err(config_err("acquisition.budget must be at least 1"));
        }
        if self.bo.batch_size == 0 {
            return Err(config_err("bo.batch_size must be at least 1"));
        }
        if self.bench.n_new.is_empty() || self.bench.n_new.contains(&0) || self.bench.m == 0 || self.bench.reps == 0 {
            return Err(config_err("bench needs nonempty positive n_new, m >= 1 and reps >= 1"));
        }
        match &self.problem {
            ProblemSection::Banana {
                n_per_batch, n_batches, ..
            } => {
                if *n_per_batch < 10 || *n_batches == 0 {
                    return Err(config_err("banana needs n_per_batch >= 10 and n_batches >= 1"));
                }
            }
            ProblemSection::NoisyBraninDisk { noise_sd, flip_prob } => {
                if !(*noise_sd >= 0.0) || !(0.0..=1.0).contains(flip_prob) {
                    return Err(config_err("noise_sd must be >= 0 and flip_prob in [0, 1]"));
                }
            }
            ProblemSection::Csv { batch_size, .. } => {
                if *batch_size == Some(0) {
                    return Err(config_err("csv batch_size must be at least 1"));
                }
            }
        }
        Ok(())
    }

    /// Apply `--out`, then the environment override, both taking precedence
    /// over the file.
    pub fn resolve_output_dir(&mut self, cli_out: Option<PathBuf>) {
        if let Some(p) = cli_out {
            self.output_dir = p;
        } else if let Ok(p) = std::env::var(OUTPUT_DIR_ENV) {
            if !p.is_empty() {
                self.output_dir = PathBuf::from(p);
            }
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_iters: self.fit.max_iters,
            rho: self.fit.rho,
            tol: self.fit.tol,
            trace_elbo: false,
        }
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions {
            jitter: self.model.jitter,
            fit: self.fit_options(),
        }
    }

    /// Kernel for `dim` inputs, broadcasting a single lengthscale.
    pub fn kernel(&self, dim: usize) -> Result<Kernel> {
        let ls = &self.model.lengthscales;
        let ls = match ls.len() {
            1 => vec![ls[0]; dim],
            n if n == dim => ls.clone(),
            n => {
                return Err(config_err(format!(
                    "model.lengthscales has {n} entries for {dim}-dimensional inputs"
                )))
            }
        };
        Kernel::new(self.model.kernel, KernelParams::new(self.model.variance, ls)?).map_err(config_err)
    }

    /// The dataset as a stream of batches (a single batch for `csv` without a
    /// batch size). Constrained problems have no dataset.
    pub fn stream(&self) -> Result<StreamBatches> {
        match &self.problem {
            ProblemSection::Banana {
                n_per_batch,
                n_batches,
                data_seed,
            } => data::generate_banana(*n_per_batch, *n_batches, data_seed.unwrap_or(self.seed)),
            ProblemSection::Csv { path, batch_size } => {
                let d = data::load_csv(path)?;
                let size = batch_size.unwrap_or(d.len().max(1));
                data::partition_stream(&d, size)
            }
            ProblemSection::NoisyBraninDisk { .. } => Err(config_err(
                "problem noisy-branin-disk has no dataset; use it with the bo command",
            )),
        }
    }

    pub fn dataset(&self) -> Result<Dataset> {
        self.stream()?.concatenated()
    }

    pub fn stream_config(&self, dim: usize) -> Result<StreamConfig> {
        Ok(StreamConfig {
            kernel: self.kernel(dim)?,
            likelihood: self.model.likelihood,
            num_inducing: self.model.m,
            model: self.model_options(),
            ..StreamConfig::banana_default()
        })
    }

    pub fn bo_config(&self) -> BoConfig {
        BoConfig {
            kernel: self.model.kernel,
            variance: self.model.variance,
            lengthscales: self.bo.lengthscales.clone(),
            noise_variance: self.bo.noise_variance,
            num_inducing: self.model.m,
            model: self.model_options(),
            acquisition: self.acquisition.kind,
            incumbent: self.acquisition.incumbent,
            budget: self.acquisition.budget,
            batch_size: self.bo.batch_size,
            iterations: self.bo.iterations,
            init_size: self.bo.init_size,
            hyper_max_evals: self.bo.hyper_max_evals,
        }
    }

    pub fn constrained_problem(&self) -> Result<data::ConstrainedProblem> {
        match &self.problem {
            ProblemSection::NoisyBraninDisk { noise_sd, flip_prob } => {
                data::generate_constrained_problem_with("noisy-branin-disk", self.seed, *noise_sd, *flip_prob)
            }
            _ => Err(config_err("the bo command needs problem kind noisy-branin-disk")),
        }
    }
}
