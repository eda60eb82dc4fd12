//! Outer loops: batch Bayesian optimisation with refreshed hyperparameters and
//! inducing points, and streaming classification by dual conditioning.
//!
//! Inside one BO iteration `Z` and the hyperparameters are frozen and the
//! batch is built by conditioning alone. Between iterations both are
//! re-estimated and the duals are refit from scratch on all data.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionSpec, BoxBounds, Surrogates};
use crate::data::{mix_seed, ConstrainedProblem, Dataset, Domain, Grid, StreamBatches};
use crate::error::{Error, Result};
use crate::fantasy::{fantasize_batch, FantasyBatch};
use crate::kernels::{Kernel, KernelKind, KernelParams};
use crate::likelihoods::Likelihood;
use crate::optim::{self, NelderMeadOptions};
use crate::svgp::{DualState, FitOptions, InducingSet};

pub const LLOYD_ITERS: usize = 25;
pub const HYPER_MAX_EVALS: usize = 100;
const LOG_BOUND: f64 = 7.0;
const LOG_NOISE_FLOOR: f64 = -13.8;

pub enum Problem {
    SyntheticStochastic(ConstrainedProblem),
    StreamClassification(StreamBatches),
}

impl Problem {
    pub fn dim(&self) -> usize {
        match self {
            Problem::SyntheticStochastic(p) => p.dim(),
            Problem::StreamClassification(s) => s.batches()[0].dim(),
        }
    }
}

/// How models are (re)built: jitter start level and fit schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelOptions {
    pub jitter: f64,
    pub fit: FitOptions,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            jitter: crate::kernels::DEFAULT_JITTER,
            fit: FitOptions::default(),
        }
    }
}

fn fresh(kernel: Kernel, lik: Likelihood, z: DMatrix<f64>, opts: &ModelOptions) -> Result<DualState> {
    DualState::with_jitter(kernel, lik, InducingSet::new(z)?, opts.jitter)
}

fn theta_of(state: &DualState) -> Vec<f64> {
    let k = state.kernel();
    let mut t = vec![k.params.variance.ln()];
    t.extend(k.params.lengthscales.iter().map(|l| l.ln()));
    if let Some(nv) = state.likelihood().noise_variance() {
        t.push(nv.ln());
    }
    t
}

fn with_theta(state: &DualState, t: &[f64]) -> Result<(Kernel, Likelihood)> {
    let d = state.dim();
    let kernel = Kernel::new(
        state.kernel().kind,
        KernelParams::new(t[0].exp(), t[1..=d].iter().map(|v| v.exp()).collect())?,
    )?;
    let lik = match state.likelihood() {
        Likelihood::Gaussian { .. } => Likelihood::gaussian(t[d + 1].exp())?,
        l => *l,
    };
    Ok((kernel, lik))
}

/// Maximise the ELBO over log-domain kernel variance, lengthscales and (for a
/// Gaussian likelihood) noise variance with Nelder–Mead. Each evaluation
/// refits the duals from scratch on `data`. The returned state is fitted and
/// its ELBO is never below that of the incoming hyperparameters.
pub fn update_hyperparameters(
    state: &DualState,
    data: &Dataset,
    opts: &ModelOptions,
    max_evals: usize,
) -> Result<DualState> {
    if data.is_empty() {
        return Err(Error::input("hyperparameter update needs data"));
    }
    let z = state.inducing().points().clone();
    let fit_at = |k: Kernel, l: Likelihood| -> Result<(DualState, f64)> {
        let s = fresh(k, l, z.clone(), opts)?.fit(data, &opts.fit)?.state;
        let e = s.elbo(data)?;
        Ok((s, e))
    };
    let refit = |t: &[f64]| with_theta(state, t).and_then(|(k, l)| fit_at(k, l));
    let t0 = theta_of(state);
    let (base, base_elbo) = fit_at(state.kernel().clone(), *state.likelihood())?;
    if max_evals == 0 {
        return Ok(base);
    }
    let n = t0.len();
    let mut lower = vec![-LOG_BOUND; n];
    if state.likelihood().is_gaussian() {
        lower[n - 1] = LOG_NOISE_FLOOR;
    }
    let bounds = BoxBounds::new(lower, vec![LOG_BOUND; n])?;
    let res = optim::nelder_mead(
        |t| refit(t).map_or(f64::INFINITY, |(_, e)| -e),
        &t0,
        Some(&bounds),
        &NelderMeadOptions {
            max_evals,
            step: vec![0.5; n],
            f_tol: 1e-9,
            x_tol: 1e-4,
        },
    );
    if -res.value > base_elbo {
        if let Ok((s, e)) = refit(&res.x) {
            if e >= base_elbo {
                return Ok(s);
            }
        }
    }
    Ok(base)
}

/// Re-select `Z` as `m` k-means centroids of the inputs and refit from
/// scratch at the current hyperparameters.
pub fn update_inducing(
    state: &DualState,
    data: &Dataset,
    m: usize,
    opts: &ModelOptions,
    seed: u64,
) -> Result<DualState> {
    if data.is_empty() {
        return Err(Error::input("inducing update needs data"));
    }
    let distinct = optim::distinct_rows(data.x()).len();
    if m > distinct {
        log::warn!("requested {m} inducing points but only {distinct} distinct inputs; using {distinct}");
    }
    let z = optim::kmeans(data.x(), m, LLOYD_ITERS, seed);
    let z = dedup_rows(z);
    Ok(fresh(state.kernel().clone(), *state.likelihood(), z, opts)?
        .fit(data, &opts.fit)?
        .state)
}

fn dedup_rows(z: DMatrix<f64>) -> DMatrix<f64> {
    let keep = optim::distinct_rows(&z);
    if keep.len() == z.nrows() {
        z
    } else {
        z.select_rows(&keep)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionChoice {
    Ei,
    Success,
    Product,
}

impl AcquisitionChoice {
    fn spec(self, incumbent: f64) -> AcquisitionSpec {
        match self {
            AcquisitionChoice::Ei => AcquisitionSpec::ei(incumbent),
            AcquisitionChoice::Success => AcquisitionSpec::success(),
            AcquisitionChoice::Product => AcquisitionSpec::product(incumbent),
        }
    }
}

/// What the acquisition treats as the value to beat.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncumbentRule {
    /// Best observed objective among points labelled feasible.
    #[default]
    Observed,
    /// Best regression posterior mean among points labelled feasible.
    PosteriorMean,
}

/// Settings for [`run_bo`]. Models work on inputs rescaled to the unit cube
/// and on standardised objective values, so `lengthscales` are in unit-cube
/// units; a single value is broadcast over all dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct BoConfig {
    pub kernel: KernelKind,
    pub variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
    pub num_inducing: usize,
    pub model: ModelOptions,
    pub acquisition: AcquisitionChoice,
    pub incumbent: IncumbentRule,
    pub budget: usize,
    pub batch_size: usize,
    pub iterations: usize,
    /// Initial design size; `3 * dim` when absent.
    pub init_size: Option<usize>,
    pub hyper_max_evals: usize,
}

impl Default for BoConfig {
    fn default() -> Self {
        BoConfig {
            kernel: KernelKind::Matern52,
            variance: 1.0,
            lengthscales: vec![0.2],
            noise_variance: 0.1,
            num_inducing: 25,
            model: ModelOptions::default(),
            acquisition: AcquisitionChoice::Product,
            incumbent: IncumbentRule::Observed,
            budget: 4,
            batch_size: 5,
            iterations: 10,
            init_size: None,
            hyper_max_evals: HYPER_MAX_EVALS,
        }
    }
}

impl BoConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.num_inducing == 0 {
            return Err(Error::Config("need at least one inducing point".into()));
        }
        if self.budget == 0 {
            return Err(Error::Config("acquisition budget must be at least 1".into()));
        }
        if self.init_size.unwrap_or(3 * dim) < 2 {
            return Err(Error::Config("initial design needs at least 2 points".into()));
        }
        self.kernel_for(dim)?;
        Likelihood::gaussian(self.noise_variance).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    fn kernel_for(&self, dim: usize) -> Result<Kernel> {
        let ls = match self.lengthscales.len() {
            1 => vec![self.lengthscales[0]; dim],
            n if n == dim => self.lengthscales.clone(),
            n => {
                return Err(Error::Config(format!(
                    "{n} lengthscales given for a {dim}-dimensional problem"
                )))
            }
        };
        Kernel::new(self.kernel, KernelParams::new(self.variance, ls)?).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 0 is the initial design.
    pub iteration: usize,
    pub points: Vec<Vec<f64>>,
    /// Batch as proposed, in problem coordinates. Absent for the initial design.
    pub batch: Option<FantasyBatch>,
    pub observed_y: Vec<f64>,
    pub observed_success: Vec<f64>,
    /// Best observed objective among points observed as feasible so far.
    pub incumbent: Option<f64>,
    /// Best noiseless objective among truly feasible points evaluated so far.
    pub true_incumbent: Option<f64>,
    pub batch_best: f64,
    pub elbo_reg: Option<f64>,
    pub elbo_clf: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoHistory {
    pub problem: String,
    pub seed: u64,
    pub batch_size: usize,
    pub records: Vec<IterationRecord>,
    /// Set when a problem evaluation failed and the run stopped early.
    pub error: Option<String>,
}

impl BoHistory {
    pub fn final_incumbent(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.incumbent)
    }

    pub fn final_true_incumbent(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.true_incumbent)
    }

    /// `iter,incumbent,batch_best,wall_ms`; missing incumbents are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,incumbent,batch_best,wall_ms\n");
        for r in &self.records {
            let inc = r.incumbent.map(|v| format!("{v:?}")).unwrap_or_default();
            out.push_str(&format!("{},{inc},{:?},{:?}\n", r.iteration, r.batch_best, r.wall_ms));
        }
        out
    }
}

/// Everything observed so far, in problem coordinates.
struct Observed {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    success: Vec<f64>,
}

impl Observed {
    fn incumbent(&self) -> Option<f64> {
        self.y
            .iter()
            .zip(&self.success)
            .filter(|(_, s)| **s == 1.0)
            .map(|(y, _)| *y)
            .reduce(f64::max)
    }
}

struct Models {
    surrogates: Surrogates,
    y_mean: f64,
    y_sd: f64,
    elbo_reg: Option<f64>,
    elbo_clf: Option<f64>,
}

fn to_unit(bounds: &BoxBounds, x: &[f64]) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(j, v)| (v - bounds.lower[j]) / bounds.width(j))
        .collect()
}

fn from_unit(bounds: &BoxBounds, u: &[f64]) -> Vec<f64> {
    u.iter()
        .enumerate()
        .map(|(j, v)| bounds.lower[j] + v * bounds.width(j))
        .collect()
}

fn refresh(obs: &Observed, prev: Option<&Models>, cfg: &BoConfig, bounds: &BoxBounds, seed: u64) -> Result<Models> {
    let d = bounds.dim();
    let rows: Vec<Vec<f64>> = obs.x.iter().map(|x| to_unit(bounds, x)).collect();
    let n = obs.y.len() as f64;
    let y_mean = obs.y.iter().sum::<f64>() / n;
    let var = obs.y.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n;
    let y_sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    let spec = cfg.acquisition.spec(0.0);
    let kernel = cfg.kernel_for(d)?;

    let step = |lik: Likelihood, data: &Dataset, old: Option<&DualState>, tag: u64| -> Result<DualState> {
        let start = match old {
            Some(s) => s.clone(),
            None => fresh(kernel.clone(), lik, data.x().rows(0, 1).into_owned(), &cfg.model)?,
        };
        // early iterations have fewer points than inducing slots by design
        let m = cfg.num_inducing.min(optim::distinct_rows(data.x()).len());
        let moved = update_inducing(&start, data, m, &cfg.model, mix_seed(seed, tag))?;
        update_hyperparameters(&moved, data, &cfg.model, cfg.hyper_max_evals)
    };

    let mut models = Models {
        surrogates: Surrogates::default(),
        y_mean,
        y_sd,
        elbo_reg: None,
        elbo_clf: None,
    };
    if spec.needs_regression() {
        let ys = obs.y.iter().map(|y| (y - y_mean) / y_sd).collect();
        let data = Dataset::from_rows(&rows, ys, Domain::Real)?;
        let old = prev.and_then(|p| p.surrogates.regression.as_ref());
        let s = step(Likelihood::gaussian(cfg.noise_variance)?, &data, old, 1)?;
        models.elbo_reg = Some(s.elbo(&data)?);
        models.surrogates.regression = Some(s);
    }
    if spec.needs_classifier() {
        let data = Dataset::from_rows(&rows, obs.success.clone(), Domain::Binary)?;
        let old = prev.and_then(|p| p.surrogates.classifier.as_ref());
        let s = step(Likelihood::Bernoulli, &data, old, 2)?;
        models.elbo_clf = Some(s.elbo(&data)?);
        models.surrogates.classifier = Some(s);
    }
    Ok(models)
}

/// Incumbent on the standardised scale. Falls back to all points when none is
/// labelled feasible yet.
fn acquisition_incumbent(obs: &Observed, models: &Models, rule: IncumbentRule, bounds: &BoxBounds) -> Result<f64> {
    let any_feasible = obs.success.iter().any(|s| *s == 1.0);
    let keep = |i: usize| !any_feasible || obs.success[i] == 1.0;
    let raw = match (rule, &models.surrogates.regression) {
        (IncumbentRule::PosteriorMean, Some(reg)) => {
            let rows: Vec<Vec<f64>> = (0..obs.x.len())
                .filter(|&i| keep(i))
                .map(|i| to_unit(bounds, &obs.x[i]))
                .collect();
            let x = DMatrix::from_fn(rows.len(), bounds.dim(), |i, j| rows[i][j]);
            let best = reg.predict(&x, false)?.mean.max();
            return Ok(best);
        }
        _ => (0..obs.y.len())
            .filter(|&i| keep(i))
            .map(|i| obs.y[i])
            .fold(f64::NEG_INFINITY, f64::max),
    };
    Ok((raw - models.y_mean) / models.y_sd)
}

/// Run batch BO on a synthetic constrained problem. Deterministic in `seed`.
pub fn run_bo(problem: &Problem, cfg: &BoConfig, seed: u64) -> Result<BoHistory> {
    let p = match problem {
        Problem::SyntheticStochastic(p) => p,
        Problem::StreamClassification(_) => {
            return Err(Error::Config(
                "streaming problems are run with the stream command".into(),
            ))
        }
    };
    let d = p.dim();
    cfg.validate(d)?;
    let bounds = &p.bounds;
    let unit = BoxBounds::new(vec![0.0; d], vec![1.0; d])?;
    let mut history = BoHistory {
        problem: p.name.clone(),
        seed,
        batch_size: cfg.batch_size,
        records: Vec::with_capacity(cfg.iterations + 1),
        error: None,
    };
    let mut obs = Observed {
        x: vec![],
        y: vec![],
        success: vec![],
    };
    let mut true_best: Option<f64> = None;
    let record = |obs: &mut Observed,
                  true_best: &mut Option<f64>,
                  iteration: usize,
                  points: Vec<Vec<f64>>|
     -> Result<(Vec<f64>, Vec<f64>)> {
        let (mut ys, mut ss) = (vec![], vec![]);
        for (idx, x) in points.iter().enumerate() {
            let o = p.evaluate(x, mix_seed(iteration as u64, idx as u64))?;
            ys.push(o.y);
            ss.push(o.success);
        }
        for x in &points {
            if p.feasible(x) {
                let v = p.objective(x);
                *true_best = Some(true_best.map_or(v, |b| b.max(v)));
            }
        }
        obs.x.extend(points);
        obs.y.extend(&ys);
        obs.success.extend(&ss);
        Ok((ys, ss))
    };

    let t0 = Instant::now();
    let init = optim::sobol_points(cfg.init_size.unwrap_or(3 * d), bounds, mix_seed(seed, 0x1417));
    let (ys, ss) = record(&mut obs, &mut true_best, 0, init.clone())?;
    let mut models = refresh(&obs, None, cfg, bounds, mix_seed(seed, 0))?;
    history.records.push(IterationRecord {
        iteration: 0,
        points: init,
        batch: None,
        batch_best: ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        observed_y: ys,
        observed_success: ss,
        incumbent: obs.incumbent(),
        true_incumbent: true_best,
        elbo_reg: models.elbo_reg,
        elbo_clf: models.elbo_clf,
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
    });

    for it in 1..=cfg.iterations {
        let t0 = Instant::now();
        let spec = cfg
            .acquisition
            .spec(acquisition_incumbent(&obs, &models, cfg.incumbent, bounds)?);
        let mut batch = fantasize_batch(
            &models.surrogates,
            &spec,
            &unit,
            cfg.batch_size,
            cfg.budget,
            mix_seed(seed, it as u64),
        )?;
        for pt in batch.points.iter_mut() {
            *pt = from_unit(bounds, pt);
        }
        for v in batch.fantasized_values.iter_mut().flatten() {
            *v = models.y_mean + models.y_sd * *v;
        }
        let points = batch.points.clone();
        let (ys, ss) = match record(&mut obs, &mut true_best, it, points.clone()) {
            Ok(r) => r,
            Err(e) => {
                log::error!("evaluation failed at iteration {it}: {e}");
                history.error = Some(e.to_string());
                break;
            }
        };
        models = refresh(&obs, Some(&models), cfg, bounds, mix_seed(seed, it as u64))?;
        history.records.push(IterationRecord {
            iteration: it,
            points,
            batch: Some(batch),
            batch_best: ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            observed_y: ys,
            observed_success: ss,
            incumbent: obs.incumbent(),
            true_incumbent: true_best,
            elbo_reg: models.elbo_reg,
            elbo_clf: models.elbo_clf,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(history)
}

/// Settings for [`run_streaming`]. Hyperparameters stay at `kernel` and `Z`
/// comes from k-means on the first batch; both stay fixed for the whole stream.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamConfig {
    pub kernel: Kernel,
    pub likelihood: Likelihood,
    pub num_inducing: usize,
    pub model: ModelOptions,
    pub grid_size: usize,
    pub grid_lo: f64,
    pub grid_hi: f64,
}

impl StreamConfig {
    pub fn banana_default() -> Self {
        StreamConfig {
            kernel: Kernel::matern52(1.0, vec![1.0, 1.0]).expect("valid kernel"),
            likelihood: Likelihood::Bernoulli,
            num_inducing: 25,
            model: ModelOptions::default(),
            grid_size: 50,
            grid_lo: -2.8,
            grid_hi: 2.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub batch_sizes: Vec<usize>,
    pub num_inducing: usize,
    /// Mean absolute gap between each streamed grid and the offline grid.
    pub grid_gaps: Vec<f64>,
    pub final_grid_gap: Option<f64>,
    pub stream_accuracy: Option<f64>,
    pub offline_accuracy: Option<f64>,
    /// Offline minus streamed training accuracy, in percentage points.
    pub accuracy_gap_pp: Option<f64>,
    pub offline_converged: bool,
}

#[derive(Clone, Debug)]
pub struct StreamResult {
    pub states: Vec<DualState>,
    /// One grid per batch; empty unless the inputs are 2-d.
    pub grids: Vec<Grid>,
    pub offline: DualState,
    pub offline_grid: Option<Grid>,
    pub summary: StreamSummary,
}

fn accuracy(state: &DualState, data: &Dataset) -> Result<f64> {
    let p = state.predict_y(data.x())?;
    let hits = p
        .iter()
        .zip(data.y())
        .filter(|(p, y)| (**p >= 0.5) == (**y == 1.0))
        .count();
    Ok(hits as f64 / data.len() as f64)
}

/// Fit the first batch from scratch, then absorb each later batch with a
/// single dual-conditioning update. An offline model with the same `Z` and
/// hyperparameters is fitted on all data for comparison.
pub fn run_streaming(stream: &StreamBatches, cfg: &StreamConfig, seed: u64) -> Result<StreamResult> {
    if stream.is_empty() {
        return Err(Error::input("stream has no batches"));
    }
    let first = &stream.batches()[0];
    if first.is_empty() {
        return Err(Error::input("first stream batch is empty"));
    }
    let z = dedup_rows(optim::kmeans(
        first.x(),
        cfg.num_inducing,
        LLOYD_ITERS,
        mix_seed(seed, 0x5eed),
    ));
    let prior = fresh(cfg.kernel.clone(), cfg.likelihood, z, &cfg.model)?;

    let grid_pts = (first.dim() == 2).then(|| Grid::points(cfg.grid_lo, cfg.grid_hi, cfg.grid_size));
    let grid_of = |s: &DualState| -> Result<Option<Grid>> {
        grid_pts
            .as_ref()
            .map(|(axis, pts)| Ok(Grid::new(axis.clone(), s.predict_y(pts)?)))
            .transpose()
    };

    let mut states = Vec::with_capacity(stream.len());
    let mut grids = Vec::new();
    let mut state = prior.fit(first, &cfg.model.fit)?.state;
    for (b, batch) in stream.batches().iter().enumerate() {
        if b > 0 && !batch.is_empty() {
            state = state.dual_condition(batch)?;
        }
        if let Some(g) = grid_of(&state)? {
            grids.push(g);
        }
        states.push(state.clone());
    }

    let all = stream.concatenated()?;
    let offline_fit = prior.fit(&all, &cfg.model.fit)?;
    let offline = offline_fit.state;
    let offline_grid = grid_of(&offline)?;
    let grid_gaps: Vec<f64> = offline_grid
        .as_ref()
        .map(|og| grids.iter().map(|g| g.mean_abs_gap(og)).collect())
        .unwrap_or_default();
    let (stream_acc, offline_acc) = if all.domain() == Domain::Binary {
        (Some(accuracy(&state, &all)?), Some(accuracy(&offline, &all)?))
    } else {
        (None, None)
    };
    let summary = StreamSummary {
        batch_sizes: stream.batches().iter().map(Dataset::len).collect(),
        num_inducing: state.num_inducing(),
        final_grid_gap: grid_gaps.last().copied(),
        grid_gaps,
        stream_accuracy: stream_acc,
        offline_accuracy: offline_acc,
        accuracy_gap_pp: stream_acc.zip(offline_acc).map(|(s, o)| 100.0 * (o - s)),
        offline_converged: offline_fit.converged,
    };
    Ok(StreamResult {
        states,
        grids,
        offline,
        offline_grid,
        summary,
    })
}
