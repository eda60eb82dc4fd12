//! The four experiment commands. Each writes its artifacts to
//! `output_dir` and returns an error whose [`exit_code`] the binary uses.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::BoxBounds;
use crate::bo::{run_bo, run_streaming, Problem, LLOYD_ITERS};
use crate::config::ExperimentConfig;
use crate::data::{mix_seed, Dataset, Domain};
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::likelihoods::Likelihood;
use crate::optim;
use crate::state_io;
use crate::svgp::{DualState, InducingSet};

/// Process exit status for a command result: 0 ok, 2 configuration,
/// 3 numerical, 1 anything else.
pub fn exit_code<T>(r: &Result<T>) -> i32 {
    match r {
        Ok(_) => 0,
        Err(Error::Config(_)) => 2,
        Err(Error::Numerical { .. }) => 3,
        Err(_) => 1,
    }
}

fn prepare(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn inducing_from(data: &Dataset, m: usize, seed: u64) -> Result<InducingSet> {
    let z = optim::kmeans(data.x(), m, LLOYD_ITERS, mix_seed(seed, 0x5eed));
    let keep = optim::distinct_rows(&z);
    InducingSet::new(z.select_rows(&keep))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub n: usize,
    pub num_inducing: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_elbo: f64,
    pub training_accuracy: Option<f64>,
}

/// Fit a model on the configured dataset; writes `model.json`,
/// `elbo_trace.csv` and `fit_summary.json`.
pub fn cmd_fit(cfg: &ExperimentConfig) -> Result<FitReport> {
    let data = cfg.dataset()?;
    if data.is_empty() {
        return Err(Error::input("dataset is empty"));
    }
    let likelihood = cfg.model.likelihood;
    if !likelihood.is_gaussian() && data.domain() != Domain::Binary {
        return Err(Error::Config("bernoulli likelihood needs 0/1 targets".into()));
    }
    let z = inducing_from(&data, cfg.model.m, cfg.seed)?;
    let prior = DualState::with_jitter(cfg.kernel(data.dim())?, likelihood, z, cfg.model.jitter)?;
    let opts = crate::svgp::FitOptions {
        trace_elbo: true,
        ..cfg.fit_options()
    };
    let out = prior.fit(&data, &opts)?;
    let final_elbo = out.state.elbo(&data)?;
    if !final_elbo.is_finite() {
        return Err(Error::numerical(format!("final ELBO is {final_elbo}")));
    }
    let training_accuracy = if data.domain() == Domain::Binary && !likelihood.is_gaussian() {
        let p = out.state.predict_y(data.x())?;
        let hits = p
            .iter()
            .zip(data.y())
            .filter(|(p, y)| (**p >= 0.5) == (**y == 1.0))
            .count();
        Some(hits as f64 / data.len() as f64)
    } else {
        None
    };

    let dir = &cfg.output_dir;
    prepare(dir)?;
    state_io::save_state(&out.state, dir.join("model.json"))?;
    let mut trace = String::from("iter,elbo\n");
    for (i, e) in out.elbo_trace.iter().enumerate() {
        trace.push_str(&format!("{},{e:?}\n", i + 1));
    }
    fs::write(dir.join("elbo_trace.csv"), trace)?;
    let report = FitReport {
        n: data.len(),
        num_inducing: out.state.num_inducing(),
        iterations: out.iterations,
        converged: out.converged,
        final_elbo,
        training_accuracy,
    };
    write_json(dir.join("fit_summary.json"), &report)?;
    Ok(report)
}

/// Streaming run; writes `batch_<b>_model.json`, `batch_<b>_grid.json`,
/// `offline_model.json`, `offline_grid.json` and `summary.json`.
pub fn cmd_stream(cfg: &ExperimentConfig) -> Result<crate::bo::StreamSummary> {
    let stream = cfg.stream()?;
    let dim = stream.batches()[0].dim();
    let r = run_streaming(&stream, &cfg.stream_config(dim)?, cfg.seed)?;
    let dir = &cfg.output_dir;
    prepare(dir)?;
    for (b, s) in r.states.iter().enumerate() {
        state_io::save_state(s, dir.join(format!("batch_{}_model.json", b + 1)))?;
    }
    for (b, g) in r.grids.iter().enumerate() {
        write_json(dir.join(format!("batch_{}_grid.json", b + 1)), g)?;
    }
    state_io::save_state(&r.offline, dir.join("offline_model.json"))?;
    if let Some(g) = &r.offline_grid {
        write_json(dir.join("offline_grid.json"), g)?;
    }
    write_json(dir.join("summary.json"), &r.summary)?;
    Ok(r.summary)
}

/// BO run; writes `history.json` and `history.csv`.
pub fn cmd_bo(cfg: &ExperimentConfig) -> Result<crate::bo::BoHistory> {
    let problem = Problem::SyntheticStochastic(cfg.constrained_problem()?);
    let history = run_bo(&problem, &cfg.bo_config(), cfg.seed)?;
    let dir = &cfg.output_dir;
    prepare(dir)?;
    write_json(dir.join("history.json"), &history)?;
    fs::write(dir.join("history.csv"), history.to_csv())?;
    if let Some(e) = &history.error {
        return Err(Error::numerical(format!("run stopped early: {e}")));
    }
    Ok(history)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSeries {
    pub likelihood: String,
    pub n_new: Vec<usize>,
    pub median_ms: Vec<f64>,
    /// Median time at the largest `n_new` over that at the smallest.
    pub ratio: f64,
    /// Least-squares slope of log time against log `n_new`.
    pub loglog_slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub m: usize,
    pub reps: usize,
    pub series: Vec<BenchSeries>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn loglog_slope(n: &[usize], t: &[f64]) -> f64 {
    let xs: Vec<f64> = n.iter().map(|v| (*v as f64).ln()).collect();
    let ys: Vec<f64> = t.iter().map(|v| v.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        f64::NAN
    }
}

fn bench_data(n: usize, lik: &Likelihood, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(0.0f64..1.0));
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let f = (6.0 * x[(i, 0)]).sin() + (4.0 * x[(i, 1)]).cos();
            match lik {
                Likelihood::Bernoulli => f64::from(u8::from(f + 0.3 * rng.random_range(-1.0..1.0) > 0.0)),
                _ => f + 0.1 * rng.random_range(-1.0..1.0),
            }
        })
        .collect();
    let domain = if lik.is_gaussian() {
        Domain::Real
    } else {
        Domain::Binary
    };
    Dataset::new(x, y, domain)
}

/// Time `dual_condition` at each `n_new`; writes `bench_conditioning.csv`
/// (`likelihood,n_new,m,median_ms`) and `bench_summary.json`.
pub fn cmd_bench_conditioning(cfg: &ExperimentConfig) -> Result<BenchSummary> {
    let b = &cfg.bench;
    let unit = BoxBounds::new(vec![0.0; 2], vec![1.0; 2])?;
    let z = optim::sobol_points(b.m, &unit, mix_seed(cfg.seed, 0xbe7c));
    let z = InducingSet::new(DMatrix::from_fn(b.m, 2, |i, j| z[i][j]))?;
    let kernel = Kernel::matern52(1.0, vec![0.2, 0.2])?;
    let mut series = Vec::new();
    let mut csv = String::from("likelihood,n_new,m,median_ms\n");
    for (name, lik) in [
        ("gaussian", Likelihood::gaussian(0.01)?),
        ("bernoulli", Likelihood::Bernoulli),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, u64::from(lik.is_gaussian())));
        let warm = bench_data(200, &lik, &mut rng)?;
        let base = DualState::with_jitter(kernel.clone(), lik, z.clone(), cfg.model.jitter)?.dual_condition(&warm)?;
        let mut med = Vec::new();
        for &n in &b.n_new {
            let new = bench_data(n, &lik, &mut rng)?;
            // one untimed pass warms caches and the allocator
            std::hint::black_box(base.dual_condition(&new)?);
            let mut times = Vec::with_capacity(b.reps);
            for _ in 0..b.reps {
                let t = Instant::now();
                std::hint::black_box(base.dual_condition(&new)?);
                times.push(t.elapsed().as_secs_f64() * 1e3);
            }
            let m = median(times);
            csv.push_str(&format!("{name},{n},{},{m:?}\n", b.m));
            med.push(m);
        }
        series.push(BenchSeries {
            likelihood: name.to_string(),
            ratio: med[med.len() - 1] / med[0],
            loglog_slope: loglog_slope(&b.n_new, &med),
            n_new: b.n_new.clone(),
            median_ms: med,
        });
    }
    let summary = BenchSummary {
        m: b.m,
        reps: b.reps,
        series,
    };
    let dir = &cfg.output_dir;
    prepare(dir)?;
    fs::write(dir.join("bench_conditioning.csv"), csv)?;
    write_json(dir.join("bench_summary.json"), &summary)?;
    Ok(summary)
}
