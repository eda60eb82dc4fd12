mod common;

use common::gram;
use dualgp::bo::{run_bo, update_hyperparameters, update_inducing, BoConfig, ModelOptions, Problem};
use dualgp::data::{generate_banana, generate_constrained_problem, Dataset, Domain};
use dualgp::kernels::Kernel;
use dualgp::likelihoods::Likelihood;
use dualgp::optim::kmeans;
use dualgp::svgp::{DualState, FitOptions, InducingSet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const TRUE_LS: f64 = 0.15;

fn gp_sample(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 60;
    let x = DMatrix::from_fn(n, 1, |_, _| rng.random_range(0.0..1.0));
    let k = gram(1.0, &[TRUE_LS], 1e-10, &x, &x);
    let l = k.cholesky().expect("gram positive definite").unpack();
    let e = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let f = l * e;
    let y = (0..n)
        .map(|i| f[i] + 0.1 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Dataset::new(x, y, Domain::Real).unwrap()
}

#[test]
fn lengthscale_recovered_within_factor_two() {
    let mut hits = 0;
    let mut found = vec![];
    for seed in 0..10 {
        let data = gp_sample(seed);
        let z = kmeans(data.x(), 25, 25, seed);
        let start = DualState::new(
            Kernel::matern52(1.0, vec![0.5]).unwrap(),
            Likelihood::gaussian(0.05).unwrap(),
            InducingSet::new(z).unwrap(),
        )
        .unwrap();
        let s = update_hyperparameters(&start, &data, &ModelOptions::default(), 100).unwrap();
        let ls = s.kernel().params.lengthscales[0];
        found.push(ls);
        if (TRUE_LS / 2.0..=TRUE_LS * 2.0).contains(&ls) {
            hits += 1;
        }
    }
    assert!(hits >= 8, "recovered lengthscales {found:?}");
}

#[test]
fn moving_inducing_points_keeps_the_bound() {
    let kernel = Kernel::matern52(1.0, vec![1.0, 1.0]).unwrap();
    let opts = ModelOptions::default();
    let mut hits = 0;
    for seed in 0..10 {
        let data = generate_banana(400, 1, seed).unwrap().concatenated().unwrap();
        let z_old = data.x().rows(0, 25).into_owned();
        let old = DualState::new(kernel.clone(), Likelihood::Bernoulli, InducingSet::new(z_old).unwrap())
            .unwrap()
            .fit(&data, &FitOptions::default())
            .unwrap()
            .state;
        let e_old = old.elbo(&data).unwrap();
        let moved = update_inducing(&old, &data, 25, &opts, seed).unwrap();
        let e_new = moved.elbo(&data).unwrap();
        if e_new >= e_old - 0.05 * e_old.abs() {
            hits += 1;
        }
        let probe = DMatrix::from_fn(20, 2, |i, j| -2.5 + 0.25 * i as f64 + 0.1 * j as f64);
        let p = moved.predict(&probe, false).unwrap();
        assert!(p.mean.iter().chain(p.variance.iter()).all(|v| v.is_finite()));
    }
    assert!(hits >= 8, "{hits}/10");
}

fn branin_problem(seed: u64) -> Problem {
    Problem::SyntheticStochastic(generate_constrained_problem("noisy-branin-disk", seed).unwrap())
}

#[test]
fn batch_bo_improves_on_initial_design() {
    let cfg = BoConfig {
        hyper_max_evals: 30,
        ..BoConfig::default()
    };
    let mut hits = 0;
    for seed in 0..10 {
        let h = run_bo(&branin_problem(seed), &cfg, seed).unwrap();
        assert_eq!(h.records.len(), 11);
        let initial = h.records[0].incumbent.unwrap_or(f64::NEG_INFINITY);
        let last = h.final_incumbent().unwrap_or(f64::NEG_INFINITY);
        if last >= initial {
            hits += 1;
        }
        for w in h.records.windows(2) {
            let a = w[0].incumbent.unwrap_or(f64::NEG_INFINITY);
            let b = w[1].incumbent.unwrap_or(f64::NEG_INFINITY);
            assert!(b >= a);
        }
    }
    assert!(hits >= 9);
}

#[test]
fn batch_points_pairwise_distinct() {
    let cfg = BoConfig {
        iterations: 1,
        hyper_max_evals: 20,
        ..BoConfig::default()
    };
    for seed in 0..20 {
        let problem = branin_problem(seed);
        let Problem::SyntheticStochastic(p) = &problem else {
            unreachable!()
        };
        let h = run_bo(&problem, &cfg, seed).unwrap();
        let batch = h.records[1].batch.as_ref().unwrap();
        assert_eq!(batch.len(), 5);
        assert!(!batch.duplicate_warning);
        for i in 0..5 {
            for j in 0..i {
                let d = p.bounds.scaled_distance(&batch.points[i], &batch.points[j]);
                assert!(d > 1e-9, "seed {seed}: points {i} and {j} at {d:e}");
            }
        }
    }
}
