//! Derivative-free helpers shared by the acquisition maximizer and the
//! hyperparameter search.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::acquisition::BoxBounds;

/// Owen-scrambled Sobol points mapped into `bounds`.
pub fn sobol_points(n: usize, bounds: &BoxBounds, seed: u64) -> Vec<Vec<f64>> {
    let seed = (seed ^ (seed >> 32)) as u32;
    (0..n)
        .map(|i| {
            (0..bounds.dim())
                .map(|j| {
                    let u = f64::from(sobol_burley::sample(i as u32, j as u32, seed));
                    bounds.lower[j] + u * (bounds.upper[j] - bounds.lower[j])
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Initial simplex edge per coordinate.
    pub step: Vec<f64>,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    pub x_tol: f64,
}

#[derive(Clone, Debug)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

/// Minimise `f` starting from `x0`. Every trial point is clipped to `bounds`
/// when given. Non-finite values are treated as `+inf`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    bounds: Option<&BoxBounds>,
    opts: &NelderMeadOptions,
) -> NelderMeadResult {
    let n = x0.len();
    let clip = |x: &mut Vec<f64>| {
        if let Some(b) = bounds {
            b.clip(x);
        }
    };
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut start = x0.to_vec();
    clip(&mut start);
    if opts.max_evals == 0 {
        return NelderMeadResult {
            x: start,
            value: f64::INFINITY,
            evals: 0,
        };
    }
    let v0 = eval(&start, &mut evals);
    let mut simplex = vec![(start.clone(), v0)];
    for i in 0..n {
        if evals >= opts.max_evals {
            break;
        }
        let mut p = start.clone();
        p[i] += opts.step[i];
        clip(&mut p);
        if p[i] == start[i] {
            // pinned against the upper bound, step inward instead
            p[i] -= opts.step[i];
            clip(&mut p);
        }
        let v = eval(&p, &mut evals);
        simplex.push((p, v));
    }

    while evals < opts.max_evals && simplex.len() == n + 1 {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = (worst - best).abs();
        let size = simplex[1..]
            .iter()
            .flat_map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if spread <= opts.f_tol * (1.0 + best.abs()) && size <= opts.x_tol {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(p, _)| p[j]).sum::<f64>() / n as f64)
            .collect();
        let towards = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect();
            clip(&mut p);
            p
        };

        let xr = towards(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = towards(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = towards(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = towards(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for k in 1..=n {
                    if evals >= opts.max_evals {
                        break;
                    }
                    let mut p: Vec<f64> = simplex[k]
                        .0
                        .iter()
                        .zip(&x_best)
                        .map(|(v, b)| b + 0.5 * (v - b))
                        .collect();
                    clip(&mut p);
                    let fv = eval(&p, &mut evals);
                    simplex[k] = (p, fv);
                }
            }
        }
    }
    let (x, value) = simplex
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("simplex holds the start point");
    NelderMeadResult { x, value, evals }
}

/// Rows of `x` with exact duplicates removed, first occurrence kept.
pub fn distinct_rows(x: &DMatrix<f64>) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::with_capacity(x.nrows());
    for i in 0..x.nrows() {
        if !keep.iter().any(|&k| x.row(k) == x.row(i)) {
            keep.push(i);
        }
    }
    keep
}

/// Lloyd's k-means with `k` centroids initialised from distinct data rows
/// drawn by `seed`. Empty clusters keep their previous centroid. `k` is
/// clamped to the number of distinct rows.
pub fn kmeans(x: &DMatrix<f64>, k: usize, iters: usize, seed: u64) -> DMatrix<f64> {
    let distinct = distinct_rows(x);
    let k = k.min(distinct.len());
    let d = x.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, distinct.len(), k).into_vec();
    picks.sort_unstable();
    let mut c = DMatrix::from_fn(k, d, |i, j| x[(distinct[picks[i]], j)]);
    if k == 0 {
        return c;
    }
    let mut assign = vec![0usize; x.nrows()];
    for _ in 0..iters {
        for (i, a) in assign.iter_mut().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for r in 0..k {
                let dist = (0..d).map(|j| (x[(i, j)] - c[(r, j)]).powi(2)).sum::<f64>();
                if dist < best.0 {
                    best = (dist, r);
                }
            }
            *a = best.1;
        }
        let mut sums = DMatrix::<f64>::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for j in 0..d {
                sums[(a, j)] += x[(i, j)];
            }
        }
        let mut moved = false;
        for r in 0..k {
            if counts[r] == 0 {
                continue;
            }
            for j in 0..d {
                let v = sums[(r, j)] / counts[r] as f64;
                moved |= v != c[(r, j)];
                c[(r, j)] = v;
            }
        }
        if !moved {
            break;
        }
    }
    c
}
