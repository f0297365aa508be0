#![allow(dead_code)]

pub mod invariants;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use trackode::estimate::{self, FitConfig};
use trackode::lq::{self, Target};
use trackode::model::{self, ModelSpec};
use trackode::odesolve::TimeGrid;

/// Smooth target `ζ = X_θ + Σ_k c_k sin(kπt/T)` (so `ζ(0) = X₀`) with exact
/// derivative, sampled at every half step.
pub fn perturbed_target(m: &ModelSpec, theta: &[f64], grid: &TimeGrid, coef: &[Vec<f64>]) -> Target {
    let x = lq::controlled_trajectory(m, theta, None, grid).unwrap();
    let d = m.d;
    let t_end = grid.t1;
    Target::from_fn(grid, d, |t, z, zd| {
        x.eval_into(t, z).unwrap();
        let a = m.eval_a(theta, t).unwrap();
        let r = m.eval_r(theta, t).unwrap();
        trackode::linalg::mat_vec(&a, z, zd, d);
        for c in 0..d {
            zd[c] += r[c];
        }
        for (k, ck) in coef.iter().enumerate() {
            let w = (k + 1) as f64 * std::f64::consts::PI / t_end;
            for c in 0..d {
                z[c] += ck[c] * (w * t).sin();
                zd[c] += ck[c] * w * (w * t).cos();
            }
        }
    })
}

pub fn random_case(m: &ModelSpec, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<Vec<f64>>) {
    let truth = m.theta_default.clone().unwrap();
    let theta: Vec<f64> = truth.iter().map(|v| v * rng.random_range(0.7..1.3)).collect();
    let scale: Vec<f64> = m.x0.iter().map(|v| 0.05 * v.abs().max(1.0)).collect();
    let coef = (0..3)
        .map(|_| scale.iter().map(|s| s * rng.random_range(-1.0..1.0)).collect())
        .collect();
    (theta, coef)
}

pub fn lambdas(m: &ModelSpec) -> Vec<f64> {
    // Keep the Riccati time scale √λ comparable to the horizon.
    let t = m.horizon;
    vec![0.05 * t * t, 0.5 * t * t]
}

/// `X_θ` sampled at `n` equispaced times over the horizon.
pub fn noiseless(m: &ModelSpec, theta: &[f64], n: usize) -> trackode::smoothing::Dataset {
    let grid = TimeGrid::horizon(m.horizon, 4000).unwrap();
    let x = lq::controlled_trajectory(m, theta, None, &grid).unwrap();
    let times: Vec<f64> = (0..n).map(|i| m.horizon * i as f64 / (n - 1) as f64).collect();
    let obs: Vec<f64> = times.iter().flat_map(|&t| x.eval(t).unwrap()).collect();
    trackode::smoothing::Dataset::new(times, obs, m.d).unwrap()
}

/// [`noiseless`] plus i.i.d. Gaussian noise of sd `sigma` (the first
/// observation, at `t = 0`, is left exact).
pub fn noisy(m: &ModelSpec, theta: &[f64], n: usize, sigma: f64, seed: u64) -> trackode::smoothing::Dataset {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let clean = noiseless(m, theta, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let obs = clean
        .obs
        .iter()
        .enumerate()
        .map(|(k, v)| if k < m.d { *v } else { v + noise.sample(&mut rng) })
        .collect();
    trackode::smoothing::Dataset::new(clean.times.clone(), obs, m.d).unwrap()
}

/// Tracking estimates of `a` and their plug-in variances at λ = 10 over
/// `reps` noisy scalar-linear datasets (σ = 1).
pub fn scalar_linear_fits(n: usize, reps: u64, seed0: u64) -> (Vec<f64>, Vec<f64>) {
    let m = model::scalar_linear();
    let cfg = FitConfig {
        n_starts: 2,
        compute_variance: true,
        ..FitConfig::default()
    };
    let b = m.default_bounds().unwrap();
    let mut est = Vec::new();
    let mut plug = Vec::new();
    for rep in 0..reps {
        let data = noisy(&m, &[0.5], n, 1.0, seed0 + rep);
        let e = estimate::fit_tracking(&m, &data, 10.0, &b, &cfg).unwrap();
        est.push(e.theta_hat[0]);
        plug.push(e.cov_theta.unwrap()[0]);
    }
    (est, plug)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
