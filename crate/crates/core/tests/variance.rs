mod common;

use common::{mean, noiseless, noisy, scalar_linear_fits};
use nalgebra::{DMatrix, SymmetricEigen};
use trackode::estimate::{self, variance, FitConfig};
use trackode::grad;
use trackode::lq::Target;
use trackode::model;
use trackode::odesolve::TimeGrid;

#[test]
fn p_matrix_matches_finite_differences_in_spline_coefficients() {
    // P is the coefficient derivative of −½∇S linearized at ζ = X_θ.
    let m = model::scalar_nonlinear();
    let theta = [1.4, 1.0];
    let data = noiseless(&m, &theta, 200);
    let fit = estimate::smooth(&m, &data, &FitConfig::default()).unwrap();
    let lambda = 50.0;
    let grid = TimeGrid::horizon(m.horizon, 2000).unwrap();
    let (_, pm) = variance::hessian_and_p(&m, &theta, lambda, &fit, &grid).unwrap();
    let (p, dk) = (m.p, m.d * fit.k());
    let scale = pm.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for j in 0..dk {
        let eps = 1e-3;
        let grad_at = |delta: f64| {
            let mut f = fit.clone();
            f.coeffs[j] += delta;
            let target = Target::from_spline(&f, &grid).unwrap();
            grad::value_and_grad(&m, &theta, lambda, &target).unwrap().1
        };
        let (gp, gm) = (grad_at(eps), grad_at(-eps));
        for k in 0..p {
            let fd = -0.5 * (gp[k] - gm[k]) / (2.0 * eps);
            let v = pm[k * dk + j];
            assert!((fd - v).abs() <= 1e-4 * scale, "P[{k},{j}] = {v}, FD {fd}");
        }
    }
}

#[test]
fn hessian_matches_finite_differences_near_the_truth() {
    // The closed form drops terms proportional to ζ − X_θ, so compare where
    // the proxy reproduces the trajectory.
    let m = model::scalar_nonlinear();
    let theta = [1.4, 1.0];
    let data = noiseless(&m, &theta, 200);
    let fit = estimate::smooth(&m, &data, &FitConfig::default()).unwrap();
    let lambda = 100.0;
    let grid = TimeGrid::horizon(m.horizon, 2000).unwrap();
    let (hess, _) = variance::hessian_and_p(&m, &theta, lambda, &fit, &grid).unwrap();
    let target = Target::from_spline(&fit, &grid).unwrap();
    let p = m.p;
    let scale = hess.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for b in 0..p {
        let h = 1e-5;
        let grad_at = |delta: f64| {
            let mut th = theta.to_vec();
            th[b] += delta;
            grad::value_and_grad(&m, &th, lambda, &target).unwrap().1
        };
        let (gp, gm) = (grad_at(h), grad_at(-h));
        for a in 0..p {
            let fd = (gp[a] - gm[a]) / (2.0 * h);
            let v = hess[a * p + b];
            assert!((fd - v).abs() <= 1e-3 * scale, "H[{a},{b}] = {v}, FD {fd}");
        }
    }
}

#[test]
fn covariance_is_symmetric_psd() {
    let m = model::scalar_nonlinear();
    let data = noisy(&m, &[1.4, 1.0], 50, 2.0, 12);
    let fit = estimate::smooth(&m, &data, &FitConfig::default()).unwrap();
    let grid = TimeGrid::horizon(m.horizon, 1000).unwrap();
    let parts = variance::variance_parts(&m, &[1.35, 1.05], 1e3, &fit, &grid).unwrap();
    let p = parts.p;
    let c = DMatrix::from_row_slice(p, p, &parts.cov);
    assert!((&c - c.transpose()).amax() <= 1e-8 * c.amax());
    let eig = SymmetricEigen::new(c.clone());
    assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-8 * c.amax()), "{:?}", eig.eigenvalues);
    let h = DMatrix::from_row_slice(p, p, &parts.hessian);
    assert!((&h - h.transpose()).amax() <= 1e-10 * h.amax());
}

#[test]
fn plug_in_variance_matches_monte_carlo() {
    let (est, plug) = scalar_linear_fits(200, 200, 40_000);
    let mu = mean(&est);
    let mc = est.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (est.len() - 1) as f64;
    let ratio = mean(&plug) / mc;
    assert!((0.5..=2.0).contains(&ratio), "plug-in {} vs MC {mc}", mean(&plug));
}

#[test]
fn plug_in_variance_scales_as_one_over_n() {
    let (_, v200) = scalar_linear_fits(200, 20, 50_000);
    let (_, v400) = scalar_linear_fits(400, 20, 60_000);
    let ratio = mean(&v400) / mean(&v200);
    assert!((0.35..=0.65).contains(&ratio), "ratio {ratio}");
}
