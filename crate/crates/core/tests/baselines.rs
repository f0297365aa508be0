mod common;

use common::{noiseless, noisy};
use trackode::estimate::gs::{self, GsProblem};
use trackode::estimate::nls;
use trackode::estimate::{self, FitConfig, GsLambdaScore};
use trackode::model;
use trackode::odesolve::TimeGrid;
use trackode::smoothing::{self, Dataset, SplineBasis};

fn quick() -> FitConfig {
    FitConfig {
        n_starts: 4,
        ..FitConfig::default()
    }
}

fn max_abs_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn nls_recovers_noiseless_truth() {
    for m in [model::scalar_linear(), model::scalar_nonlinear()] {
        let truth = m.theta_default.clone().unwrap();
        let data = noiseless(&m, &truth, 40);
        let e = nls::fit_nls(&m, &data, &m.default_bounds().unwrap(), &quick()).unwrap();
        assert!(max_abs_err(&e.theta_hat, &truth) <= 1e-4, "{}: {:?}", m.name, e.theta_hat);
        assert!(e.sse <= 1e-8, "{}: SSE {}", m.name, e.sse);
    }
}

#[test]
fn nls_gradient_matches_finite_differences() {
    let data = noisy(&model::scalar_nonlinear(), &[1.4, 1.0], 30, 2.0, 6);
    for m in [model::scalar_nonlinear(), model::alpha_pinene()] {
        let data = if m.d == 1 {
            data.clone()
        } else {
            let truth = m.theta_default.clone().unwrap();
            noisy(&m, &truth, 12, 1.0, 6)
        };
        let grid = TimeGrid::horizon(m.horizon, 2000).unwrap();
        let theta: Vec<f64> = m.theta_default.clone().unwrap().iter().map(|v| v * 1.15).collect();
        let (_, g) = nls::sse_and_grad(&m, &theta, &data, &grid).unwrap();
        for k in 0..m.p {
            let h = 1e-6 * theta[k].abs();
            let at = |d: f64| {
                let mut th = theta.clone();
                th[k] += d;
                nls::sse_and_grad(&m, &th, &data, &grid).unwrap().0
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1e-6), "{} ∂/∂θ{k}: {} vs {fd}", m.name, g[k]);
        }
    }
}

#[test]
fn perturbation_of_zero_proxy_is_zero() {
    let m = model::scalar_nonlinear();
    let times: Vec<f64> = (0..20).map(|i| i as f64 * 15.0 / 19.0).collect();
    let zero = Dataset::new(times, vec![0.0; 20], 1).unwrap();
    let basis = SplineBasis::new(4, 0.0, m.horizon).unwrap();
    let fit = smoothing::fit_regression_spline(&zero, &basis, None).unwrap();
    let grid = TimeGrid::horizon(m.horizon, 300).unwrap();
    let u = nls::estimate_perturbation_nls(&m, &[1.4, 1.0], &fit, &grid).unwrap();
    assert!(u.values().iter().all(|v| *v == 0.0));
}

#[test]
fn perturbation_of_exact_proxy_is_small() {
    let m = model::scalar_nonlinear();
    let data = noiseless(&m, &[1.4, 1.0], 200);
    let fit = estimate::smooth(&m, &data, &FitConfig::default()).unwrap();
    let grid = TimeGrid::horizon(m.horizon, 1000).unwrap();
    let u = nls::estimate_perturbation_nls(&m, &[1.4, 1.0], &fit, &grid).unwrap();
    // Derivative-scale error of a cubic spline through a smooth curve.
    let sup = u.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let xdot_scale = 1.4 * 16f64.powf(0.4);
    assert!(sup <= 1e-2 * xdot_scale, "sup |ū| = {sup}");
}

#[test]
fn gs_collocation_limit_recovers_truth() {
    let m = model::scalar_nonlinear();
    let data = noiseless(&m, &[1.4, 1.0], 50);
    let fit = estimate::smooth(&m, &data, &FitConfig::default()).unwrap();
    let e = gs::fit_gs(&m, &data, 1e10, &m.default_bounds().unwrap(), &fit.basis, &quick()).unwrap();
    assert!(max_abs_err(&e.theta_hat, &[1.4, 1.0]) <= 1e-2, "{:?}", e.theta_hat);
    assert!(!e.degenerate);
}

#[test]
fn gs_zero_penalty_is_degenerate() {
    let m = model::scalar_nonlinear();
    let data = noisy(&m, &[1.4, 1.0], 30, 1.0, 2);
    let basis = SplineBasis::new(5, 0.0, m.horizon).unwrap();
    let grid = TimeGrid::horizon(m.horizon, 500).unwrap();
    let prob = GsProblem::new(&m, &data, &basis, grid, true).unwrap();
    let a = prob.inner(&[1.4, 1.0], 0.0).unwrap();
    let b = prob.inner(&[0.3, 2.5], 0.0).unwrap();
    assert_eq!(a, b);
    let spline = smoothing::fit_regression_spline(&data, &basis, Some(&m.x0)).unwrap();
    assert!(max_abs_err(&a, &spline.coeffs) <= 1e-8);
    let e = gs::fit_gs(&m, &data, 0.0, &m.default_bounds().unwrap(), &basis, &quick()).unwrap();
    assert!(e.degenerate);
}

/// `J(c) = Σᵢ(Yᵢ − X̂(tᵢ))² + λ∫(X̂̇ − A X̂ − r)²` by midpoint quadrature.
fn gs_objective(
    m: &model::ModelSpec,
    data: &Dataset,
    basis: &SplineBasis,
    theta: &[f64],
    lambda: f64,
    coeffs: &[f64],
) -> f64 {
    let val = |t: f64| -> (f64, f64) {
        let (b, db) = (basis.eval(t).unwrap(), basis.eval_deriv(t).unwrap());
        let x = b.iter().zip(coeffs).map(|(p, c)| p * c).sum();
        let xd = db.iter().zip(coeffs).map(|(p, c)| p * c).sum();
        (x, xd)
    };
    let fit: f64 = (0..data.n()).map(|i| (data.row(i)[0] - val(data.times[i]).0).powi(2)).sum();
    let steps = 20_000;
    let h = m.horizon / steps as f64;
    let pen: f64 = (0..steps)
        .map(|j| {
            let t = (j as f64 + 0.5) * h;
            let (x, xd) = val(t);
            let a = m.eval_a(theta, t).unwrap()[0];
            let r = m.eval_r(theta, t).unwrap()[0];
            h * (xd - a * x - r).powi(2)
        })
        .sum();
    fit + lambda * pen
}

#[test]
fn gs_inner_solution_is_stationary() {
    let m = model::scalar_nonlinear();
    let data = noisy(&m, &[1.4, 1.0], 40, 1.0, 3);
    let basis = SplineBasis::new(6, 0.0, m.horizon).unwrap();
    let grid = TimeGrid::horizon(m.horizon, 2000).unwrap();
    let prob = GsProblem::new(&m, &data, &basis, grid, false).unwrap();
    let theta = [1.2, 0.9];
    let lambda = 5.0;
    let c = prob.inner(&theta, lambda).unwrap();
    let j = |c: &[f64]| gs_objective(&m, &data, &basis, &theta, lambda, c);
    let j0 = j(&c);
    let eps = 1e-2;
    for k in 0..c.len() {
        let mut cp = c.clone();
        cp[k] += eps;
        let mut cm = c.clone();
        cm[k] -= eps;
        let (jp, jm) = (j(&cp), j(&cm));
        let curvature = jp + jm - 2.0 * j0;
        assert!(curvature > 0.0);
        // Offset of the 1-D minimum along e_k, in units of eps.
        let offset = (jp - jm) / (2.0 * curvature);
        assert!(offset.abs() <= 1e-3, "coefficient {k}: offset {offset}");
    }
}

#[test]
fn gs_lambda_scores_differ_as_documented() {
    let m = model::scalar_nonlinear();
    let data = noisy(&m, &[1.4, 1.0], 40, 2.0, 5);
    let fit = estimate::smooth(&m, &data, &FitConfig::default()).unwrap();
    let grid = [0.1, 10.0, 1e3, 1e5];
    let b = m.default_bounds().unwrap();
    let ode = gs::select_gs_lambda(&m, &data, &grid, &b, &fit.basis, &quick()).unwrap();
    let proxy_cfg = FitConfig {
        gs_lambda_score: GsLambdaScore::ProxySse,
        ..quick()
    };
    let proxy = gs::select_gs_lambda(&m, &data, &grid, &b, &fit.basis, &proxy_cfg).unwrap();
    // Tighter penalties can only worsen the proxy's data fit.
    assert_eq!(proxy.lambda, 0.1);
    for &l in &grid {
        let e = gs::fit_gs(&m, &data, l, &b, &fit.basis, &quick()).unwrap();
        assert!(ode.sse <= e.sse + 1e-9 * e.sse, "λ={l}: {} < selected {}", e.sse, ode.sse);
    }
}

#[test]
fn gs_rejects_negative_penalty() {
    let m = model::scalar_nonlinear();
    let data = noisy(&m, &[1.4, 1.0], 20, 1.0, 3);
    let basis = SplineBasis::new(3, 0.0, m.horizon).unwrap();
    assert!(gs::fit_gs(&m, &data, -1.0, &m.default_bounds().unwrap(), &basis, &quick()).is_err());
}
