//! Invariant checks parameterized by the solver resolution, shared by the
//! property tests and the acceptance target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trackode::estimate::{self, FitConfig};
use trackode::lq;
use trackode::model::{self, ModelSpec};
use trackode::odesolve::TimeGrid;
use trackode::smoothing::SplineBasis;

use super::{lambdas, noisy, perturbed_target, random_case};

pub type Check = std::result::Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// `E(t)` is symmetric at every node for every builtin.
pub fn riccati_symmetric(steps: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for m in model::builtin_models() {
        let grid = TimeGrid::horizon(m.horizon, steps).map_err(|e| e.to_string())?;
        let (theta, _) = random_case(&m, &mut rng);
        for lambda in lambdas(&m) {
            let e = lq::solve_riccati_e(&m, &theta, lambda, &grid).map_err(|e| e.to_string())?;
            let d = m.d;
            for i in 0..grid.n_nodes() {
                let row = e.row(i);
                let scale = row.iter().fold(1e-300f64, |a, v| a.max(v.abs()));
                for a in 0..d {
                    for b in 0..a {
                        let (x, y) = (row[a + b * d], row[b + a * d]);
                        ensure((x - y).abs() <= 1e-12 * scale, || {
                            format!("{}: E[{a},{b}] = {x} vs {y} at node {i}", m.name)
                        })?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// `E(0) = −tanh(T)` for `ẋ = 0·x`, `λ = 1`, `T = 1`.
pub fn riccati_tanh(steps: usize) -> Check {
    let m = ModelSpec::new(
        "zero",
        1,
        1,
        vec![model::parse_expr("0*theta[1]", 1).unwrap()],
        vec![model::parse_expr("0", 1).unwrap()],
        vec![1.0],
        1.0,
    )
    .map_err(|e| e.to_string())?;
    let grid = TimeGrid::horizon(1.0, steps).map_err(|e| e.to_string())?;
    let e = lq::solve_riccati_e(&m, &[0.0], 1.0, &grid).map_err(|e| e.to_string())?;
    let got = e.first()[0];
    ensure((got + 1f64.tanh()).abs() <= 1e-7, || format!("E(0) = {got}"))
}

/// B-spline values are nonnegative and sum to one across the span.
pub fn partition_of_unity(interior_knots: usize, points: usize) -> Check {
    let basis = SplineBasis::new(interior_knots, 0.0, 7.0).map_err(|e| e.to_string())?;
    for j in 0..=points {
        let t = 7.0 * j as f64 / points as f64;
        let v = basis.eval(t).map_err(|e| e.to_string())?;
        let sum: f64 = v.iter().sum();
        ensure((sum - 1.0).abs() <= 1e-12 && v.iter().all(|x| *x >= -1e-15), || {
            format!("K_int={interior_knots} t={t}: sum {sum}")
        })?;
    }
    Ok(())
}

/// The closed form of `S` and its derivative-free rewrite agree: within 1e−4
/// relative, or else the gap shrinks at least 8-fold when the grid doubles
/// (S can be a small remainder of much larger cancelling terms).
pub fn derivative_free_equivalence(steps: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for m in model::builtin_models() {
        let lambda = lambdas(&m)[rng.random_range(0..2)];
        let (theta, coef) = random_case(&m, &mut rng);
        let gap = |n: usize| -> std::result::Result<(f64, f64, f64), String> {
            let grid = TimeGrid::horizon(m.horizon, n).map_err(|e| e.to_string())?;
            let target = perturbed_target(&m, &theta, &grid, &coef);
            let s = lq::criterion_s(&m, &theta, lambda, &target).map_err(|e| e.to_string())?;
            let free = lq::criterion_s_derivative_free(&m, &theta, lambda, &target.zeta())
                .map_err(|e| e.to_string())?;
            Ok(((s - free).abs(), s, free))
        };
        let (g1, s, free) = gap(steps)?;
        if g1 <= 1e-4 * s.abs().max(1e-8) {
            continue;
        }
        let (g2, _, _) = gap(2 * steps)?;
        ensure(g2 <= g1 / 8.0, || {
            format!("{}: S = {s}, derivative-free {free}; gap {g1} -> {g2} on doubling", m.name)
        })?;
    }
    Ok(())
}

/// `‖ū_λ‖` does not grow with λ for a fixed target.
pub fn control_shrinkage(steps: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for m in model::builtin_models() {
        let grid = TimeGrid::horizon(m.horizon, steps).map_err(|e| e.to_string())?;
        let (theta, coef) = random_case(&m, &mut rng);
        let target = perturbed_target(&m, &theta, &grid, &coef);
        let t2 = m.horizon * m.horizon;
        let mut prev = f64::INFINITY;
        for lambda in [0.01 * t2, 0.1 * t2, t2, 10.0 * t2, 100.0 * t2] {
            let sol = lq::solve_riccati(&m, &theta, lambda, &target).map_err(|e| e.to_string())?;
            let tr = lq::closed_loop_trajectory(&m, &theta, &sol, &target).map_err(|e| e.to_string())?;
            let norm = tr.u_bar.l2_norm_sq();
            ensure(norm <= prev * (1.0 + 1e-9), || {
                format!("{}: ‖ū‖² rose to {norm} from {prev} at λ={lambda}", m.name)
            })?;
            prev = norm;
        }
    }
    Ok(())
}

/// Two fits with the same seed and configuration are bitwise identical.
pub fn reproducible_fit(steps: usize, seed: u64) -> Check {
    let m = model::scalar_nonlinear();
    let data = noisy(&m, &[1.4, 1.0], 30, 2.0, seed);
    let cfg = FitConfig {
        n_starts: 3,
        grid_steps: steps,
        seed,
        ..FitConfig::default()
    };
    let b = m.default_bounds().map_err(|e| e.to_string())?;
    let fit = |_| estimate::fit_tracking(&m, &data, 100.0, &b, &cfg).map_err(|e| e.to_string());
    let (a, c) = (fit(0)?, fit(1)?);
    ensure(
        a.theta_hat == c.theta_hat && a.s_value.to_bits() == c.s_value.to_bits(),
        || format!("{:?} vs {:?}", a.theta_hat, c.theta_hat),
    )
}

/// Every check at one resolution, with its name.
pub fn all(steps: usize, seed: u64) -> Vec<(&'static str, Check)> {
    vec![
        ("E symmetric", riccati_symmetric(steps, seed)),
        ("E(0) = -tanh(1)", riccati_tanh(steps)),
        ("partition of unity", partition_of_unity(1 + (seed % 12) as usize, steps)),
        ("derivative-free S", derivative_free_equivalence(steps, seed)),
        ("control shrinkage", control_shrinkage(steps, seed)),
        ("reproducibility", reproducible_fit(steps, seed)),
    ]
}
