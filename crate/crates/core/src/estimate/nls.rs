//! Nonlinear least squares on the exact ODE solution, and the NLS-side
//! perturbation estimate read off the smoothing proxy.

use serde::{Deserialize, Serialize};

use super::{check_bounds, multi_start, optim, sse, FitConfig, OptimizerReport};
use crate::error::Result;
use crate::linalg::mat_vec;
use crate::model::{ModelSpec, ThetaBounds};
use crate::odesolve::{integrate_ivp, GridFunction, Stage, TimeGrid};
use crate::smoothing::{Dataset, SplineFit};

#[derive(Debug, Clone)]
pub struct NlsEstimate {
    pub theta_hat: Vec<f64>,
    pub sse: f64,
    pub x_model: GridFunction,
    pub report: OptimizerReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NlsSummary {
    pub theta_hat: Vec<f64>,
    pub sse: f64,
    pub optimizer_report: OptimizerReport,
}

impl NlsEstimate {
    pub fn summary(&self) -> NlsSummary {
        NlsSummary {
            theta_hat: self.theta_hat.clone(),
            sse: self.sse,
            optimizer_report: self.report.clone(),
        }
    }
}

/// `X_θ` and `S = ∂X_θ/∂θ` (row-major `d×p` per node) from one joint RK4 solve:
/// `Ṡ = A S + ∂A X + ∂r`, `S(0) = 0`.
pub fn trajectory_sensitivity(
    model: &ModelSpec,
    theta: &[f64],
    grid: &TimeGrid,
) -> Result<GridFunction> {
    let (d, p) = (model.d, model.p);
    let samples = model.sample(theta, grid)?;
    let mut y0 = vec![0.0; d * (1 + p)];
    y0[..d].copy_from_slice(&model.x0);
    let mut col = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    let mut dax = vec![0.0; d];
    integrate_ivp(
        |st: Stage, y, dy| {
            let k = st.half;
            let (a, r, da, dr) = (samples.a(k), samples.r(k), samples.da(k), samples.dr(k));
            let (x, s) = y.split_at(d);
            let (dx, ds) = dy.split_at_mut(d);
            mat_vec(a, x, dx, d);
            for c in 0..d {
                dx[c] += r[c];
            }
            for m in 0..p {
                for c in 0..d {
                    col[c] = s[c * p + m];
                }
                mat_vec(a, &col, &mut tmp, d);
                mat_vec(&da[m * d * d..(m + 1) * d * d], x, &mut dax, d);
                for c in 0..d {
                    ds[c * p + m] = tmp[c] + dax[c] + dr[c + m * d];
                }
            }
        },
        &y0,
        grid,
    )
}

/// ODE SSE and its gradient `−2Σᵢ(Yᵢ − X_θ(tᵢ))ᵀS(tᵢ)`.
pub fn sse_and_grad(
    model: &ModelSpec,
    theta: &[f64],
    data: &Dataset,
    grid: &TimeGrid,
) -> Result<(f64, Vec<f64>)> {
    let (d, p) = (model.d, model.p);
    let joint = trajectory_sensitivity(model, theta, grid)?;
    let mut buf = vec![0.0; d * (1 + p)];
    let mut total = 0.0;
    let mut grad = vec![0.0; p];
    for i in 0..data.n() {
        joint.eval_into(data.times[i], &mut buf)?;
        let (x, s) = buf.split_at(d);
        for (c, y) in data.row(i).iter().enumerate() {
            let res = y - x[c];
            total += res * res;
            for m in 0..p {
                grad[m] -= 2.0 * res * s[c * p + m];
            }
        }
    }
    Ok((total, grad))
}

pub fn fit_nls(
    model: &ModelSpec,
    data: &Dataset,
    bounds: &ThetaBounds,
    config: &FitConfig,
) -> Result<NlsEstimate> {
    check_bounds(model, bounds)?;
    data.check_span(0.0, model.horizon)?;
    let grid = TimeGrid::horizon(model.horizon, config.grid_steps)?;
    let transform = optim::Transform::new(bounds);
    let starts = optim::latin_hypercube(bounds, config.n_starts.max(1), config.seed);
    let (best, report) = multi_start(&starts, |s| {
        optim::bfgs_box(
            |th| sse_and_grad(model, th, data, &grid),
            s,
            &transform,
            &config.optim,
        )
    })?;
    let x_model = crate::lq::controlled_trajectory(model, &best.theta, None, &grid)?;
    Ok(NlsEstimate {
        sse: sse(data, &x_model)?,
        theta_hat: best.theta,
        x_model,
        report,
    })
}

/// `ū = X̂̇ − A_θ̂ X̂ − r_θ̂` at the grid nodes (interpolated by Catmull-Rom).
pub fn estimate_perturbation_nls(
    model: &ModelSpec,
    theta_hat: &[f64],
    fit: &SplineFit,
    grid: &TimeGrid,
) -> Result<GridFunction> {
    let d = model.d;
    let samples = model.sample(theta_hat, grid)?;
    let mut values = vec![0.0; grid.n_nodes() * d];
    let mut x = vec![0.0; d];
    let mut xd = vec![0.0; d];
    for i in 0..grid.n_nodes() {
        let t = grid.time(i);
        fit.eval_into(t, &mut x)?;
        fit.eval_deriv_into(t, &mut xd)?;
        let u = &mut values[i * d..(i + 1) * d];
        mat_vec(samples.a(2 * i), &x, u, d);
        let r = samples.r(2 * i);
        for c in 0..d {
            u[c] = xd[c] - u[c] - r[c];
        }
    }
    GridFunction::new(*grid, d, values)
}
