//! Estimators: Tracking (minimize the profiled criterion `S` over θ for a
//! smoothed trajectory), with λ selection by SSE or CSSE, the corrected
//! predictor and the plug-in asymptotic variance; plus the nonlinear least
//! squares and generalized smoothing baselines.

pub mod diagnose;
pub mod gs;
pub mod nls;
pub mod optim;
pub mod variance;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad;
use crate::lq::{self, Target};
use crate::model::{ModelSpec, ThetaBounds};
use crate::odesolve::{GridFunction, TimeGrid};
use crate::parallel;
use crate::smoothing::{self, Dataset, SplineFit};

pub use optim::{LocalResult, OptimConfig};

/// Settings shared by every estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Latin-hypercube starts per local optimization.
    pub n_starts: usize,
    pub seed: u64,
    /// Minimum number of RK4 steps over the horizon.
    pub grid_steps: usize,
    /// Pin the smoother (and the GS proxy) to the known initial state.
    pub constrain_x0: bool,
    /// Interior-knot candidates for GCV; `None` uses the default range.
    pub knot_candidates: Option<Vec<usize>>,
    pub optim: OptimConfig,
    /// Attach the plug-in covariance to Tracking estimates.
    pub compute_variance: bool,
    /// Run λ grids concurrently.
    pub parallel: bool,
    /// Starts for the gradient-free GS outer problem.
    pub gs_starts: usize,
    /// Criterion for choosing the GS penalty over a λ grid.
    pub gs_lambda_score: GsLambdaScore,
}

/// How the GS baseline picks λ from a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GsLambdaScore {
    /// Data misfit of the exact ODE solution at θ̂.
    #[default]
    OdeSse,
    /// Data misfit of the penalized spline proxy. It grows with λ, so this
    /// picks the smallest grid value.
    ProxySse,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_starts: 8,
            seed: 0,
            grid_steps: 1000,
            constrain_x0: true,
            knot_candidates: None,
            optim: OptimConfig::default(),
            compute_variance: false,
            parallel: true,
            gs_starts: 4,
            gs_lambda_score: GsLambdaScore::default(),
        }
    }
}

/// Grid resolving both the horizon and the Riccati boundary layer of width
/// `√λ` near `T`: at least `grid_steps` and at least 5 steps per `√λ`.
pub fn tracking_grid(model: &ModelSpec, lambda: f64, config: &FitConfig) -> Result<TimeGrid> {
    let layer = (5.0 * model.horizon / lambda.sqrt()).ceil();
    let n = if layer.is_finite() {
        config.grid_steps.max(layer as usize).min(50 * config.grid_steps.max(1))
    } else {
        config.grid_steps
    };
    TimeGrid::horizon(model.horizon, n)
}

/// Spline proxy of the data by GCV over the configured knot candidates.
pub fn smooth(model: &ModelSpec, data: &Dataset, config: &FitConfig) -> Result<SplineFit> {
    data.check_span(0.0, model.horizon)?;
    if data.d != model.d {
        return Err(Error::Dimension(format!(
            "data has {} states, model has d = {}",
            data.d, model.d
        )));
    }
    let candidates = config
        .knot_candidates
        .clone()
        .unwrap_or_else(|| smoothing::default_knot_candidates(data.n()));
    let x0 = config.constrain_x0.then_some(model.x0.as_slice());
    smoothing::select_knots_gcv(data, &candidates, x0, 0.0, model.horizon)
}

/// One local run per start.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StartOutcome {
    pub start: Vec<f64>,
    pub result: Option<LocalResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub starts: usize,
    pub best_start: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub proj_grad: f64,
    pub runs: Vec<StartOutcome>,
}

/// Run a local optimizer from every start and keep the lowest objective
/// (earliest start on ties).
pub(crate) fn multi_start<F>(starts: &[Vec<f64>], mut run: F) -> Result<(LocalResult, OptimizerReport)>
where
    F: FnMut(&[f64]) -> Result<LocalResult>,
{
    let mut runs = Vec::with_capacity(starts.len());
    let mut best: Option<(usize, LocalResult)> = None;
    for (i, s) in starts.iter().enumerate() {
        match run(s) {
            Ok(r) => {
                let better = match &best {
                    None => true,
                    Some((_, b)) => r.f < b.f,
                };
                if better {
                    best = Some((i, r.clone()));
                }
                runs.push(StartOutcome {
                    start: s.clone(),
                    result: Some(r),
                    error: None,
                });
            }
            Err(e) => runs.push(StartOutcome {
                start: s.clone(),
                result: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let Some((best_start, result)) = best else {
        let reason = runs
            .iter()
            .filter_map(|r| r.error.clone())
            .next()
            .unwrap_or_else(|| "no starts".into());
        return Err(Error::EstimationFailed {
            starts: starts.len(),
            reason,
        });
    };
    let report = OptimizerReport {
        starts: starts.len(),
        best_start,
        iterations: result.iterations,
        evaluations: runs
            .iter()
            .filter_map(|r| r.result.as_ref().map(|x| x.evaluations))
            .sum(),
        converged: result.converged,
        proj_grad: result.proj_grad,
        runs,
    };
    Ok((result, report))
}

/// `Σᵢ ‖Yᵢ − x(tᵢ)‖²` with `x` interpolated on its grid.
pub fn sse(data: &Dataset, x: &GridFunction) -> Result<f64> {
    let mut out = vec![0.0; data.d];
    let mut total = 0.0;
    for i in 0..data.n() {
        x.eval_into(data.times[i], &mut out)?;
        total += data
            .row(i)
            .iter()
            .zip(&out)
            .map(|(y, x)| (y - x) * (y - x))
            .sum::<f64>();
    }
    Ok(total)
}

/// Model trajectory with an additive forcing `ū` (`ū ≡ 0` gives `X_θ`).
pub fn corrected_trajectory(
    model: &ModelSpec,
    theta: &[f64],
    u_bar: &GridFunction,
    grid: &TimeGrid,
) -> Result<GridFunction> {
    lq::controlled_trajectory(model, theta, Some(u_bar), grid)
}

#[derive(Debug, Clone)]
pub struct TrackingEstimate {
    pub theta_hat: Vec<f64>,
    pub lambda: f64,
    pub s_value: f64,
    /// Adjoint gradient of `S` at `θ̂`.
    pub grad: Vec<f64>,
    pub u_bar: GridFunction,
    /// `X_θ̂` (no perturbation).
    pub x_model: GridFunction,
    /// `X_{θ̂,ū}`.
    pub x_corrected: GridFunction,
    pub sse: f64,
    pub csse: f64,
    /// Row-major `p×p`.
    pub cov_theta: Option<Vec<f64>>,
    pub report: OptimizerReport,
}

/// Serializable part of a [`TrackingEstimate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub theta_hat: Vec<f64>,
    pub lambda: f64,
    #[serde(rename = "S")]
    pub s_value: f64,
    pub sse: f64,
    pub csse: f64,
    pub cov_theta: Option<Vec<Vec<f64>>>,
    pub u_bar_l2: Vec<f64>,
    pub optimizer_report: OptimizerReport,
}

impl TrackingEstimate {
    pub fn summary(&self) -> TrackingSummary {
        let p = self.theta_hat.len();
        TrackingSummary {
            theta_hat: self.theta_hat.clone(),
            lambda: self.lambda,
            s_value: self.s_value,
            sse: self.sse,
            csse: self.csse,
            cov_theta: self
                .cov_theta
                .as_ref()
                .map(|c| c.chunks(p).map(<[f64]>::to_vec).collect()),
            u_bar_l2: self.u_bar.component_l2_sq().iter().map(|v| v.sqrt()).collect(),
            optimizer_report: self.report.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }
}

/// Smooth, then minimize `S` at a fixed λ.
pub fn fit_tracking(
    model: &ModelSpec,
    data: &Dataset,
    lambda: f64,
    bounds: &ThetaBounds,
    config: &FitConfig,
) -> Result<TrackingEstimate> {
    let fit = smooth(model, data, config)?;
    fit_tracking_smoothed(model, data, &fit, lambda, bounds, config)
}

/// Minimize `S` at a fixed λ for an already smoothed dataset.
pub fn fit_tracking_smoothed(
    model: &ModelSpec,
    data: &Dataset,
    fit: &SplineFit,
    lambda: f64,
    bounds: &ThetaBounds,
    config: &FitConfig,
) -> Result<TrackingEstimate> {
    check_bounds(model, bounds)?;
    let grid = tracking_grid(model, lambda, config)?;
    let target = Target::from_spline(fit, &grid)?;
    let transform = optim::Transform::new(bounds);
    let starts = optim::latin_hypercube(bounds, config.n_starts.max(1), config.seed);
    let (best, report) = multi_start(&starts, |s| {
        optim::bfgs_box(
            |th| grad::value_and_grad(model, th, lambda, &target),
            s,
            &transform,
            &config.optim,
        )
    })?;
    let theta_hat = best.theta.clone();
    let (s_value, grad_at) = grad::value_and_grad(model, &theta_hat, lambda, &target)?;
    let sol = lq::solve_riccati(model, &theta_hat, lambda, &target)?;
    let tr = lq::closed_loop_trajectory(model, &theta_hat, &sol, &target)?;
    let x_model = lq::controlled_trajectory(model, &theta_hat, None, &grid)?;
    let sse_v = sse(data, &x_model)?;
    let csse_v = sse(data, &tr.x_cl)?;
    let cov_theta = if config.compute_variance {
        Some(variance::asymptotic_variance(model, &theta_hat, lambda, fit, &grid)?)
    } else {
        None
    };
    Ok(TrackingEstimate {
        theta_hat,
        lambda,
        s_value,
        grad: grad_at,
        u_bar: tr.u_bar,
        x_model,
        x_corrected: tr.x_cl,
        sse: sse_v,
        csse: csse_v,
        cov_theta,
        report,
    })
}

pub(crate) fn check_bounds(model: &ModelSpec, bounds: &ThetaBounds) -> Result<()> {
    if bounds.len() != model.p {
        return Err(Error::Dimension(format!(
            "bounds have {} entries, model has p = {}",
            bounds.len(),
            model.p
        )));
    }
    Ok(())
}

/// `Σᵢ‖Yᵢ‖²`.
pub fn data_energy(data: &Dataset) -> f64 {
    data.obs.iter().map(|v| v * v).sum()
}

/// Two SSE-type scores tie when they differ by at most 1e−9 relative or by
/// 1e−10 of the data energy, below which differences are solver noise.
pub fn is_tie(a: f64, b: f64, data_energy: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()) + 1e-10 * data_energy
}

/// Score used to pick λ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LambdaScore {
    Sse,
    Csse,
}

/// One grid point of a λ search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub theta_hat: Option<Vec<f64>>,
    #[serde(rename = "S")]
    pub s_value: Option<f64>,
    pub sse: Option<f64>,
    pub csse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub estimate: TrackingEstimate,
    pub rows: Vec<LambdaRow>,
}

/// Tracking fits over a λ grid sharing one smoothing fit.
#[derive(Debug)]
pub struct LambdaSweep {
    pub fit: SplineFit,
    /// `Σᵢ‖Yᵢ‖²`, the scale of the absolute tie tolerance.
    pub data_energy: f64,
    pub lambdas: Vec<f64>,
    pub fits: Vec<Result<TrackingEstimate>>,
}

/// Fit at every λ of the grid (concurrently when configured).
pub fn sweep_lambda(
    model: &ModelSpec,
    data: &Dataset,
    lambda_grid: &[f64],
    bounds: &ThetaBounds,
    config: &FitConfig,
) -> Result<LambdaSweep> {
    let fit = smooth(model, data, config)?;
    sweep_lambda_smoothed(model, data, fit, lambda_grid, bounds, config)
}

pub fn sweep_lambda_smoothed(
    model: &ModelSpec,
    data: &Dataset,
    fit: SplineFit,
    lambda_grid: &[f64],
    bounds: &ThetaBounds,
    config: &FitConfig,
) -> Result<LambdaSweep> {
    if lambda_grid.is_empty() {
        return Err(Error::Precondition("empty λ grid".into()));
    }
    let mut no_var = config.clone();
    no_var.compute_variance = false;
    let fits = parallel::map_with(lambda_grid, config.parallel, |&lambda| {
        fit_tracking_smoothed(model, data, &fit, lambda, bounds, &no_var)
    });
    Ok(LambdaSweep {
        fit,
        data_energy: data_energy(data),
        lambdas: lambda_grid.to_vec(),
        fits,
    })
}

impl LambdaSweep {
    pub fn rows(&self) -> Vec<LambdaRow> {
        self.lambdas
            .iter()
            .zip(&self.fits)
            .map(|(&lambda, f)| match f {
                Ok(e) => LambdaRow {
                    lambda,
                    theta_hat: Some(e.theta_hat.clone()),
                    s_value: Some(e.s_value),
                    sse: Some(e.sse),
                    csse: Some(e.csse),
                    error: None,
                },
                Err(err) => LambdaRow {
                    lambda,
                    theta_hat: None,
                    s_value: None,
                    sse: None,
                    csse: None,
                    error: Some(err.to_string()),
                },
            })
            .collect()
    }

    /// Index of the best successful fit; ties (see [`is_tie`]) go to the
    /// larger λ.
    pub fn best_index(&self, score: LambdaScore) -> Option<usize> {
        let value = |e: &TrackingEstimate| match score {
            LambdaScore::Sse => e.sse,
            LambdaScore::Csse => e.csse,
        };
        let mut best: Option<(usize, f64)> = None;
        for (i, f) in self.fits.iter().enumerate() {
            let Ok(e) = f else { continue };
            let v = value(e);
            best = match best {
                None => Some((i, v)),
                Some((b, vb)) => {
                    let tie = is_tie(v, vb, self.data_energy);
                    if (v < vb && !tie) || (tie && self.lambdas[i] > self.lambdas[b]) {
                        Some((i, v))
                    } else {
                        Some((b, vb))
                    }
                }
            };
        }
        best.map(|(i, _)| i)
    }

    /// The selected estimate, with the covariance attached when configured.
    pub fn select(
        &self,
        model: &ModelSpec,
        score: LambdaScore,
        config: &FitConfig,
    ) -> Result<LambdaSelection> {
        let Some(b) = self.best_index(score) else {
            let reason = self
                .fits
                .iter()
                .find_map(|f| f.as_ref().err().map(ToString::to_string))
                .unwrap_or_default();
            return Err(Error::EstimationFailed {
                starts: self.lambdas.len(),
                reason: format!("every λ failed: {reason}"),
            });
        };
        let lambda = self.lambdas[b];
        let mut estimate = self.fits[b].as_ref().expect("best is a success").clone();
        if config.compute_variance {
            let grid = tracking_grid(model, lambda, config)?;
            estimate.cov_theta = Some(variance::asymptotic_variance(
                model,
                &estimate.theta_hat,
                lambda,
                &self.fit,
                &grid,
            )?);
        }
        Ok(LambdaSelection {
            lambda,
            estimate,
            rows: self.rows(),
        })
    }
}

/// Fit at every λ of the grid and keep the best score.
pub fn select_lambda(
    model: &ModelSpec,
    data: &Dataset,
    lambda_grid: &[f64],
    bounds: &ThetaBounds,
    config: &FitConfig,
    score: LambdaScore,
) -> Result<LambdaSelection> {
    sweep_lambda(model, data, lambda_grid, bounds, config)?.select(model, score, config)
}

/// λ minimizing `SSE(λ) = Σᵢ ‖Yᵢ − X_{θ̂_λ}(tᵢ)‖²`.
pub fn select_lambda_sse(
    model: &ModelSpec,
    data: &Dataset,
    lambda_grid: &[f64],
    bounds: &ThetaBounds,
    config: &FitConfig,
) -> Result<LambdaSelection> {
    select_lambda(model, data, lambda_grid, bounds, config, LambdaScore::Sse)
}

/// λ minimizing `CSSE(λ) = Σᵢ ‖Yᵢ − X_{θ̂_λ,ū}(tᵢ)‖²`.
pub fn select_lambda_csse(
    model: &ModelSpec,
    data: &Dataset,
    lambda_grid: &[f64],
    bounds: &ThetaBounds,
    config: &FitConfig,
) -> Result<LambdaSelection> {
    select_lambda(model, data, lambda_grid, bounds, config, LambdaScore::Csse)
}

/// `{m·10^k : k ∈ ks, m ∈ mantissas}` in increasing order.
pub fn lambda_grid(ks: std::ops::RangeInclusive<i32>, mantissas: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = ks
        .flat_map(|k| mantissas.iter().map(move |m| m * 10f64.powi(k)))
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}
