//! Simulation of noisy datasets and Monte Carlo evaluation of the estimators.
//!
//! Every replicate draws from its own ChaCha8 streams keyed by
//! `(seed, replicate, purpose)`, so changing the estimator list never shifts
//! the simulated data. Replicates run concurrently and are reduced in
//! replicate order, which keeps reports bitwise reproducible.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{self, gs, nls, FitConfig, LambdaScore};
use crate::lq;
use crate::model::{self, parse_expr, ModelSpec, ThetaBounds};
use crate::odesolve::{quadrature_weights, GridFunction, TimeGrid};
use crate::parallel;
use crate::smoothing::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// Tracking with λ chosen by SSE.
    Tracking,
    /// Tracking with λ chosen by CSSE.
    TrackingCorrected,
    Nls,
    Gs,
    /// Returns the truth; a harness check.
    Oracle,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Tracking => "tracking",
            Self::TrackingCorrected => "tracking-corrected",
            Self::Nls => "nls",
            Self::Gs => "gs",
            Self::Oracle => "oracle",
        }
    }
}

/// Placement of the observation times on `[0, T]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeDesign {
    /// Sorted i.i.d. uniform draws (the first time pinned to 0 when the fit
    /// constrains the initial state).
    #[default]
    Random,
    Equispaced,
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::Tracking, EstimatorKind::Nls, EstimatorKind::Gs]
}

/// One Monte Carlo cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: String,
    /// Builtin model used for estimation.
    pub model: String,
    pub theta_star: Vec<f64>,
    pub n: usize,
    /// Noise standard deviation (percent of the state mean for relative noise).
    pub sigma: f64,
    pub n_mc: usize,
    /// Forcing added to the true dynamics, one expression per state.
    #[serde(default)]
    pub perturbation: Option<Vec<String>>,
    pub lambda_grid: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub time_design: TimeDesign,
    /// Per-state sd `(σ/100)·mean(X_i)`; defaults to on for α-pinene.
    #[serde(default)]
    pub relative_noise: Option<bool>,
    #[serde(default)]
    pub bounds: Option<ThetaBounds>,
    /// Horizon override (defaults to the model's).
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub fit: FitConfig,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Precondition(format!("n must be ≥ 2, got {}", self.n)));
        }
        if self.n_mc < 1 {
            return Err(Error::Precondition("n_mc must be ≥ 1".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Precondition(format!("sigma must be ≥ 0, got {}", self.sigma)));
        }
        Ok(())
    }

    /// The model fitted to the data.
    pub fn fit_model(&self) -> Result<ModelSpec> {
        let m = model::builtin(&self.model)?;
        match self.horizon {
            Some(h) => m.with_horizon(h),
            None => Ok(m),
        }
    }

    /// The data-generating model (fit model plus the perturbation).
    pub fn truth_model(&self) -> Result<ModelSpec> {
        let m = self.fit_model()?;
        if m.p != self.theta_star.len() {
            return Err(Error::Dimension(format!(
                "theta_star has {} entries, model has p = {}",
                self.theta_star.len(),
                m.p
            )));
        }
        match &self.perturbation {
            None => Ok(m),
            Some(exprs) => {
                let parsed = exprs
                    .iter()
                    .map(|e| parse_expr(e, m.p))
                    .collect::<Result<Vec<_>>>()?;
                m.with_forcing(&parsed)
            }
        }
    }

    pub fn bounds(&self) -> Result<ThetaBounds> {
        match &self.bounds {
            Some(b) => Ok(b.clone()),
            None => self.fit_model()?.default_bounds(),
        }
    }

    fn relative(&self) -> bool {
        self.relative_noise.unwrap_or(self.model == "alpha-pinene")
    }
}

/// What a random stream is used for.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Purpose {
    Times = 0,
    Noise = 1,
    Fresh = 2,
}

/// Independent stream for `(seed, replicate, purpose)`.
pub fn substream(seed: u64, replicate: usize, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((replicate as u64) << 4) | purpose as u64);
    rng
}

/// Noiseless truth on the solver grid together with the per-state noise sd.
#[derive(Debug, Clone)]
pub struct Truth {
    pub x: GridFunction,
    pub sd: Vec<f64>,
    pub grid: TimeGrid,
}

pub fn truth(spec: &ExperimentSpec) -> Result<Truth> {
    let m = spec.truth_model()?;
    let grid = TimeGrid::horizon(m.horizon, spec.fit.grid_steps.max(2))?;
    let x = lq::controlled_trajectory(&m, &spec.theta_star, None, &grid)?;
    let sd = if spec.relative() {
        let w = quadrature_weights(grid.n_steps, grid.h());
        (0..m.d)
            .map(|c| {
                let mean: f64 =
                    (0..grid.n_nodes()).map(|i| w[i] * x.row(i)[c]).sum::<f64>() / m.horizon;
                spec.sigma / 100.0 * mean.abs()
            })
            .collect()
    } else {
        vec![spec.sigma; m.d]
    };
    Ok(Truth { x, sd, grid })
}

fn sample_times(spec: &ExperimentSpec, horizon: f64, replicate: usize) -> Vec<f64> {
    let n = spec.n;
    match spec.time_design {
        TimeDesign::Equispaced => (0..n).map(|i| horizon * i as f64 / (n - 1) as f64).collect(),
        TimeDesign::Random => {
            let mut rng = substream(spec.seed, replicate, Purpose::Times);
            let pinned = usize::from(spec.fit.constrain_x0);
            let mut t: Vec<f64> = (0..n - pinned)
                .map(|_| rng.random_range(0.0..horizon))
                .collect();
            if pinned == 1 {
                t.push(0.0);
            }
            t.sort_by(f64::total_cmp);
            t
        }
    }
}

fn noisy(truth: &Truth, times: &[f64], rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let d = truth.sd.len();
    let mut obs = vec![0.0; times.len() * d];
    for (i, &t) in times.iter().enumerate() {
        truth.x.eval_into(t, &mut obs[i * d..(i + 1) * d])?;
    }
    for (k, v) in obs.iter_mut().enumerate() {
        let sd = truth.sd[k % d];
        if sd > 0.0 {
            *v += Normal::new(0.0, sd).expect("finite sd").sample(rng);
        }
    }
    Dataset::new(times.to_vec(), obs, d)
}

/// Replicate `replicate` of the cell: sorted times, truth (with the
/// perturbation if any) and Gaussian noise.
pub fn simulate_dataset(spec: &ExperimentSpec, replicate: usize) -> Result<Dataset> {
    spec.check()?;
    let truth = truth(spec)?;
    simulate_with(spec, &truth, replicate)
}

fn simulate_with(spec: &ExperimentSpec, truth: &Truth, replicate: usize) -> Result<Dataset> {
    let times = sample_times(spec, truth.grid.t1, replicate);
    noisy(truth, &times, &mut substream(spec.seed, replicate, Purpose::Noise))
}

/// Prediction errors of one trajectory against the truth.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct PredictionError {
    /// `∫‖X* − X̂‖² dt + Σ_c sd_c²·T`: expected squared L² distance to a
    /// fresh noisy trajectory.
    pub total: f64,
    /// `∫‖X* − X̂‖² dt`.
    pub noise_free: f64,
    /// `(T/n)·Σᵢ‖Y*ᵢ − X̂(tᵢ)‖²` on a fresh draw at the observation times.
    pub fresh_draw: f64,
}

fn prediction_error(truth: &Truth, x: &GridFunction, fresh: &Dataset) -> Result<PredictionError> {
    let d = truth.sd.len();
    let grid = truth.grid;
    let w = quadrature_weights(grid.n_steps, grid.h());
    let mut buf = vec![0.0; d];
    let mut noise_free = 0.0;
    for i in 0..grid.n_nodes() {
        x.eval_into(grid.time(i), &mut buf)?;
        noise_free += w[i]
            * truth
                .x
                .row(i)
                .iter()
                .zip(&buf)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
    }
    let horizon = grid.t1 - grid.t0;
    let noise: f64 = truth.sd.iter().map(|s| s * s).sum::<f64>() * horizon;
    let fresh_draw = estimate::sse(fresh, x)? * horizon / fresh.n() as f64;
    Ok(PredictionError {
        total: noise_free + noise,
        noise_free,
        fresh_draw,
    })
}

/// One estimator on one replicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub estimator: EstimatorKind,
    pub theta_hat: Option<Vec<f64>>,
    pub lambda: Option<f64>,
    pub pred: Option<PredictionError>,
    /// Prediction error of the model corrected by the estimated perturbation.
    pub corrected_pred: Option<PredictionError>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    pub estimator: EstimatorKind,
    pub replicates: usize,
    pub failures: usize,
    /// Mean over replicates and coordinates of `(θ̂ − θ*)²`.
    pub mse: f64,
    /// Mean over replicates and coordinates of `|θ̂ − θ*|/|θ*|`.
    pub are: f64,
    /// `‖mean(θ̂) − θ*‖²/p`.
    pub bias_sq: f64,
    pub pred_error: f64,
    pub pred_error_noise_free: f64,
    pub pred_error_fresh: f64,
    pub corrected_pred_error: Option<f64>,
    pub corrected_pred_error_noise_free: Option<f64>,
    pub corrected_pred_error_fresh: Option<f64>,
    pub mean_theta: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub spec: ExperimentSpec,
    pub noise_sd: Vec<f64>,
    pub metrics: Vec<EstimatorMetrics>,
    pub records: Vec<ReplicateRecord>,
}

impl MetricsReport {
    pub fn get(&self, kind: EstimatorKind) -> Option<&EstimatorMetrics> {
        self.metrics.iter().find(|m| m.estimator == kind)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per replicate per estimator.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let p = self.spec.theta_star.len();
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["replicate".to_string(), "estimator".into(), "lambda".into()];
        header.extend((1..=p).map(|k| format!("theta{k}")));
        header.extend(
            [
                "pred_error",
                "pred_error_noise_free",
                "pred_error_fresh",
                "corrected_pred_error",
                "corrected_pred_error_noise_free",
                "corrected_pred_error_fresh",
                "error",
            ]
            .map(String::from),
        );
        wr.write_record(&header).map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.records {
            let mut row = vec![
                r.replicate.to_string(),
                r.estimator.label().to_string(),
                opt(r.lambda),
            ];
            match &r.theta_hat {
                Some(t) => row.extend(t.iter().map(|v| format!("{v:e}"))),
                None => row.extend(std::iter::repeat_n(String::new(), p)),
            }
            for pe in [r.pred, r.corrected_pred] {
                row.push(opt(pe.map(|x| x.total)));
                row.push(opt(pe.map(|x| x.noise_free)));
                row.push(opt(pe.map(|x| x.fresh_draw)));
            }
            row.push(r.error.clone().unwrap_or_default());
            wr.write_record(&row).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

struct Fitted {
    theta: Vec<f64>,
    lambda: Option<f64>,
    x_model: GridFunction,
    corrected: Option<GridFunction>,
}

/// Fit every requested estimator to one replicate.
fn run_replicate(
    spec: &ExperimentSpec,
    truth: &Truth,
    model: &ModelSpec,
    bounds: &ThetaBounds,
    replicate: usize,
    config: &FitConfig,
) -> Vec<ReplicateRecord> {
    let failed = |kind, e: &Error| ReplicateRecord {
        replicate,
        estimator: kind,
        theta_hat: None,
        lambda: None,
        pred: None,
        corrected_pred: None,
        error: Some(e.to_string()),
    };
    let data = match simulate_with(spec, truth, replicate) {
        Ok(d) => d,
        Err(e) => return spec.estimators.iter().map(|&k| failed(k, &e)).collect(),
    };
    let fresh_times = sample_times(spec, truth.grid.t1, replicate);
    let fresh = noisy(truth, &fresh_times, &mut substream(spec.seed, replicate, Purpose::Fresh));
    let mut cfg = config.clone();
    cfg.seed = config.seed.wrapping_add(replicate as u64);

    let needs_sweep = spec
        .estimators
        .iter()
        .any(|k| matches!(k, EstimatorKind::Tracking | EstimatorKind::TrackingCorrected));
    let needs_fit = needs_sweep
        || spec
            .estimators
            .iter()
            .any(|k| matches!(k, EstimatorKind::Nls | EstimatorKind::Gs));
    let smooth = if needs_fit {
        Some(estimate::smooth(model, &data, &cfg))
    } else {
        None
    };
    let sweep = match (&smooth, needs_sweep) {
        (Some(Ok(fit)), true) => Some(estimate::sweep_lambda_smoothed(
            model,
            &data,
            fit.clone(),
            &spec.lambda_grid,
            bounds,
            &cfg,
        )),
        _ => None,
    };

    let fit_one = |kind: EstimatorKind| -> Result<Fitted> {
        if let Some(Err(e)) = &smooth {
            return Err(Error::Precondition(format!("smoothing failed: {e}")));
        }
        match kind {
            EstimatorKind::Tracking | EstimatorKind::TrackingCorrected => {
                let score = if kind == EstimatorKind::Tracking {
                    LambdaScore::Sse
                } else {
                    LambdaScore::Csse
                };
                let sweep = match sweep.as_ref().expect("sweep computed") {
                    Ok(s) => s,
                    Err(e) => return Err(Error::Precondition(e.to_string())),
                };
                let sel = sweep.select(model, score, &cfg)?;
                Ok(Fitted {
                    theta: sel.estimate.theta_hat,
                    lambda: Some(sel.lambda),
                    x_model: sel.estimate.x_model,
                    corrected: Some(sel.estimate.x_corrected),
                })
            }
            EstimatorKind::Nls => {
                let fit = smooth.as_ref().expect("smoothed").as_ref().expect("checked");
                let est = nls::fit_nls(model, &data, bounds, &cfg)?;
                let grid = TimeGrid::horizon(model.horizon, cfg.grid_steps)?;
                let u = nls::estimate_perturbation_nls(model, &est.theta_hat, fit, &grid)?;
                let corrected = estimate::corrected_trajectory(model, &est.theta_hat, &u, &grid)?;
                Ok(Fitted {
                    theta: est.theta_hat,
                    lambda: None,
                    x_model: est.x_model,
                    corrected: Some(corrected),
                })
            }
            EstimatorKind::Gs => {
                let fit = smooth.as_ref().expect("smoothed").as_ref().expect("checked");
                let est =
                    gs::select_gs_lambda(model, &data, &spec.lambda_grid, bounds, &fit.basis, &cfg)?;
                Ok(Fitted {
                    theta: est.theta_hat,
                    lambda: Some(est.lambda),
                    x_model: est.x_model,
                    corrected: None,
                })
            }
            EstimatorKind::Oracle => {
                let grid = TimeGrid::horizon(model.horizon, cfg.grid_steps)?;
                let x = lq::controlled_trajectory(model, &spec.theta_star, None, &grid)?;
                Ok(Fitted {
                    theta: spec.theta_star.clone(),
                    lambda: None,
                    x_model: x,
                    corrected: None,
                })
            }
        }
    };

    spec.estimators
        .iter()
        .map(|&kind| {
            let out = fresh.as_ref().map_err(|e| Error::Dataset(e.to_string())).and_then(|fresh| {
                let f = fit_one(kind)?;
                let pred = prediction_error(truth, &f.x_model, fresh)?;
                let corrected_pred = match &f.corrected {
                    Some(x) => Some(prediction_error(truth, x, fresh)?),
                    None => None,
                };
                Ok((f, pred, corrected_pred))
            });
            match out {
                Ok((f, pred, corrected_pred)) => ReplicateRecord {
                    replicate,
                    estimator: kind,
                    theta_hat: Some(f.theta),
                    lambda: f.lambda,
                    pred: Some(pred),
                    corrected_pred,
                    error: None,
                },
                Err(e) => failed(kind, &e),
            }
        })
        .collect()
}

/// Aggregate the records of one estimator.
pub fn aggregate(
    kind: EstimatorKind,
    theta_star: &[f64],
    records: &[ReplicateRecord],
) -> EstimatorMetrics {
    let mine: Vec<&ReplicateRecord> = records.iter().filter(|r| r.estimator == kind).collect();
    let ok: Vec<&ReplicateRecord> = mine.iter().copied().filter(|r| r.theta_hat.is_some()).collect();
    let p = theta_star.len();
    let n = ok.len();
    let mean = |f: &dyn Fn(&ReplicateRecord) -> f64| -> f64 {
        if n == 0 {
            f64::NAN
        } else {
            ok.iter().map(|r| f(r)).sum::<f64>() / n as f64
        }
    };
    let theta = |r: &ReplicateRecord| r.theta_hat.clone().expect("filtered");
    let mse = mean(&|r| {
        theta(r)
            .iter()
            .zip(theta_star)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / p as f64
    });
    let are = mean(&|r| {
        theta(r)
            .iter()
            .zip(theta_star)
            .map(|(a, b)| (a - b).abs() / b.abs())
            .sum::<f64>()
            / p as f64
    });
    let mean_theta: Vec<f64> = (0..p).map(|k| mean(&|r| theta(r)[k])).collect();
    let bias_sq = mean_theta
        .iter()
        .zip(theta_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / p as f64;
    let pred = |f: fn(&PredictionError) -> f64| mean(&|r| r.pred.as_ref().map(f).unwrap_or(f64::NAN));
    let has_corrected = n > 0 && ok.iter().all(|r| r.corrected_pred.is_some());
    let corrected = |f: fn(&PredictionError) -> f64| {
        has_corrected.then(|| mean(&|r| f(r.corrected_pred.as_ref().expect("checked"))))
    };
    EstimatorMetrics {
        estimator: kind,
        replicates: mine.len(),
        failures: mine.len() - n,
        mse,
        are,
        bias_sq,
        pred_error: pred(|p| p.total),
        pred_error_noise_free: pred(|p| p.noise_free),
        pred_error_fresh: pred(|p| p.fresh_draw),
        corrected_pred_error: corrected(|p| p.total),
        corrected_pred_error_noise_free: corrected(|p| p.noise_free),
        corrected_pred_error_fresh: corrected(|p| p.fresh_draw),
        mean_theta,
    }
}

/// Run the cell with the spec's own parallel setting.
pub fn run_monte_carlo(spec: &ExperimentSpec) -> Result<MetricsReport> {
    run_monte_carlo_with(spec, spec.fit.parallel)
}

/// Run the cell, replicates concurrently when `parallel` is set (each fit is
/// then internally sequential).
pub fn run_monte_carlo_with(spec: &ExperimentSpec, parallel: bool) -> Result<MetricsReport> {
    spec.check()?;
    let truth = truth(spec)?;
    let model = spec.fit_model()?;
    let bounds = spec.bounds()?;
    let mut inner = spec.fit.clone();
    inner.parallel = inner.parallel && !parallel;
    let reps: Vec<usize> = (0..spec.n_mc).collect();
    let per_rep = parallel::map_with(&reps, parallel, |&r| {
        run_replicate(spec, &truth, &model, &bounds, r, &inner)
    });
    let records: Vec<ReplicateRecord> = per_rep.into_iter().flatten().collect();
    let metrics = spec
        .estimators
        .iter()
        .map(|&k| aggregate(k, &spec.theta_star, &records))
        .collect();
    Ok(MetricsReport {
        spec: spec.clone(),
        noise_sd: truth.sd.clone(),
        metrics,
        records,
    })
}
