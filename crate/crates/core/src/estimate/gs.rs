//! Generalized smoothing baseline. For a linear ODE the inner penalized
//! criterion `Σᵢ‖Yᵢ − X̂(tᵢ)‖² + λ∫‖X̂̇ − A_θX̂ − r_θ‖²` is quadratic in the
//! spline coefficients and is solved in closed form; the outer problem
//! minimizes the proxy SSE over θ with Nelder-Mead.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    check_bounds, data_energy, is_tie, multi_start, optim, sse, FitConfig, GsLambdaScore,
    OptimizerReport,
};
use crate::error::{Error, Result};
use crate::lq;
use crate::model::{ModelSpec, TapeScratch, ThetaBounds};
use crate::odesolve::{quadrature_weights, GridFunction, TimeGrid};
use crate::parallel;
use crate::smoothing::{Dataset, SplineBasis};

/// Everything in the inner problem that does not depend on θ.
pub struct GsProblem<'a> {
    model: &'a ModelSpec,
    basis: &'a SplineBasis,
    grid: TimeGrid,
    d: usize,
    k: usize,
    /// `BᵀB`, `K×K`.
    btb: DMatrix<f64>,
    /// `BᵀY_s` for every state, `K×d`.
    bty: DMatrix<f64>,
    /// Design rows at the observation times (`n×K`).
    design: DMatrix<f64>,
    y: DMatrix<f64>,
    /// Local basis values and derivatives at the quadrature nodes.
    local: Vec<(usize, [f64; 4], [f64; 4])>,
    weights: Vec<f64>,
    x0: Option<Vec<f64>>,
}

impl<'a> GsProblem<'a> {
    pub fn new(
        model: &'a ModelSpec,
        data: &Dataset,
        basis: &'a SplineBasis,
        grid: TimeGrid,
        constrain_x0: bool,
    ) -> Result<Self> {
        let (d, k) = (model.d, basis.dim());
        if data.d != d {
            return Err(Error::Dimension(format!(
                "data has {} states, model has d = {d}",
                data.d
            )));
        }
        let design = basis.design(&data.times)?;
        let y = DMatrix::from_fn(data.n(), d, |i, s| data.row(i)[s]);
        let btb = design.transpose() * &design;
        let bty = design.transpose() * &y;
        let mut local = Vec::with_capacity(grid.n_nodes());
        for i in 0..grid.n_nodes() {
            let mut v = [0.0; 4];
            let mut dv = [0.0; 4];
            let first = basis.local(grid.time(i), &mut v, &mut dv)?;
            local.push((first, v, dv));
        }
        Ok(Self {
            model,
            basis,
            weights: quadrature_weights(grid.n_steps, grid.h()),
            grid,
            d,
            k,
            btb,
            bty,
            design,
            y,
            local,
            x0: constrain_x0.then(|| model.x0.clone()),
        })
    }

    /// Inner minimizer, `coeffs[k + s·K]`.
    pub fn inner(&self, theta: &[f64], lambda: f64) -> Result<Vec<f64>> {
        let (d, k) = (self.d, self.k);
        let dk = d * k;
        let mut n = DMatrix::<f64>::zeros(dk, dk);
        let mut rhs = DVector::<f64>::zeros(dk);
        for s in 0..d {
            for a in 0..k {
                rhs[a + s * k] = self.bty[(a, s)];
                for b in 0..k {
                    n[(a + s * k, b + s * k)] = self.btb[(a, b)];
                }
            }
        }
        if lambda > 0.0 {
            self.model.check_theta(theta)?;
            let mut scratch = TapeScratch::default();
            let mut a = vec![0.0; d * d];
            let mut r = vec![0.0; d];
            // Local columns of L = δ_cs p'_k − A_cs p_k, indexed (l, s).
            let w = 4 * d;
            let mut lc = vec![0.0; w * d];
            for (i, (first, v, dv)) in self.local.iter().enumerate() {
                let wt = lambda * self.weights[i];
                if wt == 0.0 {
                    continue;
                }
                let t = self.grid.time(i);
                self.model.eval_a_into(theta, t, &mut a, &mut scratch)?;
                self.model.eval_r_into(theta, t, &mut r, &mut scratch)?;
                for s in 0..d {
                    for l in 0..4 {
                        let col = &mut lc[(l + 4 * s) * d..(l + 4 * s + 1) * d];
                        for c in 0..d {
                            col[c] = -a[c + s * d] * v[l];
                        }
                        col[s] += dv[l];
                    }
                }
                for j1 in 0..w {
                    let g1 = first + j1 % 4 + (j1 / 4) * k;
                    let c1 = &lc[j1 * d..(j1 + 1) * d];
                    rhs[g1] += wt * c1.iter().zip(&r).map(|(x, y)| x * y).sum::<f64>();
                    for j2 in 0..w {
                        let g2 = first + j2 % 4 + (j2 / 4) * k;
                        let c2 = &lc[j2 * d..(j2 + 1) * d];
                        n[(g1, g2)] += wt * c1.iter().zip(c2).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
        }
        let fixed: Vec<Option<f64>> = (0..dk)
            .map(|j| match &self.x0 {
                Some(x0) if j % k == 0 => Some(x0[j / k]),
                _ => None,
            })
            .collect();
        let free: Vec<usize> = (0..dk).filter(|&j| fixed[j].is_none()).collect();
        let mut nf = DMatrix::<f64>::zeros(free.len(), free.len());
        let mut bf = DVector::<f64>::zeros(free.len());
        for (a, &ga) in free.iter().enumerate() {
            let mut b = rhs[ga];
            for (j, f) in fixed.iter().enumerate() {
                if let Some(v) = f {
                    b -= n[(ga, j)] * v;
                }
            }
            bf[a] = b;
            for (c, &gc) in free.iter().enumerate() {
                nf[(a, c)] = n[(ga, gc)];
            }
        }
        let sol = nf
            .cholesky()
            .ok_or_else(|| Error::Singular("generalized smoothing inner normal matrix".into()))?
            .solve(&bf);
        let mut coeffs: Vec<f64> = fixed.iter().map(|f| f.unwrap_or(0.0)).collect();
        for (a, &ga) in free.iter().enumerate() {
            coeffs[ga] = sol[a];
        }
        Ok(coeffs)
    }

    /// `Σᵢ‖Yᵢ − X̂(tᵢ)‖²` for a coefficient vector.
    pub fn proxy_sse(&self, coeffs: &[f64]) -> f64 {
        let k = self.k;
        let mut total = 0.0;
        for s in 0..self.d {
            let c = DVector::from_column_slice(&coeffs[s * k..(s + 1) * k]);
            let fitted = &self.design * c;
            total += (0..self.y.nrows())
                .map(|i| (self.y[(i, s)] - fitted[i]).powi(2))
                .sum::<f64>();
        }
        total
    }

    /// The proxy `X̂(·, θ)` on the quadrature grid.
    pub fn proxy(&self, coeffs: &[f64]) -> Result<GridFunction> {
        let (d, k) = (self.d, self.k);
        GridFunction::from_fn(self.grid, d, |t, out| {
            let vals = self.basis.eval(t).expect("grid inside the basis span");
            for (s, o) in out.iter_mut().enumerate() {
                *o = (0..k).map(|j| coeffs[j + s * k] * vals[j]).sum();
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct GsEstimate {
    pub theta_hat: Vec<f64>,
    pub lambda: f64,
    pub coeffs: Vec<f64>,
    pub proxy_sse: f64,
    /// `Σᵢ‖Yᵢ − X_θ̂(tᵢ)‖²` on the exact ODE solution.
    pub sse: f64,
    pub x_model: GridFunction,
    /// λ = 0: θ has no effect on the inner fit, so θ̂ is arbitrary.
    pub degenerate: bool,
    pub report: OptimizerReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GsSummary {
    pub theta_hat: Vec<f64>,
    pub lambda: f64,
    pub proxy_sse: f64,
    pub sse: f64,
    pub degenerate: bool,
    pub optimizer_report: OptimizerReport,
}

impl GsEstimate {
    pub fn summary(&self) -> GsSummary {
        GsSummary {
            theta_hat: self.theta_hat.clone(),
            lambda: self.lambda,
            proxy_sse: self.proxy_sse,
            sse: self.sse,
            degenerate: self.degenerate,
            optimizer_report: self.report.clone(),
        }
    }
}

pub fn fit_gs(
    model: &ModelSpec,
    data: &Dataset,
    lambda: f64,
    bounds: &ThetaBounds,
    basis: &SplineBasis,
    config: &FitConfig,
) -> Result<GsEstimate> {
    check_bounds(model, bounds)?;
    data.check_span(0.0, model.horizon)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Precondition(format!("GS penalty must be finite and ≥ 0, got {lambda}")));
    }
    let grid = TimeGrid::horizon(model.horizon, config.grid_steps)?;
    let problem = GsProblem::new(model, data, basis, grid, config.constrain_x0)?;
    let transform = optim::Transform::new(bounds);
    let starts = optim::latin_hypercube(bounds, config.gs_starts.max(1), config.seed);
    let degenerate = lambda == 0.0;
    let (best, report) = if degenerate {
        let coeffs = problem.inner(&starts[0], 0.0)?;
        let f = problem.proxy_sse(&coeffs);
        multi_start(&starts[..1], |s| {
            Ok(optim::LocalResult {
                start: s.to_vec(),
                theta: s.to_vec(),
                f,
                proj_grad: 0.0,
                iterations: 0,
                evaluations: 1,
                converged: false,
                status: "degenerate: zero penalty".into(),
            })
        })?
    } else {
        multi_start(&starts, |s| {
            optim::nelder_mead(
                |th| Ok(problem.proxy_sse(&problem.inner(th, lambda)?)),
                s,
                &transform,
                &config.optim,
            )
        })?
    };
    let coeffs = problem.inner(&best.theta, lambda)?;
    let x_model = lq::controlled_trajectory(model, &best.theta, None, &grid)?;
    Ok(GsEstimate {
        sse: sse(data, &x_model)?,
        proxy_sse: problem.proxy_sse(&coeffs),
        theta_hat: best.theta,
        lambda,
        coeffs,
        x_model,
        degenerate,
        report,
    })
}

/// Fit at every λ of the grid and keep the lowest score chosen by
/// `config.gs_lambda_score` (ties to the larger λ). Failed fits are skipped.
pub fn select_gs_lambda(
    model: &ModelSpec,
    data: &Dataset,
    lambda_grid: &[f64],
    bounds: &ThetaBounds,
    basis: &SplineBasis,
    config: &FitConfig,
) -> Result<GsEstimate> {
    if lambda_grid.is_empty() {
        return Err(Error::Precondition("empty λ grid".into()));
    }
    let fits = parallel::map_with(lambda_grid, config.parallel, |&lambda| {
        fit_gs(model, data, lambda, bounds, basis, config)
    });
    let score = |e: &GsEstimate| match config.gs_lambda_score {
        GsLambdaScore::ProxySse => e.proxy_sse,
        GsLambdaScore::OdeSse => e.sse,
    };
    let energy = data_energy(data);
    let mut best: Option<GsEstimate> = None;
    let mut first_err = None;
    for f in fits {
        match f {
            Ok(e) => {
                let take = match &best {
                    None => true,
                    Some(b) => {
                        let (se, sb) = (score(&e), score(b));
                        let tie = is_tie(se, sb, energy);
                        (se < sb && !tie) || (tie && e.lambda > b.lambda)
                    }
                };
                if take {
                    best = Some(e);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e.to_string());
            }
        }
    }
    best.ok_or_else(|| Error::EstimationFailed {
        starts: lambda_grid.len(),
        reason: first_err.unwrap_or_default(),
    })
}
