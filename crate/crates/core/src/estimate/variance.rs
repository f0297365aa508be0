//! Plug-in asymptotic covariance of the Tracking estimator.
//!
//! Near the truth `∇S ≈ −2∫φᵀδ` with `δ = ζ − X_θ` and `φ` solving
//! `φ̇ = M + Hs/λ + (A + E/λ)φ`, `φ(0) = 0`, where `M = ∂β/∂θ` and
//! `Hs = ∂h/∂θ`. Linearizing in the spline coefficients gives
//! `Var θ̂ ≈ 4 H⁻¹ (Σ_s P_s Cov_s P_sᵀ) H⁻¹` with `P_s[m,k] = ∫φ_{s,m} p_k`
//! and `H = ∇²S = −2∫(MᵀHs + HsᵀM) − (2/λ)∫HsᵀHs`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grad::{self, RowField};
use crate::lq::Target;
use crate::model::ModelSpec;
use crate::odesolve::{integrate_ivp, quadrature_weights, Stage, TimeGrid};
use crate::smoothing::SplineFit;

/// Intermediate matrices, all row-major.
#[derive(Debug, Clone)]
pub struct VarianceParts {
    /// `p×p` Hessian of `S`.
    pub hessian: Vec<f64>,
    /// `p×(dK)`, column `k + s·K`: derivative of `−½∇S` along spline coefficient `k` of state `s`.
    pub p_matrix: Vec<f64>,
    /// `Σ_s P_s Cov_s P_sᵀ`, `p×p`.
    pub middle: Vec<f64>,
    /// `p×p` covariance of `θ̂`.
    pub cov: Vec<f64>,
    pub p: usize,
    pub k: usize,
    pub d: usize,
}

/// Covariance of `θ̂`, row-major `p×p`.
pub fn asymptotic_variance(
    model: &ModelSpec,
    theta: &[f64],
    lambda: f64,
    fit: &SplineFit,
    grid: &TimeGrid,
) -> Result<Vec<f64>> {
    Ok(variance_parts(model, theta, lambda, fit, grid)?.cov)
}

/// `H` and `P` at `θ` for the target given by `fit`, without the covariance.
pub fn hessian_and_p(
    model: &ModelSpec,
    theta: &[f64],
    lambda: f64,
    fit: &SplineFit,
    grid: &TimeGrid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let target = Target::from_spline(fit, grid)?;
    let (d, p) = (model.d, model.p);
    let field = RowField::new(model, theta, lambda, &target)?;
    let sens = grad::sensitivity_solve(model, theta, lambda, &target)?;
    let dq = grad::q_dim(d);
    let n_half = 2 * grid.n_steps + 1;

    // E and Hs at every half step (Hermite between nodes).
    let mut e_half = vec![0.0; n_half * d * d];
    let mut hs_half = vec![0.0; n_half * d * p];
    let mut qbuf = vec![0.0; dq];
    let mut zbuf = vec![0.0; dq * p];
    for k in 0..n_half {
        let t = grid.half_time(k);
        sens.q.eval_into(t, &mut qbuf)?;
        sens.z.eval_into(t, &mut zbuf)?;
        e_half[k * d * d..(k + 1) * d * d].copy_from_slice(&qbuf[d..]);
        hs_half[k * d * p..(k + 1) * d * p].copy_from_slice(&zbuf[..d * p]);
    }

    let samples = field.samples();
    let phi = integrate_ivp(
        |st: Stage, y, dy| {
            let k = st.half;
            let a = samples.a(k);
            let e = &e_half[k * d * d..(k + 1) * d * d];
            let mb = field.dbeta(k);
            let hs = &hs_half[k * d * p..(k + 1) * d * p];
            for c in 0..d {
                for m in 0..p {
                    let mut s = mb[c + m * d] + hs[c * p + m] / lambda;
                    for j in 0..d {
                        s += (a[c + j * d] + e[c + j * d] / lambda) * y[j * p + m];
                    }
                    dy[c * p + m] = s;
                }
            }
        },
        &vec![0.0; d * p],
        grid,
    )?;

    let w = quadrature_weights(grid.n_steps, grid.h());
    let mut hess = vec![0.0; p * p];
    let kb = fit.k();
    let mut pm = vec![0.0; p * d * kb];
    let mut bv = [0.0; 4];
    let mut bd = [0.0; 4];
    for i in 0..grid.n_nodes() {
        let mb = field.dbeta(2 * i);
        let hs = &hs_half[2 * i * d * p..(2 * i + 1) * d * p];
        for a in 0..p {
            for b in 0..p {
                let mut s = 0.0;
                for c in 0..d {
                    let (ma, mbb) = (mb[c + a * d], mb[c + b * d]);
                    let (ha, hb) = (hs[c * p + a], hs[c * p + b]);
                    s += -2.0 * (ma * hb + ha * mbb) - 2.0 / lambda * ha * hb;
                }
                hess[a * p + b] += w[i] * s;
            }
        }
        let first = fit.basis.local(grid.time(i), &mut bv, &mut bd)?;
        let ph = phi.row(i);
        for s in 0..d {
            for m in 0..p {
                let v = w[i] * ph[s * p + m];
                for (l, b) in bv.iter().enumerate() {
                    pm[m * d * kb + (first + l) + s * kb] += v * b;
                }
            }
        }
    }
    Ok((hess, pm))
}

pub fn variance_parts(
    model: &ModelSpec,
    theta: &[f64],
    lambda: f64,
    fit: &SplineFit,
    grid: &TimeGrid,
) -> Result<VarianceParts> {
    let (d, p, kb) = (model.d, model.p, fit.k());
    let (hessian, p_matrix) = hessian_and_p(model, theta, lambda, fit, grid)?;
    let mut middle = DMatrix::<f64>::zeros(p, p);
    for s in 0..d {
        let ps = DMatrix::from_fn(p, kb, |m, k| p_matrix[m * d * kb + k + s * kb]);
        let cov = DMatrix::from_column_slice(kb, kb, &fit.coeff_covariance(s));
        middle += &ps * cov * ps.transpose();
    }
    let h = DMatrix::from_row_slice(p, p, &hessian);
    let h_inv = h
        .clone()
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular(format!("Hessian of S at theta = {theta:?}")))?;
    let cov = (&h_inv * &middle * &h_inv) * 4.0;
    let cov = 0.5 * (&cov + cov.transpose());
    let row_major = |m: &DMatrix<f64>| -> Vec<f64> {
        (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect()
    };
    Ok(VarianceParts {
        hessian,
        p_matrix,
        middle: row_major(&middle),
        cov: row_major(&cov),
        p,
        k: kb,
        d,
    })
}
