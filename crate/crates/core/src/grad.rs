//! Gradient of the profiled criterion `S` with respect to θ.
//!
//! The Riccati pair is written as one row state `Q = (h, E)` of size
//! `D = d + d²` (E stored column by column, so `E_ij` sits at `d + i + j·d`)
//! solving `Q̇ = F(Q, θ, t)`, `Q(T) = 0`, and
//!
//! `S = B(Q(0)) + ∫₀ᵀ g(Q, θ, t) dt`,  `g = −2βᵀh − ‖h‖²/λ`,
//!
//! with `B` the boundary term of [`crate::lq`]. The adjoint row `P` solves
//! `Ṗ = ∂g/∂Q − P ∂F/∂Q` forward from `P(0) = ∂B/∂Q` and gives
//! `∇S = ∫ (∂g/∂θ − P ∂F/∂θ) dt`. The sensitivity method integrates
//! `Ż = ∂F/∂Q Z + ∂F/∂θ`, `Z(T) = 0`, and gives
//! `∇S = ∂B/∂Q Z(0) + ∫ (∂g/∂Q Z + ∂g/∂θ) dt`. Central finite differences
//! serve as a third, independent route.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{dot, mat_t_vec, mat_vec};
use crate::lq::{self, Target};
use crate::model::{ModelSamples, ModelSpec};
use crate::odesolve::{integrate_fvp, integrate_ivp, integrate_samples, GridFunction, Stage};

/// Size of the row state for dimension `d`.
#[inline]
pub fn q_dim(d: usize) -> usize {
    d + d * d
}

/// Position of `E_ij` inside `Q`. Every routine in this module indexes the
/// E block through this helper.
#[inline]
pub fn e_index(d: usize, i: usize, j: usize) -> usize {
    d + i + j * d
}

/// Split `Q` into `(h, E)`; `E` comes out column-major.
#[inline]
pub fn split_q(q: &[f64], d: usize) -> (&[f64], &[f64]) {
    q.split_at(d)
}

/// `Q` from `h` and a column-major `E`.
pub fn join_q(h: &[f64], e: &[f64]) -> Vec<f64> {
    let mut q = h.to_vec();
    q.extend_from_slice(e);
    q
}

// ---------------------------------------------------------------------------
// Pointwise kernels. `a` is column-major `d×d`, `da` holds `∂A_ij/∂θ_m` at
// `i + j·d + m·d²`, `dbeta` holds `∂β_c/∂θ_m` at `c + m·d`.

/// `F(Q)`: `G = −(Aᵀ + E/λ)h − Eβ` and `H_ij = δ_ij − A_iᵀE_j − A_jᵀE_i − E_iᵀE_j/λ`
/// (`A_i`, `E_i` the i-th columns).
fn field(a: &[f64], beta: &[f64], lambda: f64, d: usize, q: &[f64], out: &mut [f64]) {
    let (h, e) = split_q(q, d);
    let (g, hh) = out.split_at_mut(d);
    mat_t_vec(a, h, g, d);
    for i in 0..d {
        let mut s = 0.0;
        for l in 0..d {
            s += e[e_index(d, i, l) - d] * (h[l] / lambda + beta[l]);
        }
        g[i] = -g[i] - s;
    }
    for j in 0..d {
        let aj = &a[j * d..(j + 1) * d];
        let ej = &e[j * d..(j + 1) * d];
        for i in 0..d {
            let ai = &a[i * d..(i + 1) * d];
            let ei = &e[i * d..(i + 1) * d];
            let delta = if i == j { 1.0 } else { 0.0 };
            hh[i + j * d] = delta - dot(ai, ej) - dot(aj, ei) - dot(ei, ej) / lambda;
        }
    }
}

/// `∂F/∂Q`, row-major `D×D` (`out[r·D + c] = ∂F_r/∂Q_c`).
fn field_jac_q(a: &[f64], beta: &[f64], lambda: f64, d: usize, q: &[f64], out: &mut [f64]) {
    let dq = q_dim(d);
    let (h, e) = split_q(q, d);
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..d {
        let row = &mut out[i * dq..(i + 1) * dq];
        for k in 0..d {
            row[k] = -a[k + i * d] - e[i + k * d] / lambda;
        }
        for l in 0..d {
            row[e_index(d, i, l)] = -(h[l] / lambda + beta[l]);
        }
    }
    for j in 0..d {
        for i in 0..d {
            let r = e_index(d, i, j);
            let row = &mut out[r * dq..(r + 1) * dq];
            for k in 0..d {
                // The two blocks land on the same entries when i == j and add up.
                row[e_index(d, k, j)] -= a[k + i * d] + e[k + i * d] / lambda;
                row[e_index(d, k, i)] -= a[k + j * d] + e[k + j * d] / lambda;
            }
        }
    }
}

/// `∂F/∂θ`, row-major `D×p`.
fn field_jac_theta(da: &[f64], dbeta: &[f64], d: usize, p: usize, q: &[f64], out: &mut [f64]) {
    let (h, e) = split_q(q, d);
    let d2 = d * d;
    for m in 0..p {
        let dam = &da[m * d2..(m + 1) * d2];
        let dbm = &dbeta[m * d..(m + 1) * d];
        for i in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += dam[k + i * d] * h[k] + e[i + k * d] * dbm[k];
            }
            out[i * p + m] = -s;
        }
        for j in 0..d {
            for i in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += dam[k + i * d] * e[k + j * d] + dam[k + j * d] * e[k + i * d];
                }
                out[e_index(d, i, j) * p + m] = -s;
            }
        }
    }
}

fn running_cost(beta: &[f64], lambda: f64, d: usize, q: &[f64]) -> f64 {
    let h = &q[..d];
    -2.0 * dot(beta, h) - dot(h, h) / lambda
}

/// `∂g/∂Q`; the E block is identically zero.
fn running_cost_q(beta: &[f64], lambda: f64, d: usize, q: &[f64], out: &mut [f64]) {
    for c in 0..d {
        out[c] = -2.0 * beta[c] - 2.0 * q[c] / lambda;
    }
    out[d..].iter_mut().for_each(|v| *v = 0.0);
}

fn running_cost_theta(dbeta: &[f64], d: usize, p: usize, q: &[f64], out: &mut [f64]) {
    for m in 0..p {
        out[m] = -2.0 * dot(&dbeta[m * d..(m + 1) * d], &q[..d]);
    }
}

// ---------------------------------------------------------------------------

/// Row-form field with `β` and `∂β/∂θ` tabulated at the half steps.
pub struct RowField {
    samples: ModelSamples,
    lambda: f64,
    d: usize,
    p: usize,
    z0: Vec<f64>,
    beta: Vec<f64>,
    dbeta: Vec<f64>,
}

impl RowField {
    pub fn new(model: &ModelSpec, theta: &[f64], lambda: f64, target: &Target) -> Result<Self> {
        lq::check_lambda(lambda)?;
        let grid = *target.grid();
        target.check(model, &grid)?;
        let samples = model.sample(theta, &grid)?;
        let (d, p) = (model.d, model.p);
        let m = samples.n_half();
        let mut beta = vec![0.0; m * d];
        let mut dbeta = vec![0.0; m * d * p];
        let mut tmp = vec![0.0; d];
        for k in 0..m {
            let (a, r, z, zd) = (samples.a(k), samples.r(k), target.z(k), target.zd(k)?);
            let b = &mut beta[k * d..(k + 1) * d];
            mat_vec(a, z, b, d);
            for c in 0..d {
                b[c] += r[c] - zd[c];
            }
            let (da, dr) = (samples.da(k), samples.dr(k));
            for j in 0..p {
                mat_vec(&da[j * d * d..(j + 1) * d * d], z, &mut tmp, d);
                for c in 0..d {
                    dbeta[k * d * p + j * d + c] = tmp[c] + dr[c + j * d];
                }
            }
        }
        let z0 = model.x0.iter().zip(target.z(0)).map(|(x, z)| x - z).collect();
        Ok(Self {
            samples,
            lambda,
            d,
            p,
            z0,
            beta,
            dbeta,
        })
    }

    pub fn dim(&self) -> usize {
        q_dim(self.d)
    }

    pub fn samples(&self) -> &ModelSamples {
        &self.samples
    }

    #[inline]
    fn beta(&self, k: usize) -> &[f64] {
        &self.beta[k * self.d..(k + 1) * self.d]
    }

    /// `∂β/∂θ` at half step `k`, `∂β_c/∂θ_m` at `c + m·d`.
    #[inline]
    pub fn dbeta(&self, k: usize) -> &[f64] {
        let b = self.d * self.p;
        &self.dbeta[k * b..(k + 1) * b]
    }

    pub fn eval(&self, half: usize, q: &[f64], out: &mut [f64]) {
        field(self.samples.a(half), self.beta(half), self.lambda, self.d, q, out)
    }

    pub fn jac_q(&self, half: usize, q: &[f64], out: &mut [f64]) {
        field_jac_q(self.samples.a(half), self.beta(half), self.lambda, self.d, q, out)
    }

    pub fn jac_theta(&self, half: usize, q: &[f64], out: &mut [f64]) {
        field_jac_theta(self.samples.da(half), self.dbeta(half), self.d, self.p, q, out)
    }

    pub fn g(&self, half: usize, q: &[f64]) -> f64 {
        running_cost(self.beta(half), self.lambda, self.d, q)
    }

    pub fn g_q(&self, half: usize, q: &[f64], out: &mut [f64]) {
        running_cost_q(self.beta(half), self.lambda, self.d, q, out)
    }

    pub fn g_theta(&self, half: usize, q: &[f64], out: &mut [f64]) {
        running_cost_theta(self.dbeta(half), self.d, self.p, q, out)
    }

    /// `B(Q(0)) = −z₀ᵀE(0)z₀ − 2h(0)ᵀz₀`.
    pub fn boundary(&self, q0: &[f64]) -> f64 {
        let (h, e) = split_q(q0, self.d);
        let zero = vec![0.0; self.d];
        let zeta0: Vec<f64> = self.z0.iter().map(|z| -z).collect();
        lq::boundary_term(&zero, &zeta0, e, h)
    }

    /// `∂B/∂Q` at any `Q(0)` (B is linear in Q).
    pub fn boundary_q(&self) -> Vec<f64> {
        let d = self.d;
        let mut out = vec![0.0; q_dim(d)];
        for i in 0..d {
            out[i] = -2.0 * self.z0[i];
            for j in 0..d {
                out[e_index(d, i, j)] = -self.z0[i] * self.z0[j];
            }
        }
        out
    }

    /// `Q(·)` by one backward RK4 solve of the row system.
    pub fn solve_q(&self, target: &Target) -> Result<GridFunction> {
        let zero = vec![0.0; self.dim()];
        integrate_fvp(|st: Stage, q, dq| self.eval(st.half, q, dq), &zero, target.grid())
    }

    /// `S` from a solved `Q`.
    pub fn criterion(&self, q: &GridFunction) -> f64 {
        let grid = q.grid();
        let g: Vec<f64> = (0..grid.n_nodes()).map(|i| self.g(2 * i, q.row(i))).collect();
        self.boundary(q.first()) + integrate_samples(&g, grid.h())
    }
}

/// Row-form right-hand side `F(Q, θ, t)` evaluated directly from the model.
#[allow(clippy::too_many_arguments)]
pub fn riccati_rowfield(
    model: &ModelSpec,
    theta: &[f64],
    lambda: f64,
    zeta: &[f64],
    zeta_dot: &[f64],
    t: f64,
    q: &[f64],
) -> Result<Vec<f64>> {
    let d = model.d;
    if q.len() != q_dim(d) || zeta.len() != d || zeta_dot.len() != d {
        return Err(Error::Dimension(format!("Q must have length {}", q_dim(d))));
    }
    let a = model.eval_a(theta, t)?;
    let r = model.eval_r(theta, t)?;
    let mut beta = vec![0.0; d];
    mat_vec(&a, zeta, &mut beta, d);
    for c in 0..d {
        beta[c] += r[c] - zeta_dot[c];
    }
    let mut out = vec![0.0; q_dim(d)];
    field(&a, &beta, lambda, d, q, &mut out);
    if let Some(pos) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "row field".into(),
            entry: vec![pos],
            t,
        });
    }
    Ok(out)
}

/// `∂F/∂Q` (row-major `D×D`) evaluated directly from the model.
#[allow(clippy::too_many_arguments)]
pub fn riccati_rowfield_jacobian(
    model: &ModelSpec,
    theta: &[f64],
    lambda: f64,
    zeta: &[f64],
    zeta_dot: &[f64],
    t: f64,
    q: &[f64],
) -> Result<Vec<f64>> {
    let d = model.d;
    let a = model.eval_a(theta, t)?;
    let r = model.eval_r(theta, t)?;
    let mut beta = vec![0.0; d];
    mat_vec(&a, zeta, &mut beta, d);
    for c in 0..d {
        beta[c] += r[c] - zeta_dot[c];
    }
    let dq = q_dim(d);
    let mut out = vec![0.0; dq * dq];
    field_jac_q(&a, &beta, lambda, d, q, &mut out);
    Ok(out)
}

/// Adjoint pass output: the criterion, its gradient and both trajectories.
#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub s_value: f64,
    pub grad: Vec<f64>,
    pub q: GridFunction,
    pub p: GridFunction,
}

impl AdjointSolution {
    /// CSV with columns `t, Q1..QD, P1..PD`.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let dq = self.q.dim();
        let mut header = String::from("t");
        for c in 1..=dq {
            header.push_str(&format!(",Q{c}"));
        }
        for c in 1..=dq {
            header.push_str(&format!(",P{c}"));
        }
        writeln!(w, "{header}")?;
        let grid = self.q.grid();
        for i in 0..grid.n_nodes() {
            let mut line = format!("{:.16e}", grid.time(i));
            for v in self.q.row(i).iter().chain(self.p.row(i)) {
                line.push_str(&format!(",{v:.16e}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// `S` and `∇S` by the adjoint method, keeping `Q` and `P`.
pub fn adjoint_solve(
    model: &ModelSpec,
    theta: &[f64],
    lambda: f64,
    target: &Target,
) -> Result<AdjointSolution> {
    let f = RowField::new(model, theta, lambda, target)?;
    let q = f.solve_q(target)?;
    let s_value = f.criterion(&q);
    let dq = f.dim();
    let p_dim = model.p;
    let q_half = q.half_samples();
    let mut fq = vec![0.0; dq * dq];
    let mut gq = vec![0.0; dq];
    let p = integrate_ivp(
        |st: Stage, pr, dp| {
            let qk = &q_half[st.half * dq..(st.half + 1) * dq];
            f.jac_q(st.half, qk, &mut fq);
            f.g_q(st.half, qk, &mut gq);
            dp.copy_from_slice(&gq);
            for (r, &pr_r) in pr.iter().enumerate() {
                if pr_r != 0.0 {
                    let row = &fq[r * dq..(r + 1) * dq];
                    for c in 0..dq {
                        dp[c] -= pr_r * row[c];
                    }
                }
            }
        },
        &f.boundary_q(),
        target.grid(),
    )?;
    let grid = *target.grid();
    let n = grid.n_nodes();
    let mut integrand = vec![0.0; n * p_dim];
    let mut ft = vec![0.0; dq * p_dim];
    let mut gt = vec![0.0; p_dim];
    for i in 0..n {
        let (qi, pi) = (q.row(i), p.row(i));
        f.jac_theta(2 * i, qi, &mut ft);
        f.g_theta(2 * i, qi, &mut gt);
        for m in 0..p_dim {
            let mut s = gt[m];
            for r in 0..dq {
                s -= pi[r] * ft[r * p_dim + m];
            }
            integrand[i * p_dim + m] = s;
        }
    }
    let grad = column_integrals(&integrand, p_dim, grid.h());
    Ok(AdjointSolution {
        s_value,
        grad,
        q,
        p,
    })
}

/// `∇S` by the adjoint method.
pub fn grad_s_adjoint(
    model: &ModelSpec,
    theta: &[f64],
    lambda: f64,
    target: &Target,
) -> Result<Vec<f64>> {
    Ok(adjoint_solve(model, theta, lambda, target)?.grad)
}

/// `S` and `∇S` together (adjoint route), as used by the optimizer.
pub fn value_and_grad(
    model: &ModelSpec,
    theta: &[f64],
    lambda: f64,
    target: &Target,
) -> Result<(f64, Vec<f64>)> {
    let sol = adjoint_solve(model, theta, lambda, target)?;
    Ok((sol.s_value, sol.grad))
}

/// `S` from the row-form solve (consistent with [`value_and_grad`]).
pub fn criterion_s_row(
    model: &ModelSpec,
    theta: &[f64],
    lambda: f64,
    target: &Target,
) -> Result<f64> {
    let f = RowField::new(model, theta, lambda, target)?;
    let q = f.solve_q(target)?;
    Ok(f.criterion(&q))
}

/// Joint solve of `Q` and `Z = ∂Q/∂θ`.
#[derive(Debug, Clone)]
pub struct Sensitivity {
    pub s_value: f64,
    pub grad: Vec<f64>,
    pub q: GridFunction,
    /// `Z` row-major `D×p` at every node.
    pub z: GridFunction,
    pub d: usize,
}

impl Sensitivity {
    /// `∂h/∂θ` at node `i`, row-major `d×p`.
    pub fn dh_dtheta(&self, i: usize) -> &[f64] {
        let p = self.grad.len();
        &self.z.row(i)[..self.d * p]
    }
}

/// `∇S` by forward sensitivities of `Q`, keeping `Q` and `Z`.
pub fn sensitivity_solve(
    model: &ModelSpec,
    theta: &[f64],
    lambda: f64,
    target: &Target,
) -> Result<Sensitivity> {
    let f = RowField::new(model, theta, lambda, target)?;
    let dq = f.dim();
    let p = model.p;
    let mut fq = vec![0.0; dq * dq];
    let mut ft = vec![0.0; dq * p];
    let joint = integrate_fvp(
        |st: Stage, y, dy| {
            let (q, z) = y.split_at(dq);
            let (dqv, dz) = dy.split_at_mut(dq);
            f.eval(st.half, q, dqv);
            f.jac_q(st.half, q, &mut fq);
            f.jac_theta(st.half, q, &mut ft);
            for r in 0..dq {
                let row = &fq[r * dq..(r + 1) * dq];
                for m in 0..p {
                    let mut s = ft[r * p + m];
                    for c in 0..dq {
                        s += row[c] * z[c * p + m];
                    }
                    dz[r * p + m] = s;
                }
            }
        },
        &vec![0.0; dq * (1 + p)],
        target.grid(),
    )?;
    let grid = *target.grid();
    let n = grid.n_nodes();
    let width = dq * (1 + p);
    let joint_slopes = joint.slopes().expect("solver output carries slopes");
    let mut qv = Vec::with_capacity(n * dq);
    let mut zv = Vec::with_capacity(n * dq * p);
    let mut qs = Vec::with_capacity(n * dq);
    let mut zs = Vec::with_capacity(n * dq * p);
    for i in 0..n {
        let (q, z) = joint.row(i).split_at(dq);
        qv.extend_from_slice(q);
        zv.extend_from_slice(z);
        let (q, z) = joint_slopes[i * width..(i + 1) * width].split_at(dq);
        qs.extend_from_slice(q);
        zs.extend_from_slice(z);
    }
    let q = GridFunction::new(grid, dq, qv)?.with_slopes(qs)?;
    let z = GridFunction::new(grid, dq * p, zv)?.with_slopes(zs)?;
    let mut integrand = vec![0.0; n * p];
    let mut gq = vec![0.0; dq];
    let mut gt = vec![0.0; p];
    for i in 0..n {
        let (qi, zi) = (q.row(i), z.row(i));
        f.g_q(2 * i, qi, &mut gq);
        f.g_theta(2 * i, qi, &mut gt);
        for m in 0..p {
            let mut s = gt[m];
            for c in 0..dq {
                s += gq[c] * zi[c * p + m];
            }
            integrand[i * p + m] = s;
        }
    }
    let mut grad = column_integrals(&integrand, p, grid.h());
    let bq = f.boundary_q();
    let z0 = z.first();
    for m in 0..p {
        for c in 0..dq {
            grad[m] += bq[c] * z0[c * p + m];
        }
    }
    let s_value = f.criterion(&q);
    Ok(Sensitivity {
        s_value,
        grad,
        q,
        z,
        d: model.d,
    })
}

/// `∇S` by forward sensitivities.
pub fn grad_s_sensitivity(
    model: &ModelSpec,
    theta: &[f64],
    lambda: f64,
    target: &Target,
) -> Result<Vec<f64>> {
    Ok(sensitivity_solve(model, theta, lambda, target)?.grad)
}

/// Central differences with per-coordinate step `1e−5·(1 + |θ_k|)`.
pub fn central_difference<F>(mut f: F, theta: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut x = theta.to_vec();
    let mut out = vec![0.0; theta.len()];
    for k in 0..theta.len() {
        let step = 1e-5 * (1.0 + theta[k].abs());
        x[k] = theta[k] + step;
        let up = f(&x)?;
        x[k] = theta[k] - step;
        let down = f(&x)?;
        x[k] = theta[k];
        out[k] = (up - down) / (2.0 * step);
    }
    Ok(out)
}

/// `∇S` by central differences of the row-form criterion.
pub fn grad_s_fd(
    model: &ModelSpec,
    theta: &[f64],
    lambda: f64,
    target: &Target,
) -> Result<Vec<f64>> {
    central_difference(|th| criterion_s_row(model, th, lambda, target), theta)
}

/// Integrate each column of a row-major `n×p` sample table.
fn column_integrals(samples: &[f64], p: usize, h: f64) -> Vec<f64> {
    (0..p)
        .map(|m| {
            let col: Vec<f64> = samples.chunks(p).map(|row| row[m]).collect();
            integrate_samples(&col, h)
        })
        .collect()
}
