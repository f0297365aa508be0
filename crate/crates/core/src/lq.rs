//! Linear-quadratic tracking: for a target trajectory `ζ`, the cost
//!
//! `C(u) = ∫₀ᵀ ‖ζ − X_{θ,u}‖² dt + λ ∫₀ᵀ ‖u‖² dt`,  `Ẋ = A_θX + r_θ + u`, `X(0) = X₀`
//!
//! is minimized in closed loop through the Riccati pair
//!
//! `Ė = I − AᵀE − EA − E²/λ`,  `ḣ = −Aᵀh − E(Aζ + r − ζ̇) − Eh/λ`,  `E(T) = 0`, `h(T) = 0`,
//!
//! with optimal control `ū = (E/λ)(X − ζ) + h/λ`. The minimum (the profiled
//! criterion `S`) is
//!
//! `S = −z₀ᵀE(0)z₀ − 2h(0)ᵀz₀ − ∫₀ᵀ (2βᵀh + ‖h‖²/λ) dt`,  `β = Aζ + r − ζ̇`, `z₀ = X₀ − ζ(0)`.
//!
//! The boundary terms vanish when the target starts at the known initial state.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{self, dot, mat_t_vec, mat_vec};
use crate::model::{ModelSamples, ModelSpec};
use crate::odesolve::{
    integrate_samples, integrate_fvp, integrate_ivp, quadrature_weights, GridFunction, Stage,
    TimeGrid,
};
use crate::smoothing::SplineFit;

/// Asymmetry of `E` beyond which the grid is declared too coarse.
pub const MAX_ASYMMETRY: f64 = 1e-6;

/// Target trajectory `ζ` and its derivative sampled at the half-step points of
/// a grid.
#[derive(Debug, Clone)]
pub struct Target {
    grid: TimeGrid,
    d: usize,
    z: Vec<f64>,
    zd: Option<Vec<f64>>,
}

impl Target {
    /// From node-sampled `ζ` and `ζ̇`; midpoints use each function's cubic
    /// interpolation.
    pub fn from_grid_functions(zeta: &GridFunction, zeta_dot: Option<&GridFunction>) -> Result<Self> {
        let grid = *zeta.grid();
        let d = zeta.dim();
        let zd = match zeta_dot {
            Some(zd) => {
                grid.check_same(zd.grid())?;
                if zd.dim() != d {
                    return Err(Error::Dimension("ζ and ζ̇ dimensions differ".into()));
                }
                Some(zd.half_samples())
            }
            None => None,
        };
        Ok(Self {
            grid,
            d,
            z: zeta.half_samples(),
            zd,
        })
    }

    /// Exact spline values and analytic derivatives at every half step.
    pub fn from_spline(fit: &SplineFit, grid: &TimeGrid) -> Result<Self> {
        let (z, zd) = fit.half_samples(grid)?;
        Ok(Self {
            grid: *grid,
            d: fit.d,
            z,
            zd: Some(zd),
        })
    }

    /// From a closure returning `(ζ(t), ζ̇(t))`.
    pub fn from_fn(grid: &TimeGrid, d: usize, mut f: impl FnMut(f64, &mut [f64], &mut [f64])) -> Self {
        let m = 2 * grid.n_steps + 1;
        let mut z = vec![0.0; m * d];
        let mut zd = vec![0.0; m * d];
        for k in 0..m {
            f(
                grid.half_time(k),
                &mut z[k * d..(k + 1) * d],
                &mut zd[k * d..(k + 1) * d],
            );
        }
        Self {
            grid: *grid,
            d,
            z,
            zd: Some(zd),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn z(&self, half: usize) -> &[f64] {
        &self.z[half * self.d..(half + 1) * self.d]
    }

    #[inline]
    pub fn zd(&self, half: usize) -> Result<&[f64]> {
        self.zd
            .as_ref()
            .map(|v| &v[half * self.d..(half + 1) * self.d])
            .ok_or_else(|| Error::Precondition("target has no derivative".into()))
    }

    pub fn has_derivative(&self) -> bool {
        self.zd.is_some()
    }

    /// `ζ` at the grid nodes.
    pub fn zeta(&self) -> GridFunction {
        let d = self.d;
        let values: Vec<f64> = (0..self.grid.n_nodes())
            .flat_map(|i| self.z(2 * i).to_vec())
            .collect();
        let gf = GridFunction::new(self.grid, d, values).expect("finite target");
        match &self.zd {
            Some(_) => {
                let slopes = (0..self.grid.n_nodes())
                    .flat_map(|i| self.zd(2 * i).expect("derivative present").to_vec())
                    .collect();
                gf.with_slopes(slopes).expect("matching sizes")
            }
            None => gf,
        }
    }

    pub(crate) fn check(&self, model: &ModelSpec, grid: &TimeGrid) -> Result<()> {
        self.grid.check_same(grid)?;
        if self.d != model.d {
            return Err(Error::Dimension(format!(
                "target has {} components, model has d = {}",
                self.d, model.d
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("λ must be positive, got {lambda}")))
    }
}

/// Riccati right-hand side `I − AᵀE − EA − E²/λ` for symmetric `E`.
pub fn riccati_rhs(a: &[f64], e: &[f64], lambda: f64, d: usize, out: &mut [f64]) {
    for j in 0..d {
        for i in 0..=j {
            let ate_ij = dot(&a[i * d..(i + 1) * d], &e[j * d..(j + 1) * d]);
            let ate_ji = dot(&a[j * d..(j + 1) * d], &e[i * d..(i + 1) * d]);
            let ee = dot(&e[i * d..(i + 1) * d], &e[j * d..(j + 1) * d]);
            let v = if i == j { 1.0 } else { 0.0 } - ate_ij - ate_ji - ee / lambda;
            out[i + j * d] = v;
            out[j + i * d] = v;
        }
    }
}

/// `E(·)` on the grid, symmetrized at every node.
pub fn solve_riccati_e(
    model: &ModelSpec,
    theta: &[f64],
    lambda: f64,
    grid: &TimeGrid,
) -> Result<GridFunction> {
    check_lambda(lambda)?;
    let samples = model.sample(theta, grid)?;
    solve_riccati_e_sampled(&samples, lambda, grid)
}

pub(crate) fn solve_riccati_e_sampled(
    samples: &ModelSamples,
    lambda: f64,
    grid: &TimeGrid,
) -> Result<GridFunction> {
    let d = samples.d;
    let zero = vec![0.0; d * d];
    let e = integrate_fvp(
        |st: Stage, e, de| riccati_rhs(samples.a(st.half), e, lambda, d, de),
        &zero,
        grid,
    )?;
    let mut values = e.values().to_vec();
    let mut worst: f64 = 0.0;
    for (i, row) in values.chunks_mut(d * d).enumerate() {
        let scale = row.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let asym = linalg::max_asymmetry(row, d) / scale;
        if asym > MAX_ASYMMETRY {
            return Err(Error::GridResolution {
                t: grid.time(i),
                asymmetry: asym,
            });
        }
        worst = worst.max(asym);
        linalg::symmetrize(row, d);
    }
    log::trace!("Riccati max relative asymmetry {worst:e}");
    let slopes = e.slopes().expect("solver output carries slopes").to_vec();
    GridFunction::new(*grid, d * d, values)?.with_slopes(slopes)
}

/// `β = Aζ + r − ζ̇` at every half step.
fn beta_samples(samples: &ModelSamples, target: &Target) -> Result<Vec<f64>> {
    let d = samples.d;
    let m = samples.n_half();
    let mut beta = vec![0.0; m * d];
    for k in 0..m {
        let b = &mut beta[k * d..(k + 1) * d];
        mat_vec(samples.a(k), target.z(k), b, d);
        let r = samples.r(k);
        let zd = target.zd(k)?;
        for c in 0..d {
            b[c] += r[c] - zd[c];
        }
    }
    Ok(beta)
}

/// `h(·)` for a given `E(·)`.
pub fn solve_h(
    model: &ModelSpec,
    theta: &[f64],
    lambda: f64,
    target: &Target,
    e: &GridFunction,
) -> Result<GridFunction> {
    check_lambda(lambda)?;
    let grid = *target.grid();
    target.check(model, &grid)?;
    grid.check_same(e.grid())?;
    let samples = model.sample(theta, &grid)?;
    solve_h_sampled(&samples, lambda, target, e)
}

fn solve_h_sampled(
    samples: &ModelSamples,
    lambda: f64,
    target: &Target,
    e: &GridFunction,
) -> Result<GridFunction> {
    let d = samples.d;
    let grid = *target.grid();
    let beta = beta_samples(samples, target)?;
    let e_half = e.half_samples();
    let d2 = d * d;
    let mut tmp = vec![0.0; d];
    let mut tmp2 = vec![0.0; d];
    integrate_fvp(
        |st: Stage, h, dh| {
            let k = st.half;
            let ek = &e_half[k * d2..(k + 1) * d2];
            mat_t_vec(samples.a(k), h, dh, d);
            for c in 0..d {
                tmp[c] = beta[k * d + c] + h[c] / lambda;
            }
            mat_vec(ek, &tmp, &mut tmp2, d);
            for c in 0..d {
                dh[c] = -dh[c] - tmp2[c];
            }
        },
        &vec![0.0; d],
        &grid,
    )
}

/// `E` and `h` for one `(θ, λ, ζ)`.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub e: GridFunction,
    pub h: GridFunction,
    pub theta: Vec<f64>,
    pub lambda: f64,
}

pub fn solve_riccati(
    model: &ModelSpec,
    theta: &[f64],
    lambda: f64,
    target: &Target,
) -> Result<RiccatiSolution> {
    check_lambda(lambda)?;
    let grid = *target.grid();
    target.check(model, &grid)?;
    let samples = model.sample(theta, &grid)?;
    let e = solve_riccati_e_sampled(&samples, lambda, &grid)?;
    let h = solve_h_sampled(&samples, lambda, target, &e)?;
    Ok(RiccatiSolution {
        e,
        h,
        theta: theta.to_vec(),
        lambda,
    })
}

/// Boundary part of `S`: `−z₀ᵀE(0)z₀ − 2h(0)ᵀz₀`.
pub(crate) fn boundary_term(x0: &[f64], zeta0: &[f64], e0: &[f64], h0: &[f64]) -> f64 {
    let d = x0.len();
    let z0: Vec<f64> = x0.iter().zip(zeta0).map(|(a, b)| a - b).collect();
    let mut ez = vec![0.0; d];
    mat_vec(e0, &z0, &mut ez, d);
    -dot(&z0, &ez) - 2.0 * dot(h0, &z0)
}

/// Profiled criterion `S(ζ; θ, λ)` from the closed form.
pub fn criterion_s(model: &ModelSpec, theta: &[f64], lambda: f64, target: &Target) -> Result<f64> {
    let sol = solve_riccati(model, theta, lambda, target)?;
    criterion_s_from(model, theta, &sol, target)
}

/// Closed-form `S` for an already solved Riccati pair.
pub fn criterion_s_from(
    model: &ModelSpec,
    theta: &[f64],
    sol: &RiccatiSolution,
    target: &Target,
) -> Result<f64> {
    let d = model.d;
    let grid = *target.grid();
    let samples = model.sample(theta, &grid)?;
    let beta = beta_samples(&samples, target)?;
    let integrand: Vec<f64> = (0..grid.n_nodes())
        .map(|i| {
            let h = sol.h.row(i);
            let b = &beta[2 * i * d..(2 * i + 1) * d];
            2.0 * dot(b, h) + linalg::norm_sq(h) / sol.lambda
        })
        .collect();
    let integral = integrate_samples(&integrand, grid.h());
    Ok(boundary_term(&model.x0, target.z(0), sol.e.row(0), sol.h.row(0)) - integral)
}

/// Backward resolvant family `Ψ(t, s)`, `t ≤ s`, of `ẏ = −(Aᵀ + E/λ) y`
/// (equivalently the forward resolvant of the time-reversed `α = Aᵀ + E/λ`).
/// Columns `Ψ(·, s_j)` are computed on demand.
pub struct ReverseResolvant<'a> {
    d: usize,
    grid: TimeGrid,
    a_half: Vec<f64>,
    e_half: Vec<f64>,
    lambda: f64,
    _marker: std::marker::PhantomData<&'a ()>,
}

impl<'a> ReverseResolvant<'a> {
    pub fn new(model: &ModelSpec, theta: &[f64], lambda: f64, e: &GridFunction) -> Result<Self> {
        check_lambda(lambda)?;
        let grid = *e.grid();
        let samples = model.sample(theta, &grid)?;
        let d = model.d;
        let m = 2 * grid.n_steps + 1;
        let a_half = (0..m).flat_map(|k| samples.a(k).to_vec()).collect();
        Ok(Self {
            d,
            grid,
            a_half,
            e_half: e.half_samples(),
            lambda,
            _marker: std::marker::PhantomData,
        })
    }

    /// `Ψ(t_i, s_j)` for `i = 0..=j`; row `i` is a column-major `d×d` block.
    pub fn column(&self, j: usize) -> Result<Vec<f64>> {
        if j > self.grid.n_steps {
            return Err(Error::Grid(format!("node {j} beyond the grid")));
        }
        let d = self.d;
        let d2 = d * d;
        let mut eye = vec![0.0; d2];
        for i in 0..d {
            eye[i + i * d] = 1.0;
        }
        if j == 0 {
            return Ok(eye);
        }
        let mut alpha = vec![0.0; d2];
        crate::odesolve::integrate_back_from_node(
            |st: Stage, y, dy| {
                let k = st.half;
                let a = &self.a_half[k * d2..(k + 1) * d2];
                let e = &self.e_half[k * d2..(k + 1) * d2];
                for c in 0..d {
                    for r in 0..d {
                        alpha[r + c * d] = a[c + r * d] + e[r + c * d] / self.lambda;
                    }
                }
                linalg::mat_mul(&alpha, y, dy, d);
                dy.iter_mut().for_each(|v| *v = -*v);
            },
            &eye,
            &self.grid,
            j,
        )
    }

    /// `Ψ(t, s)` for node times `t ≤ s`.
    pub fn at(&self, t: f64, s: f64) -> Result<Vec<f64>> {
        let i = self
            .grid
            .node_index(t)
            .ok_or_else(|| Error::Grid(format!("t = {t} is not a grid node")))?;
        let j = self
            .grid
            .node_index(s)
            .ok_or_else(|| Error::Grid(format!("s = {s} is not a grid node")))?;
        if i > j {
            return Err(Error::Precondition("need t ≤ s".into()));
        }
        let col = self.column(j)?;
        let d2 = self.d * self.d;
        Ok(col[i * d2..(i + 1) * d2].to_vec())
    }

    /// `W(t_i) = ∫_{t_i}^T Ψ(t_i, s) f(s) ds` at every node for a node-sampled
    /// vector function `f` (row-major `n×m·d`, `m` stacked right-hand sides).
    pub fn weighted_integral(&self, f: &[f64], m: usize) -> Result<Vec<f64>> {
        let d = self.d;
        let d2 = d * d;
        let n = self.grid.n_steps;
        let h = self.grid.h();
        let w = m * d;
        let mut out = vec![0.0; (n + 1) * w];
        let mut tmp = vec![0.0; d];
        let weights: Vec<Vec<f64>> = (0..=n).map(|len| quadrature_weights(len, h)).collect();
        for j in 0..=n {
            let col = self.column(j)?;
            let fj = &f[j * w..(j + 1) * w];
            for i in 0..=j {
                let len = n - i;
                if len == 0 {
                    continue;
                }
                let wt = weights[len][j - i];
                let psi = &col[i * d2..(i + 1) * d2];
                for rhs in 0..m {
                    mat_vec(psi, &fj[rhs * d..(rhs + 1) * d], &mut tmp, d);
                    let o = &mut out[i * w + rhs * d..i * w + (rhs + 1) * d];
                    for c in 0..d {
                        o[c] += wt * tmp[c];
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Derivative-free representation of `h`:
/// `h(t) = ∫ₜᵀ Ψ(t,s)(ζ(s) + E(s)r(s)) ds + E(t)ζ(t)`.
pub fn h_affine_form(
    model: &ModelSpec,
    theta: &[f64],
    lambda: f64,
    zeta: &GridFunction,
    e: &GridFunction,
    psi: &ReverseResolvant<'_>,
) -> Result<GridFunction> {
    let grid = *zeta.grid();
    grid.check_same(e.grid())?;
    let d = model.d;
    check_lambda(lambda)?;
    let mut scratch = crate::model::TapeScratch::default();
    let mut r = vec![0.0; d];
    let mut er = vec![0.0; d];
    let n = grid.n_nodes();
    let mut f = vec![0.0; n * d];
    for i in 0..n {
        model.eval_r_into(theta, grid.time(i), &mut r, &mut scratch)?;
        mat_vec(e.row(i), &r, &mut er, d);
        for c in 0..d {
            f[i * d + c] = zeta.row(i)[c] + er[c];
        }
    }
    let mut h = psi.weighted_integral(&f, 1)?;
    for i in 0..n {
        mat_vec(e.row(i), zeta.row(i), &mut er, d);
        for c in 0..d {
            h[i * d + c] += er[c];
        }
    }
    GridFunction::new(grid, d, h)
}

/// `S` without any derivative of `ζ`. Requires `ζ(0) = X₀`.
pub fn criterion_s_derivative_free(
    model: &ModelSpec,
    theta: &[f64],
    lambda: f64,
    zeta: &GridFunction,
) -> Result<f64> {
    check_lambda(lambda)?;
    let d = model.d;
    let grid = *zeta.grid();
    let x0 = &model.x0;
    let gap = zeta
        .first()
        .iter()
        .zip(x0)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = x0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if gap > 1e-8 * scale {
        return Err(Error::Precondition(format!(
            "derivative-free criterion needs ζ(0) = X₀ (gap {gap:e})"
        )));
    }
    let e = solve_riccati_e(model, theta, lambda, &grid)?;
    let psi = ReverseResolvant::new(model, theta, lambda, &e)?;
    let n = grid.n_nodes();
    let mut scratch = crate::model::TapeScratch::default();
    let mut a = vec![0.0; d * d];
    let mut r = vec![0.0; d];
    let mut er = vec![0.0; d];
    // Right-hand sides: ζ and E r, integrated against Ψ together.
    let mut f = vec![0.0; n * 2 * d];
    for i in 0..n {
        model.eval_r_into(theta, grid.time(i), &mut r, &mut scratch)?;
        mat_vec(e.row(i), &r, &mut er, d);
        f[i * 2 * d..i * 2 * d + d].copy_from_slice(zeta.row(i));
        f[i * 2 * d + d..(i + 1) * 2 * d].copy_from_slice(&er);
    }
    let w = psi.weighted_integral(&f, 2)?;
    let mut h = vec![0.0; n * d];
    for i in 0..n {
        mat_vec(e.row(i), zeta.row(i), &mut er, d);
        for c in 0..d {
            h[i * d + c] = w[i * 2 * d + c] + w[i * 2 * d + d + c] + er[c];
        }
    }
    let mut main = vec![0.0; n];
    let mut f2 = vec![0.0; n];
    let mut f3 = vec![0.0; n];
    let mut drift = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    let mut edot = vec![0.0; d * d];
    for i in 0..n {
        let t = grid.time(i);
        model.eval_a_into(theta, t, &mut a, &mut scratch)?;
        model.eval_r_into(theta, t, &mut r, &mut scratch)?;
        let z = zeta.row(i);
        let hi = &h[i * d..(i + 1) * d];
        let ei = e.row(i);
        mat_vec(&a, z, &mut drift, d);
        for c in 0..d {
            drift[c] += r[c];
        }
        main[i] = 2.0 * dot(&drift, hi) + linalg::norm_sq(hi) / lambda;
        // ζᵀ(αh + E(Aζ + r)) with α = Aᵀ + E/λ.
        mat_t_vec(&a, hi, &mut tmp, d);
        let mut acc = dot(z, &tmp);
        mat_vec(ei, hi, &mut tmp, d);
        acc += dot(z, &tmp) / lambda;
        mat_vec(ei, &drift, &mut tmp, d);
        acc += dot(z, &tmp);
        f2[i] = acc;
        riccati_rhs(&a, ei, lambda, d, &mut edot);
        mat_vec(&edot, z, &mut tmp, d);
        f3[i] = 0.5 * dot(z, &tmp);
    }
    let hh = grid.h();
    let f1 = -dot(x0, &w[0..d]);
    let x0_er = dot(x0, &w[d..2 * d]);
    mat_vec(e.row(0), x0, &mut tmp, d);
    let x0_e_x0 = dot(x0, &tmp);
    let by_parts = f1 + integrate_samples(&f2, hh) + integrate_samples(&f3, hh) - x0_er
        - 0.5 * x0_e_x0;
    Ok(-integrate_samples(&main, hh) + 2.0 * by_parts)
}

/// Optimal control, closed-loop trajectory and the matching costs.
#[derive(Debug, Clone)]
pub struct TrackingSolution {
    pub u_bar: GridFunction,
    pub x_cl: GridFunction,
    pub s_value: f64,
    pub c_value: f64,
}

/// Integrate `ẋ = Ax + r + (E/λ)(x − ζ) + h/λ` from `X₀` and form `ū`.
pub fn closed_loop_trajectory(
    model: &ModelSpec,
    theta: &[f64],
    sol: &RiccatiSolution,
    target: &Target,
) -> Result<TrackingSolution> {
    let d = model.d;
    let d2 = d * d;
    let grid = *target.grid();
    target.check(model, &grid)?;
    let lambda = sol.lambda;
    let samples = model.sample(theta, &grid)?;
    let e_half = sol.e.half_samples();
    let h_half = sol.h.half_samples();
    let mut tmp = vec![0.0; d];
    let mut dev = vec![0.0; d];
    let x = integrate_ivp(
        |st: Stage, x, dx| {
            let k = st.half;
            mat_vec(samples.a(k), x, dx, d);
            let z = target.z(k);
            for c in 0..d {
                dev[c] = x[c] - z[c];
            }
            mat_vec(&e_half[k * d2..(k + 1) * d2], &dev, &mut tmp, d);
            let r = samples.r(k);
            for c in 0..d {
                dx[c] += r[c] + (tmp[c] + h_half[k * d + c]) / lambda;
            }
        },
        &model.x0,
        &grid,
    )?;
    let n = grid.n_nodes();
    let e_slopes = sol.e.slopes();
    let h_slopes = sol.h.slopes();
    let x_slopes = x.slopes().expect("solver output");
    let mut u = vec![0.0; n * d];
    let mut du = vec![0.0; n * d];
    let mut have_slopes = e_slopes.is_some() && h_slopes.is_some() && target.has_derivative();
    for i in 0..n {
        let z = target.z(2 * i);
        for c in 0..d {
            dev[c] = x.row(i)[c] - z[c];
        }
        mat_vec(sol.e.row(i), &dev, &mut tmp, d);
        for c in 0..d {
            u[i * d + c] = (tmp[c] + sol.h.row(i)[c]) / lambda;
        }
        if have_slopes {
            // u̇ = (Ė(x−ζ) + E(ẋ−ζ̇) + ḣ)/λ
            let ed = &e_slopes.unwrap()[i * d2..(i + 1) * d2];
            let hd = &h_slopes.unwrap()[i * d..(i + 1) * d];
            let zd = target.zd(2 * i)?;
            let mut a1 = vec![0.0; d];
            mat_vec(ed, &dev, &mut a1, d);
            let vel: Vec<f64> = (0..d).map(|c| x_slopes[i * d + c] - zd[c]).collect();
            mat_vec(sol.e.row(i), &vel, &mut tmp, d);
            for c in 0..d {
                du[i * d + c] = (a1[c] + tmp[c] + hd[c]) / lambda;
            }
            if du[i * d..(i + 1) * d].iter().any(|v| !v.is_finite()) {
                have_slopes = false;
            }
        }
    }
    let mut u_bar = GridFunction::new(grid, d, u)?;
    if have_slopes {
        u_bar = u_bar.with_slopes(du)?;
    }
    let zeta = target.zeta();
    let c_value = tracking_cost(&zeta, &x, &u_bar, lambda);
    let s_value = criterion_s_from(model, theta, sol, target)?;
    Ok(TrackingSolution {
        u_bar,
        x_cl: x,
        s_value,
        c_value,
    })
}

fn tracking_cost(zeta: &GridFunction, x: &GridFunction, u: &GridFunction, lambda: f64) -> f64 {
    let n = zeta.grid().n_nodes();
    let integrand: Vec<f64> = (0..n)
        .map(|i| {
            let dev: f64 = zeta
                .row(i)
                .iter()
                .zip(x.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dev + lambda * linalg::norm_sq(u.row(i))
        })
        .collect();
    integrate_samples(&integrand, zeta.grid().h())
}

/// Trajectory of `ẋ = A_θx + r_θ + u` from `X₀` (`u` interpolated at midpoints).
pub fn controlled_trajectory(
    model: &ModelSpec,
    theta: &[f64],
    u: Option<&GridFunction>,
    grid: &TimeGrid,
) -> Result<GridFunction> {
    let d = model.d;
    let samples = model.sample(theta, grid)?;
    let u_half = match u {
        Some(u) => {
            grid.check_same(u.grid())?;
            if u.dim() != d {
                return Err(Error::Dimension(format!("u has {} components, d = {d}", u.dim())));
            }
            Some(u.half_samples())
        }
        None => None,
    };
    integrate_ivp(
        |st: Stage, x, dx| {
            let k = st.half;
            mat_vec(samples.a(k), x, dx, d);
            let r = samples.r(k);
            for c in 0..d {
                dx[c] += r[c];
            }
            if let Some(uh) = &u_half {
                for c in 0..d {
                    dx[c] += uh[k * d + c];
                }
            }
        },
        &model.x0,
        grid,
    )
}

/// The tracking cost `C(ζ; u, θ, λ)` of an arbitrary control.
pub fn cost_c(
    model: &ModelSpec,
    theta: &[f64],
    lambda: f64,
    u: &GridFunction,
    zeta: &GridFunction,
) -> Result<f64> {
    check_lambda(lambda)?;
    let grid = *u.grid();
    grid.check_same(zeta.grid())?;
    let x = controlled_trajectory(model, theta, Some(u), &grid)?;
    Ok(tracking_cost(zeta, &x, u, lambda))
}

/// Minimum of `C` over controls that are constant on `intervals` equal blocks
/// of grid steps, by solving the normal equations of the quadratic program.
/// This upper-bounds `S` and converges to it as the blocks shrink.
pub fn qp_oracle(
    model: &ModelSpec,
    theta: &[f64],
    lambda: f64,
    zeta: &GridFunction,
    intervals: usize,
) -> Result<f64> {
    check_lambda(lambda)?;
    let grid = *zeta.grid();
    let n = grid.n_steps;
    if intervals == 0 || n % intervals != 0 {
        return Err(Error::Grid(format!(
            "{n} steps cannot be split into {intervals} equal control intervals"
        )));
    }
    let d = model.d;
    let per = n / intervals;
    let samples = model.sample(theta, &grid)?;
    let free = controlled_trajectory(model, theta, None, &grid)?;
    let nodes = grid.n_nodes();
    let mut resid = vec![0.0; nodes * d];
    for i in 0..nodes {
        for c in 0..d {
            resid[i * d + c] = zeta.row(i)[c] - free.row(i)[c];
        }
    }
    let m = intervals * d;
    let mut responses: Vec<Vec<f64>> = Vec::with_capacity(m);
    for blk in 0..intervals {
        let (from, to) = (blk * per, (blk + 1) * per);
        for j in 0..d {
            // Response to the unit control e_j on steps [from, to).
            let mut psi = vec![0.0; nodes * d];
            let forced = crate::odesolve::integrate_between(
                |st: Stage, x, dx| {
                    mat_vec(samples.a(st.half), x, dx, d);
                    dx[j] += 1.0;
                },
                &vec![0.0; d],
                &grid,
                from,
                to,
            )?;
            psi[from * d..(to + 1) * d].copy_from_slice(&forced);
            if to < n {
                let start = psi[to * d..(to + 1) * d].to_vec();
                let free_part = crate::odesolve::integrate_between(
                    |st: Stage, x, dx| mat_vec(samples.a(st.half), x, dx, d),
                    &start,
                    &grid,
                    to,
                    n,
                )?;
                psi[to * d..].copy_from_slice(&free_part);
            }
            responses.push(psi);
        }
    }
    let weights = quadrature_weights(n, grid.h());
    let inner = |a: &[f64], b: &[f64]| -> f64 {
        (0..nodes)
            .map(|i| weights[i] * dot(&a[i * d..(i + 1) * d], &b[i * d..(i + 1) * d]))
            .sum()
    };
    let mut gram = nalgebra::DMatrix::<f64>::zeros(m, m);
    let mut rhs = nalgebra::DMatrix::<f64>::zeros(m, 1);
    let width = per as f64 * grid.h();
    for a in 0..m {
        for b in 0..=a {
            let v = inner(&responses[a], &responses[b]);
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
        gram[(a, a)] += lambda * width;
        rhs[(a, 0)] = inner(&responses[a], &resid);
    }
    let coef = linalg::solve_spd(&gram, &rhs)?;
    // C(c) = ‖resid‖² − 2cᵀb + cᵀ(G + λW)c = ‖resid‖² − cᵀb at the optimum.
    let base = inner(&resid, &resid);
    Ok(base - (coef.transpose() * rhs)[(0, 0)])
}

/// CSV dump with columns `t, E_ij…, h_i…, u_i…, x_i…`.
pub fn write_dump_csv<W: Write>(
    mut w: W,
    sol: &RiccatiSolution,
    tracking: &TrackingSolution,
) -> Result<()> {
    let grid = *sol.e.grid();
    let d = sol.h.dim();
    write!(w, "t")?;
    for j in 1..=d {
        for i in 1..=d {
            write!(w, ",E{i}_{j}")?;
        }
    }
    for prefix in ["h", "u", "x"] {
        for i in 1..=d {
            write!(w, ",{prefix}{i}")?;
        }
    }
    writeln!(w)?;
    for n in 0..grid.n_nodes() {
        write!(w, "{:.16e}", grid.time(n))?;
        for v in sol
            .e
            .row(n)
            .iter()
            .chain(sol.h.row(n))
            .chain(tracking.u_bar.row(n))
            .chain(tracking.x_cl.row(n))
        {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
