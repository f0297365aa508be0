//! Cubic B-spline regression smoothing of observed trajectories, with GCV
//! selection of the number of interior knots and an optional constraint
//! pinning the fit to a known initial state.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::odesolve::{GridFunction, TimeGrid};

/// Observations `Y_i ∈ ℝ^d` at strictly increasing times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub times: Vec<f64>,
    /// Row-major `n×d`.
    pub obs: Vec<f64>,
    pub d: usize,
}

impl Dataset {
    pub fn new(times: Vec<f64>, obs: Vec<f64>, d: usize) -> Result<Self> {
        let n = times.len();
        if n < 2 {
            return Err(Error::Dataset(format!("need at least 2 observations, got {n}")));
        }
        if d == 0 || obs.len() != n * d {
            return Err(Error::Dataset(format!(
                "expected {n}×{d} observations, got {} values",
                obs.len()
            )));
        }
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Dataset(format!(
                "times must be strictly increasing (row {})",
                i + 2
            )));
        }
        if times.iter().chain(&obs).any(|v| !v.is_finite()) {
            return Err(Error::Dataset("non-finite value".into()));
        }
        Ok(Self { times, obs, d })
    }

    pub fn from_rows(times: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dataset("ragged observation rows".into()));
        }
        Self::new(times, rows.concat(), d)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.times.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.obs[i * self.d..(i + 1) * self.d]
    }

    pub fn state(&self, s: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.obs[i * self.d + s]).collect()
    }

    pub fn check_span(&self, t0: f64, t1: f64) -> Result<()> {
        let tol = 1e-9 * (t1 - t0).abs().max(1.0);
        let (first, last) = (self.times[0], *self.times.last().unwrap());
        if first < t0 - tol || last > t1 + tol {
            return Err(Error::OutOfDomain {
                t: if first < t0 - tol { first } else { last },
                lo: t0,
                hi: t1,
            });
        }
        Ok(())
    }

    /// CSV with header `t,y1,…,yd`.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(r);
        let header = rdr
            .headers()
            .map_err(|e| Error::Dataset(format!("line 1: {e}")))?
            .clone();
        let d = header.len().saturating_sub(1);
        if d == 0 || header.get(0) != Some("t") {
            return Err(Error::Dataset("line 1: expected header `t,y1,...,yd`".into()));
        }
        let mut times = Vec::new();
        let mut obs = Vec::new();
        for (idx, rec) in rdr.records().enumerate() {
            let line = idx + 2;
            let rec = rec.map_err(|e| Error::Dataset(format!("line {line}: {e}")))?;
            if rec.len() != d + 1 {
                return Err(Error::Dataset(format!(
                    "line {line}: expected {} fields, got {}",
                    d + 1,
                    rec.len()
                )));
            }
            for (c, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Dataset(format!("line {line}: cannot parse `{field}` as a number"))
                })?;
                if !v.is_finite() {
                    return Err(Error::Dataset(format!("line {line}: non-finite value")));
                }
                if c == 0 {
                    times.push(v);
                } else {
                    obs.push(v);
                }
            }
        }
        Self::new(times, obs, d)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.d).map(|j| format!("y{j}")));
        wtr.write_record(&header).map_err(csv_err)?;
        for i in 0..self.n() {
            let mut rec = vec![format!("{:.16e}", self.times[i])];
            rec.extend(self.row(i).iter().map(|v| format!("{v:.16e}")));
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Dataset(format!("{other:?}")),
    }
}

/// Cubic B-spline basis on `[t0, t1]` with uniform interior knots and clamped
/// (multiplicity 4) boundary knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    pub interior_knots: usize,
    pub t0: f64,
    pub t1: f64,
    pub knots: Vec<f64>,
}

const DEGREE: usize = 3;

impl SplineBasis {
    pub fn new(interior_knots: usize, t0: f64, t1: f64) -> Result<Self> {
        if !(t1 > t0) {
            return Err(Error::Grid(format!("need t0 < t1, got [{t0}, {t1}]")));
        }
        let mut knots = vec![t0; DEGREE + 1];
        let step = (t1 - t0) / (interior_knots + 1) as f64;
        knots.extend((1..=interior_knots).map(|j| t0 + j as f64 * step));
        knots.extend(std::iter::repeat_n(t1, DEGREE + 1));
        Ok(Self {
            interior_knots,
            t0,
            t1,
            knots,
        })
    }

    /// Basis dimension `K = K_int + 4`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.interior_knots + DEGREE + 1
    }

    fn check(&self, t: f64) -> Result<f64> {
        let tol = 1e-10 * (self.t1 - self.t0).abs().max(1.0);
        if !(t >= self.t0 - tol && t <= self.t1 + tol) {
            return Err(Error::OutOfDomain {
                t,
                lo: self.t0,
                hi: self.t1,
            });
        }
        Ok(t.clamp(self.t0, self.t1))
    }

    /// Knot span `μ` with `knots[μ] ≤ t < knots[μ+1]` (last span for `t = t1`).
    fn span(&self, t: f64) -> usize {
        let k = self.dim();
        if t >= self.t1 {
            return k - 1;
        }
        let step = (self.t1 - self.t0) / (self.interior_knots + 1) as f64;
        let mut mu = DEGREE + ((t - self.t0) / step).floor().max(0.0) as usize;
        mu = mu.min(k - 1);
        while mu > DEGREE && self.knots[mu] > t {
            mu -= 1;
        }
        while mu < k - 1 && self.knots[mu + 1] <= t {
            mu += 1;
        }
        mu
    }

    /// Nonzero basis functions of degree `deg` at `t` in span `mu`:
    /// `N_{mu-deg..=mu, deg}`.
    fn basis_funs(&self, mu: usize, t: f64, deg: usize, out: &mut [f64]) {
        let u = &self.knots;
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        out[0] = 1.0;
        for j in 1..=deg {
            left[j] = t - u[mu + 1 - j];
            right[j] = u[mu + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { out[r] / denom };
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }

    /// Values (and first derivatives) of the four nonzero cubic basis
    /// functions at `t`; returns the index of the first one.
    pub fn local(&self, t: f64, vals: &mut [f64; 4], ders: &mut [f64; 4]) -> Result<usize> {
        let t = self.check(t)?;
        let mu = self.span(t);
        self.basis_funs(mu, t, DEGREE, vals);
        let mut quad = [0.0; DEGREE + 1];
        self.basis_funs(mu, t, DEGREE - 1, &mut quad);
        // N'_{i,3} = 3 (N_{i,2}/(u_{i+3}-u_i) - N_{i+1,2}/(u_{i+4}-u_{i+1})),
        // with the quadratic N_{mu-2..=mu, 2} held in quad[0..3].
        let u = &self.knots;
        let first = mu - DEGREE;
        for (r, der) in ders.iter_mut().enumerate() {
            let i = first + r;
            let q = |idx: isize| -> f64 {
                // quadratic function N_{i',2} with i' = mu-2+idx
                if (0..3).contains(&idx) {
                    quad[idx as usize]
                } else {
                    0.0
                }
            };
            let qi = q(r as isize - 1);
            let qi1 = q(r as isize);
            let d1 = u[i + 3] - u[i];
            let d2 = u[i + 4] - u[i + 1];
            let a = if d1 > 0.0 { qi / d1 } else { 0.0 };
            let b = if d2 > 0.0 { qi1 / d2 } else { 0.0 };
            *der = 3.0 * (a - b);
        }
        Ok(first)
    }

    /// All `K` basis values at `t`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut v = [0.0; 4];
        let mut dv = [0.0; 4];
        let first = self.local(t, &mut v, &mut dv)?;
        let mut out = vec![0.0; self.dim()];
        out[first..first + 4].copy_from_slice(&v);
        Ok(out)
    }

    /// All `K` basis derivatives at `t`.
    pub fn eval_deriv(&self, t: f64) -> Result<Vec<f64>> {
        let mut v = [0.0; 4];
        let mut dv = [0.0; 4];
        let first = self.local(t, &mut v, &mut dv)?;
        let mut out = vec![0.0; self.dim()];
        out[first..first + 4].copy_from_slice(&dv);
        Ok(out)
    }

    /// `n×K` design matrix.
    pub fn design(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        let k = self.dim();
        let mut b = DMatrix::zeros(times.len(), k);
        let mut v = [0.0; 4];
        let mut dv = [0.0; 4];
        for (i, &t) in times.iter().enumerate() {
            let first = self.local(t, &mut v, &mut dv)?;
            for r in 0..4 {
                b[(i, first + r)] = v[r];
            }
        }
        Ok(b)
    }
}

/// Per-state regression spline fit sharing one basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplineFit {
    pub basis: SplineBasis,
    pub d: usize,
    /// `coeffs[k + s*K]` is coefficient `k` of state `s`.
    pub coeffs: Vec<f64>,
    /// Residual variance estimate per state.
    pub sigma2: Vec<f64>,
    pub rss: Vec<f64>,
    pub n: usize,
    /// Number of free coefficients per state (`K`, or `K−1` when constrained).
    pub n_free: usize,
    /// Initial state the fit is pinned to, if any.
    pub x0: Option<Vec<f64>>,
    /// `(BᵀB)⁻¹` over all `K` coefficients, zero on the pinned coefficient.
    pub normal_inverse: Vec<f64>,
    pub gcv_score: f64,
}

impl SplineFit {
    pub fn k(&self) -> usize {
        self.basis.dim()
    }

    pub fn state_coeffs(&self, s: usize) -> &[f64] {
        let k = self.k();
        &self.coeffs[s * k..(s + 1) * k]
    }

    /// Coefficient covariance `σ̂²_s (BᵀB)⁻¹` of state `s`, column-major `K×K`.
    pub fn coeff_covariance(&self, s: usize) -> Vec<f64> {
        self.normal_inverse.iter().map(|v| v * self.sigma2[s]).collect()
    }

    fn combine(&self, basis_vals: &[f64; 4], first: usize, out: &mut [f64]) {
        let k = self.k();
        for (s, o) in out.iter_mut().enumerate().take(self.d) {
            let c = &self.coeffs[s * k + first..s * k + first + 4];
            *o = linalg::dot(c, basis_vals);
        }
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let mut v = [0.0; 4];
        let mut dv = [0.0; 4];
        let first = self.basis.local(t, &mut v, &mut dv)?;
        self.combine(&v, first, out);
        Ok(())
    }

    pub fn eval_deriv_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let mut v = [0.0; 4];
        let mut dv = [0.0; 4];
        let first = self.basis.local(t, &mut v, &mut dv)?;
        self.combine(&dv, first, out);
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.d];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn eval_deriv(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.d];
        self.eval_deriv_into(t, &mut out)?;
        Ok(out)
    }

    /// The fit on a grid, with the analytic derivative as nodal slopes.
    pub fn to_grid_function(&self, grid: &TimeGrid) -> Result<GridFunction> {
        let n = grid.n_nodes();
        let mut values = vec![0.0; n * self.d];
        let mut slopes = vec![0.0; n * self.d];
        for i in 0..n {
            let t = grid.time(i);
            self.eval_into(t, &mut values[i * self.d..(i + 1) * self.d])?;
            self.eval_deriv_into(t, &mut slopes[i * self.d..(i + 1) * self.d])?;
        }
        GridFunction::new(*grid, self.d, values)?.with_slopes(slopes)
    }

    /// The derivative on a grid.
    pub fn deriv_grid_function(&self, grid: &TimeGrid) -> Result<GridFunction> {
        GridFunction::from_fn(*grid, self.d, |t, out| {
            self.eval_deriv_into(t, out).expect("grid inside the spline span")
        })
    }

    /// Values and derivatives at the `2N+1` half-step points of `grid`.
    pub fn half_samples(&self, grid: &TimeGrid) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = 2 * grid.n_steps + 1;
        let mut z = vec![0.0; m * self.d];
        let mut zd = vec![0.0; m * self.d];
        for k in 0..m {
            let t = grid.half_time(k);
            self.eval_into(t, &mut z[k * self.d..(k + 1) * self.d])?;
            self.eval_deriv_into(t, &mut zd[k * self.d..(k + 1) * self.d])?;
        }
        Ok((z, zd))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Least-squares fit of every state on `basis`. With `constrain_x0`, the first
/// coefficient (the only basis function nonzero at `t0`) is fixed so that
/// `X̂(t0) = x0` exactly.
pub fn fit_regression_spline(
    data: &Dataset,
    basis: &SplineBasis,
    constrain_x0: Option<&[f64]>,
) -> Result<SplineFit> {
    let n = data.n();
    let k = basis.dim();
    let d = data.d;
    if let Some(x0) = constrain_x0 {
        if x0.len() != d {
            return Err(Error::Dimension(format!("x0 has {} entries, d = {d}", x0.len())));
        }
    }
    let offset = usize::from(constrain_x0.is_some());
    let n_free = k - offset;
    if n < n_free {
        return Err(Error::RankDeficient { k, n });
    }
    let b = basis.design(&data.times)?;
    let bf = b.columns(offset, n_free).into_owned();
    let gram = bf.transpose() * &bf;
    let scale = gram.diagonal().max();
    if !(scale > 0.0) || linalg::sym_condition(&gram) < 1e-13 {
        return Err(Error::RankDeficient { k, n });
    }
    let gram_inv = gram
        .clone()
        .cholesky()
        .ok_or(Error::RankDeficient { k, n })?
        .inverse();
    let mut coeffs = vec![0.0; k * d];
    let mut rss = vec![0.0; d];
    for s in 0..d {
        let mut y = DMatrix::from_vec(n, 1, data.state(s));
        if let Some(x0) = constrain_x0 {
            coeffs[s * k] = x0[s];
            for i in 0..n {
                y[(i, 0)] -= x0[s] * b[(i, 0)];
            }
        }
        let beta = &gram_inv * (bf.transpose() * &y);
        for j in 0..n_free {
            coeffs[s * k + offset + j] = beta[(j, 0)];
        }
        let resid = &y - &bf * &beta;
        rss[s] = resid.norm_squared();
    }
    let dof = n - n_free;
    let sigma2: Vec<f64> = rss
        .iter()
        .map(|r| if dof > 0 { r / dof as f64 } else { 0.0 })
        .collect();
    let mut normal_inverse = vec![0.0; k * k];
    for j in 0..n_free {
        for i in 0..n_free {
            normal_inverse[(i + offset) + (j + offset) * k] = gram_inv[(i, j)];
        }
    }
    let gcv_score = gcv(&rss, n, n_free);
    Ok(SplineFit {
        basis: basis.clone(),
        d,
        coeffs,
        sigma2,
        rss,
        n,
        n_free,
        x0: constrain_x0.map(<[f64]>::to_vec),
        normal_inverse,
        gcv_score,
    })
}

/// `Σ_s (RSS_s/n) / (1 − K/n)²` with `K` the number of free coefficients.
fn gcv(rss: &[f64], n: usize, k: usize) -> f64 {
    let nf = n as f64;
    let denom = 1.0 - k as f64 / nf;
    if denom <= 0.0 {
        return f64::INFINITY;
    }
    rss.iter().map(|r| r / nf).sum::<f64>() / (denom * denom)
}

/// Default candidate interior-knot counts `{1, …, min(15, n/4)}`.
pub fn default_knot_candidates(n: usize) -> Vec<usize> {
    (1..=(n / 4).clamp(1, 15)).collect()
}

/// Candidate minimizing the summed GCV score; near-ties (relative to the data
/// scale) go to the smaller knot count. Infeasible candidates are skipped.
pub fn select_knots_gcv(
    data: &Dataset,
    candidates: &[usize],
    constrain_x0: Option<&[f64]>,
    t0: f64,
    t1: f64,
) -> Result<SplineFit> {
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let scale = data.obs.iter().map(|v| v * v).sum::<f64>() / data.n() as f64;
    let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
    let mut best: Option<SplineFit> = None;
    for k_int in sorted {
        let basis = SplineBasis::new(k_int, t0, t1)?;
        let fit = match fit_regression_spline(data, &basis, constrain_x0) {
            Ok(f) => f,
            Err(Error::RankDeficient { .. }) => continue,
            Err(e) => return Err(e),
        };
        if !fit.gcv_score.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => fit.gcv_score < b.gcv_score - tol - 1e-9 * b.gcv_score.abs(),
        };
        if better {
            best = Some(fit);
        }
    }
    best.ok_or(Error::NoFeasibleCandidate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(times: &[f64], f: impl Fn(f64) -> f64) -> Dataset {
        Dataset::new(times.to_vec(), times.iter().map(|&t| f(t)).collect(), 1).unwrap()
    }

    fn uniform(n: usize, t1: f64) -> Vec<f64> {
        (0..n).map(|i| t1 * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn partition_of_unity_and_derivative() {
        let b = SplineBasis::new(5, 0.0, 2.0).unwrap();
        assert_eq!(b.dim(), 9);
        for i in 0..=200 {
            let t = 2.0 * i as f64 / 200.0;
            let s: f64 = b.eval(t).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            let ds: f64 = b.eval_deriv(t).unwrap().iter().sum();
            assert!(ds.abs() < 1e-10);
        }
        assert!(b.eval(2.5).is_err());
        let v0 = b.eval(0.0).unwrap();
        assert_eq!(v0[0], 1.0);
        assert!(v0[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reproduces_cubics_and_constraint() {
        let times = uniform(40, 3.0);
        let f = |t: f64| 1.0 - 2.0 * t + 0.5 * t * t - 0.1 * t * t * t;
        let data = sample(&times, f);
        let basis = SplineBasis::new(3, 0.0, 3.0).unwrap();
        let fit = fit_regression_spline(&data, &basis, None).unwrap();
        for i in 0..=100 {
            let t = 3.0 * i as f64 / 100.0;
            assert!((fit.eval(t).unwrap()[0] - f(t)).abs() < 1e-8);
        }
        let fd = fit.eval_deriv(1.0).unwrap()[0];
        assert!((fd - (-2.0 + 1.0 - 0.3)).abs() < 1e-6);
        let con = fit_regression_spline(&data, &basis, Some(&[1.25])).unwrap();
        assert_eq!(con.eval(0.0).unwrap()[0], 1.25);
        assert!(con.rss[0] >= fit.rss[0]);
        assert_eq!(con.coeff_covariance(0)[0], 0.0);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let times = uniform(30, 1.0);
        let data = sample(&times, |t| (3.0 * t).sin() + 0.1 * ((17 * (t * 100.0) as i64) % 7) as f64);
        let fit = fit_regression_spline(&data, &SplineBasis::new(4, 0.0, 1.0).unwrap(), None).unwrap();
        for &t in &[0.13, 0.37, 0.61, 0.88] {
            let h = 1e-6;
            let fd = (fit.eval(t + h).unwrap()[0] - fit.eval(t - h).unwrap()[0]) / (2.0 * h);
            let an = fit.eval_deriv(t).unwrap()[0];
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0));
        }
    }

    #[test]
    fn gcv_prefers_small_k_on_a_line() {
        let times = uniform(60, 1.0);
        let data = sample(&times, |t| 2.0 + 3.0 * t);
        let fit = select_knots_gcv(&data, &[10, 5, 1], None, 0.0, 1.0).unwrap();
        assert_eq!(fit.basis.interior_knots, 1);
        let fit = select_knots_gcv(&data, &[5], None, 0.0, 1.0).unwrap();
        assert_eq!(fit.basis.interior_knots, 5);
    }

    #[test]
    fn rank_deficiency_is_named() {
        let data = sample(&uniform(5, 1.0), |t| t);
        let basis = SplineBasis::new(4, 0.0, 1.0).unwrap();
        match fit_regression_spline(&data, &basis, None) {
            Err(Error::RankDeficient { k: 8, n: 5 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            select_knots_gcv(&data, &[4, 6], None, 0.0, 1.0),
            Err(Error::NoFeasibleCandidate)
        ));
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let data = Dataset::from_rows(vec![0.0, 0.5, 1.0], &[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.5]]).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, data);
        let bad = "t,y1\n0,1\n0.5,abc\n";
        match Dataset::read_csv(bad.as_bytes()) {
            Err(Error::Dataset(msg)) => assert!(msg.contains("line 3"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Dataset::read_csv("t,y1\n0,1\n0,2\n".as_bytes()).is_err());
    }
}
