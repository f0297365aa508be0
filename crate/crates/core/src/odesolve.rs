//! Fixed-step RK4 on a uniform grid, grid-sampled functions, resolvants,
//! Duhamel solutions and quadrature.
//!
//! Every RK4 step from node `i` to `i+1` evaluates the field at the node times
//! and at the midpoint. Those points are the "half-step" points
//! `t0 + k·h/2`, `k = 0..=2N`, and the field receives their index so that
//! precomputed samples (model matrices, smoothed targets) can be looked up
//! without interpolation.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ModelSpec, TapeScratch};

/// Uniform grid `t0 < t0+h < … < t1` with `n_steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t1: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, n_steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(Error::Grid(format!("need t0 < t1, got [{t0}, {t1}]")));
        }
        if n_steps < 2 {
            return Err(Error::Grid(format!("need at least 2 steps, got {n_steps}")));
        }
        Ok(Self { t0, t1, n_steps })
    }

    /// Grid over `[0, T]`.
    pub fn horizon(t: f64, n_steps: usize) -> Result<Self> {
        Self::new(0.0, t, n_steps)
    }

    #[inline]
    pub fn h(&self) -> f64 {
        (self.t1 - self.t0) / self.n_steps as f64
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t1
        } else {
            self.t0 + i as f64 * self.h()
        }
    }

    #[inline]
    pub fn half_time(&self, k: usize) -> f64 {
        if k == 2 * self.n_steps {
            self.t1
        } else {
            self.t0 + k as f64 * 0.5 * self.h()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.time(i)).collect()
    }

    /// Same span with `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            n_steps: self.n_steps * factor,
            ..*self
        }
    }

    /// Index of the node equal to `t` (within a relative tolerance).
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let x = (t - self.t0) / self.h();
        let i = x.round();
        if i < 0.0 || i > self.n_steps as f64 || (x - i).abs() > 1e-9 {
            None
        } else {
            Some(i as usize)
        }
    }

    /// Interval index and local coordinate in `[0, 1]` of `t`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let tol = 1e-12 * (self.t1 - self.t0).abs().max(1.0);
        if !(t >= self.t0 - tol && t <= self.t1 + tol) {
            return Err(Error::OutOfDomain {
                t,
                lo: self.t0,
                hi: self.t1,
            });
        }
        let x = ((t - self.t0) / self.h()).clamp(0.0, self.n_steps as f64);
        let i = (x.floor() as usize).min(self.n_steps - 1);
        Ok((i, x - i as f64))
    }

    fn same_as(&self, other: &TimeGrid) -> bool {
        self.n_steps == other.n_steps
            && (self.t0 - other.t0).abs() <= 1e-12 * self.t1.abs().max(1.0)
            && (self.t1 - other.t1).abs() <= 1e-12 * self.t1.abs().max(1.0)
    }

    pub fn check_same(&self, other: &TimeGrid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::Grid(format!(
                "grid mismatch: [{}, {}]/{} vs [{}, {}]/{}",
                self.t0, self.t1, self.n_steps, other.t0, other.t1, other.n_steps
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Linear,
    #[default]
    Cubic,
}

/// A `k`-valued function sampled at every node of a grid.
///
/// Cubic interpolation is Hermite when nodal slopes are known (solver outputs
/// carry the RK4 field value at each node) and Catmull-Rom otherwise.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: TimeGrid,
    k: usize,
    values: Vec<f64>,
    slopes: Option<Vec<f64>>,
    pub interpolation: Interpolation,
}

impl GridFunction {
    /// `values` is row-major: node `i` occupies `values[i*k..(i+1)*k]`.
    pub fn new(grid: TimeGrid, k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() * k {
            return Err(Error::Dimension(format!(
                "expected {} values ({} nodes × {k}), got {}",
                grid.n_nodes() * k,
                grid.n_nodes(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "grid function",
                entry: vec![pos % k.max(1)],
                t: grid.time(pos / k.max(1)),
            });
        }
        Ok(Self {
            grid,
            k,
            values,
            slopes: None,
            interpolation: Interpolation::Cubic,
        })
    }

    /// Sample `f` at every node.
    pub fn from_fn(grid: TimeGrid, k: usize, mut f: impl FnMut(f64, &mut [f64])) -> Result<Self> {
        let mut values = vec![0.0; grid.n_nodes() * k];
        for (i, row) in values.chunks_mut(k).enumerate() {
            f(grid.time(i), row);
        }
        Self::new(grid, k, values)
    }

    pub fn constant(grid: TimeGrid, value: &[f64]) -> Self {
        let values = value
            .iter()
            .copied()
            .cycle()
            .take(grid.n_nodes() * value.len())
            .collect();
        Self {
            grid,
            k: value.len(),
            values,
            slopes: Some(vec![0.0; grid.n_nodes() * value.len()]),
            interpolation: Interpolation::Cubic,
        }
    }

    pub fn zeros(grid: TimeGrid, k: usize) -> Self {
        Self::constant(grid, &vec![0.0; k])
    }

    /// Attach nodal derivatives used by cubic interpolation.
    pub fn with_slopes(mut self, slopes: Vec<f64>) -> Result<Self> {
        if slopes.len() != self.values.len() {
            return Err(Error::Dimension("slopes must match values".into()));
        }
        self.slopes = Some(slopes);
        Ok(self)
    }

    pub fn with_interpolation(mut self, interpolation: Interpolation) -> Self {
        self.interpolation = interpolation;
        self
    }

    #[inline]
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slopes(&self) -> Option<&[f64]> {
        self.slopes.as_deref()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn first(&self) -> &[f64] {
        self.row(0)
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.grid.n_steps)
    }

    /// Component `j` at every node.
    pub fn component(&self, j: usize) -> Vec<f64> {
        self.values.iter().skip(j).step_by(self.k).copied().collect()
    }

    /// Nodal slope: attached derivative if available, else a centered
    /// (one-sided second-order at the ends) difference.
    fn slope(&self, i: usize, c: usize) -> f64 {
        if let Some(s) = &self.slopes {
            return s[i * self.k + c];
        }
        let n = self.grid.n_steps;
        let h = self.grid.h();
        let v = |j: usize| self.values[j * self.k + c];
        if i == 0 {
            (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * h)
        } else if i == n {
            (3.0 * v(n) - 4.0 * v(n - 1) + v(n - 2)) / (2.0 * h)
        } else {
            (v(i + 1) - v(i - 1)) / (2.0 * h)
        }
    }

    /// Value at an arbitrary `t` in the grid span.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let (i, s) = self.grid.locate(t)?;
        let k = self.k;
        let a = &self.values[i * k..(i + 1) * k];
        let b = &self.values[(i + 1) * k..(i + 2) * k];
        match self.interpolation {
            Interpolation::Linear => {
                for c in 0..k {
                    out[c] = a[c] + s * (b[c] - a[c]);
                }
            }
            Interpolation::Cubic => {
                let h = self.grid.h();
                let s2 = s * s;
                let s3 = s2 * s;
                let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                let h10 = s3 - 2.0 * s2 + s;
                let h01 = -2.0 * s3 + 3.0 * s2;
                let h11 = s3 - s2;
                for c in 0..k {
                    out[c] = h00 * a[c]
                        + h10 * h * self.slope(i, c)
                        + h01 * b[c]
                        + h11 * h * self.slope(i + 1, c);
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.k];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    /// Values at the `2N+1` half-step points (nodes exactly, midpoints
    /// interpolated).
    pub fn half_samples(&self) -> Vec<f64> {
        let k = self.k;
        let n = self.grid.n_steps;
        let mut out = vec![0.0; (2 * n + 1) * k];
        for i in 0..=n {
            out[2 * i * k..(2 * i + 1) * k].copy_from_slice(self.row(i));
        }
        for i in 0..n {
            let t = self.grid.t0 + (i as f64 + 0.5) * self.grid.h();
            let (row, _) = out[(2 * i + 1) * k..].split_at_mut(k);
            self.eval_into(t, row).expect("midpoint inside the grid");
        }
        out
    }

    /// Pointwise map producing a `k_out`-valued function.
    pub fn map(
        &self,
        k_out: usize,
        mut f: impl FnMut(f64, &[f64], &mut [f64]),
    ) -> Result<GridFunction> {
        let mut values = vec![0.0; self.grid.n_nodes() * k_out];
        for (i, row) in values.chunks_mut(k_out).enumerate() {
            f(self.grid.time(i), self.row(i), row);
        }
        GridFunction::new(self.grid, k_out, values)
    }

    /// `∫ ‖f(t)‖² dt` by [`quadrature`].
    pub fn l2_norm_sq(&self) -> f64 {
        let sq: Vec<f64> = self.values.chunks(self.k).map(linalg::norm_sq).collect();
        integrate_samples(&sq, self.grid.h())
    }

    /// Per-component `∫ f_j(t)² dt`.
    pub fn component_l2_sq(&self) -> Vec<f64> {
        (0..self.k)
            .map(|j| {
                let sq: Vec<f64> = self.component(j).iter().map(|x| x * x).collect();
                integrate_samples(&sq, self.grid.h())
            })
            .collect()
    }

    /// CSV with header `t,v1,…,vk`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t")?;
        for j in 1..=self.k {
            write!(w, ",v{j}")?;
        }
        writeln!(w)?;
        for i in 0..self.grid.n_nodes() {
            write!(w, "{:.16e}", self.grid.time(i))?;
            for v in self.row(i) {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Parse the CSV produced by [`GridFunction::write_csv`]. Times must form a
    /// uniform grid.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Dataset("empty grid-function CSV".into()))??;
        let k = header.split(',').count().saturating_sub(1);
        if k == 0 || !header.starts_with('t') {
            return Err(Error::Dataset("line 1: expected header `t,v1,...`".into()));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (ln, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != k + 1 {
                return Err(Error::Dataset(format!(
                    "line {}: expected {} fields, got {}",
                    ln + 2,
                    k + 1,
                    fields.len()
                )));
            }
            for (c, f) in fields.iter().enumerate() {
                let v: f64 = f.trim().parse().map_err(|_| {
                    Error::Dataset(format!("line {}: cannot parse `{f}`", ln + 2))
                })?;
                if c == 0 {
                    times.push(v);
                } else {
                    values.push(v);
                }
            }
        }
        if times.len() < 3 {
            return Err(Error::Dataset("need at least 3 rows".into()));
        }
        let grid = TimeGrid::new(times[0], *times.last().unwrap(), times.len() - 1)?;
        for (i, t) in times.iter().enumerate() {
            if (grid.time(i) - t).abs() > 1e-9 * grid.t1.abs().max(1.0) {
                return Err(Error::Dataset(format!("line {}: times are not uniform", i + 2)));
            }
        }
        GridFunction::new(grid, k, values)
    }
}

/// Evaluation point handed to an RK4 field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub t: f64,
    /// Index into the half-step points of the full grid.
    pub half: usize,
}

/// Integrate from node `from` to node `to` (either direction), returning the
/// values and field slopes at the visited nodes in forward node order.
fn rk4_sweep<F>(
    mut field: F,
    start: &[f64],
    grid: &TimeGrid,
    from: usize,
    to: usize,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: FnMut(Stage, &[f64], &mut [f64]),
{
    let k = start.len();
    let count = from.abs_diff(to) + 1;
    let lo = from.min(to);
    let mut values = vec![0.0; count * k];
    let mut slopes = vec![0.0; count * k];
    let forward = to >= from;
    let h = if forward { grid.h() } else { -grid.h() };
    let mut x = start.to_vec();
    let mut k1 = vec![0.0; k];
    let mut k2 = vec![0.0; k];
    let mut k3 = vec![0.0; k];
    let mut k4 = vec![0.0; k];
    let mut tmp = vec![0.0; k];
    let mut node = from;
    loop {
        let stage = |hk: usize| Stage {
            t: grid.half_time(hk),
            half: hk,
        };
        field(stage(2 * node), &x, &mut k1);
        let row = node - lo;
        values[row * k..(row + 1) * k].copy_from_slice(&x);
        slopes[row * k..(row + 1) * k].copy_from_slice(&k1);
        if node == to {
            break;
        }
        let (mid, next) = if forward {
            (2 * node + 1, node + 1)
        } else {
            (2 * node - 1, node - 1)
        };
        for c in 0..k {
            tmp[c] = x[c] + 0.5 * h * k1[c];
        }
        field(stage(mid), &tmp, &mut k2);
        for c in 0..k {
            tmp[c] = x[c] + 0.5 * h * k2[c];
        }
        field(stage(mid), &tmp, &mut k3);
        for c in 0..k {
            tmp[c] = x[c] + h * k3[c];
        }
        field(stage(2 * next), &tmp, &mut k4);
        for c in 0..k {
            x[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                t: grid.time(next),
            });
        }
        node = next;
    }
    Ok((values, slopes))
}

/// RK4 solution of `ẋ = f(t, x)`, `x(t0) = x0`, at every node.
pub fn integrate_ivp<F>(field: F, x0: &[f64], grid: &TimeGrid) -> Result<GridFunction>
where
    F: FnMut(Stage, &[f64], &mut [f64]),
{
    let (values, slopes) = rk4_sweep(field, x0, grid, 0, grid.n_steps)?;
    GridFunction::new(*grid, x0.len(), values)?.with_slopes(slopes)
}

/// RK4 solution of `ẋ = f(t, x)`, `x(t1) = xT`, integrated backward in time.
pub fn integrate_fvp<F>(field: F, x_t: &[f64], grid: &TimeGrid) -> Result<GridFunction>
where
    F: FnMut(Stage, &[f64], &mut [f64]),
{
    let (values, slopes) = rk4_sweep(field, x_t, grid, grid.n_steps, 0)?;
    GridFunction::new(*grid, x_t.len(), values)?.with_slopes(slopes)
}

/// Sweep between two nodes in either direction; rows `min..=max` in forward order.
pub(crate) fn integrate_between<F>(
    field: F,
    x: &[f64],
    grid: &TimeGrid,
    from: usize,
    to: usize,
) -> Result<Vec<f64>>
where
    F: FnMut(Stage, &[f64], &mut [f64]),
{
    Ok(rk4_sweep(field, x, grid, from, to)?.0)
}

/// Forward sweep from node `from` to the end; rows `from..=N` of the result.
pub(crate) fn integrate_from_node<F>(
    field: F,
    x: &[f64],
    grid: &TimeGrid,
    from: usize,
) -> Result<Vec<f64>>
where
    F: FnMut(Stage, &[f64], &mut [f64]),
{
    Ok(rk4_sweep(field, x, grid, from, grid.n_steps)?.0)
}

/// Backward sweep from node `from` down to node 0; rows `0..=from`.
pub(crate) fn integrate_back_from_node<F>(
    field: F,
    x: &[f64],
    grid: &TimeGrid,
    from: usize,
) -> Result<Vec<f64>>
where
    F: FnMut(Stage, &[f64], &mut [f64]),
{
    Ok(rk4_sweep(field, x, grid, from, 0)?.0)
}

/// Resolvant `Φ(t, s)` of `ẋ = A(t) x` for the nodes `t ≥ s`.
#[derive(Debug, Clone)]
pub struct Resolvant {
    pub d: usize,
    /// Node index of `s`.
    pub s_index: usize,
    /// Row `i - s_index` holds `Φ(t_i, s)` (column-major `d×d`).
    pub values: Vec<f64>,
}

impl Resolvant {
    pub fn at(&self, i: usize) -> &[f64] {
        let d2 = self.d * self.d;
        let r = i - self.s_index;
        &self.values[r * d2..(r + 1) * d2]
    }
}

/// `Φ(·, s)` on the nodes of `grid` from `s` onward. `a_of_t` writes `A` at a
/// stage into its output slice.
pub fn resolvant<F>(mut a_of_t: F, d: usize, s: f64, grid: &TimeGrid) -> Result<Resolvant>
where
    F: FnMut(Stage, &mut [f64]),
{
    let s_index = grid
        .node_index(s)
        .ok_or_else(|| Error::Grid(format!("s = {s} is not a grid node")))?;
    let mut a = vec![0.0; d * d];
    let mut eye = vec![0.0; d * d];
    for i in 0..d {
        eye[i + i * d] = 1.0;
    }
    let values = integrate_from_node(
        |st, x, dx| {
            a_of_t(st, &mut a);
            linalg::mat_mul(&a, x, dx, d);
        },
        &eye,
        grid,
        s_index,
    )?;
    Ok(Resolvant { d, s_index, values })
}

/// `X(t) = Φ(t,0)X₀ + Φ(t,0)∫₀ᵗ Φ(s,0)⁻¹ (r_θ(s) + u(s)) ds` on the grid.
pub fn duhamel_solution(
    model: &ModelSpec,
    theta: &[f64],
    u: Option<&GridFunction>,
    grid: &TimeGrid,
) -> Result<GridFunction> {
    let d = model.d;
    if let Some(u) = u {
        grid.check_same(u.grid())?;
        if u.dim() != d {
            return Err(Error::Dimension(format!("u has {} components, d = {d}", u.dim())));
        }
    }
    let samples = model.sample(theta, grid)?;
    let phi = resolvant(|st, a| a.copy_from_slice(samples.a(st.half)), d, grid.t0, grid)?;
    let n = grid.n_nodes();
    let mut scratch = TapeScratch::default();
    let mut r = vec![0.0; d];
    let mut integrand = vec![0.0; n * d];
    let mut phi_inv = Vec::with_capacity(n);
    for i in 0..n {
        let inv = linalg::invert(phi.at(i), d)?;
        model.eval_r_into(theta, grid.time(i), &mut r, &mut scratch)?;
        if let Some(u) = u {
            for (rc, uc) in r.iter_mut().zip(u.row(i)) {
                *rc += uc;
            }
        }
        linalg::mat_vec(&inv, &r, &mut integrand[i * d..(i + 1) * d], d);
        phi_inv.push(inv);
    }
    let mut values = vec![0.0; n * d];
    let mut acc = vec![0.0; d];
    for c in 0..d {
        let col: Vec<f64> = (0..n).map(|i| integrand[i * d + c]).collect();
        let cum = cumulative_integral(&col, grid.h());
        for i in 0..n {
            values[i * d + c] = cum[i];
        }
    }
    for i in 0..n {
        for c in 0..d {
            acc[c] = model.x0[c] + values[i * d + c];
        }
        linalg::mat_vec(phi.at(i), &acc, &mut values[i * d..(i + 1) * d], d);
    }
    GridFunction::new(*grid, d, values)
}

/// Quadrature weights on `n_steps+1` equispaced nodes: composite Simpson, with
/// the 3/8 rule on the last three panels when `n_steps` is odd (trapezoid for a
/// single panel). Exact on cubics.
pub fn quadrature_weights(n_steps: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; n_steps + 1];
    match n_steps {
        0 => {}
        1 => {
            w[0] = 0.5 * h;
            w[1] = 0.5 * h;
        }
        _ => {
            let simpson_end = if n_steps % 2 == 0 { n_steps } else { n_steps - 3 };
            let mut i = 0;
            while i < simpson_end {
                w[i] += h / 3.0;
                w[i + 1] += 4.0 * h / 3.0;
                w[i + 2] += h / 3.0;
                i += 2;
            }
            if n_steps % 2 == 1 {
                let b = n_steps - 3;
                let c = 3.0 * h / 8.0;
                w[b] += c;
                w[b + 1] += 3.0 * c;
                w[b + 2] += 3.0 * c;
                w[b + 3] += c;
            }
        }
    }
    w
}

/// Quadrature of equispaced samples with spacing `h`.
pub fn integrate_samples(f: &[f64], h: f64) -> f64 {
    if f.len() < 2 {
        return 0.0;
    }
    quadrature_weights(f.len() - 1, h)
        .iter()
        .zip(f)
        .map(|(w, v)| w * v)
        .sum()
}

/// `∫_{t0}^{t1} f dt` for a scalar grid function.
pub fn quadrature(f: &GridFunction) -> Result<f64> {
    if f.dim() != 1 {
        return Err(Error::Dimension("quadrature expects a scalar function".into()));
    }
    Ok(integrate_samples(f.values(), f.grid().h()))
}

/// Running integral `F_i = ∫_{t_0}^{t_i} f`, fourth order (cubic through four
/// neighbouring nodes per panel, one-sided at the ends).
pub fn cumulative_integral(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n < 4 {
        for i in 1..n {
            out[i] = out[i - 1] + 0.5 * h * (f[i - 1] + f[i]);
        }
        return out;
    }
    let c = h / 24.0;
    for i in 0..n - 1 {
        let panel = if i == 0 {
            c * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3])
        } else if i == n - 2 {
            c * (f[n - 4] - 5.0 * f[n - 3] + 19.0 * f[n - 2] + 9.0 * f[n - 1])
        } else {
            c * (-f[i - 1] + 13.0 * f[i] + 13.0 * f[i + 1] - f[i + 2])
        };
        out[i + 1] = out[i] + panel;
    }
    out
}

/// Running integral from the right: `F_i = ∫_{t_i}^{t_N} f`.
pub fn reverse_cumulative_integral(f: &[f64], h: f64) -> Vec<f64> {
    let rev: Vec<f64> = f.iter().rev().copied().collect();
    let mut out = cumulative_integral(&rev, h);
    out.reverse();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model;

    fn grid(t1: f64, n: usize) -> TimeGrid {
        TimeGrid::new(0.0, t1, n).unwrap()
    }

    #[test]
    fn ivp_constant_and_exponential() {
        let g = grid(1.0, 200);
        let x = integrate_ivp(|_, _, dx| dx[0] = 0.0, &[3.0], &g).unwrap();
        assert!(x.values().iter().all(|&v| v == 3.0));
        let x = integrate_ivp(|_, x, dx| dx[0] = x[0], &[1.0], &g).unwrap();
        assert_eq!(x.first(), &[1.0]);
        assert!((x.last()[0] - std::f64::consts::E).abs() <= 1e-8);
    }

    #[test]
    fn rk4_order() {
        let err = |n| {
            let g = grid(1.0, n);
            let x = integrate_ivp(|_, x, dx| dx[0] = x[0], &[1.0], &g).unwrap();
            (x.last()[0] - std::f64::consts::E).abs()
        };
        let ratio = err(20) / err(40);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn fvp_riccati_tanh() {
        let g = grid(1.0, 1000);
        let e = integrate_fvp(|_, e, de| de[0] = 1.0 - e[0] * e[0], &[0.0], &g).unwrap();
        assert_eq!(e.last(), &[0.0]);
        assert!((e.first()[0] + 1f64.tanh()).abs() <= 1e-8);
        let z = integrate_fvp(|_, _, dx| dx[0] = 0.0, &[2.5], &g).unwrap();
        assert!(z.values().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn forward_backward_roundtrip() {
        let g = grid(2.0, 400);
        let f = |st: Stage, x: &[f64], dx: &mut [f64]| {
            dx[0] = -0.3 * x[0] + st.t.sin() * x[1];
            dx[1] = 0.2 * x[0] - 0.1 * x[1];
        };
        let fwd = integrate_ivp(f, &[1.0, -2.0], &g).unwrap();
        let back = integrate_fvp(f, fwd.last(), &g).unwrap();
        for (a, b) in back.first().iter().zip([1.0, -2.0]) {
            assert!((a - b).abs() <= 1e-7 * b.abs());
        }
    }

    #[test]
    fn divergence_is_reported() {
        let g = grid(1.0, 10);
        let err = integrate_ivp(|_, x, dx| dx[0] = x[0] * x[0] * 1e300, &[1e10], &g).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn resolvant_properties() {
        let g = grid(1.0, 100);
        let phi = resolvant(|_, a| a[0] = 0.0, 1, 0.0, &g).unwrap();
        assert!(phi.values.iter().all(|&v| v == 1.0));
        let phi = resolvant(|_, a| a[0] = -0.7, 1, 0.3, &g).unwrap();
        for i in 30..=100 {
            let exact = (-0.7 * (g.time(i) - 0.3)).exp();
            assert!((phi.at(i)[0] - exact).abs() < 1e-8);
        }
        assert!(resolvant(|_, a| a[0] = 0.0, 1, 0.123, &g).is_err());
        // cocycle with a time-varying 2x2 A
        let a_of = |st: Stage, a: &mut [f64]| {
            a.copy_from_slice(&[-0.5, st.t, 0.3, -0.2 * st.t.cos()]);
        };
        let p0 = resolvant(a_of, 2, 0.0, &g).unwrap();
        let p4 = resolvant(a_of, 2, 0.4, &g).unwrap();
        let mut prod = [0.0; 4];
        linalg::mat_mul(p4.at(100), p0.at(40), &mut prod, 2);
        for (x, y) in prod.iter().zip(p0.at(100)) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn duhamel_cases() {
        let g = grid(2.0, 200);
        let m = model::scalar_linear();
        let x = duhamel_solution(&m, &[0.0], None, &g).unwrap();
        assert!(x.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let mut m = model::ModelSpec::new(
            "drift",
            1,
            1,
            vec![model::parse_expr("0*theta[1]", 1).unwrap()],
            vec![model::parse_expr("1", 1).unwrap()],
            vec![0.0],
            2.0,
        )
        .unwrap();
        m.name = "drift".into();
        let x = duhamel_solution(&m, &[0.0], None, &g).unwrap();
        for i in 0..=200 {
            assert!((x.row(i)[0] - g.time(i)).abs() < 1e-8);
        }
    }

    #[test]
    fn duhamel_matches_rk4_on_alpha_pinene() {
        let m = model::alpha_pinene();
        let theta = m.theta_default.clone().unwrap();
        let g = grid(m.horizon, 1000);
        let x = duhamel_solution(&m, &theta, None, &g).unwrap();
        let a = m.eval_a(&theta, 0.0).unwrap();
        let y = integrate_ivp(|_, x, dx| linalg::mat_vec(&a, x, dx, 5), &m.x0, &g).unwrap();
        for (u, v) in x.values().iter().zip(y.values()) {
            assert!((u - v).abs() <= 1e-6 * v.abs().max(1e-6));
        }
        for i in 0..g.n_nodes() {
            let s: f64 = y.row(i).iter().sum();
            assert!((s - 100.0).abs() < 1e-8);
        }
    }

    #[test]
    fn quadrature_cases() {
        let g = grid(3.0, 10);
        assert!((quadrature(&GridFunction::constant(g, &[1.0])).unwrap() - 3.0).abs() < 1e-14);
        let g = grid(1.0, 100);
        let f = GridFunction::from_fn(g, 1, |t, v| v[0] = t * t).unwrap();
        assert!((quadrature(&f).unwrap() - 1.0 / 3.0).abs() < 1e-9);
        let g = grid(2.0 * std::f64::consts::PI, 1000);
        let f = GridFunction::from_fn(g, 1, |t, v| v[0] = t.sin()).unwrap();
        assert!(quadrature(&f).unwrap().abs() < 1e-9);
        for n in [2, 3, 5, 7, 8] {
            let g = grid(1.5, n);
            let f = GridFunction::from_fn(g, 1, |t, v| v[0] = t * t * t - 2.0 * t).unwrap();
            let exact = 1.5f64.powi(4) / 4.0 - 1.5 * 1.5;
            assert!((quadrature(&f).unwrap() - exact).abs() < 1e-13, "n = {n}");
        }
    }

    #[test]
    fn cumulative_is_fourth_order_exact_on_cubics() {
        let h = 0.1;
        let f: Vec<f64> = (0..=20).map(|i| (i as f64 * h).powi(3)).collect();
        let c = cumulative_integral(&f, h);
        for (i, v) in c.iter().enumerate() {
            assert!((v - (i as f64 * h).powi(4) / 4.0).abs() < 1e-13);
        }
        let r = reverse_cumulative_integral(&f, h);
        assert!((r[0] - 2f64.powi(4) / 4.0).abs() < 1e-12);
        assert_eq!(r[20], 0.0);
    }

    #[test]
    fn interpolation_and_csv() {
        let g = grid(1.0, 10);
        let f = GridFunction::from_fn(g, 2, |t, v| {
            v[0] = t * t;
            v[1] = 1.0 - t;
        })
        .unwrap();
        let v = f.eval(0.55).unwrap();
        assert!((v[0] - 0.3025).abs() < 1e-12 && (v[1] - 0.45).abs() < 1e-14);
        let lin = f.clone().with_interpolation(Interpolation::Linear);
        assert!((lin.eval(0.55).unwrap()[1] - 0.45).abs() < 1e-14);
        assert!(f.eval(1.5).is_err());
        let text = f.to_csv_string();
        assert!(text.starts_with("t,v1,v2\n"));
        let back = GridFunction::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.values(), f.values());
    }
}
