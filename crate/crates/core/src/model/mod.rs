//! Parameterized linear ODE models `ẋ = A_θ(t) x + r_θ(t)` with a known initial
//! state, plus the builtin registry.
//!
//! Matrices are stored flat in column-major order: entry `(i, j)` of a `d×d`
//! matrix lives at `i + j*d`. Parameter Jacobians stack one such block per
//! parameter, so `∂A_ij/∂θ_k` is at `i + j*d + k*d*d` and `∂r_i/∂θ_k` at `i + k*d`.

pub mod expr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::odesolve::TimeGrid;
pub use expr::{parse_expr, Expr, Tape, TapeScratch};

/// Box constraints on θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ThetaBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension(format!(
                "bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u))
        {
            return Err(Error::Precondition(
                "bounds must be finite with lower < upper".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (l, u))| *x >= *l && *x <= *u)
    }

    pub fn project(&self, theta: &mut [f64]) {
        for (x, (l, u)) in theta.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.clamp(*l, *u);
        }
    }

    /// Multiply every bound by `c` (for time rescaling, `c > 0`).
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            lower: self.lower.iter().map(|x| x * c).collect(),
            upper: self.upper.iter().map(|x| x * c).collect(),
        }
    }
}

/// On-disk model description. Expressions are strings in the model DSL.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub name: String,
    pub d: usize,
    pub p: usize,
    /// Row-major `d×d` expression strings.
    #[serde(rename = "A")]
    pub a: Vec<Vec<String>>,
    pub r: Vec<String>,
    pub x0: Vec<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub param_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_default: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<ThetaBounds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

/// A parameterized linear ODE with compiled entry expressions.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub d: usize,
    pub p: usize,
    /// Column-major `d×d`.
    pub a: Vec<Expr>,
    pub r: Vec<Expr>,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub param_names: Vec<String>,
    /// Reference parameter value (the simulation truth for builtins).
    pub theta_default: Option<Vec<f64>>,
    pub bounds: Option<ThetaBounds>,
    pub notes: Option<String>,
    a_tapes: Vec<Tape>,
    r_tapes: Vec<Tape>,
}

impl ModelSpec {
    /// Build from parsed expressions; `a` is column-major.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        d: usize,
        p: usize,
        a: Vec<Expr>,
        r: Vec<Expr>,
        x0: Vec<f64>,
        horizon: f64,
    ) -> Result<Self> {
        let name = name.into();
        if d == 0 {
            return Err(Error::InvalidModel("state dimension must be positive".into()));
        }
        if a.len() != d * d || r.len() != d || x0.len() != d {
            return Err(Error::InvalidModel(format!(
                "`{name}`: expected {} A entries, {d} r entries and {d} initial values",
                d * d
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidModel(format!("`{name}`: horizon must be positive")));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel(format!("`{name}`: non-finite x0")));
        }
        for e in a.iter().chain(&r) {
            if let Some(k) = e.max_param() {
                if k >= p {
                    return Err(Error::ParamIndex { index: k + 1, p });
                }
            }
        }
        let a_tapes = a.iter().map(Expr::compile).collect();
        let r_tapes = r.iter().map(Expr::compile).collect();
        Ok(Self {
            name,
            d,
            p,
            a,
            r,
            x0,
            horizon,
            param_names: (1..=p).map(|k| format!("theta{k}")).collect(),
            theta_default: None,
            bounds: None,
            notes: None,
            a_tapes,
            r_tapes,
        })
    }

    /// Parse a [`ModelFile`].
    pub fn from_file(file: &ModelFile) -> Result<Self> {
        let d = file.d;
        let p = file.p;
        if file.a.len() != d || file.a.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidModel(format!(
                "`{}`: A must be {d}×{d}",
                file.name
            )));
        }
        if file.r.len() != d {
            return Err(Error::InvalidModel(format!(
                "`{}`: r must have {d} entries",
                file.name
            )));
        }
        let mut a = vec![Expr::Const(0.0); d * d];
        for (i, row) in file.a.iter().enumerate() {
            for (j, src) in row.iter().enumerate() {
                a[i + j * d] = parse_expr(src, p)?;
            }
        }
        let r = file
            .r
            .iter()
            .map(|s| parse_expr(s, p))
            .collect::<Result<Vec<_>>>()?;
        let mut m = Self::new(&file.name, d, p, a, r, file.x0.clone(), file.horizon)?;
        if !file.param_names.is_empty() {
            if file.param_names.len() != p {
                return Err(Error::InvalidModel("param_names must have length p".into()));
            }
            m.param_names = file.param_names.clone();
        }
        if let Some(t) = &file.theta_default {
            if t.len() != p {
                return Err(Error::InvalidModel("theta_default must have length p".into()));
            }
        }
        if let Some(b) = &file.bounds {
            if b.len() != p {
                return Err(Error::InvalidModel("bounds must have length p".into()));
            }
            ThetaBounds::new(b.lower.clone(), b.upper.clone())?;
        }
        m.theta_default = file.theta_default.clone();
        m.bounds = file.bounds.clone();
        m.notes = file.notes.clone();
        Ok(m)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        Self::from_file(&file)
    }

    pub fn to_file(&self) -> ModelFile {
        let d = self.d;
        ModelFile {
            name: self.name.clone(),
            d,
            p: self.p,
            a: (0..d)
                .map(|i| (0..d).map(|j| self.a[i + j * d].to_string()).collect())
                .collect(),
            r: self.r.iter().map(ToString::to_string).collect(),
            x0: self.x0.clone(),
            horizon: self.horizon,
            param_names: self.param_names.clone(),
            theta_default: self.theta_default.clone(),
            bounds: self.bounds.clone(),
            notes: self.notes.clone(),
        }
    }

    pub fn with_metadata(
        mut self,
        names: &[&str],
        theta_default: Option<Vec<f64>>,
        bounds: Option<ThetaBounds>,
        notes: Option<&str>,
    ) -> Self {
        if names.len() == self.p {
            self.param_names = names.iter().map(|s| s.to_string()).collect();
        }
        self.theta_default = theta_default;
        self.bounds = bounds;
        self.notes = notes.map(str::to_string);
        self
    }

    /// Same model with `forcing[i]` added to `r_i` (a perturbation of the truth).
    pub fn with_forcing(&self, forcing: &[Expr]) -> Result<Self> {
        if forcing.len() != self.d {
            return Err(Error::Dimension(format!(
                "forcing has {} entries, model has d = {}",
                forcing.len(),
                self.d
            )));
        }
        let r = self
            .r
            .iter()
            .zip(forcing)
            .map(|(ri, fi)| {
                if fi.is_zero() {
                    ri.clone()
                } else if ri.is_zero() {
                    fi.clone()
                } else {
                    Expr::Binary(expr::BinOp::Add, Box::new(ri.clone()), Box::new(fi.clone()))
                }
            })
            .collect();
        let mut m = Self::new(
            format!("{}+forcing", self.name),
            self.d,
            self.p,
            self.a.clone(),
            r,
            self.x0.clone(),
            self.horizon,
        )?;
        m.param_names = self.param_names.clone();
        m.theta_default = self.theta_default.clone();
        m.bounds = self.bounds.clone();
        Ok(m)
    }

    /// Same dynamics expressed in rescaled time `t' = t / c`: the horizon becomes
    /// `T / c` and every entry is multiplied by `c` (so `θ' = cθ` for models
    /// linear in θ such as the reaction networks).
    pub fn time_rescaled(&self, c: f64) -> Result<Self> {
        if self.a.iter().chain(&self.r).any(Expr::depends_on_time) {
            return Err(Error::InvalidModel(
                "time rescaling is only supported for autonomous models".into(),
            ));
        }
        let mut m = self.clone();
        m.horizon = self.horizon / c;
        m.theta_default = self
            .theta_default
            .as_ref()
            .map(|t| t.iter().map(|x| x * c).collect());
        m.bounds = self.bounds.as_ref().map(|b| b.scaled(c));
        m.name = format!("{}@t/{c}", self.name);
        Ok(m)
    }

    /// Same model on a different observation horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidModel(format!("horizon must be positive, got {horizon}")));
        }
        let mut m = self.clone();
        m.horizon = horizon;
        Ok(m)
    }

    pub(crate) fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.p {
            return Err(Error::Dimension(format!(
                "theta has length {}, model `{}` has p = {}",
                theta.len(),
                self.name,
                self.p
            )));
        }
        if let Some(k) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "theta",
                entry: vec![k],
                t: f64::NAN,
            });
        }
        Ok(())
    }

    pub fn a_time_dependent(&self) -> bool {
        self.a_tapes.iter().any(Tape::time_dependent)
    }

    pub fn r_time_dependent(&self) -> bool {
        self.r_tapes.iter().any(Tape::time_dependent)
    }

    pub fn r_is_zero(&self) -> bool {
        self.r_tapes.iter().all(Tape::is_zero)
    }

    pub fn default_bounds(&self) -> Result<ThetaBounds> {
        self.bounds.clone().ok_or_else(|| {
            Error::Precondition(format!("model `{}` has no default bounds", self.name))
        })
    }

    /// `A_θ(t)` into `out` (column-major, length `d²`).
    pub fn eval_a_into(
        &self,
        theta: &[f64],
        t: f64,
        out: &mut [f64],
        scratch: &mut TapeScratch,
    ) -> Result<()> {
        let d = self.d;
        for (idx, tape) in self.a_tapes.iter().enumerate() {
            out[idx] = tape
                .eval(t, theta, scratch)
                .map_err(|e| tag_entry(e, vec![idx % d, idx / d], t))?;
        }
        Ok(())
    }

    pub fn eval_r_into(
        &self,
        theta: &[f64],
        t: f64,
        out: &mut [f64],
        scratch: &mut TapeScratch,
    ) -> Result<()> {
        for (i, tape) in self.r_tapes.iter().enumerate() {
            out[i] = tape
                .eval(t, theta, scratch)
                .map_err(|e| tag_entry(e, vec![i], t))?;
        }
        Ok(())
    }

    /// Values and θ-Jacobian of A: `a` gets `d²` entries, `da` gets `d²·p`.
    pub fn eval_a_dual_into(
        &self,
        theta: &[f64],
        t: f64,
        a: &mut [f64],
        da: &mut [f64],
        scratch: &mut TapeScratch,
    ) -> Result<()> {
        let d2 = self.d * self.d;
        let p = self.p;
        let mut g = std::mem::take(&mut scratch.grad_out);
        g.resize(p, 0.0);
        for (idx, tape) in self.a_tapes.iter().enumerate() {
            a[idx] = tape
                .eval_dual(t, theta, &mut g, scratch)
                .map_err(|e| tag_entry(e, vec![idx % self.d, idx / self.d], t))?;
            for k in 0..p {
                da[idx + k * d2] = g[k];
            }
        }
        scratch.grad_out = g;
        Ok(())
    }

    pub fn eval_r_dual_into(
        &self,
        theta: &[f64],
        t: f64,
        r: &mut [f64],
        dr: &mut [f64],
        scratch: &mut TapeScratch,
    ) -> Result<()> {
        let d = self.d;
        let p = self.p;
        let mut g = std::mem::take(&mut scratch.grad_out);
        g.resize(p, 0.0);
        for (i, tape) in self.r_tapes.iter().enumerate() {
            r[i] = tape
                .eval_dual(t, theta, &mut g, scratch)
                .map_err(|e| tag_entry(e, vec![i], t))?;
            for k in 0..p {
                dr[i + k * d] = g[k];
            }
        }
        scratch.grad_out = g;
        Ok(())
    }

    /// `A_θ(t)`, column-major.
    pub fn eval_a(&self, theta: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let mut out = vec![0.0; self.d * self.d];
        self.eval_a_into(theta, t, &mut out, &mut TapeScratch::default())?;
        Ok(out)
    }

    pub fn eval_r(&self, theta: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let mut out = vec![0.0; self.d];
        self.eval_r_into(theta, t, &mut out, &mut TapeScratch::default())?;
        Ok(out)
    }

    /// `∂A_θ(t)/∂θ` with `∂A_ij/∂θ_k` at `i + j*d + k*d*d`.
    pub fn eval_da_dtheta(&self, theta: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let mut a = vec![0.0; self.d * self.d];
        let mut da = vec![0.0; self.d * self.d * self.p];
        self.eval_a_dual_into(theta, t, &mut a, &mut da, &mut TapeScratch::default())?;
        Ok(da)
    }

    /// `∂r_θ(t)/∂θ` with `∂r_i/∂θ_k` at `i + k*d`.
    pub fn eval_dr_dtheta(&self, theta: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let mut r = vec![0.0; self.d];
        let mut dr = vec![0.0; self.d * self.p];
        self.eval_r_dual_into(theta, t, &mut r, &mut dr, &mut TapeScratch::default())?;
        Ok(dr)
    }

    /// Sample the model quantities at every half step of `grid`.
    pub fn sample(&self, theta: &[f64], grid: &TimeGrid) -> Result<ModelSamples> {
        self.check_theta(theta)?;
        ModelSamples::build(self, theta, grid)
    }
}

fn tag_entry(e: Error, entry: Vec<usize>, t: f64) -> Error {
    match e {
        Error::NonFinite { what, .. } => Error::NonFinite { what, entry, t },
        other => other,
    }
}

/// `A`, `r` and their θ-Jacobians tabulated at the half-step points
/// `t_k = t0 + k·h/2`, `k = 0..=2N`, of a grid. Time-independent blocks are
/// stored once.
#[derive(Debug, Clone)]
pub struct ModelSamples {
    pub d: usize,
    pub p: usize,
    n_half: usize,
    a_const: bool,
    r_const: bool,
    a: Vec<f64>,
    da: Vec<f64>,
    r: Vec<f64>,
    dr: Vec<f64>,
}

impl ModelSamples {
    fn build(model: &ModelSpec, theta: &[f64], grid: &TimeGrid) -> Result<Self> {
        let (d, p) = (model.d, model.p);
        let d2 = d * d;
        let n_half = 2 * grid.n_steps + 1;
        let a_const = !model.a_time_dependent();
        let r_const = !model.r_time_dependent();
        let na = if a_const { 1 } else { n_half };
        let nr = if r_const { 1 } else { n_half };
        let mut s = Self {
            d,
            p,
            n_half,
            a_const,
            r_const,
            a: vec![0.0; na * d2],
            da: vec![0.0; na * d2 * p],
            r: vec![0.0; nr * d],
            dr: vec![0.0; nr * d * p],
        };
        let mut scratch = TapeScratch::default();
        for k in 0..na {
            let t = grid.half_time(k);
            model.eval_a_dual_into(
                theta,
                t,
                &mut s.a[k * d2..(k + 1) * d2],
                &mut s.da[k * d2 * p..(k + 1) * d2 * p],
                &mut scratch,
            )?;
        }
        for k in 0..nr {
            let t = grid.half_time(k);
            model.eval_r_dual_into(
                theta,
                t,
                &mut s.r[k * d..(k + 1) * d],
                &mut s.dr[k * d * p..(k + 1) * d * p],
                &mut scratch,
            )?;
        }
        Ok(s)
    }

    pub fn n_half(&self) -> usize {
        self.n_half
    }

    #[inline]
    pub fn a(&self, k: usize) -> &[f64] {
        let d2 = self.d * self.d;
        let k = if self.a_const { 0 } else { k };
        &self.a[k * d2..(k + 1) * d2]
    }

    #[inline]
    pub fn da(&self, k: usize) -> &[f64] {
        let b = self.d * self.d * self.p;
        let k = if self.a_const { 0 } else { k };
        &self.da[k * b..(k + 1) * b]
    }

    #[inline]
    pub fn r(&self, k: usize) -> &[f64] {
        let k = if self.r_const { 0 } else { k };
        &self.r[k * self.d..(k + 1) * self.d]
    }

    #[inline]
    pub fn dr(&self, k: usize) -> &[f64] {
        let b = self.d * self.p;
        let k = if self.r_const { 0 } else { k };
        &self.dr[k * b..(k + 1) * b]
    }
}

// ---------------------------------------------------------------------------
// Builtins

/// True parameter used for the scalar linear model. Not a published value.
pub const SCALAR_LINEAR_DEFAULT_A: f64 = 0.5;

fn build(
    name: &str,
    rows: &[&[&str]],
    r: &[&str],
    p: usize,
    x0: Vec<f64>,
    horizon: f64,
) -> ModelSpec {
    let file = ModelFile {
        name: name.into(),
        d: rows.len(),
        p,
        a: rows
            .iter()
            .map(|row| row.iter().map(|s| s.to_string()).collect())
            .collect(),
        r: r.iter().map(|s| s.to_string()).collect(),
        x0,
        horizon,
        param_names: vec![],
        theta_default: None,
        bounds: None,
        notes: None,
    };
    ModelSpec::from_file(&file).expect("builtin model is well formed")
}

/// `ẋ = a x`, `X₀ = 1`, `T = 5`.
pub fn scalar_linear() -> ModelSpec {
    build("scalar-linear", &[&["theta[1]"]], &["0"], 1, vec![1.0], 5.0).with_metadata(
        &["a"],
        Some(vec![SCALAR_LINEAR_DEFAULT_A]),
        Some(ThetaBounds {
            lower: vec![-2.0],
            upper: vec![2.0],
        }),
        Some("default a = 0.5 is a library choice, not a published value"),
    )
}

/// `ẋ = θ₁/(θ₂² + t) x`, `X₀ = 1`, `T = 15`.
pub fn scalar_nonlinear() -> ModelSpec {
    build(
        "scalar-nonlinear",
        &[&["theta[1]/(theta[2]^2 + t)"]],
        &["0"],
        2,
        vec![1.0],
        15.0,
    )
    .with_metadata(
        &["theta1", "theta2"],
        Some(vec![1.4, 1.0]),
        Some(ThetaBounds {
            lower: vec![0.1, 0.2],
            upper: vec![5.0, 3.0],
        }),
        None,
    )
}

/// The scalar nonlinear model with an additive `sin(t)` forcing: the
/// data-generating process of the misspecification experiment.
pub fn scalar_nonlinear_sin() -> ModelSpec {
    build(
        "scalar-nonlinear-sin",
        &[&["theta[1]/(theta[2]^2 + t)"]],
        &["sin(t)"],
        2,
        vec![1.0],
        15.0,
    )
    .with_metadata(
        &["theta1", "theta2"],
        Some(vec![1.4, 1.0]),
        Some(ThetaBounds {
            lower: vec![0.1, 0.2],
            upper: vec![5.0, 3.0],
        }),
        Some("truth for misspecification runs; estimate with scalar-nonlinear"),
    )
}

/// Five-species first-order isomerization network, `X₀ = (100,0,0,0,0)`,
/// `T = 100` (simulation horizon).
pub fn alpha_pinene() -> ModelSpec {
    build(
        "alpha-pinene",
        &[
            &["-(theta[1] + theta[2])", "0", "0", "0", "0"],
            &["theta[1]", "0", "0", "0", "0"],
            &["theta[2]", "0", "-(theta[3] + theta[4])", "0", "theta[5]"],
            &["0", "0", "theta[3]", "0", "0"],
            &["0", "0", "theta[4]", "0", "-theta[5]"],
        ],
        &["0", "0", "0", "0", "0"],
        5,
        vec![100.0, 0.0, 0.0, 0.0, 0.0],
        100.0,
    )
    .with_metadata(
        &["theta1", "theta2", "theta3", "theta4", "theta5"],
        Some(vec![5.93e-4, 2.96e-4, 2.05e-4, 27.5e-4, 4.0e-4]),
        Some(ThetaBounds {
            lower: vec![1e-6; 5],
            upper: vec![1e-2; 5],
        }),
        None,
    )
}

/// Names of all builtin models.
pub const BUILTIN_NAMES: [&str; 4] = [
    "scalar-linear",
    "scalar-nonlinear",
    "scalar-nonlinear-sin",
    "alpha-pinene",
];

pub fn builtin_models() -> Vec<ModelSpec> {
    vec![
        scalar_linear(),
        scalar_nonlinear(),
        scalar_nonlinear_sin(),
        alpha_pinene(),
    ]
}

pub fn builtin(name: &str) -> Result<ModelSpec> {
    match name {
        "scalar-linear" => Ok(scalar_linear()),
        "scalar-nonlinear" => Ok(scalar_nonlinear()),
        "scalar-nonlinear-sin" => Ok(scalar_nonlinear_sin()),
        "alpha-pinene" => Ok(alpha_pinene()),
        other => Err(Error::ModelNotFound(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_pinene_entry() {
        let m = alpha_pinene();
        let theta = m.theta_default.clone().unwrap();
        let a = m.eval_a(&theta, 3.0).unwrap();
        assert!((a[0] + 8.89e-4).abs() < 1e-15);
        assert_eq!((m.d, m.p), (5, 5));
        for j in 0..5 {
            let s: f64 = (0..5).map(|i| a[i + j * 5]).sum();
            assert!(s.abs() < 1e-18);
        }
    }

    #[test]
    fn scalar_models() {
        let m = scalar_linear();
        assert_eq!(m.eval_a(&[0.0], 1.0).unwrap(), vec![0.0]);
        assert_eq!(m.eval_da_dtheta(&[0.3], 1.0).unwrap(), vec![1.0]);
        assert_eq!(m.x0, vec![1.0]);
        let m = scalar_nonlinear();
        assert_eq!(m.eval_a(&[1.4, 1.0], 0.0).unwrap(), vec![1.4]);
        let da = m.eval_da_dtheta(&[1.4, 1.0], 0.0).unwrap();
        assert!((da[0] - 1.0).abs() < 1e-15 && (da[1] + 2.8).abs() < 1e-15);
    }

    #[test]
    fn lookup() {
        assert!(matches!(builtin("unknown-name"), Err(Error::ModelNotFound(_))));
        assert_eq!(builtin_models().len(), BUILTIN_NAMES.len());
        for name in BUILTIN_NAMES {
            assert_eq!(builtin(name).unwrap().name, name);
        }
    }

    #[test]
    fn json_roundtrip() {
        let m = alpha_pinene();
        let text = serde_json::to_string(&m.to_file()).unwrap();
        let back = ModelSpec::from_json(&text).unwrap();
        let th = [1e-3, 2e-3, 3e-3, 4e-3, 5e-3];
        assert_eq!(m.eval_a(&th, 0.0).unwrap(), back.eval_a(&th, 0.0).unwrap());
    }

    #[test]
    fn nonfinite_reports_entry() {
        let m = scalar_nonlinear();
        match m.eval_a(&[1.0, 0.0], 0.0) {
            Err(Error::NonFinite { entry, .. }) => assert_eq!(entry, vec![0, 0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn forcing_adds_to_r() {
        let m = scalar_nonlinear().with_forcing(&[parse_expr("sin(t)", 0).unwrap()]).unwrap();
        assert!((m.eval_r(&[1.4, 1.0], 1.0).unwrap()[0] - 1f64.sin()).abs() < 1e-15);
    }
}
