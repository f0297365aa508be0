//! Box-constrained local optimizers and multi-start initial points.
//!
//! Both optimizers work in normalized coordinates `z ∈ [0,1]^p`. Coordinates
//! whose bounds are positive and span at least two decades are mapped
//! logarithmically, the others linearly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ThetaBounds;

/// Ratio `upper/lower` from which a coordinate is handled on a log scale.
const LOG_SCALE_RATIO: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Axis {
    Linear { lo: f64, width: f64 },
    Log { lo: f64, width: f64 },
}

/// Map between θ and normalized coordinates.
#[derive(Debug, Clone)]
pub struct Transform {
    axes: Vec<Axis>,
}

impl Transform {
    pub fn new(bounds: &ThetaBounds) -> Self {
        let axes = bounds
            .lower
            .iter()
            .zip(&bounds.upper)
            .map(|(&l, &u)| {
                if l > 0.0 && u / l >= LOG_SCALE_RATIO {
                    Axis::Log {
                        lo: l.ln(),
                        width: u.ln() - l.ln(),
                    }
                } else {
                    Axis::Linear { lo: l, width: u - l }
                }
            })
            .collect();
        Self { axes }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn is_log(&self, k: usize) -> bool {
        matches!(self.axes[k], Axis::Log { .. })
    }

    pub fn to_theta(&self, z: &[f64]) -> Vec<f64> {
        self.axes
            .iter()
            .zip(z)
            .map(|(a, &z)| {
                let z = z.clamp(0.0, 1.0);
                match *a {
                    Axis::Linear { lo, width } => lo + z * width,
                    Axis::Log { lo, width } => (lo + z * width).exp(),
                }
            })
            .collect()
    }

    pub fn to_z(&self, theta: &[f64]) -> Vec<f64> {
        self.axes
            .iter()
            .zip(theta)
            .map(|(a, &t)| {
                let z = match *a {
                    Axis::Linear { lo, width } => (t - lo) / width,
                    Axis::Log { lo, width } => (t.max(f64::MIN_POSITIVE).ln() - lo) / width,
                };
                z.clamp(0.0, 1.0)
            })
            .collect()
    }

    /// Chain rule: gradient in θ to gradient in z at `theta`.
    pub fn grad_to_z(&self, theta: &[f64], g: &[f64]) -> Vec<f64> {
        self.axes
            .iter()
            .zip(theta.iter().zip(g))
            .map(|(a, (&t, &g))| match *a {
                Axis::Linear { width, .. } => g * width,
                Axis::Log { width, .. } => g * t * width,
            })
            .collect()
    }
}

/// Stopping rules shared by the optimizers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimConfig {
    pub max_iter: usize,
    /// Projected-gradient tolerance in normalized coordinates, relative to
    /// the projected gradient at the start.
    pub grad_tol: f64,
    /// Relative decrease of the objective below which an iteration counts as
    /// stalled.
    pub f_tol: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-6,
            f_tol: 1e-12,
        }
    }
}

/// Result of one local run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalResult {
    pub start: Vec<f64>,
    pub theta: Vec<f64>,
    pub f: f64,
    /// Infinity norm of the projected gradient in normalized coordinates
    /// (NaN for the gradient-free method).
    pub proj_grad: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub status: String,
}

fn proj_grad_norm(z: &[f64], g: &[f64]) -> f64 {
    z.iter()
        .zip(g)
        .map(|(&z, &g)| (z - (z - g).clamp(0.0, 1.0)).abs())
        .fold(0.0, f64::max)
}

/// Projected BFGS with Armijo backtracking along the projected path. The
/// objective returns the value and the θ-gradient; evaluation errors at trial
/// points are treated as `+∞`.
pub fn bfgs_box<F>(
    mut f: F,
    start: &[f64],
    transform: &Transform,
    cfg: &OptimConfig,
) -> Result<LocalResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let p = transform.dim();
    let mut evaluations = 0;
    let mut eval = |z: &[f64]| -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let theta = transform.to_theta(z);
        let (v, g) = f(&theta)?;
        if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::EstimationFailed {
                starts: 1,
                reason: "non-finite objective".into(),
            });
        }
        let gz = transform.grad_to_z(&theta, &g);
        Ok((v, gz, theta))
    };
    let mut z = transform.to_z(start);
    let (mut fx, mut g, mut theta) = eval(&z)?;
    evaluations += 1;
    let pg0 = proj_grad_norm(&z, &g);
    let tol = cfg.grad_tol * pg0.max(f64::MIN_POSITIVE);
    let mut hinv = identity(p);
    let mut fresh = true;
    let mut status = String::from("max iterations");
    let mut converged = false;
    let mut iterations = 0;
    let mut stalls = 0;
    while iterations < cfg.max_iter {
        let pg = proj_grad_norm(&z, &g);
        if pg <= tol || pg == 0.0 {
            converged = true;
            status = "projected gradient".into();
            break;
        }
        iterations += 1;
        let active: Vec<bool> = (0..p)
            .map(|i| (z[i] <= 0.0 && g[i] > 0.0) || (z[i] >= 1.0 && g[i] < 0.0))
            .collect();
        let mut dir = vec![0.0; p];
        for i in 0..p {
            if !active[i] {
                dir[i] = -(0..p)
                    .filter(|&j| !active[j])
                    .map(|j| hinv[i * p + j] * g[j])
                    .sum::<f64>();
            }
        }
        let slope: f64 = dir.iter().zip(&g).map(|(d, g)| d * g).sum();
        if slope >= 0.0 {
            hinv = identity(p);
            fresh = true;
            for i in 0..p {
                dir[i] = if active[i] { 0.0 } else { -g[i] };
            }
        }
        let dmax = dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let mut alpha = if fresh { (0.1 / dmax).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = z
                .iter()
                .zip(&dir)
                .map(|(z, d)| (z + alpha * d).clamp(0.0, 1.0))
                .collect();
            let decrease: f64 = trial
                .iter()
                .zip(&z)
                .zip(&g)
                .map(|((t, z), g)| g * (t - z))
                .sum();
            if let Ok((ft, gt, th)) = eval(&trial) {
                evaluations += 1;
                if ft <= fx + 1e-4 * decrease {
                    accepted = Some((trial, ft, gt, th));
                    break;
                }
            } else {
                evaluations += 1;
            }
            alpha *= 0.5;
        }
        // Expand while the weak Wolfe curvature condition fails, so that
        // sᵀy > 0 and the inverse Hessian can grow.
        if let Some((mut za, mut fa, mut ga, mut tha)) = accepted.take() {
            for _ in 0..30 {
                let step: Vec<f64> = za.iter().zip(&z).map(|(a, b)| a - b).collect();
                let d0: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
                let d1: f64 = ga.iter().zip(&step).map(|(a, b)| a * b).sum();
                if d1 >= 0.9 * d0 {
                    break;
                }
                alpha *= 2.0;
                let trial: Vec<f64> = z
                    .iter()
                    .zip(&dir)
                    .map(|(z, d)| (z + alpha * d).clamp(0.0, 1.0))
                    .collect();
                if trial == za {
                    break;
                }
                let decrease: f64 = trial
                    .iter()
                    .zip(&z)
                    .zip(&g)
                    .map(|((t, z), g)| g * (t - z))
                    .sum();
                evaluations += 1;
                match eval(&trial) {
                    Ok((ft, gt, th)) if ft <= fx + 1e-4 * decrease && ft < fa => {
                        (za, fa, ga, tha) = (trial, ft, gt, th);
                    }
                    _ => break,
                }
            }
            accepted = Some((za, fa, ga, tha));
        }
        let Some((zn, fnew, gn, thn)) = accepted else {
            if !fresh {
                hinv = identity(p);
                fresh = true;
                continue;
            }
            status = "line search failed".into();
            converged = proj_grad_norm(&z, &g) <= 1e3 * tol;
            break;
        };
        let s: Vec<f64> = zn.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > 1e-10 * ss.sqrt() * yy.sqrt() {
            if fresh {
                let scale = sy / yy;
                hinv.iter_mut().for_each(|v| *v *= scale);
            }
            bfgs_update(&mut hinv, &s, &y, sy, p);
            fresh = false;
        }
        let rel = (fx - fnew) / fx.abs().max(f64::MIN_POSITIVE);
        z = zn;
        fx = fnew;
        g = gn;
        theta = thn;
        if rel <= cfg.f_tol {
            stalls += 1;
            if stalls >= 3 {
                status = "objective stalled".into();
                converged = true;
                break;
            }
        } else {
            stalls = 0;
        }
    }
    Ok(LocalResult {
        start: start.to_vec(),
        proj_grad: proj_grad_norm(&z, &g),
        theta,
        f: fx,
        iterations,
        evaluations,
        converged,
        status,
    })
}

fn identity(p: usize) -> Vec<f64> {
    let mut m = vec![0.0; p * p];
    for i in 0..p {
        m[i * p + i] = 1.0;
    }
    m
}

/// Inverse-Hessian update `H ← (I − ρsyᵀ)H(I − ρysᵀ) + ρssᵀ`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64, p: usize) {
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..p)
        .map(|i| (0..p).map(|j| h[i * p + j] * y[j]).sum())
        .collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..p {
        for j in 0..p {
            h[i * p + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Nelder-Mead on the box (vertices clamped). Evaluation errors count as `+∞`.
pub fn nelder_mead<F>(
    mut f: F,
    start: &[f64],
    transform: &Transform,
    cfg: &OptimConfig,
) -> Result<LocalResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let p = transform.dim();
    let mut evaluations = 0;
    let mut eval = |z: &[f64]| -> f64 {
        evaluations += 1;
        match f(&transform.to_theta(z)) {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    };
    let z0 = transform.to_z(start);
    let mut simplex = vec![z0.clone()];
    for k in 0..p {
        let mut v = z0.clone();
        v[k] = if v[k] + 0.05 <= 1.0 { v[k] + 0.05 } else { v[k] - 0.05 };
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    if fv[0].is_infinite() {
        return Err(Error::EstimationFailed {
            starts: 1,
            reason: "objective not finite at the start".into(),
        });
    }
    let max_iter = cfg.max_iter * 10 * p.max(1);
    let mut iterations = 0;
    let mut converged = false;
    let clamp = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect() };
    while iterations < max_iter {
        let mut order: Vec<usize> = (0..=p).collect();
        order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        fv = order.iter().map(|&i| fv[i]).collect();
        let spread = (fv[p] - fv[0]).abs();
        let size = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= cfg.f_tol * fv[0].abs().max(f64::MIN_POSITIVE) || size <= 1e-10 {
            converged = true;
            break;
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..p)
            .map(|k| simplex[..p].iter().map(|v| v[k]).sum::<f64>() / p as f64)
            .collect();
        let worst = simplex[p].clone();
        let along = |t: f64| -> Vec<f64> {
            clamp(
                centroid
                    .iter()
                    .zip(&worst)
                    .map(|(c, w)| c + t * (c - w))
                    .collect(),
            )
        };
        let xr = along(1.0);
        let fr = eval(&xr);
        if fr < fv[0] {
            let xe = along(2.0);
            let fe = eval(&xe);
            if fe < fr {
                simplex[p] = xe;
                fv[p] = fe;
            } else {
                simplex[p] = xr;
                fv[p] = fr;
            }
        } else if fr < fv[p - 1] {
            simplex[p] = xr;
            fv[p] = fr;
        } else {
            let (xc, fc) = if fr < fv[p] {
                let x = along(0.5);
                let v = eval(&x);
                (x, v)
            } else {
                let x = along(-0.5);
                let v = eval(&x);
                (x, v)
            };
            if fc < fv[p].min(fr) {
                simplex[p] = xc;
                fv[p] = fc;
            } else {
                for i in 1..=p {
                    let v: Vec<f64> = simplex[i]
                        .iter()
                        .zip(&simplex[0])
                        .map(|(x, b)| b + 0.5 * (x - b))
                        .collect();
                    fv[i] = eval(&v);
                    simplex[i] = v;
                }
            }
        }
    }
    let best = (0..=p).min_by(|&a, &b| fv[a].total_cmp(&fv[b])).unwrap_or(0);
    Ok(LocalResult {
        start: start.to_vec(),
        theta: transform.to_theta(&simplex[best]),
        f: fv[best],
        proj_grad: f64::NAN,
        iterations,
        evaluations,
        converged,
        status: if converged { "simplex collapsed".into() } else { "max iterations".into() },
    })
}

/// `n` Latin-hypercube points in the box (strata in normalized coordinates,
/// so log-scaled axes are stratified in log space).
pub fn latin_hypercube(bounds: &ThetaBounds, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let transform = Transform::new(bounds);
    let p = transform.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(p);
    for _ in 0..p {
        let mut strata: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            strata.swap(i, j);
        }
        columns.push(
            strata
                .into_iter()
                .map(|s| (s as f64 + rng.random_range(0.0..1.0)) / n as f64)
                .collect(),
        );
    }
    (0..n)
        .map(|i| {
            let z: Vec<f64> = columns.iter().map(|c| c[i]).collect();
            transform.to_theta(&z)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        (f, g)
    }

    #[test]
    fn bfgs_finds_rosenbrock_minimum() {
        let b = ThetaBounds::new(vec![-2.0, -2.0], vec![2.0, 3.0]).unwrap();
        let t = Transform::new(&b);
        let cfg = OptimConfig {
            max_iter: 500,
            grad_tol: 1e-10,
            ..Default::default()
        };
        let r = bfgs_box(|x| Ok(rosenbrock(x)), &[-1.2, 1.0], &t, &cfg).unwrap();
        assert!(r.converged, "{}", r.status);
        assert!((r.theta[0] - 1.0).abs() < 1e-5 && (r.theta[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn bfgs_respects_active_bound() {
        let b = ThetaBounds::new(vec![0.5, -1.0], vec![2.0, 1.0]).unwrap();
        let t = Transform::new(&b);
        let r = bfgs_box(
            |x| Ok((x[0] * x[0] + (x[1] - 0.3).powi(2), vec![2.0 * x[0], 2.0 * (x[1] - 0.3)])),
            &[1.5, 0.0],
            &t,
            &OptimConfig::default(),
        )
        .unwrap();
        assert_eq!(r.theta[0], 0.5);
        assert!((r.theta[1] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn nelder_mead_quadratic() {
        let b = ThetaBounds::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap();
        let t = Transform::new(&b);
        let r = nelder_mead(
            |x| Ok((x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2)),
            &[0.0, 0.0],
            &t,
            &OptimConfig::default(),
        )
        .unwrap();
        assert!((r.theta[0] - 1.0).abs() < 1e-4 && (r.theta[1] + 2.0).abs() < 1e-4);
    }

    #[test]
    fn log_axis_roundtrip_and_lhs_strata() {
        let b = ThetaBounds::new(vec![1e-6, 0.0], vec![1e-2, 1.0]).unwrap();
        let t = Transform::new(&b);
        assert!(t.is_log(0) && !t.is_log(1));
        let th = [3e-4, 0.25];
        let back = t.to_theta(&t.to_z(&th));
        assert!((back[0] - th[0]).abs() < 1e-15 && (back[1] - th[1]).abs() < 1e-15);
        let pts = latin_hypercube(&b, 8, 3);
        assert_eq!(pts, latin_hypercube(&b, 8, 3));
        let mut cells: Vec<usize> = pts
            .iter()
            .map(|p| (t.to_z(p)[1] * 8.0).floor() as usize)
            .collect();
        cells.sort_unstable();
        assert_eq!(cells, (0..8).collect::<Vec<_>>());
        assert!(pts.iter().all(|p| b.contains(p)));
    }
}
