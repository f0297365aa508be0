//! Embedded datasets.

use crate::error::Result;
use crate::model::{self, ModelSpec, ThetaBounds};
use crate::smoothing::Dataset;

/// Observation times (minutes) of the α-pinene isomerization data of Fuguitt
/// and Hawkins.
pub const FUGUITT_TIMES: [f64; 8] = [
    1230.0, 3060.0, 4920.0, 7800.0, 10680.0, 15030.0, 22620.0, 36420.0,
];

/// Relative concentrations (%) of the five species at [`FUGUITT_TIMES`].
pub const FUGUITT_OBS: [[f64; 5]; 8] = [
    [88.35, 7.3, 2.3, 0.4, 1.75],
    [76.4, 15.6, 4.5, 0.7, 2.8],
    [65.1, 23.1, 5.3, 1.1, 5.8],
    [50.4, 32.9, 6.0, 1.5, 9.3],
    [37.5, 42.7, 6.0, 1.9, 12.0],
    [25.9, 49.1, 5.9, 2.2, 17.0],
    [14.0, 57.4, 5.1, 2.6, 21.0],
    [4.5, 63.1, 3.8, 2.9, 25.7],
];

/// Reference estimate of the literature (original units, per minute).
pub const FUGUITT_THETA_REFERENCE: [f64; 5] = [0.593e-4, 0.296e-4, 0.205e-4, 2.75e-4, 0.4e-4];

/// Time scale `c` of `t' = t/c` under which the published λ grid applies
/// (times in thousands of minutes).
pub const FUGUITT_TIME_SCALE: f64 = 1e3;

/// Name under which the dataset is addressed on the command line.
pub const FUGUITT_NAME: &str = "builtin:fuguitt";

/// The data in original units.
pub fn fuguitt() -> Dataset {
    let rows: Vec<Vec<f64>> = FUGUITT_OBS.iter().map(|r| r.to_vec()).collect();
    Dataset::from_rows(FUGUITT_TIMES.to_vec(), &rows).expect("embedded table is well formed")
}

/// λ grid used for the real α-pinene data: `{10^k, k = 1..11} ∪ {5·10^k, k = 1..4}`.
pub fn fuguitt_lambda_grid() -> Vec<f64> {
    let mut g: Vec<f64> = (1..=11).map(|k| 10f64.powi(k)).collect();
    g.extend((1..=4).map(|k| 5.0 * 10f64.powi(k)));
    g.sort_by(f64::total_cmp);
    g
}

/// The α-pinene problem in rescaled time `t' = t/c`: model on `[0, 36420/c]`,
/// data with rescaled times and bounds in rescaled units (`θ' = cθ`).
#[derive(Debug, Clone)]
pub struct RescaledProblem {
    pub model: ModelSpec,
    pub data: Dataset,
    pub bounds: ThetaBounds,
    pub time_scale: f64,
}

impl RescaledProblem {
    /// Parameters back in original units.
    pub fn to_original(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|v| v / self.time_scale).collect()
    }

    pub fn to_rescaled(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|v| v * self.time_scale).collect()
    }
}

pub fn fuguitt_problem(time_scale: f64) -> Result<RescaledProblem> {
    let base = model::alpha_pinene();
    let horizon = FUGUITT_TIMES[FUGUITT_TIMES.len() - 1];
    let model = base.with_horizon(horizon)?.time_rescaled(time_scale)?;
    let raw = fuguitt();
    let data = Dataset::new(
        raw.times.iter().map(|t| t / time_scale).collect(),
        raw.obs.clone(),
        raw.d,
    )?;
    let bounds = model.default_bounds()?;
    Ok(RescaledProblem {
        model,
        data,
        bounds,
        time_scale,
    })
}
