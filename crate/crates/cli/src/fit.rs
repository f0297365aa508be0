use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use clap::{ArgGroup, Args, ValueEnum};
use serde_json::{json, Value};
use trackode::bench::{self, ExperimentSpec};
use trackode::data;
use trackode::estimate::{self, FitConfig, LambdaScore, LambdaSweep};
use trackode::lq::{self, Target};
use trackode::model::{self, ModelSpec, ThetaBounds};
use trackode::odesolve::GridFunction;
use trackode::smoothing::Dataset;

use crate::error::CliError;
use crate::plot::{self, Panel, Series};
use crate::{read_text, write_text, Common};

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["data", "simulate"])))]
pub struct FitArgs {
    /// Builtin model name or path to a model JSON file.
    #[arg(long)]
    pub model: String,
    /// Data CSV (`t,y1,...,yd`) or `builtin:fuguitt`.
    #[arg(long)]
    pub data: Option<String>,
    /// Experiment spec JSON; fits replicate 0 of its simulated data.
    #[arg(long)]
    pub simulate: Option<std::path::PathBuf>,
    /// `paper` or a comma-separated list of λ values.
    #[arg(long, default_value = "paper")]
    pub lambda_grid: String,
    /// Score used to select λ.
    #[arg(long, value_enum, default_value_t = Score::Sse)]
    pub score: Score,
    #[arg(long)]
    pub n_starts: Option<usize>,
    /// Attach the plug-in asymptotic covariance.
    #[arg(long)]
    pub variance: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Score {
    Sse,
    Csse,
}

/// Model, data and bounds in the units the fit runs in.
struct Problem {
    model: ModelSpec,
    data: Dataset,
    bounds: ThetaBounds,
    source: String,
    /// `t' = t/c`; parameters are reported as `θ = θ'/c`.
    time_scale: f64,
    fuguitt: bool,
}

pub fn load_model(name: &str) -> Result<ModelSpec, CliError> {
    if name.ends_with(".json") || Path::new(name).is_file() {
        Ok(ModelSpec::from_json(&read_text(Path::new(name))?)?)
    } else {
        Ok(model::builtin(name)?)
    }
}

/// The λ grid published for the model's experiments.
fn paper_grid(model: &str, fuguitt: bool) -> Option<Vec<f64>> {
    if fuguitt {
        return Some(data::fuguitt_lambda_grid());
    }
    match model {
        "scalar-linear" => Some((1..=40).map(|k| 10.0 * k as f64).collect()),
        "scalar-nonlinear" => Some(estimate::lambda_grid(-1..=7, &[1.0])),
        "scalar-nonlinear-sin" => Some(estimate::lambda_grid(-4..=0, &[1.0, 5.0])),
        "alpha-pinene" => Some(estimate::lambda_grid(0..=5, &[1.0, 5.0])),
        _ => None,
    }
}

fn parse_grid(text: &str, model: &str, fuguitt: bool) -> Result<Vec<f64>, CliError> {
    if text == "paper" {
        return paper_grid(model, fuguitt)
            .ok_or_else(|| CliError::usage(format!("no published λ grid for model `{model}`")));
    }
    let mut grid = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| CliError::usage(format!("bad λ value `{s}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

fn load_problem(args: &FitArgs, seed: Option<u64>) -> Result<Problem, CliError> {
    let model = load_model(&args.model)?;
    if args.data.as_deref() == Some(data::FUGUITT_NAME) {
        if model.name != "alpha-pinene" {
            return Err(CliError::usage(format!("{} requires --model alpha-pinene", data::FUGUITT_NAME)));
        }
        let p = data::fuguitt_problem(data::FUGUITT_TIME_SCALE)?;
        return Ok(Problem {
            model: p.model,
            data: p.data,
            bounds: p.bounds,
            source: data::FUGUITT_NAME.into(),
            time_scale: p.time_scale,
            fuguitt: true,
        });
    }
    let (data, source) = match (&args.data, &args.simulate) {
        (Some(path), _) => {
            let f = File::open(path).map_err(|e| CliError::usage(format!("{path}: {e}")))?;
            (Dataset::read_csv(BufReader::new(f))?, path.clone())
        }
        (None, Some(spec_path)) => {
            let mut spec = ExperimentSpec::from_json(&read_text(spec_path)?)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            (bench::simulate_dataset(&spec, 0)?, spec_path.display().to_string())
        }
        (None, None) => unreachable!("clap requires a data source"),
    };
    if data.d != model.d {
        return Err(CliError::usage(format!(
            "data has {} states, model `{}` has d = {}",
            data.d, model.name, model.d
        )));
    }
    let bounds = model.default_bounds()?;
    Ok(Problem { model, data, bounds, source, time_scale: 1.0, fuguitt: false })
}

fn norms(u: &GridFunction) -> Vec<f64> {
    u.component_l2_sq().iter().map(|v| v.sqrt()).collect()
}

/// ū, its norms and the model SSE at a fixed θ (fit units).
fn control_at(
    prob: &Problem,
    sweep: &LambdaSweep,
    theta: &[f64],
    lambda: f64,
    cfg: &FitConfig,
) -> Result<(Vec<f64>, f64, f64), CliError> {
    let grid = estimate::tracking_grid(&prob.model, lambda, cfg)?;
    let target = Target::from_spline(&sweep.fit, &grid)?;
    let sol = lq::solve_riccati(&prob.model, theta, lambda, &target)?;
    let tr = lq::closed_loop_trajectory(&prob.model, theta, &sol, &target)?;
    let x = lq::controlled_trajectory(&prob.model, theta, None, &grid)?;
    Ok((norms(&tr.u_bar), tr.u_bar.l2_norm_sq().sqrt(), estimate::sse(&prob.data, &x)?))
}

fn trajectory_csv(xhat: &GridFunction, xm: &GridFunction, xc: &GridFunction) -> String {
    let d = xm.dim();
    let mut out = String::from("t");
    for prefix in ["xhat", "x_model", "x_corrected"] {
        for i in 1..=d {
            out.push_str(&format!(",{prefix}{i}"));
        }
    }
    out.push('\n');
    let grid = xm.grid();
    for n in 0..grid.n_nodes() {
        out.push_str(&format!("{:.16e}", grid.time(n)));
        for v in xhat.row(n).iter().chain(xm.row(n)).chain(xc.row(n)) {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

fn fit_plot(prob: &Problem, xhat: &GridFunction, xm: &GridFunction, xc: &GridFunction) -> String {
    let t = xm.grid().nodes();
    let panels: Vec<Panel> = (0..prob.model.d)
        .map(|c| Panel {
            title: format!("{}: state {}", prob.model.name, c + 1),
            series: vec![
                Series::points("data", prob.data.times.clone(), prob.data.state(c), "black"),
                Series::dashed("smoother", t.clone(), xhat.component(c), "#888888"),
                Series::line("model", t.clone(), xm.component(c), "#1f5fbf"),
                Series::line("corrected", t.clone(), xc.component(c), "#c0392b"),
            ],
        })
        .collect();
    plot::render(&panels)
}

pub fn run(args: &FitArgs) -> Result<(), CliError> {
    let prob = load_problem(args, args.common.seed)?;
    let grid = parse_grid(&args.lambda_grid, &prob.model.name, prob.fuguitt)?;
    let base = FitConfig {
        knot_candidates: prob.fuguitt.then(|| vec![0]),
        ..FitConfig::default()
    };
    let mut cfg = args.common.fit_config(base)?;
    if let Some(n) = args.n_starts {
        cfg.n_starts = n.max(1);
    }
    cfg.compute_variance |= args.variance;
    let out = args.common.out_dir()?;

    let score = match args.score {
        Score::Sse => LambdaScore::Sse,
        Score::Csse => LambdaScore::Csse,
    };
    let sweep = estimate::sweep_lambda(&prob.model, &prob.data, &grid, &prob.bounds, &cfg)?;
    let sel = sweep.select(&prob.model, score, &cfg)?;
    let est = &sel.estimate;
    let c = prob.time_scale;
    let orig = |th: &[f64]| th.iter().map(|v| v / c).collect::<Vec<f64>>();
    let p = prob.model.p;

    let rows: Vec<Value> = sel
        .rows
        .iter()
        .map(|r| {
            json!({
                "lambda": r.lambda,
                "theta_hat": r.theta_hat.as_deref().map(orig),
                "S": r.s_value,
                "sse": r.sse,
                "csse": r.csse,
                "error": r.error,
            })
        })
        .collect();
    let mut report = json!({
        "model": prob.model.name,
        "data": prob.source,
        "time_scale": c,
        "score": match args.score { Score::Sse => "sse", Score::Csse => "csse" },
        "lambda": sel.lambda,
        "param_names": prob.model.param_names,
        "theta_hat": orig(&est.theta_hat),
        "theta_hat_fit_units": est.theta_hat,
        "S": est.s_value,
        "sse": est.sse,
        "csse": est.csse,
        "u_bar_l2": norms(&est.u_bar),
        "u_bar_norm": est.u_bar.l2_norm_sq().sqrt(),
        "cov_theta": est.cov_theta.as_ref().map(|v| {
            v.chunks(p).map(|row| row.iter().map(|x| x / (c * c)).collect::<Vec<f64>>()).collect::<Vec<_>>()
        }),
        "smoothing": { "interior_knots": sweep.fit.basis.interior_knots, "gcv_score": sweep.fit.gcv_score },
        "lambda_rows": rows,
        "optimizer_report": est.report,
        "config": cfg,
    });
    if prob.fuguitt {
        let theta_b: Vec<f64> = data::FUGUITT_THETA_REFERENCE.iter().map(|v| v * c).collect();
        let (l2, norm, sse) = control_at(&prob, &sweep, &theta_b, sel.lambda, &cfg)?;
        report["reference"] = json!({
            "theta": data::FUGUITT_THETA_REFERENCE,
            "u_bar_l2": l2,
            "u_bar_norm": norm,
            "sse": sse,
        });
    }

    let xhat = sweep.fit.to_grid_function(est.x_model.grid())?;
    write_text(&out.join("estimate.json"), &format!("{}\n", serde_json::to_string_pretty(&report).map_err(CliError::from_json)?))?;
    write_text(&out.join("u_bar.csv"), &est.u_bar.to_csv_string())?;
    write_text(&out.join("trajectory.csv"), &trajectory_csv(&xhat, &est.x_model, &est.x_corrected))?;
    write_text(&out.join("fit.svg"), &fit_plot(&prob, &xhat, &est.x_model, &est.x_corrected))?;

    println!("model {}  data {}  λ = {}", prob.model.name, prob.source, sel.lambda);
    for (name, v) in prob.model.param_names.iter().zip(orig(&est.theta_hat)) {
        println!("  {name:<10} {v:.6e}");
    }
    println!("  SSE {:.6}  CSSE {:.6}  S {:.6e}", est.sse, est.csse, est.s_value);
    println!("wrote {}", out.display());
    Ok(())
}
