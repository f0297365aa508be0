use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use clap::Args;
use serde_json::{json, Value};
use trackode::estimate::diagnose::dominant_period;
use trackode::odesolve::GridFunction;

use crate::error::CliError;
use crate::plot::{self, Panel, Series};
use crate::{read_text, write_text, Common};

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    /// Output directory of a completed `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

fn load_fit(dir: &std::path::Path) -> Result<(Value, GridFunction), CliError> {
    let est_path = dir.join("estimate.json");
    let u_path = dir.join("u_bar.csv");
    for p in [&est_path, &u_path] {
        if !p.is_file() {
            return Err(CliError::usage(format!("missing fit artifact {}", p.display())));
        }
    }
    let est: Value = serde_json::from_str(&read_text(&est_path)?)
        .map_err(|e| CliError::usage(format!("{}: {e}", est_path.display())))?;
    let f = File::open(&u_path).map_err(|e| CliError::usage(format!("{}: {e}", u_path.display())))?;
    Ok((est, GridFunction::read_csv(BufReader::new(f))?))
}

pub fn run(args: &DiagnoseArgs) -> Result<(), CliError> {
    let (est, u) = load_fit(&args.fit)?;
    let out = args.common.out_dir()?;
    let t = u.grid().nodes();
    let c = est["time_scale"].as_f64().unwrap_or(1.0);
    let l2: Vec<f64> = u.component_l2_sq().iter().map(|v| v.sqrt()).collect();
    let forced = (0..l2.len()).fold(0, |b, i| if l2[i] > l2[b] { i } else { b });
    let components: Vec<Value> = (0..u.dim())
        .map(|j| {
            let period = dominant_period(&t, &u.component(j));
            json!({
                "component": j + 1,
                "l2": l2[j],
                "dominant_period": period,
                "dominant_period_original_units": period.map(|p| p * c),
            })
        })
        .collect();
    let norm = u.l2_norm_sq().sqrt();
    let mut report = json!({
        "model": est["model"],
        "lambda": est["lambda"],
        "u_bar_norm": norm,
        "largest_component": forced + 1,
        "components": components,
    });
    if let Some(r) = est["reference"]["u_bar_norm"].as_f64() {
        report["reference"] = json!({
            "theta": est["reference"]["theta"],
            "u_bar_norm": r,
            "estimate_is_smaller": norm <= r,
        });
    }
    let panels: Vec<Panel> = (0..u.dim())
        .map(|j| Panel {
            title: format!("residual control ū{} (λ = {})", j + 1, est["lambda"]),
            series: vec![Series::line(format!("ū{}", j + 1), t.clone(), u.component(j), "#1f5fbf")],
        })
        .collect();
    write_text(
        &out.join("diagnose.json"),
        &format!("{}\n", serde_json::to_string_pretty(&report).map_err(CliError::from_json)?),
    )?;
    write_text(&out.join("u_bar.csv"), &u.to_csv_string())?;
    write_text(&out.join("u_bar.svg"), &plot::render(&panels))?;
    println!("‖ū‖ = {norm:.6e}");
    for (j, comp) in report["components"].as_array().expect("array").iter().enumerate() {
        println!(
            "  ū{}: L2 {:.6e}  dominant period {}",
            j + 1,
            l2[j],
            comp["dominant_period"].as_f64().map_or("-".into(), |p| format!("{p:.4}"))
        );
    }
    if let Some(r) = report.get("reference") {
        println!("  reference ‖ū(θ_b)‖ = {:.6e}", r["u_bar_norm"].as_f64().unwrap_or(f64::NAN));
    }
    Ok(())
}
