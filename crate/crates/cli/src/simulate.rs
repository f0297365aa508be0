use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use trackode::bench::{self, ExperimentSpec};

use crate::error::CliError;
use crate::{read_text, write_text, Common};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Experiment spec JSON (model, θ*, n, σ, perturbation, ...).
    #[arg(long)]
    pub spec: PathBuf,
    /// Replicate index; selects the random substream.
    #[arg(long, default_value_t = 0)]
    pub replicate: usize,
    #[command(flatten)]
    pub common: Common,
}

pub fn load_spec(path: &std::path::Path, common: &Common) -> Result<ExperimentSpec, CliError> {
    let mut spec = ExperimentSpec::from_json(&read_text(path)?)?;
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    spec.fit = common.fit_config(spec.fit.clone())?;
    Ok(spec)
}

pub fn run(args: &SimulateArgs) -> Result<(), CliError> {
    let spec = load_spec(&args.spec, &args.common)?;
    let data = bench::simulate_dataset(&spec, args.replicate)?;
    let truth = bench::truth(&spec)?;
    let out = args.common.out_dir()?;
    let mut csv = Vec::new();
    data.write_csv(&mut csv)?;
    write_text(&out.join("data.csv"), &String::from_utf8(csv).expect("ascii CSV"))?;
    let sidecar = json!({ "spec": spec, "replicate": args.replicate, "noise_sd": truth.sd });
    write_text(
        &out.join("data.json"),
        &format!("{}\n", serde_json::to_string_pretty(&sidecar).map_err(CliError::from_json)?),
    )?;
    println!("wrote {} observations of {} to {}", data.n(), spec.model, out.display());
    Ok(())
}
