use std::path::PathBuf;

use clap::Args;
use trackode::bench::{self, ExperimentSpec, MetricsReport};

use crate::error::CliError;
use crate::simulate::load_spec;
use crate::{write_text, Common};

macro_rules! packaged {
    ($($table:literal, $n:literal, $s:literal);* $(;)?) => {
        &[$(($table, $n, $s, include_str!(concat!(
            "../../../experiments/table", $table, "_n", $n, "_s", $s, ".json"
        )))),*]
    };
}

/// `(table, n, σ, spec JSON)` for every packaged cell.
const CELLS: &[(u32, usize, u32, &str)] = packaged! {
    1, 50, 2; 1, 50, 4; 1, 20, 2; 1, 20, 4;
    2, 50, 2; 2, 50, 4; 2, 20, 2; 2, 20, 4;
    3, 100, 2; 3, 100, 4; 3, 50, 2; 3, 50, 4;
    4, 100, 8; 4, 50, 8; 4, 100, 16; 4, 50, 16;
};

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Packaged table (1-4).
    #[arg(long, conflicts_with = "spec")]
    pub table: Option<u32>,
    /// Restrict to one cell `n,sigma` of the table.
    #[arg(long, requires = "table")]
    pub cell: Option<String>,
    /// Custom experiment spec JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Override the number of Monte Carlo replicates.
    #[arg(long)]
    pub nmc: Option<usize>,
    /// Run replicates on the calling thread.
    #[arg(long)]
    pub sequential: bool,
    #[command(flatten)]
    pub common: Common,
}

fn parse_cell(text: &str) -> Result<(usize, u32), CliError> {
    let bad = || CliError::usage(format!("--cell expects `n,sigma`, got `{text}`"));
    let (n, s) = text.split_once(',').ok_or_else(bad)?;
    Ok((n.trim().parse().map_err(|_| bad())?, s.trim().parse().map_err(|_| bad())?))
}

pub fn packaged_specs(table: u32, cell: Option<(usize, u32)>) -> Result<Vec<ExperimentSpec>, CliError> {
    if !CELLS.iter().any(|c| c.0 == table) {
        return Err(CliError::usage(format!("unknown table {table}; packaged tables are 1-4")));
    }
    let specs = CELLS
        .iter()
        .filter(|c| c.0 == table && cell.is_none_or(|(n, s)| c.1 == n && c.2 == s))
        .map(|c| ExperimentSpec::from_json(c.3).map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;
    if specs.is_empty() {
        let (n, s) = cell.expect("only a cell filter can empty a known table");
        return Err(CliError::usage(format!("table {table} has no cell ({n}, {s})")));
    }
    Ok(specs)
}

fn print_report(r: &MetricsReport) {
    println!("{}  (n = {}, σ = {}, N_MC = {})", r.spec.name, r.spec.n, r.spec.sigma, r.spec.n_mc);
    println!(
        "  {:<20} {:>12} {:>12} {:>12} {:>12} {:>5}",
        "estimator", "MSE", "ARE", "pred", "corrected", "fail"
    );
    for m in &r.metrics {
        let corr = m.corrected_pred_error_noise_free.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "  {:<20} {:>12.4e} {:>12.4e} {:>12.4} {:>12} {:>5}",
            m.estimator.label(),
            m.mse,
            m.are,
            m.pred_error_noise_free,
            corr,
            m.failures
        );
    }
}

pub fn run(args: &BenchArgs) -> Result<(), CliError> {
    let mut specs = match (args.table, &args.spec) {
        (Some(t), _) => packaged_specs(t, args.cell.as_deref().map(parse_cell).transpose()?)?,
        (None, Some(path)) => vec![load_spec(path, &args.common)?],
        (None, None) => return Err(CliError::usage("bench needs --table or --spec")),
    };
    for spec in &mut specs {
        if args.table.is_some() {
            if let Some(s) = args.common.seed {
                spec.seed = s;
            }
            spec.fit = args.common.fit_config(spec.fit.clone())?;
        }
        if let Some(n) = args.nmc {
            if n == 0 {
                return Err(CliError::usage("--nmc must be positive"));
            }
            spec.n_mc = n;
        }
    }
    let out = args.common.out_dir()?;
    for spec in &specs {
        let report = bench::run_monte_carlo_with(spec, !args.sequential && spec.fit.parallel)?;
        let name = if spec.name.is_empty() { "report" } else { spec.name.as_str() };
        write_text(&out.join(format!("{name}.json")), &format!("{}\n", report.to_json()?))?;
        let mut csv = Vec::new();
        report.write_csv(&mut csv)?;
        write_text(&out.join(format!("{name}.csv")), &String::from_utf8(csv).expect("ascii CSV"))?;
        print_report(&report);
    }
    Ok(())
}
