use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use bnnrisk_cli::config::Overrides;
use bnnrisk_cli::plot::plot_file;
use bnnrisk_cli::run::{Outcome, Runner};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bnnrisk",
    version,
    about = "Risk experiments for shrinkage rules induced by ReLU network priors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and persist shrinkage tables for the table-based rules
    ShrinkageTable(Overrides),
    /// Risk against signal norm over random directions
    RiskCurve(Overrides),
    /// Risk along sparse signals, including the horseshoe
    HorseshoeRisk(Overrides),
    /// KL risk of Bayes and uniform-prior predictive densities
    PredictiveRisk(Overrides),
    /// F(λ) positivity, Laplacian of √m and the fixed-scale tail probe
    Diagnostics(Overrides),
    /// Render a risk CSV to an SVG line chart
    Plot {
        input: PathBuf,
        /// Output file (default: input with an .svg extension)
        #[arg(long)]
        output: Option<PathBuf>,
        /// Horizontal reference level (default: the CSV's p column)
        #[arg(long)]
        reference: Option<f64>,
        #[arg(long)]
        title: Option<String>,
    },
}

fn pipeline(
    name: &str,
    ov: &Overrides,
    f: impl FnOnce(&Runner) -> Result<Outcome>,
) -> Result<bool> {
    let cfg = ov.resolve()?;
    let runner = Runner::new(cfg)?;
    let outcome = f(&runner)?;
    let manifest = runner.write_manifest(name, &outcome)?;
    eprintln!("wrote {}", manifest.display());
    let mut ok = true;
    for (check, pass) in &outcome.checks {
        println!("{check}: {}", if *pass { "PASS" } else { "FAIL" });
        ok &= *pass;
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::ShrinkageTable(ov) => pipeline("shrinkage-table", ov, Runner::shrinkage_table),
        Command::RiskCurve(ov) => pipeline("risk-curve", ov, Runner::risk_curve),
        Command::HorseshoeRisk(ov) => pipeline("horseshoe-risk", ov, Runner::horseshoe_risk),
        Command::PredictiveRisk(ov) => pipeline("predictive-risk", ov, Runner::predictive_risk),
        Command::Diagnostics(ov) => pipeline("diagnostics", ov, Runner::diagnostics),
        Command::Plot {
            input,
            output,
            reference,
            title,
        } => {
            let output = output
                .clone()
                .unwrap_or_else(|| input.with_extension("svg"));
            plot_file(input, &output, *reference, title.as_deref()).map(|_| {
                eprintln!("wrote {}", output.display());
                true
            })
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
