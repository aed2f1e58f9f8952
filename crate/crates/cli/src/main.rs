mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use commands::CliError;
use config::*;

/// Neural-driver martingale experiments. Every subcommand reads an optional
/// JSON config (--config), applies flag overrides, and writes its artifacts
/// plus the resolved config.json into --out.
///
/// Exit codes: 0 success, 1 numerical or i/o failure, 2 usage or
/// configuration error. Failures print a JSON object on stderr.
#[derive(Debug, Parser)]
#[command(name = "nbm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate canonical paths; writes paths.csv and summary.json
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: SimulateArgs,
    },
    /// Terminal mean under the learned measure, by direct simulation and by
    /// reweighting; writes girsanov.json
    Girsanov {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: GirsanovArgs,
    },
    /// Solve the BSDE with terminal M_T and compare Y with M; writes report.json
    VerifyMartingale {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: MartingaleArgs,
    },
    /// Propagation-of-chaos experiment; writes chaos.csv and chaos_summary.json
    Meanfield {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: MeanFieldArgs,
    },
    /// Solve the McKean-Vlasov equation; writes density.csv and pde_summary.json
    MkvPde {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: MkvPdeArgs,
    },
    /// Fit a monotone network driver to a target volatility; writes
    /// driver.json and uat_report.json
    Uat {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: UatArgs,
    },
    /// Roots, potentials and the selected volatility at one point; writes
    /// roots.json and optionally nu_cache.csv
    SelectVol {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: SelectVolArgs,
    },
    /// Price one payoff on the pricing PDE; writes price.json and surface.csv
    Price {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: PriceArgs,
    },
    /// Fit driver parameters to quotes; writes theta.json and calibration.json
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: CalibrateArgs,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Girsanov { .. } => "girsanov",
            Command::VerifyMartingale { .. } => "verify-martingale",
            Command::Meanfield { .. } => "meanfield",
            Command::MkvPde { .. } => "mkv-pde",
            Command::Uat { .. } => "uat",
            Command::SelectVol { .. } => "select-vol",
            Command::Price { .. } => "price",
            Command::Calibrate { .. } => "calibrate",
        }
    }

    fn run(&self) -> Result<commands::Artifacts, CliError> {
        match self {
            Command::Simulate { common, args } => commands::simulate(common, args),
            Command::Girsanov { common, args } => commands::girsanov(common, args),
            Command::VerifyMartingale { common, args } => commands::verify_martingale(common, args),
            Command::Meanfield { common, args } => commands::meanfield(common, args),
            Command::MkvPde { common, args } => commands::mkv_pde(common, args),
            Command::Uat { common, args } => commands::uat(common, args),
            Command::SelectVol { common, args } => commands::select_vol(common, args),
            Command::Price { common, args } => commands::price(common, args),
            Command::Calibrate { common, args } => commands::calibrate_cmd(common, args),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match cli.command.run() {
        Ok(art) => {
            let files: Vec<String> = art.written.iter().map(|p| p.display().to_string()).collect();
            println!("{}", json!({ "status": "ok", "command": name, "artifacts": files }));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let problems = match &e {
                CliError::Config(p) => p.clone(),
                _ => Vec::new(),
            };
            let body = json!({
                "status": "error",
                "command": name,
                "kind": e.kind(),
                "exit_code": e.exit_code(),
                "message": e.to_string(),
                "problems": problems,
            });
            eprintln!("{}", serde_json::to_string_pretty(&body).unwrap_or_else(|_| e.to_string()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
