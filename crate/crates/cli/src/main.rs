use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

use fastdiff_cli::{default_config, parse_config_with, run_scenario, CliError, ScenarioKind};
use fastdiff_core::derive_params;

#[derive(Parser)]
#[command(name = "fastdiff", version, about = "Radial fast diffusion scenarios and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the derived constants of (N, m, T) as JSON.
    Params {
        #[arg(long, short = 'n')]
        dim: usize,
        #[arg(long, short = 'm')]
        m: f64,
        #[arg(long = "horizon", short = 't', default_value_t = 1.0)]
        horizon: f64,
    },
    /// Run the scenario described by a TOML file.
    Run {
        config: PathBuf,
        /// Output directory; overrides `scenario.out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// `section.key=value`, applied before validation.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the closed-form self-test with its default settings.
    Selftest {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn timestamp() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    format!("{secs}")
}

fn execute(cli: Cli) -> Result<bool, CliError> {
    let mut cfg = match cli.command {
        Command::Params { dim, m, horizon } => {
            let p = derive_params(dim, m, horizon).map_err(|e| CliError::Config(e.to_string()))?;
            let text = serde_json::to_string_pretty(&p).map_err(|e| CliError::Config(e.to_string()))?;
            println!("{text}");
            return Ok(true);
        }
        Command::Run { config, out, overrides } => {
            let text = std::fs::read_to_string(&config).map_err(|e| CliError::Config(format!("cannot read {}: {e}", config.display())))?;
            let mut cfg = parse_config_with(&text, &overrides)?;
            if out.is_some() {
                cfg.out_dir = out;
            }
            cfg
        }
        Command::Selftest { out } => {
            let mut cfg = default_config(ScenarioKind::BarenblattSelftest);
            cfg.out_dir = out;
            cfg
        }
    };
    if cfg.out_dir.is_none() {
        cfg.out_dir = Some(PathBuf::from("out").join(cfg.kind.id()));
    }
    let report = run_scenario(&cfg, &timestamp())?;
    print!("{}", report.to_text());
    Ok(report.all_mandatory_passed())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("fastdiff: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
